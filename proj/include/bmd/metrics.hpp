#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "segmodel.hpp"

namespace bmd {

inline double dice(const MaskGrid& pred, const MaskGrid& gt, int class_id) {
    require_same_shape(pred, gt, "dice");
    std::size_t p = 0;
    std::size_t g = 0;
    std::size_t both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] == class_id;
        const bool b = gt[i] == class_id;
        p += a;
        g += b;
        both += a && b;
    }
    if (p + g == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

/// Pixels of class_id with at least one 4-neighbour outside the class; the
/// area beyond the image border counts as outside.
inline std::vector<std::pair<int, int>> boundary_pixels(const MaskGrid& m, int class_id) {
    std::vector<std::pair<int, int>> out;
    auto in = [&](int r, int c) {
        return r >= 0 && r < m.height() && c >= 0 && c < m.width() && m(r, c) == class_id;
    };
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            if (in(r, c) && (!in(r - 1, c) || !in(r + 1, c) || !in(r, c - 1) || !in(r, c + 1))) {
                out.emplace_back(r, c);
            }
        }
    }
    return out;
}

/// Linear-interpolation percentile (q in [0,100]) of a nonempty sample.
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) {
        throw std::invalid_argument("percentile: empty sample");
    }
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// 95th percentile of the pooled boundary-to-boundary distances in both
/// directions. One side empty: image diagonal. Both empty: 0.
inline double hd95(const MaskGrid& pred, const MaskGrid& gt, int class_id) {
    require_same_shape(pred, gt, "hd95");
    const auto bp = boundary_pixels(pred, class_id);
    const auto bg = boundary_pixels(gt, class_id);
    if (bp.empty() && bg.empty()) {
        return 0.0;
    }
    if (bp.empty() || bg.empty()) {
        return std::hypot(static_cast<double>(pred.height()), static_cast<double>(pred.width()));
    }
    auto directed = [](const auto& from, const auto& to, std::vector<double>& out) {
        for (const auto& [r, c] : from) {
            int best = std::numeric_limits<int>::max();
            for (const auto& [r2, c2] : to) {
                best = std::min(best, (r - r2) * (r - r2) + (c - c2) * (c - c2));
            }
            out.push_back(std::sqrt(static_cast<double>(best)));
        }
    };
    std::vector<double> d;
    d.reserve(bp.size() + bg.size());
    directed(bp, bg, d);
    directed(bg, bp, d);
    return percentile(std::move(d), 95.0);
}

inline constexpr int kDefaultEceBins = 15;

/// Equal-width bins on (0,1]; a confidence of exactly 0 falls in the first.
inline double ece(std::span<const double> confidences, std::span<const bool> correct, int bins = kDefaultEceBins) {
    if (confidences.empty() || confidences.size() != correct.size()) {
        throw std::invalid_argument("ece: need equal, nonempty inputs");
    }
    if (bins < 1) {
        throw std::invalid_argument("ece: bins must be >= 1");
    }
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> acc_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double c = confidences[i];
        if (!(c >= 0.0 && c <= 1.0)) {
            throw std::invalid_argument("ece: confidences must lie in [0,1]");
        }
        const int b = std::clamp(static_cast<int>(std::ceil(c * bins)) - 1, 0, bins - 1);
        conf_sum[static_cast<std::size_t>(b)] += c;
        acc_sum[static_cast<std::size_t>(b)] += correct[i] ? 1.0 : 0.0;
        ++count[static_cast<std::size_t>(b)];
    }
    const double n = static_cast<double>(confidences.size());
    double total = 0.0;
    for (std::size_t b = 0; b < count.size(); ++b) {
        if (count[b] == 0) {
            continue;
        }
        const double nb = static_cast<double>(count[b]);
        total += nb / n * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
    }
    return total;
}

/// probs is row-major, one row of num_classes probabilities per sample.
inline double brier(std::span<const double> probs, std::span<const Label> labels, int num_classes) {
    if (labels.empty() || probs.size() != labels.size() * static_cast<std::size_t>(num_classes)) {
        throw std::invalid_argument("brier: probs must hold num_classes values per label");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (int c = 0; c < num_classes; ++c) {
            const double d = probs[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)] -
                             (labels[i] == c ? 1.0 : 0.0);
            total += d * d;
        }
    }
    return total / static_cast<double>(labels.size());
}

inline double nll(std::span<const double> probs, std::span<const Label> labels, int num_classes) {
    if (labels.empty() || probs.size() != labels.size() * static_cast<std::size_t>(num_classes)) {
        throw std::invalid_argument("nll: probs must hold num_classes values per label");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        total -= std::log(std::max(probs[i * static_cast<std::size_t>(num_classes) + labels[i]], 1e-12));
    }
    return total / static_cast<double>(labels.size());
}

struct AurcResult {
    double aurc = 0.0;
    double e_aurc = 0.0;
};

inline AurcResult aurc(std::span<const double> confidences, std::span<const bool> correct) {
    if (confidences.empty() || confidences.size() != correct.size()) {
        throw std::invalid_argument("aurc: need equal, nonempty inputs");
    }
    const std::size_t n = confidences.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
    double area = 0.0;
    std::size_t errors = 0;
    for (std::size_t i = 0; i < n; ++i) {
        errors += correct[order[i]] ? 0 : 1;
        area += static_cast<double>(errors) / static_cast<double>(i + 1);
    }
    const auto wrong = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), false));
    double oracle = 0.0;
    for (std::size_t i = n - wrong; i < n; ++i) {
        oracle += static_cast<double>(i + 1 - (n - wrong)) / static_cast<double>(i + 1);
    }
    AurcResult r;
    r.aurc = area / static_cast<double>(n);
    r.e_aurc = r.aurc - oracle / static_cast<double>(n);
    return r;
}

/// Per-class means over images (index = class id, background included)
/// plus pixel-pooled uncertainty metrics.
struct MetricReport {
    std::vector<double> dice;
    std::vector<double> hd95;
    double ece = 0.0;
    double brier = 0.0;
    double nll = 0.0;
    double aurc = 0.0;
    double e_aurc = 0.0;

    /// Mean over foreground classes (1..C-1).
    double mean_dice() const {
        return std::accumulate(dice.begin() + 1, dice.end(), 0.0) / static_cast<double>(dice.size() - 1);
    }
    double mean_hd95() const {
        return std::accumulate(hd95.begin() + 1, hd95.end(), 0.0) / static_cast<double>(hd95.size() - 1);
    }
};

/// Evaluates a model on labeled images. Uncertainty metrics use every pixel.
inline MetricReport evaluate_model(const PixelClassifier& model, std::span<const LabeledImage> data) {
    if (data.empty()) {
        throw std::invalid_argument("evaluate_model: no images");
    }
    const int classes = model.num_classes;
    MetricReport rep;
    rep.dice.assign(static_cast<std::size_t>(classes), 0.0);
    rep.hd95.assign(static_cast<std::size_t>(classes), 0.0);
    std::vector<double> probs;
    std::vector<Label> labels;
    std::vector<double> conf;
    std::size_t total = 0;
    for (const auto& item : data) {
        total += item.image.size();
    }
    const auto hit = std::make_unique<bool[]>(total);
    for (const auto& item : data) {
        const ProbMap pm = predict_probs(model, item.image);
        const MaskGrid pred = argmax_labels(pm);
        for (int c = 0; c < classes; ++c) {
            rep.dice[static_cast<std::size_t>(c)] += dice(pred, item.mask, c) / static_cast<double>(data.size());
            rep.hd95[static_cast<std::size_t>(c)] += hd95(pred, item.mask, c) / static_cast<double>(data.size());
        }
        probs.insert(probs.end(), pm.data.begin(), pm.data.end());
        for (std::size_t p = 0; p < pm.pixels(); ++p) {
            labels.push_back(item.mask[p]);
            conf.push_back(pm(p, pred[p]));
            hit[conf.size() - 1] = pred[p] == item.mask[p];
        }
    }
    const std::span<const bool> correct(hit.get(), total);
    rep.ece = ece(conf, correct);
    rep.brier = brier(probs, labels, classes);
    rep.nll = nll(probs, labels, classes);
    const auto ar = aurc(conf, correct);
    rep.aurc = ar.aurc;
    rep.e_aurc = ar.e_aurc;
    return rep;
}

inline const char* kMetricCsvHeader = "model,split,class,dice,hd95,ece,brier,nll,aurc,e_aurc\n";

/// One row per class, then a "mean" row holding foreground means and the
/// pooled uncertainty metrics. Per-class rows leave uncertainty fields empty.
inline void write_metric_rows(std::ostream& os, const std::string& model, const std::string& split,
                              const MetricReport& rep) {
    char buf[256];
    for (std::size_t c = 0; c < rep.dice.size(); ++c) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,,,,,\n", model.c_str(), split.c_str(), c, rep.dice[c],
                      rep.hd95[c]);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "%s,%s,mean,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", model.c_str(), split.c_str(),
                  rep.mean_dice(), rep.mean_hd95(), rep.ece, rep.brier, rep.nll, rep.aurc, rep.e_aurc);
    os << buf;
}

} // namespace bmd
