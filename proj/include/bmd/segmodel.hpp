#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "bezier.hpp"
#include "grid.hpp"
#include "mlp.hpp"
#include "rng.hpp"

namespace bmd {

/// Per-pixel classifier over a (2r+1)x(2r+1) zero-padded intensity patch.
struct PixelClassifier {
    int patch_radius = 2;
    int num_classes = 2;
    TanhMlp net;

    int patch_width() const noexcept { return 2 * patch_radius + 1; }
};

inline PixelClassifier make_pixel_classifier(int num_classes, int patch_radius, int hidden, std::uint64_t seed) {
    if (num_classes < 2 || patch_radius < 0) {
        throw std::invalid_argument("make_pixel_classifier: need num_classes >= 2, patch_radius >= 0");
    }
    Rng rng = make_rng(seed, 0x5e9);
    const int w = 2 * patch_radius + 1;
    return {patch_radius, num_classes, TanhMlp(w * w, hidden, num_classes, rng)};
}

inline std::vector<std::size_t> all_pixels(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

/// Patch matrix, one column per requested pixel (row-major pixel index).
inline Matrix patch_inputs(const ImageGrid& img, int radius, std::span<const std::size_t> pixels) {
    const int w = 2 * radius + 1;
    Matrix x(w * w, static_cast<Eigen::Index>(pixels.size()));
    for (std::size_t j = 0; j < pixels.size(); ++j) {
        const int r = static_cast<int>(pixels[j] / static_cast<std::size_t>(img.width()));
        const int c = static_cast<int>(pixels[j] % static_cast<std::size_t>(img.width()));
        int row = 0;
        for (int dr = -radius; dr <= radius; ++dr) {
            for (int dc = -radius; dc <= radius; ++dc) {
                const int rr = r + dr;
                const int cc = c + dc;
                const bool inside = rr >= 0 && rr < img.height() && cc >= 0 && cc < img.width();
                x(row++, static_cast<Eigen::Index>(j)) = inside ? img(rr, cc) : 0.0;
            }
        }
    }
    return x;
}

/// Column-wise numerically stable softmax.
inline Matrix softmax_columns(const Matrix& logits) {
    Matrix p = logits;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        const double m = p.col(j).maxCoeff();
        p.col(j) = (p.col(j).array() - m).exp();
        p.col(j) /= p.col(j).sum();
    }
    return p;
}

/// Per-pixel class probabilities; data[pixel * num_classes + class].
struct ProbMap {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<double> data;

    std::size_t pixels() const noexcept { return static_cast<std::size_t>(height) * width; }
    double operator()(std::size_t pixel, int cls) const noexcept {
        return data[pixel * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(cls)];
    }
    double& operator()(std::size_t pixel, int cls) noexcept {
        return data[pixel * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(cls)];
    }
    bool same_shape(const auto& g) const noexcept { return height == g.height() && width == g.width(); }
};

inline ProbMap predict_probs(const PixelClassifier& model, const ImageGrid& img) {
    const auto pixels = all_pixels(img.size());
    const Matrix probs = softmax_columns(model.net.forward(patch_inputs(img, model.patch_radius, pixels)).output);
    ProbMap pm{img.height(), img.width(), model.num_classes, {}};
    pm.data.assign(probs.data(), probs.data() + probs.size());
    return pm;
}

inline MaskGrid argmax_labels(const ProbMap& probs) {
    MaskGrid out(probs.height, probs.width);
    for (std::size_t p = 0; p < probs.pixels(); ++p) {
        int best = 0;
        for (int c = 1; c < probs.num_classes; ++c) {
            if (probs(p, c) > probs(p, best)) {
                best = c;
            }
        }
        out[p] = static_cast<Label>(best);
    }
    return out;
}

/// Mean cross-entropy over the batch columns; adds the parameter gradient
/// to grad when non-empty.
inline double cross_entropy(const PixelClassifier& model, const Matrix& x, std::span<const Label> labels,
                            std::span<double> grad = {}) {
    const auto act = model.net.forward(x);
    Matrix probs = softmax_columns(act.output);
    const double n = static_cast<double>(labels.size());
    double loss = 0.0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        loss -= std::log(std::max(probs(labels[j], static_cast<Eigen::Index>(j)), 1e-300));
    }
    if (!grad.empty()) {
        for (std::size_t j = 0; j < labels.size(); ++j) {
            probs(labels[j], static_cast<Eigen::Index>(j)) -= 1.0;
        }
        probs /= n;
        model.net.backward(x, act, probs, grad);
    }
    return loss / n;
}

/// Mean per-pixel cross-entropy over whole labeled images.
inline double dataset_cross_entropy(const PixelClassifier& model, std::span<const LabeledImage> data) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& item : data) {
        const auto pixels = all_pixels(item.image.size());
        total += cross_entropy(model, patch_inputs(item.image, model.patch_radius, pixels), item.mask.values()) *
                 static_cast<double>(item.image.size());
        count += item.image.size();
    }
    return total / static_cast<double>(count);
}

enum class Augment { none, random_bezier, curve_bank };

struct SegTrainOptions {
    int num_classes = 4;
    int patch_radius = 2;
    int hidden_units = 32;
    Augment augment = Augment::none;
    std::vector<ControlPoints> bank;
    int epochs = 20;
    int batch_pixels = 256;
    double lr = 1e-2;
    std::uint64_t seed = 0;
};

/// Adam on per-pixel cross-entropy. An epoch is ceil(total pixels /
/// batch_pixels) steps; each step draws one image (augmented if requested)
/// and batch_pixels pixel positions from it.
inline PixelClassifier train_seg(std::span<const LabeledImage> labeled, const SegTrainOptions& opts) {
    if (labeled.empty()) {
        throw std::invalid_argument("train_seg: no labeled images");
    }
    if (opts.augment == Augment::curve_bank && opts.bank.empty()) {
        throw std::invalid_argument("train_seg: curve_bank augmentation needs a nonempty bank");
    }
    if (opts.batch_pixels < 1 || opts.epochs < 0) {
        throw std::invalid_argument("train_seg: batch_pixels >= 1 and epochs >= 0 required");
    }
    for (const auto& item : labeled) {
        require_same_shape(item.image, item.mask, "train_seg");
        for (Label v : item.mask) {
            if (v >= opts.num_classes) {
                throw std::invalid_argument("train_seg: mask label exceeds num_classes");
            }
        }
    }

    PixelClassifier model = make_pixel_classifier(opts.num_classes, opts.patch_radius, opts.hidden_units, opts.seed);
    std::vector<IntensityLUT> luts;
    for (const auto& cp : opts.bank) {
        luts.push_back(build_lut(cp));
    }

    Rng rng = make_rng(opts.seed, 0x7a1);
    Adam adam(model.net.parameter_count(), opts.lr);
    std::vector<double> grad(model.net.parameter_count());
    std::size_t total_pixels = 0;
    for (const auto& item : labeled) {
        total_pixels += item.image.size();
    }
    const std::size_t steps = (total_pixels + static_cast<std::size_t>(opts.batch_pixels) - 1) /
                              static_cast<std::size_t>(opts.batch_pixels);

    std::vector<std::size_t> pixels(static_cast<std::size_t>(opts.batch_pixels));
    std::vector<Label> labels(pixels.size());
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        for (std::size_t s = 0; s < steps; ++s) {
            const auto& item = labeled[uniform_index(rng, labeled.size())];
            ImageGrid img;
            switch (opts.augment) {
            case Augment::none:
                img = item.image;
                break;
            case Augment::random_bezier:
                img = apply_transform(item.image, build_lut(random_curve(rng)));
                break;
            case Augment::curve_bank:
                img = apply_transform(item.image, luts[uniform_index(rng, luts.size())]);
                break;
            }
            for (std::size_t j = 0; j < pixels.size(); ++j) {
                pixels[j] = uniform_index(rng, img.size());
                labels[j] = item.mask[pixels[j]];
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            cross_entropy(model, patch_inputs(img, model.patch_radius, pixels), labels, grad);
            adam.step(model.net.parameters(), grad);
        }
    }
    return model;
}

/// Arg-k labels and their confidences, k = 1 first.
struct RankedPrediction {
    int k = 1;
    std::vector<MaskGrid> labels;
    std::vector<ImageGrid> confidences;

    int height() const noexcept { return labels.empty() ? 0 : labels.front().height(); }
    int width() const noexcept { return labels.empty() ? 0 : labels.front().width(); }
    bool operator==(const RankedPrediction&) const = default;
};

/// Per pixel, classes sorted by descending probability (ties: lower class
/// index first); keeps the top k.
inline RankedPrediction ranked_predictions(const ProbMap& probs, int k) {
    if (k < 1 || k > probs.num_classes) {
        throw std::out_of_range("ranked_predictions: k must be in [1, num_classes]");
    }
    RankedPrediction rp;
    rp.k = k;
    rp.labels.assign(static_cast<std::size_t>(k), MaskGrid(probs.height, probs.width));
    rp.confidences.assign(static_cast<std::size_t>(k), ImageGrid(probs.height, probs.width));
    std::vector<int> order(static_cast<std::size_t>(probs.num_classes));
    for (std::size_t p = 0; p < probs.pixels(); ++p) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs(p, a) > probs(p, b); });
        for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
            rp.labels[i][p] = static_cast<Label>(order[i]);
            rp.confidences[i][p] = probs(p, order[i]);
        }
    }
    return rp;
}

/// Where the top confidence exceeds delta (strictly), every rank takes the
/// arg-max label and confidence 1/num_classes.
inline RankedPrediction apply_threshold(RankedPrediction rp, double delta, int num_classes) {
    const double flat = 1.0 / static_cast<double>(num_classes);
    for (std::size_t p = 0; p < rp.labels.front().size(); ++p) {
        if (rp.confidences.front()[p] > delta) {
            const Label top = rp.labels.front()[p];
            for (std::size_t i = 0; i < rp.labels.size(); ++i) {
                rp.labels[i][p] = top;
                rp.confidences[i][p] = flat;
            }
        }
    }
    return rp;
}

} // namespace bmd
