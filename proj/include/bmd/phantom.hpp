#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "rng.hpp"

namespace bmd {

/// Synthetic anatomy generator settings.
struct PhantomConfig {
    int height = 32;
    int width = 32;
    int num_classes = 4;
    int shapes_per_class = 1;
    double noise_sigma = 0.03;
    std::uint64_t seed = 7;

    void validate() const {
        if (height < 8 || width < 8) {
            throw std::invalid_argument("PhantomConfig: height and width must be >= 8");
        }
        if (num_classes < 2 || num_classes > 255) {
            throw std::invalid_argument("PhantomConfig: num_classes must be in [2, 255]");
        }
        if (shapes_per_class < 1) {
            throw std::invalid_argument("PhantomConfig: shapes_per_class must be >= 1");
        }
        if (!(noise_sigma >= 0.0)) {
            throw std::invalid_argument("PhantomConfig: noise_sigma must be >= 0");
        }
    }
};

/// Monotone intensity warp simulating one imaging modality:
/// x -> gain * knots(x^gamma) + bias, then additive Gaussian noise.
struct ModalityStyle {
    double gamma = 1.0;
    double gain = 1.0;
    double bias = 0.0;
    std::vector<std::pair<double, double>> contrast_knots{{0.0, 0.0}, {1.0, 1.0}};

    static ModalityStyle identity() { return {}; }

    void validate() const {
        if (!(gamma > 0.0)) {
            throw std::invalid_argument("ModalityStyle: gamma must be > 0");
        }
        if (!(gain > 0.0) || bias < 0.0 || gain + bias > 1.0 + 1e-12) {
            throw std::invalid_argument("ModalityStyle: need gain > 0, bias >= 0, gain + bias <= 1");
        }
        const auto& k = contrast_knots;
        if (k.size() < 2 || k.front() != std::pair{0.0, 0.0} || k.back() != std::pair{1.0, 1.0}) {
            throw std::invalid_argument("ModalityStyle: knots must start at (0,0) and end at (1,1)");
        }
        for (std::size_t i = 1; i < k.size(); ++i) {
            if (!(k[i].first > k[i - 1].first) || !(k[i].second > k[i - 1].second)) {
                throw std::invalid_argument("ModalityStyle: contrast knots must be strictly increasing");
            }
        }
    }

    /// Noise-free intensity map; strictly increasing for a valid style.
    double map(double x) const {
        double v = std::pow(std::clamp(x, 0.0, 1.0), gamma);
        const auto& k = contrast_knots;
        auto hi = std::upper_bound(k.begin(), k.end(), v,
                                   [](double a, const auto& knot) { return a < knot.first; });
        if (hi == k.end()) {
            v = k.back().second;
        } else if (hi != k.begin()) {
            const auto lo = hi - 1;
            const double f = (v - lo->first) / (hi->first - lo->first);
            v = lo->second + f * (hi->second - lo->second);
        }
        return gain * v + bias;
    }
};

/// Base intensity of class c before any modality warp; evenly spaced in [0.1, 0.9].
inline double class_base_intensity(int c, int num_classes) {
    return 0.1 + 0.8 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
}

struct Phantom {
    ImageGrid image;
    MaskGrid mask;
};

namespace detail {

struct Ellipse {
    double cy, cx, ry, rx, angle;

    bool contains(double y, double x) const {
        const double dy = y - cy;
        const double dx = x - cx;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double u = (c * dx + s * dy) / rx;
        const double v = (-s * dx + c * dy) / ry;
        return u * u + v * v <= 1.0;
    }
};

inline Ellipse draw_ellipse(Rng& rng, int cls, int height, int width) {
    const double h = height;
    const double w = width;
    Ellipse e{};
    if (cls == 1) {
        // organ-like body in the middle of the field of view
        e.cy = uniform(rng, 0.4, 0.6) * h;
        e.cx = uniform(rng, 0.4, 0.6) * w;
        e.ry = uniform(rng, 0.25, 0.4) * h;
        e.rx = uniform(rng, 0.25, 0.4) * w;
    } else {
        e.cy = uniform(rng, 0.25, 0.75) * h;
        e.cx = uniform(rng, 0.25, 0.75) * w;
        e.ry = uniform(rng, 0.08, 0.2) * h;
        e.rx = uniform(rng, 0.08, 0.2) * w;
    }
    e.angle = uniform(rng, 0.0, std::numbers::pi);
    return e;
}

} // namespace detail

/// Ellipse phantom with per-class base intensity, a mild per-class stripe
/// texture and a smooth global bias field. Classes are painted in ascending
/// order, so higher classes occlude lower ones. Throws std::runtime_error if
/// some class still has fewer than 3 pixels after 100 attempts.
inline Phantom generate_phantom(const PhantomConfig& cfg, Rng& rng) {
    cfg.validate();
    constexpr int kMaxAttempts = 100;
    constexpr std::size_t kMinClassPixels = 3;
    const int h = cfg.height;
    const int w = cfg.width;

    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        MaskGrid mask(h, w, 0);
        for (int cls = 1; cls < cfg.num_classes; ++cls) {
            for (int s = 0; s < cfg.shapes_per_class; ++s) {
                const auto e = detail::draw_ellipse(rng, cls, h, w);
                for (int r = 0; r < h; ++r) {
                    for (int c = 0; c < w; ++c) {
                        if (e.contains(r + 0.5, c + 0.5)) {
                            mask(r, c) = static_cast<Label>(cls);
                        }
                    }
                }
            }
        }

        std::vector<std::size_t> counts(static_cast<std::size_t>(cfg.num_classes), 0);
        for (Label v : mask) {
            ++counts[v];
        }
        const bool all_present = std::all_of(counts.begin(), counts.end(),
                                             [](std::size_t n) { return n >= kMinClassPixels; });

        // texture parameters are drawn regardless so the stream advances uniformly
        std::vector<double> freq_y(counts.size()), freq_x(counts.size()), phase(counts.size());
        for (std::size_t k = 0; k < counts.size(); ++k) {
            freq_y[k] = uniform(rng, 0.2, 0.8);
            freq_x[k] = uniform(rng, 0.2, 0.8);
            phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        }
        const double field_y = uniform(rng, -1.0, 1.0);
        const double field_x = uniform(rng, -1.0, 1.0);
        if (!all_present) {
            continue;
        }

        ImageGrid image(h, w);
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                const Label cls = mask(r, c);
                const double texture = 0.02 * std::sin(freq_y[cls] * r + freq_x[cls] * c + phase[cls]);
                const double field = 0.03 * (field_y * (r / double(h) - 0.5) + field_x * (c / double(w) - 0.5));
                image(r, c) = std::clamp(class_base_intensity(cls, cfg.num_classes) + texture + field, 0.0, 1.0);
            }
        }
        return {std::move(image), std::move(mask)};
    }
    throw std::runtime_error("generate_phantom: could not realize all classes after 100 attempts");
}

/// Applies the modality warp and noise. Output is clamped to [0,1].
inline ImageGrid apply_modality(const ImageGrid& img, const ModalityStyle& style, double noise_sigma,
                                Rng& rng) {
    style.validate();
    ImageGrid out(img.height(), img.width());
    for (std::size_t i = 0; i < img.size(); ++i) {
        double v = style.map(img[i]);
        if (noise_sigma > 0.0) {
            v += noise_sigma * standard_normal(rng);
        }
        out[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

/// Unpaired two-modality dataset. Target-train labels are kept only for
/// evaluation and never reach a training routine.
struct Dataset {
    std::vector<LabeledImage> source_train;
    std::vector<ImageGrid> target_train;
    std::vector<MaskGrid> target_train_withheld;
    std::vector<LabeledImage> target_test;
    int num_classes = 0;
};

inline Dataset make_dataset(const PhantomConfig& cfg, const ModalityStyle& style_src,
                            const ModalityStyle& style_tgt, int n_train_src, int n_train_tgt,
                            int n_test_tgt, std::uint64_t seed) {
    if (n_train_src < 1 || n_train_tgt < 1 || n_test_tgt < 1) {
        throw std::invalid_argument("make_dataset: split sizes must be >= 1");
    }
    style_src.validate();
    style_tgt.validate();

    // every split draws fresh phantoms from one anatomy stream, so no
    // underlying phantom is shared between splits
    Rng anatomy = make_rng(seed, 1);
    Rng noise = make_rng(seed, 2);
    Dataset ds;
    ds.num_classes = cfg.num_classes;
    for (int i = 0; i < n_train_src; ++i) {
        auto p = generate_phantom(cfg, anatomy);
        ds.source_train.push_back({apply_modality(p.image, style_src, cfg.noise_sigma, noise), std::move(p.mask)});
    }
    for (int i = 0; i < n_train_tgt; ++i) {
        auto p = generate_phantom(cfg, anatomy);
        ds.target_train.push_back(apply_modality(p.image, style_tgt, cfg.noise_sigma, noise));
        ds.target_train_withheld.push_back(std::move(p.mask));
    }
    for (int i = 0; i < n_test_tgt; ++i) {
        auto p = generate_phantom(cfg, anatomy);
        ds.target_test.push_back({apply_modality(p.image, style_tgt, cfg.noise_sigma, noise), std::move(p.mask)});
    }
    return ds;
}

} // namespace bmd
