#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "rng.hpp"

namespace bmd {

using FeatureVector = std::vector<double>;

// Layout: [0,16) intensity histogram, [16,32) 4x4 cell means,
// [32,48) cell standard deviations, [48,64) cell mean gradient magnitude,
// [64,72) zero padding.
inline constexpr int kHistBins = 16;
inline constexpr int kCellGrid = 4;
inline constexpr int kCells = kCellGrid * kCellGrid;
inline constexpr int kFeatureDim = kHistBins + 3 * kCells + 8;

namespace detail {

struct BlockNorm {
    double center;
    double scale;
};

// fixed z-normalization constants per block: hist, mean, std, gradient
inline constexpr std::array<BlockNorm, 4> kBlockNorms{{
    {1.0 / kHistBins, 0.125},
    {0.5, 0.25},
    {0.05, 0.05},
    {0.05, 0.05},
}};

} // namespace detail

/// Unnormalized features (histogram as fractions, raw cell statistics).
inline FeatureVector raw_features(const ImageGrid& img) {
    const int h = img.height();
    const int w = img.width();
    if (h < kCellGrid || w < kCellGrid) {
        throw std::invalid_argument("extract_features: image smaller than the cell grid");
    }
    FeatureVector f(kFeatureDim, 0.0);
    const double n = static_cast<double>(img.size());
    for (double v : img) {
        const int bin = std::clamp(static_cast<int>(v * kHistBins), 0, kHistBins - 1);
        f[static_cast<std::size_t>(bin)] += 1.0 / n;
    }

    auto at = [&](int r, int c) { return img(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1)); };
    for (int cr = 0; cr < kCellGrid; ++cr) {
        const int r0 = cr * h / kCellGrid;
        const int r1 = (cr + 1) * h / kCellGrid;
        for (int cc = 0; cc < kCellGrid; ++cc) {
            const int c0 = cc * w / kCellGrid;
            const int c1 = (cc + 1) * w / kCellGrid;
            double sum = 0.0;
            double grad = 0.0;
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    sum += img(r, c);
                    const double gx = 0.5 * (at(r, c + 1) - at(r, c - 1));
                    const double gy = 0.5 * (at(r + 1, c) - at(r - 1, c));
                    grad += std::sqrt(gx * gx + gy * gy);
                }
            }
            const double count = static_cast<double>((r1 - r0) * (c1 - c0));
            const double mean = sum / count;
            double var = 0.0;
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) {
                    const double d = img(r, c) - mean;
                    var += d * d;
                }
            }
            const auto cell = static_cast<std::size_t>(cr * kCellGrid + cc);
            f[kHistBins + cell] = mean;
            f[kHistBins + kCells + cell] = std::sqrt(var / count);
            f[kHistBins + 2 * kCells + cell] = grad / count;
        }
    }
    return f;
}

/// Deterministic hand-crafted encoder used to compare images across domains.
inline FeatureVector extract_features(const ImageGrid& img) {
    FeatureVector f = raw_features(img);
    for (std::size_t block = 0; block < detail::kBlockNorms.size(); ++block) {
        const std::size_t begin = block == 0 ? 0 : kHistBins + (block - 1) * kCells;
        const std::size_t len = block == 0 ? kHistBins : kCells;
        const auto [center, scale] = detail::kBlockNorms[block];
        for (std::size_t i = begin; i < begin + len; ++i) {
            f[i] = (f[i] - center) / scale;
        }
    }
    return f;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("squared_distance: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Index of the nearest feature (L2); ties resolve to the lowest index.
inline std::size_t nearest_index(std::span<const FeatureVector> corpus, std::span<const double> query) {
    if (corpus.empty()) {
        throw std::invalid_argument("nearest_index: empty corpus");
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const double d = squared_distance(corpus[i], query);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

struct ClusterModel {
    std::vector<FeatureVector> centers;
    std::vector<std::size_t> assignments;
    double inertia = 0.0;
    int iterations = 0;
    /// inertia after each assignment step
    std::vector<double> inertia_history;
};

/// Lloyd's algorithm with farthest-point seeding: the first center is a
/// seeded random sample, each further center is the point farthest from the
/// centers chosen so far. Clusters that empty out are re-seeded from the
/// point farthest from its assigned center.
inline ClusterModel kmeans(std::span<const FeatureVector> feats, int n_s, std::uint64_t seed, int max_iter) {
    if (feats.empty()) {
        throw std::invalid_argument("kmeans: empty corpus");
    }
    if (n_s < 1 || static_cast<std::size_t>(n_s) > feats.size()) {
        throw std::invalid_argument("kmeans: n_s must be in [1, corpus size]");
    }
    const std::size_t n = feats.size();
    const std::size_t dim = feats.front().size();
    for (const auto& f : feats) {
        if (f.size() != dim) {
            throw std::invalid_argument("kmeans: inconsistent feature length");
        }
    }
    const auto k = static_cast<std::size_t>(n_s);

    Rng rng = make_rng(seed, 0x6b6d);
    ClusterModel model;
    model.centers.push_back(feats[uniform_index(rng, n)]);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (model.centers.size() < k) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(feats[i], model.centers.back()));
            if (nearest[i] > far_d) {
                far_d = nearest[i];
                far = i;
            }
        }
        model.centers.push_back(feats[far]);
    }

    model.assignments.assign(n, k);
    std::vector<double> dist(n, 0.0);
    auto assign = [&] {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a = nearest_index(model.centers, feats[i]);
            dist[i] = squared_distance(feats[i], model.centers[a]);
            inertia += dist[i];
            if (a != model.assignments[i]) {
                model.assignments[i] = a;
                changed = true;
            }
        }
        model.inertia = inertia;
        model.inertia_history.push_back(inertia);
        return changed;
    };

    bool changed = assign();
    for (int iter = 0; iter < max_iter && changed; ++iter) {
        model.iterations = iter + 1;

        std::vector<FeatureVector> sums(k, FeatureVector(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a = model.assignments[i];
            ++counts[a];
            for (std::size_t d = 0; d < dim; ++d) {
                sums[a][d] += feats[i][d];
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
                model.centers[c] = feats[far];
                dist[far] = 0.0;
                continue;
            }
            for (std::size_t d = 0; d < dim; ++d) {
                model.centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
            }
        }
        changed = assign();
    }
    return model;
}

/// For each center, the corpus index closest to it (ties: lowest index).
inline std::vector<std::size_t> select_prototypes(std::span<const FeatureVector> feats, const ClusterModel& model) {
    std::vector<std::size_t> out;
    out.reserve(model.centers.size());
    for (const auto& c : model.centers) {
        out.push_back(nearest_index(feats, c));
    }
    return out;
}

/// Nearest target feature to a prototype. Repeated matches across
/// prototypes are allowed.
inline std::size_t match_target(std::span<const double> proto, std::span<const FeatureVector> target_feats) {
    return nearest_index(target_feats, proto);
}

} // namespace bmd
