#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "bezier.hpp"
#include "features.hpp"
#include "grid.hpp"
#include "nelder_mead.hpp"
#include "rng.hpp"

namespace bmd {

/// Maps an unconstrained 4-vector (p1.x, p1.y, p2.x, p2.y) onto a valid
/// curve: clamp to [0,1], then sort the two x-coordinates.
inline ControlPoints project_params(std::span<const double> params) {
    if (params.size() != 4) {
        throw std::invalid_argument("project_params: expected 4 parameters");
    }
    std::array<double, 4> p{};
    for (std::size_t i = 0; i < 4; ++i) {
        p[i] = std::clamp(params[i], 0.0, 1.0);
    }
    if (p[2] < p[0]) {
        std::swap(p[0], p[2]);
    }
    return ControlPoints::from_inner(p[0], p[1], p[2], p[3]);
}

inline std::vector<double> curve_params(const ControlPoints& cp) {
    return {cp.p1.x, cp.p1.y, cp.p2.x, cp.p2.y};
}

/// Squared feature-space distance between the transformed source image and
/// the matched target's features.
inline double fit_objective(std::span<const double> params, const ImageGrid& source_img,
                            std::span<const double> target_feat, int lut_resolution = kDefaultLutResolution) {
    const auto lut = build_lut(project_params(params), lut_resolution);
    return squared_distance(extract_features(apply_transform(source_img, lut)), target_feat);
}

struct FitResult {
    ControlPoints curve;
    double objective = 0.0;
    int iterations = 0;
    std::size_t matched_target_index = 0;
    std::size_t prototype_index = 0;
};

struct AdaptationOptions {
    SimplexOptions simplex{};
    int kmeans_max_iter = 100;
    int lut_resolution = kDefaultLutResolution;
};

/// Bézier adaptation: cluster source features, take the source image nearest
/// each center as a prototype, match it to its nearest target image and fit
/// a curve by multi-start Nelder–Mead (identity curve, then random curves).
/// One result per prototype, in cluster order.
inline std::vector<FitResult> fit_bezier_adaptation(std::span<const ImageGrid> source_imgs,
                                                    std::span<const ImageGrid> target_imgs, int n_s,
                                                    int restarts, std::uint64_t seed,
                                                    const AdaptationOptions& opts = {}) {
    if (source_imgs.empty() || target_imgs.empty()) {
        throw std::invalid_argument("fit_bezier_adaptation: both corpora must be nonempty");
    }
    if (restarts < 1) {
        throw std::invalid_argument("fit_bezier_adaptation: restarts must be >= 1");
    }
    std::vector<FeatureVector> src_feats;
    std::vector<FeatureVector> tgt_feats;
    for (const auto& img : source_imgs) {
        src_feats.push_back(extract_features(img));
    }
    for (const auto& img : target_imgs) {
        tgt_feats.push_back(extract_features(img));
    }

    const auto clusters = kmeans(src_feats, n_s, seed, opts.kmeans_max_iter);
    const auto prototypes = select_prototypes(src_feats, clusters);

    std::vector<FitResult> results;
    results.reserve(prototypes.size());
    for (std::size_t j = 0; j < prototypes.size(); ++j) {
        const std::size_t proto = prototypes[j];
        const std::size_t match = match_target(src_feats[proto], tgt_feats);
        const ImageGrid& src = source_imgs[proto];
        const FeatureVector& target = tgt_feats[match];
        auto objective = [&](std::span<const double> p) {
            return fit_objective(p, src, target, opts.lut_resolution);
        };

        Rng rng = make_rng(seed, 0x1000 + j);
        FitResult best;
        best.objective = std::numeric_limits<double>::infinity();
        for (int r = 0; r < restarts; ++r) {
            const ControlPoints start = r == 0 ? ControlPoints::identity() : random_curve(rng);
            const auto run = nelder_mead(objective, curve_params(start), opts.simplex);
            if (run.value < best.objective) {
                best.curve = project_params(run.x);
                best.objective = run.value;
            }
            best.iterations += run.iterations;
        }
        best.matched_target_index = match;
        best.prototype_index = proto;
        results.push_back(best);
    }
    return results;
}

inline std::vector<ControlPoints> curve_bank(std::span<const FitResult> fits) {
    std::vector<ControlPoints> bank;
    for (const auto& f : fits) {
        bank.push_back(f.curve);
    }
    return bank;
}

} // namespace bmd
