#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adaptation.hpp"
#include "bezier.hpp"
#include "config.hpp"
#include "diffusion.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "pseudolabel.hpp"
#include "segmodel.hpp"

namespace bmd {

inline Dataset make_pipeline_dataset(const PipelineConfig& cfg) {
    return make_dataset(cfg.phantom, cfg.source_style, cfg.target_style, cfg.n_source_train, cfg.n_target_train,
                        cfg.n_target_test, cfg.seed);
}

inline std::vector<ImageGrid> images_of(std::span<const LabeledImage> data) {
    std::vector<ImageGrid> out;
    for (const auto& d : data) {
        out.push_back(d.image);
    }
    return out;
}

inline std::vector<FitResult> fit_curves(const PipelineConfig& cfg, const Dataset& ds) {
    const auto src = images_of(ds.source_train);
    return fit_bezier_adaptation(src, ds.target_train, std::min<int>(cfg.n_s, static_cast<int>(src.size())),
                                 cfg.restarts, cfg.seed);
}

/// Source image i warped by curve i mod |bank|.
inline std::vector<LabeledImage> adapt_source(std::span<const LabeledImage> source,
                                              std::span<const ControlPoints> bank) {
    std::vector<IntensityLUT> luts;
    for (const auto& cp : bank) {
        luts.push_back(build_lut(cp));
    }
    std::vector<LabeledImage> out;
    for (std::size_t i = 0; i < source.size(); ++i) {
        out.push_back({apply_transform(source[i].image, luts[i % luts.size()]), source[i].mask});
    }
    return out;
}

inline PixelClassifier train_seg_model(const PipelineConfig& cfg, std::span<const LabeledImage> source,
                                       std::span<const ControlPoints> bank) {
    SegTrainOptions o = cfg.seg;
    o.num_classes = cfg.phantom.num_classes;
    o.seed = cfg.seed;
    o.augment = bank.empty() ? Augment::none : Augment::curve_bank;
    o.bank.assign(bank.begin(), bank.end());
    return train_seg(source, o);
}

inline CdmTraining train_cdm_model(const PipelineConfig& cfg, std::span<const ImageGrid> target_train,
                                   const PixelClassifier& seg_model, int k) {
    CdmOptions o = cfg.cdm_options(k);
    o.seed = cfg.seed;
    return train_cdm(target_train, seg_model, cfg.schedule(), o);
}

/// n samples, conditioned on source masks in order (cycling).
inline std::vector<LabeledImage> sample_synthetic(const ScoreNet& net, const NoiseSchedule& schedule,
                                                  std::span<const LabeledImage> source, int n, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x5a3);
    std::vector<LabeledImage> out;
    for (int i = 0; i < n; ++i) {
        const auto& mask = source[static_cast<std::size_t>(i) % source.size()].mask;
        out.push_back({sample(net, mask, schedule, rng), mask});
    }
    return out;
}

inline TargetTraining train_target_model(const PipelineConfig& cfg, const PixelClassifier& init,
                                         std::span<const LabeledImage> synth,
                                         std::span<const LabeledImage> real_adapted,
                                         std::span<const ImageGrid> unlabeled) {
    PLConfig pl = cfg.pl;
    pl.seed = cfg.seed;
    return train_target(init, synth, real_adapted, unlabeled, pl);
}

struct BenchmarkResult {
    MetricReport no_adaptation;
    MetricReport bezier_adapted;
    MetricReport full_pipeline;
    /// same pipeline with a k = 1 (arg-max only) CDM; empty unless requested
    MetricReport full_pipeline_k1;
};

/// Whole pipeline in memory, evaluated on the target test split.
inline BenchmarkResult run_benchmark(const PipelineConfig& cfg, bool full, bool k1_ablation) {
    const Dataset ds = make_pipeline_dataset(cfg);
    const auto fits = fit_curves(cfg, ds);
    const auto bank = curve_bank(fits);

    BenchmarkResult r;
    const auto noadapt = train_seg_model(cfg, ds.source_train, {});
    const auto adapted = train_seg_model(cfg, ds.source_train, bank);
    r.no_adaptation = evaluate_model(noadapt, ds.target_test);
    r.bezier_adapted = evaluate_model(adapted, ds.target_test);
    if (!full) {
        return r;
    }
    const auto real = adapt_source(ds.source_train, bank);
    auto variant = [&](int k) {
        const auto cdm = train_cdm_model(cfg, ds.target_train, adapted, k);
        const auto synth = sample_synthetic(cdm.net, cfg.schedule(), ds.source_train, cfg.n_samples, cfg.seed);
        return evaluate_model(train_target_model(cfg, adapted, synth, real, ds.target_train).teacher,
                              ds.target_test);
    };
    r.full_pipeline = variant(cfg.k);
    if (k1_ablation) {
        r.full_pipeline_k1 = variant(1);
    }
    return r;
}

} // namespace bmd
