#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "features.hpp"
#include "log.hpp"
#include "metrics.hpp"
#include "pgm.hpp"
#include "pipeline.hpp"
#include "serialize.hpp"

/// Filesystem-backed pipeline stages. Each stage reads only its declared
/// inputs under the output directory and writes only its own outputs.
namespace bmd::stages {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string indexed(const char* stem, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu.pgm", stem, i);
    return buf;
}

/// Artifact locations relative to the output directory.
struct Layout {
    fs::path root;

    fs::path manifest() const { return root / "data" / "manifest.json"; }
    fs::path data() const { return root / "data"; }
    fs::path withheld() const { return root / "eval_only" / "target_train_masks"; }
    fs::path bezier() const { return root / "bezier"; }
    fs::path curve_bank() const { return bezier() / "curve_bank.json"; }
    fs::path adapted() const { return root / "adapted"; }
    fs::path models() const { return root / "models"; }
    fs::path seg_noadapt() const { return models() / "seg_noadapt.bin"; }
    fs::path seg_bezier() const { return models() / "seg_bezier.bin"; }
    fs::path pseudo() const { return root / "pseudo"; }
    fs::path conditions() const { return pseudo() / "conditions.json"; }
    fs::path score_net() const { return models() / "score_net.bin"; }
    fs::path schedule() const { return models() / "schedule.json"; }
    fs::path synth() const { return root / "synth"; }
    fs::path target_model() const { return models() / "target.bin"; }
    fs::path logs() const { return root / "logs"; }
    fs::path metrics() const { return root / "metrics" / "metrics.csv"; }
};

inline void require_finite(std::span<const double> params, const std::string& what) {
    for (double v : params) {
        if (!std::isfinite(v)) {
            throw NumericError(what + ": non-finite parameters after training");
        }
    }
}

// ---- dataset I/O ----

inline void gen_data(const PipelineConfig& cfg, const Layout& L) {
    const Dataset ds = make_pipeline_dataset(cfg);
    json manifest{{"seed", cfg.seed}, {"num_classes", ds.num_classes},
                  {"height", cfg.phantom.height}, {"width", cfg.phantom.width}};
    auto write_labeled = [&](const char* split, std::span<const LabeledImage> items) {
        json list = json::array();
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto img = fs::path(split) / indexed("img", i);
            const auto mask = fs::path(split) / indexed("mask", i);
            pgm::write_image(L.data() / img, items[i].image);
            pgm::write_mask(L.data() / mask, items[i].mask);
            list.push_back({{"image", img.generic_string()}, {"mask", mask.generic_string()}});
        }
        manifest[split] = list;
    };
    write_labeled("source_train", ds.source_train);
    write_labeled("target_test", ds.target_test);
    json unl = json::array();
    for (std::size_t i = 0; i < ds.target_train.size(); ++i) {
        const auto img = fs::path("target_train") / indexed("img", i);
        pgm::write_image(L.data() / img, ds.target_train[i]);
        pgm::write_mask(L.withheld() / indexed("mask", i), ds.target_train_withheld[i]);
        unl.push_back({{"image", img.generic_string()}});
    }
    manifest["target_train"] = unl;
    io::write_json(L.manifest(), manifest);
    log(LogLevel::info, "gen-data: wrote " + L.manifest().string());
}

struct LoadedData {
    int num_classes = 0;
    std::vector<LabeledImage> source_train;
    std::vector<ImageGrid> target_train;
    std::vector<LabeledImage> target_test;
};

inline LoadedData load_data(const Layout& L) {
    const json m = io::read_json(L.manifest());
    LoadedData d;
    d.num_classes = m.at("num_classes").get<int>();
    auto labeled = [&](const char* split) {
        std::vector<LabeledImage> out;
        for (const auto& e : m.at(split)) {
            out.push_back({pgm::read_image(L.data() / e.at("image").get<std::string>()),
                           pgm::read_mask(L.data() / e.at("mask").get<std::string>())});
        }
        return out;
    };
    d.source_train = labeled("source_train");
    d.target_test = labeled("target_test");
    for (const auto& e : m.at("target_train")) {
        d.target_train.push_back(pgm::read_image(L.data() / e.at("image").get<std::string>()));
    }
    return d;
}

inline std::vector<LabeledImage> read_pairs(const fs::path& dir) {
    std::vector<LabeledImage> out;
    for (std::size_t i = 0;; ++i) {
        const auto img = dir / indexed("img", i);
        if (!fs::exists(img)) {
            break;
        }
        out.push_back({pgm::read_image(img), pgm::read_mask(dir / indexed("mask", i))});
    }
    if (out.empty()) {
        throw MissingArtifact((dir / indexed("img", 0)).string());
    }
    return out;
}

inline void write_pairs(const fs::path& dir, std::span<const LabeledImage> items) {
    fs::remove_all(dir);
    for (std::size_t i = 0; i < items.size(); ++i) {
        pgm::write_image(dir / indexed("img", i), items[i].image);
        pgm::write_mask(dir / indexed("mask", i), items[i].mask);
    }
}

// ---- stages ----

inline void fit_bezier(const PipelineConfig& cfg, const Layout& L) {
    const auto d = load_data(L);
    const auto src = images_of(d.source_train);
    const int n_s = std::min<int>(cfg.n_s, static_cast<int>(src.size()));
    const auto fits = fit_bezier_adaptation(src, d.target_train, n_s, cfg.restarts, cfg.seed);
    const auto bank = curve_bank(fits);
    io::write_curve_bank(L.curve_bank(), bank);
    io::write_json(L.bezier() / "fits.json", io::fit_sidecar(fits));

    std::vector<FeatureVector> sf;
    std::vector<FeatureVector> tf;
    for (const auto& img : src) {
        sf.push_back(extract_features(img));
    }
    for (const auto& img : d.target_train) {
        tf.push_back(extract_features(img));
    }
    io::write_feature_csv(L.bezier() / "source_features.csv", sf);
    io::write_feature_csv(L.bezier() / "target_features.csv", tf);
    io::write_json(L.bezier() / "clusters.json", io::cluster_json(kmeans(sf, n_s, cfg.seed, 100)));
    log(LogLevel::info, "fit-bezier: " + std::to_string(bank.size()) + " curves");
}

inline void apply_bezier(const PipelineConfig&, const Layout& L) {
    const auto d = load_data(L);
    const auto bank = io::read_curve_bank(L.curve_bank());
    write_pairs(L.adapted(), adapt_source(d.source_train, bank));
    log(LogLevel::info, "apply-bezier: wrote " + L.adapted().string());
}

inline void train_seg_stage(const PipelineConfig& cfg, const Layout& L) {
    const auto d = load_data(L);
    const auto bank = io::read_curve_bank(L.curve_bank());
    const auto noadapt = train_seg_model(cfg, d.source_train, {});
    const auto adapted = train_seg_model(cfg, d.source_train, bank);
    require_finite(noadapt.net.parameters(), "train-seg");
    require_finite(adapted.net.parameters(), "train-seg");
    io::save_classifier(L.seg_noadapt(), noadapt);
    io::save_classifier(L.seg_bezier(), adapted);
    log(LogLevel::info, "train-seg: wrote no-adaptation and Bezier-adapted models");
}

inline json condition_json(const RankedPrediction& rp) {
    json labels = json::array();
    json conf = json::array();
    for (std::size_t i = 0; i < rp.labels.size(); ++i) {
        labels.push_back(std::vector<int>(rp.labels[i].begin(), rp.labels[i].end()));
        conf.push_back(std::vector<double>(rp.confidences[i].begin(), rp.confidences[i].end()));
    }
    return {{"k", rp.k}, {"height", rp.height()}, {"width", rp.width()}, {"labels", labels}, {"confidences", conf}};
}

inline RankedPrediction condition_from_json(const json& j) {
    RankedPrediction rp;
    rp.k = j.at("k").get<int>();
    const int h = j.at("height").get<int>();
    const int w = j.at("width").get<int>();
    for (int i = 0; i < rp.k; ++i) {
        const auto lab = j.at("labels").at(static_cast<std::size_t>(i)).get<std::vector<int>>();
        const auto con = j.at("confidences").at(static_cast<std::size_t>(i)).get<std::vector<double>>();
        if (lab.size() != static_cast<std::size_t>(h) * w || con.size() != lab.size()) {
            throw ConfigError("conditions: size mismatch");
        }
        MaskGrid m(h, w);
        ImageGrid c(h, w);
        for (std::size_t p = 0; p < lab.size(); ++p) {
            m[p] = static_cast<Label>(lab[p]);
            c[p] = con[p];
        }
        rp.labels.push_back(std::move(m));
        rp.confidences.push_back(std::move(c));
    }
    return rp;
}

/// Thresholded, renormalized arg-k conditions for every target-train image,
/// plus arg-max label maps for inspection.
inline void pseudo_label(const PipelineConfig& cfg, const Layout& L) {
    const auto d = load_data(L);
    const auto model = io::load_classifier(L.seg_bezier());
    json all = json::array();
    fs::remove_all(L.pseudo());
    for (std::size_t i = 0; i < d.target_train.size(); ++i) {
        const auto rp = cdm_condition(model, d.target_train[i], cfg.k, cfg.delta);
        all.push_back(condition_json(rp));
        pgm::write_mask(L.pseudo() / indexed("argmax", i), rp.labels.front());
    }
    io::write_json(L.conditions(), all);
    log(LogLevel::info, "pseudo-label: " + std::to_string(d.target_train.size()) + " conditions");
}

inline void train_cdm_stage(const PipelineConfig& cfg, const Layout& L) {
    const auto d = load_data(L);
    const json all = io::read_json(L.conditions());
    std::vector<RankedPrediction> conds;
    for (const auto& j : all) {
        conds.push_back(condition_from_json(j));
    }
    if (conds.size() != d.target_train.size()) {
        throw ConfigError("conditions.json does not match the target-train split");
    }
    CdmOptions o = cfg.cdm_options();
    o.seed = cfg.seed;
    const auto schedule = cfg.schedule();
    const auto tr = fit_score_net(d.target_train, conds, d.num_classes, schedule, o);
    require_finite(tr.net.net.parameters(), "train-cdm");
    io::save_score_net(L.score_net(), tr.net);
    io::write_json(L.schedule(), io::schedule_json(schedule));
    auto out = io::open_out(L.logs() / "cdm_loss.csv");
    out << "iteration,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < tr.losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i, tr.losses[i]);
        out << buf;
    }
    log(LogLevel::info, "train-cdm: final loss " + std::to_string(tr.losses.back()));
}

inline void sample_stage(const PipelineConfig& cfg, const Layout& L) {
    const auto d = load_data(L);
    const auto net = io::load_score_net(L.score_net());
    const auto schedule = io::schedule_from_json(io::read_json(L.schedule()));
    const auto out = sample_synthetic(net, schedule, d.source_train, cfg.n_samples, cfg.seed);
    write_pairs(L.synth(), out);
    log(LogLevel::info, "sample: " + std::to_string(out.size()) + " image/mask pairs");
}

inline void train_target_stage(const PipelineConfig& cfg, const Layout& L) {
    const auto d = load_data(L);
    const auto init = io::load_classifier(L.seg_bezier());
    const auto synth = read_pairs(L.synth());
    const auto real = read_pairs(L.adapted());
    const auto tr = train_target_model(cfg, init, synth, real, d.target_train);
    require_finite(tr.teacher.net.parameters(), "train-target");
    io::save_classifier(L.target_model(), tr.teacher);
    io::write_pl_log(L.logs() / "pseudo_label_training.csv", tr.log);
    log(LogLevel::info, "train-target: wrote " + L.target_model().string());
}

inline void evaluate_stage(const PipelineConfig&, const Layout& L) {
    const auto d = load_data(L);
    const auto noadapt = io::load_classifier(L.seg_noadapt());
    const auto adapted = io::load_classifier(L.seg_bezier());
    const auto target = io::load_classifier(L.target_model());
    auto out = io::open_out(L.metrics());
    out << kMetricCsvHeader;
    write_metric_rows(out, "no_adaptation", "target_test", evaluate_model(noadapt, d.target_test));
    write_metric_rows(out, "bezier_adapted", "target_test", evaluate_model(adapted, d.target_test));
    const auto full = evaluate_model(target, d.target_test);
    write_metric_rows(out, "full_pipeline", "target_test", full);
    log(LogLevel::info, "evaluate: full-pipeline mean Dice " + std::to_string(full.mean_dice()));
}

inline void run_all(const PipelineConfig& cfg, const Layout& L) {
    gen_data(cfg, L);
    fit_bezier(cfg, L);
    apply_bezier(cfg, L);
    train_seg_stage(cfg, L);
    pseudo_label(cfg, L);
    train_cdm_stage(cfg, L);
    sample_stage(cfg, L);
    train_target_stage(cfg, L);
    evaluate_stage(cfg, L);
}

} // namespace bmd::stages
