#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <bmd/config.hpp>
#include <bmd/error.hpp>
#include <bmd/stages.hpp>

namespace {

using Stage = std::function<void(const bmd::PipelineConfig&, const bmd::stages::Layout&)>;

const std::map<std::string, std::pair<Stage, std::string>>& stage_table() {
    namespace s = bmd::stages;
    static const std::map<std::string, std::pair<Stage, std::string>> table{
        {"gen-data", {s::gen_data, "generate the two-modality phantom dataset"}},
        {"fit-bezier", {s::fit_bezier, "fit the Bezier curve bank"}},
        {"apply-bezier", {s::apply_bezier, "write Bezier-adapted source images"}},
        {"train-seg", {s::train_seg_stage, "train no-adaptation and Bezier-adapted segmenters"}},
        {"pseudo-label", {s::pseudo_label, "write thresholded arg-k conditions for target images"}},
        {"train-cdm", {s::train_cdm_stage, "train the uncertainty-guided conditional diffusion model"}},
        {"sample", {s::sample_stage, "sample synthetic target images from source masks"}},
        {"train-target", {s::train_target_stage, "mean-teacher training on synthetic and target data"}},
        {"evaluate", {s::evaluate_stage, "write metric CSVs for all model variants"}},
        {"run-all", {s::run_all, "run every stage in order"}},
    };
    return table;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bezier-adapted, uncertainty-guided diffusion domain adaptation on synthetic phantoms"};
    app.require_subcommand(1);
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "plain-text key = value config")->required();
    app.add_option("--out", out_dir, "output directory (overrides out_dir)");
    app.add_option("--seed", seed, "global seed (overrides seed)");
    for (const auto& [name, entry] : stage_table()) {
        app.add_subcommand(name, entry.second);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        auto cfg = bmd::load_config(config_path);
        if (!out_dir.empty()) {
            cfg.out_dir = out_dir;
        }
        if (seed) {
            cfg.seed = *seed;
        }
        const bmd::stages::Layout layout{cfg.out_dir};
        const auto* sub = app.get_subcommands().front();
        stage_table().at(sub->get_name()).first(cfg, layout);
        return 0;
    } catch (const bmd::ConfigError& e) {
        std::cerr << "bmd: config error: " << e.what() << '\n';
        return 2;
    } catch (const bmd::MissingArtifact& e) {
        std::cerr << "bmd: " << e.what() << '\n';
        return 3;
    } catch (const bmd::NumericError& e) {
        std::cerr << "bmd: numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "bmd: " << e.what() << '\n';
        return 1;
    }
}
