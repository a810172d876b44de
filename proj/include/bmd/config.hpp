#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "adaptation.hpp"
#include "diffusion.hpp"
#include "error.hpp"
#include "phantom.hpp"
#include "pseudolabel.hpp"
#include "segmodel.hpp"

namespace bmd {

/// Flat `key = value` lines; `#` starts a comment. Later keys override
/// earlier ones.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        }
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "bmd_out";

    PhantomConfig phantom{};
    int n_source_train = 24;
    int n_target_train = 24;
    int n_target_test = 10;
    ModalityStyle source_style = ModalityStyle::identity();
    ModalityStyle target_style{0.45, 0.9, 0.05, {{0.0, 0.0}, {0.5, 0.6}, {1.0, 1.0}}};

    int n_s = 8;
    int restarts = 5;

    SegTrainOptions seg{};

    // uncertainty-guided CDM
    int k = 2;
    double delta = 0.8;
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    CdmOptions cdm{};
    int n_samples = 24;

    PLConfig pl{};

    NoiseSchedule schedule() const { return NoiseSchedule::linear(T, beta_start, beta_end); }

    /// CDM options with k, delta and the global seed folded in.
    CdmOptions cdm_options(int k_override = 0) const {
        CdmOptions o = cdm;
        o.k = k_override > 0 ? k_override : k;
        o.delta = delta;
        return o;
    }

    void validate() const {
        try {
            phantom.validate();
            source_style.validate();
            target_style.validate();
            pl.validate();
            schedule();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (n_source_train < 1 || n_target_train < 1 || n_target_test < 1) {
            throw ConfigError("split sizes must be >= 1");
        }
        if (n_s < 1 || restarts < 1) {
            throw ConfigError("bezier.n_s and bezier.restarts must be >= 1");
        }
        if (k < 1 || k > phantom.num_classes) {
            throw ConfigError("cdm.k must lie in [1, num_classes]");
        }
        if (!(delta >= 0.0 && delta <= 1.0)) {
            throw ConfigError("cdm.delta must lie in [0,1]");
        }
        if (n_samples < 1) {
            throw ConfigError("sample.n_samples must be >= 1");
        }
        if (seg.epochs < 1 || seg.batch_pixels < 1 || cdm.iters < 1 || cdm.batch < 1) {
            throw ConfigError("training budgets must be >= 1");
        }
    }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError(key + ": cannot parse '" + v + "'");
    }
    return out;
}

/// "x:y,x:y,..." knot list.
inline std::vector<std::pair<double, double>> parse_knots(const std::string& key, const std::string& v) {
    std::vector<std::pair<double, double>> knots;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError(key + ": knots must be x:y pairs");
        }
        knots.emplace_back(parse_number<double>(key, item.substr(0, colon)),
                           parse_number<double>(key, item.substr(colon + 1)));
    }
    return knots;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError(key + ": expected true or false");
}

} // namespace detail

inline PipelineConfig config_from_text(const std::string& text) {
    PipelineConfig cfg;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto num = [](auto& field) -> Setter {
        return [&field](const std::string& k, const std::string& v) {
            field = detail::parse_number<std::remove_reference_t<decltype(field)>>(k, v);
        };
    };
    auto style = [&](const std::string& prefix, ModalityStyle& s, std::map<std::string, Setter>& table) {
        table[prefix + ".gamma"] = num(s.gamma);
        table[prefix + ".gain"] = num(s.gain);
        table[prefix + ".bias"] = num(s.bias);
        table[prefix + ".knots"] = [&s](const std::string& k, const std::string& v) {
            s.contrast_knots = detail::parse_knots(k, v);
        };
    };

    std::map<std::string, Setter> table{
        {"seed", num(cfg.seed)},
        {"out_dir", [&](const std::string&, const std::string& v) { cfg.out_dir = v; }},
        {"phantom.height", num(cfg.phantom.height)},
        {"phantom.width", num(cfg.phantom.width)},
        {"phantom.num_classes", num(cfg.phantom.num_classes)},
        {"phantom.shapes_per_class", num(cfg.phantom.shapes_per_class)},
        {"phantom.noise_sigma", num(cfg.phantom.noise_sigma)},
        {"split.source_train", num(cfg.n_source_train)},
        {"split.target_train", num(cfg.n_target_train)},
        {"split.target_test", num(cfg.n_target_test)},
        {"bezier.n_s", num(cfg.n_s)},
        {"bezier.restarts", num(cfg.restarts)},
        {"seg.patch_radius", num(cfg.seg.patch_radius)},
        {"seg.hidden", num(cfg.seg.hidden_units)},
        {"seg.epochs", num(cfg.seg.epochs)},
        {"seg.batch_pixels", num(cfg.seg.batch_pixels)},
        {"seg.lr", num(cfg.seg.lr)},
        {"cdm.k", num(cfg.k)},
        {"cdm.delta", num(cfg.delta)},
        {"cdm.T", num(cfg.T)},
        {"cdm.beta_start", num(cfg.beta_start)},
        {"cdm.beta_end", num(cfg.beta_end)},
        {"cdm.iters", num(cfg.cdm.iters)},
        {"cdm.batch", num(cfg.cdm.batch)},
        {"cdm.lr", num(cfg.cdm.lr)},
        {"cdm.pixels_per_image", num(cfg.cdm.pixels_per_image)},
        {"cdm.patch_radius", num(cfg.cdm.patch_radius)},
        {"cdm.hidden", num(cfg.cdm.hidden_units)},
        {"cdm.ema_decay", num(cfg.cdm.ema_decay)},
        {"cdm.cosine_decay",
         [&](const std::string& k, const std::string& v) { cfg.cdm.cosine_decay = detail::parse_bool(k, v); }},
        {"sample.n_samples", num(cfg.n_samples)},
        {"pl.lambda", num(cfg.pl.lambda_pl)},
        {"pl.tau_u", num(cfg.pl.tau_u)},
        {"pl.tau_l", num(cfg.pl.tau_l)},
        {"pl.ema_momentum", num(cfg.pl.ema_momentum)},
        {"pl.epochs", num(cfg.pl.epochs)},
        {"pl.batch_pixels", num(cfg.pl.batch_pixels)},
        {"pl.lr", num(cfg.pl.lr)},
    };
    style("source", cfg.source_style, table);
    style("target", cfg.target_style, table);

    for (const auto& [key, value] : parse_key_values(text)) {
        const auto it = table.find(key);
        if (it == table.end()) {
            throw ConfigError("unknown key '" + key + "'");
        }
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return config_from_text(ss.str());
}

} // namespace bmd
