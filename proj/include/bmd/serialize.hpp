#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaptation.hpp"
#include "bezier.hpp"
#include "diffusion.hpp"
#include "error.hpp"
#include "features.hpp"
#include "pseudolabel.hpp"
#include "segmodel.hpp"

namespace bmd::io {

using nlohmann::json;

inline constexpr std::array<char, 8> kBlobMagic{'B', 'M', 'D', 'B', 'L', 'O', 'B', '1'};

static_assert(std::endian::native == std::endian::little, "model blobs assume a little-endian host");

inline std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) {
        throw MissingArtifact(path.string());
    }
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    return out;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

inline json read_json(const std::filesystem::path& path) {
    auto in = open_in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// magic, u64 header length, JSON header, float32 parameters.
inline void write_blob(const std::filesystem::path& path, const json& header, std::span<const double> params) {
    auto out = open_out(path, std::ios::binary);
    const std::string h = header.dump();
    const std::uint64_t len = h.size();
    out.write(kBlobMagic.data(), kBlobMagic.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (double v : params) {
        const auto f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
}

struct Blob {
    json header;
    std::vector<double> params;
};

inline Blob read_blob(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::array<char, 8> magic{};
    std::uint64_t len = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || magic != kBlobMagic || len > (1u << 20)) {
        throw ConfigError(path.string() + ": not a model blob");
    }
    std::string h(len, '\0');
    in.read(h.data(), static_cast<std::streamsize>(len));
    Blob b;
    try {
        b.header = json::parse(h);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    const auto count = b.header.at("parameter_count").get<std::size_t>();
    b.params.resize(count);
    for (auto& v : b.params) {
        float f = 0.0f;
        in.read(reinterpret_cast<char*>(&f), sizeof f);
        v = f;
    }
    if (!in) {
        throw ConfigError(path.string() + ": truncated model blob");
    }
    return b;
}

inline json layer_header(const TanhMlp& net) {
    return {{"inputs", net.inputs()},
            {"hidden", net.hidden()},
            {"outputs", net.outputs()},
            {"parameter_count", net.parameter_count()}};
}

inline void save_classifier(const std::filesystem::path& path, const PixelClassifier& m) {
    json h = layer_header(m.net);
    h["kind"] = "pixel_classifier";
    h["patch_radius"] = m.patch_radius;
    h["num_classes"] = m.num_classes;
    write_blob(path, h, m.net.parameters());
}

inline PixelClassifier load_classifier(const std::filesystem::path& path) {
    const auto b = read_blob(path);
    if (b.header.value("kind", "") != "pixel_classifier") {
        throw ConfigError(path.string() + ": not a pixel classifier");
    }
    PixelClassifier m{b.header.at("patch_radius").get<int>(), b.header.at("num_classes").get<int>(),
                      TanhMlp(b.header.at("inputs").get<int>(), b.header.at("hidden").get<int>(),
                              b.header.at("outputs").get<int>())};
    m.net.set_parameters(b.params);
    return m;
}

inline void save_score_net(const std::filesystem::path& path, const ScoreNet& s) {
    json h = layer_header(s.net);
    h["kind"] = "score_net";
    h["patch_radius"] = s.patch_radius;
    h["num_classes"] = s.num_classes;
    h["sigma_data"] = s.sigma_data;
    write_blob(path, h, s.net.parameters());
}

inline ScoreNet load_score_net(const std::filesystem::path& path) {
    const auto b = read_blob(path);
    if (b.header.value("kind", "") != "score_net") {
        throw ConfigError(path.string() + ": not a score net");
    }
    ScoreNet s{b.header.at("patch_radius").get<int>(), b.header.at("num_classes").get<int>(),
               TanhMlp(b.header.at("inputs").get<int>(), b.header.at("hidden").get<int>(),
                       b.header.at("outputs").get<int>()),
               b.header.at("sigma_data").get<double>()};
    s.net.set_parameters(b.params);
    return s;
}

inline json schedule_json(const NoiseSchedule& s) {
    return {{"T", s.T}, {"betas", s.betas}};
}

inline NoiseSchedule schedule_from_json(const json& j) {
    NoiseSchedule s;
    s.T = j.at("T").get<int>();
    s.betas = j.at("betas").get<std::vector<double>>();
    if (static_cast<int>(s.betas.size()) != s.T) {
        throw ConfigError("schedule: betas length differs from T");
    }
    s.validate();
    double bar = 1.0;
    for (double b : s.betas) {
        s.alphas.push_back(1.0 - b);
        bar *= 1.0 - b;
        s.alpha_bars.push_back(bar);
        s.lambda_weights.push_back(1.0);
    }
    return s;
}

/// Curve bank as a JSON array of control-point records.
inline void write_curve_bank(const std::filesystem::path& path, std::span<const ControlPoints> bank) {
    write_json(path, json(std::vector<ControlPoints>(bank.begin(), bank.end())));
}

inline std::vector<ControlPoints> read_curve_bank(const std::filesystem::path& path) {
    try {
        return read_json(path).get<std::vector<ControlPoints>>();
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// Sidecar with objectives and matched indices, one record per curve.
inline json fit_sidecar(std::span<const FitResult> fits) {
    json arr = json::array();
    for (const auto& f : fits) {
        arr.push_back({{"objective", f.objective},
                       {"iterations", f.iterations},
                       {"prototype_index", f.prototype_index},
                       {"matched_target_index", f.matched_target_index}});
    }
    return arr;
}

inline void write_feature_csv(const std::filesystem::path& path, std::span<const FeatureVector> feats) {
    auto out = open_out(path);
    const std::size_t d = feats.empty() ? static_cast<std::size_t>(kFeatureDim) : feats.front().size();
    for (std::size_t i = 0; i < d; ++i) {
        out << (i ? "," : "") << 'f' << i;
    }
    out << '\n';
    char buf[32];
    for (const auto& f : feats) {
        for (std::size_t i = 0; i < f.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", f[i]);
            out << (i ? "," : "") << buf;
        }
        out << '\n';
    }
}

inline json cluster_json(const ClusterModel& m) {
    return {{"centers", m.centers},
            {"assignments", m.assignments},
            {"inertia", m.inertia},
            {"iterations", m.iterations}};
}

inline void write_pl_log(const std::filesystem::path& path, std::span<const PLEpochLog> log) {
    auto out = open_out(path);
    out << "epoch,tau,supervised_loss,pseudo_loss,retained_fraction\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.tau, e.supervised_loss,
                      e.pseudo_loss, e.retained_fraction);
        out << buf;
    }
}

} // namespace bmd::io
