#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <bmd/grid.hpp>
#include <bmd/rng.hpp>

namespace bmd::test {

/// Max over parameters of |a - n| / max(|a|, |n|, 1e-4), where n is the
/// central difference of loss() with step h.
inline double max_relative_fd_error(std::span<double> params, std::span<const double> analytic,
                                    const std::function<double()>& loss, double h = 1e-4) {
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + h;
        const double up = loss();
        params[i] = keep - h;
        const double down = loss();
        params[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double den = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / den);
    }
    return worst;
}

inline ImageGrid random_image(int h, int w, Rng& rng) {
    ImageGrid img(h, w);
    for (auto& v : img.values()) {
        v = uniform01(rng);
    }
    return img;
}

inline MaskGrid random_mask(int h, int w, int classes, Rng& rng) {
    MaskGrid m(h, w);
    for (auto& v : m.values()) {
        v = static_cast<Label>(uniform_index(rng, static_cast<std::size_t>(classes)));
    }
    return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("bmd_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace bmd::test
