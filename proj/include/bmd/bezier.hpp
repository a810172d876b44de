#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "grid.hpp"
#include "rng.hpp"

namespace bmd {

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

/// Cubic Bézier intensity curve. The endpoints are pinned to (0,0) and
/// (1,1); nondecreasing control x-coordinates make x(t) strictly increasing,
/// so the curve is a single-valued function of input intensity.
struct ControlPoints {
    Point p0{0.0, 0.0};
    Point p1{1.0 / 3.0, 1.0 / 3.0};
    Point p2{2.0 / 3.0, 2.0 / 3.0};
    Point p3{1.0, 1.0};

    static ControlPoints identity() { return {}; }

    static ControlPoints from_inner(double x1, double y1, double x2, double y2) {
        return {{0.0, 0.0}, {x1, y1}, {x2, y2}, {1.0, 1.0}};
    }

    bool valid() const {
        auto in_unit = [](const Point& p) { return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0; };
        return p0 == Point{0.0, 0.0} && p3 == Point{1.0, 1.0} && in_unit(p1) && in_unit(p2) &&
               p0.x <= p1.x && p1.x <= p2.x && p2.x <= p3.x;
    }

    void validate() const {
        if (!valid()) {
            throw std::invalid_argument("ControlPoints: endpoints must be (0,0),(1,1), inner points in the "
                                        "unit square with nondecreasing x");
        }
    }

    bool operator==(const ControlPoints&) const = default;
};

/// B(t) = sum_{i=0}^{3} C(3,i) (1-t)^{3-i} t^i P_i.
inline Point bernstein_eval(const ControlPoints& cp, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::domain_error("bernstein_eval: t must lie in [0,1]");
    }
    const double s = 1.0 - t;
    const double b0 = s * s * s;
    const double b1 = 3.0 * s * s * t;
    const double b2 = 3.0 * s * t * t;
    const double b3 = t * t * t;
    return {b0 * cp.p0.x + b1 * cp.p1.x + b2 * cp.p2.x + b3 * cp.p3.x,
            b0 * cp.p0.y + b1 * cp.p1.y + b2 * cp.p2.y + b3 * cp.p3.y};
}

/// Tabulated curve: values[q] = y at input intensity q/(resolution-1).
struct IntensityLUT {
    std::vector<double> values;

    int resolution() const noexcept { return static_cast<int>(values.size()); }

    /// Linear interpolation between table entries; x is clamped to [0,1].
    double operator()(double x) const noexcept {
        const double pos = std::clamp(x, 0.0, 1.0) * static_cast<double>(values.size() - 1);
        const auto i = static_cast<std::size_t>(pos);
        if (i + 1 >= values.size()) {
            return values.back();
        }
        const double f = pos - static_cast<double>(i);
        return values[i] + f * (values[i + 1] - values[i]);
    }
};

inline constexpr int kDefaultLutResolution = 1024;

/// Inverts x(t) by bisection at each grid input and stores y(t). Throws if
/// x(t) is found decreasing anywhere on a 1024-sample grid.
inline IntensityLUT build_lut(const ControlPoints& cp, int resolution = kDefaultLutResolution) {
    cp.validate();
    if (resolution < 256) {
        throw std::invalid_argument("build_lut: resolution must be >= 256");
    }
    constexpr int kMonotoneSamples = 1024;
    double prev = 0.0;
    for (int i = 0; i < kMonotoneSamples; ++i) {
        const double x = bernstein_eval(cp, i / double(kMonotoneSamples - 1)).x;
        if (x < prev) {
            throw std::invalid_argument("build_lut: x(t) is not monotone");
        }
        prev = x;
    }

    IntensityLUT lut;
    lut.values.resize(static_cast<std::size_t>(resolution));
    const double s1 = 3.0 * cp.p1.x;
    const double s2 = 3.0 * cp.p2.x;
    auto x_of = [&](double t) {
        const double s = 1.0 - t;
        return s * s * t * s1 + s * t * t * s2 + t * t * t;
    };
    double lo_start = 0.0;
    for (int q = 0; q < resolution; ++q) {
        const double target = q / double(resolution - 1);
        // x(t) is increasing, so the root for q lies right of the root for q-1
        double lo = lo_start;
        double hi = 1.0;
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            (x_of(mid) < target ? lo : hi) = mid;
        }
        lo_start = lo;
        lut.values[static_cast<std::size_t>(q)] = std::clamp(bernstein_eval(cp, 0.5 * (lo + hi)).y, 0.0, 1.0);
    }
    lut.values.front() = 0.0;
    lut.values.back() = 1.0;
    return lut;
}

inline ImageGrid apply_transform(const ImageGrid& img, const IntensityLUT& lut) {
    ImageGrid out(img.height(), img.width());
    for (std::size_t i = 0; i < img.size(); ++i) {
        out[i] = std::clamp(lut(img[i]), 0.0, 1.0);
    }
    return out;
}

/// Random curve for the augmentation baseline: inner x-coordinates sorted,
/// y-coordinates uniform in [0,1].
inline ControlPoints random_curve(Rng& rng) {
    double x1 = uniform01(rng);
    const double y1 = uniform01(rng);
    double x2 = uniform01(rng);
    const double y2 = uniform01(rng);
    if (x2 < x1) {
        std::swap(x1, x2);
    }
    return ControlPoints::from_inner(x1, y1, x2, y2);
}

inline void to_json(nlohmann::json& j, const ControlPoints& cp) {
    j = nlohmann::json{{"p0", {cp.p0.x, cp.p0.y}},
                       {"p1", {cp.p1.x, cp.p1.y}},
                       {"p2", {cp.p2.x, cp.p2.y}},
                       {"p3", {cp.p3.x, cp.p3.y}}};
}

inline void from_json(const nlohmann::json& j, ControlPoints& cp) {
    auto pt = [&](const char* key) {
        const auto& a = j.at(key);
        return Point{a.at(0).get<double>(), a.at(1).get<double>()};
    };
    cp = {pt("p0"), pt("p1"), pt("p2"), pt("p3")};
    cp.validate();
}

} // namespace bmd
