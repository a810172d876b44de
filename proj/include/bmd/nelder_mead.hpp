#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "error.hpp"

namespace bmd {

struct SimplexOptions {
    double alpha = 1.0;  // reflection
    double gamma = 2.0;  // expansion
    double rho = 0.5;    // contraction
    double sigma = 0.5;  // shrink
    int max_iter = 400;
    double f_tol = 1e-8;
    double x_tol = 1e-6;
    double init_step = 0.15;

    void validate() const {
        if (!(alpha > 0.0) || !(gamma > 1.0) || !(rho > 0.0 && rho < 1.0) || !(sigma > 0.0 && sigma < 1.0)) {
            throw std::invalid_argument("SimplexOptions: need alpha>0, gamma>1, 0<rho<1, 0<sigma<1");
        }
        if (max_iter < 0 || init_step == 0.0) {
            throw std::invalid_argument("SimplexOptions: max_iter >= 0 and init_step != 0 required");
        }
    }
};

struct SimplexResult {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    /// best objective value after each iteration (index 0 = initial simplex)
    std::vector<double> best_history;
};

/// Derivative-free Nelder–Mead minimization. The initial simplex is x0 plus
/// one point per axis offset by init_step. Stops after max_iter iterations
/// or once both the f-spread falls below f_tol and the simplex diameter
/// (max distance from the best vertex) falls below x_tol. Non-finite values
/// after initialization are treated as +inf.
template <class Objective>
SimplexResult nelder_mead(Objective&& f, std::vector<double> x0, const SimplexOptions& opts = {}) {
    opts.validate();
    const std::size_t n = x0.size();
    if (n == 0) {
        throw std::invalid_argument("nelder_mead: empty starting point");
    }

    auto eval = [&](const std::vector<double>& x) {
        const double v = f(std::span<const double>(x));
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<std::vector<double>> pts(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) {
        pts[i + 1][i] += opts.init_step;
    }
    std::vector<double> vals(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        vals[i] = f(std::span<const double>(pts[i]));
        if (!std::isfinite(vals[i])) {
            throw NumericError("nelder_mead: objective is not finite on the initial simplex");
        }
    }

    std::vector<std::size_t> order(n + 1);
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        std::vector<std::vector<double>> p2(n + 1);
        std::vector<double> v2(n + 1);
        for (std::size_t i = 0; i <= n; ++i) {
            p2[i] = std::move(pts[order[i]]);
            v2[i] = vals[order[i]];
        }
        pts = std::move(p2);
        vals = std::move(v2);
    };

    auto along = [&](const std::vector<double>& base, const std::vector<double>& toward, double coef) {
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = base[i] + coef * (toward[i] - base[i]);
        }
        return out;
    };

    SimplexResult result;
    sort_simplex();
    result.best_history.push_back(vals[0]);

    int iter = 0;
    for (; iter < opts.max_iter; ++iter) {
        double diameter = 0.0;
        for (std::size_t i = 1; i <= n; ++i) {
            for (std::size_t d = 0; d < n; ++d) {
                diameter = std::max(diameter, std::abs(pts[i][d] - pts[0][d]));
            }
        }
        if (vals[n] - vals[0] < opts.f_tol && diameter < opts.x_tol) {
            break;
        }

        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < n; ++d) {
                centroid[d] += pts[i][d] / static_cast<double>(n);
            }
        }
        const auto& worst = pts[n];

        auto xr = along(centroid, worst, -opts.alpha);
        const double fr = eval(xr);
        bool shrink = false;
        if (fr < vals[0]) {
            auto xe = along(centroid, xr, opts.gamma);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[n] = std::move(xe);
                vals[n] = fe;
            } else {
                pts[n] = std::move(xr);
                vals[n] = fr;
            }
        } else if (fr < vals[n - 1]) {
            pts[n] = std::move(xr);
            vals[n] = fr;
        } else if (fr < vals[n]) {
            auto xc = along(centroid, xr, opts.rho);
            const double fc = eval(xc);
            if (fc <= fr) {
                pts[n] = std::move(xc);
                vals[n] = fc;
            } else {
                shrink = true;
            }
        } else {
            auto xc = along(centroid, worst, opts.rho);
            const double fc = eval(xc);
            if (fc < vals[n]) {
                pts[n] = std::move(xc);
                vals[n] = fc;
            } else {
                shrink = true;
            }
        }
        if (shrink) {
            for (std::size_t i = 1; i <= n; ++i) {
                pts[i] = along(pts[0], pts[i], opts.sigma);
                vals[i] = eval(pts[i]);
            }
        }
        sort_simplex();
        result.best_history.push_back(vals[0]);
    }

    result.x = pts[0];
    result.value = vals[0];
    result.iterations = iter;
    return result;
}

} // namespace bmd
