#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "mlp.hpp"
#include "rng.hpp"
#include "segmodel.hpp"

namespace bmd {

/// Discrete DDPM schedule, 1-indexed through the accessors.
///
/// The network predicts the noise ε. The transition-kernel score is
/// g_t = -ε / sqrt(1 - ᾱ_t), so a squared score error weighted by
/// (1 - ᾱ_t) equals the squared ε error. lambda_weights holds the weight
/// applied to the ε-space loss, which is 1 for every step.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> lambda_weights;

    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02) {
        if (T < 1) {
            throw std::invalid_argument("NoiseSchedule: T must be >= 1");
        }
        NoiseSchedule s;
        s.T = T;
        double bar = 1.0;
        for (int i = 0; i < T; ++i) {
            const double b = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / double(T - 1);
            s.betas.push_back(b);
            s.alphas.push_back(1.0 - b);
            bar *= 1.0 - b;
            s.alpha_bars.push_back(bar);
            s.lambda_weights.push_back(1.0);
        }
        s.validate();
        return s;
    }

    void validate() const {
        for (double b : betas) {
            if (!(b > 0.0 && b < 1.0)) {
                throw std::invalid_argument("NoiseSchedule: betas must lie in (0,1)");
            }
        }
    }

    double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
    double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t - 1)); }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(static_cast<std::size_t>(t - 1)); }
    double lambda(int t) const { return lambda_weights.at(static_cast<std::size_t>(t - 1)); }
};

inline constexpr int kTimeFeatures = 4;

/// ε-predicting network over (noisy patch, one-hot condition patch, time).
///
/// The MLP output F is wrapped with noise-level preconditioning:
/// ε̂ = c_skip x_t + c_out F(c_in x_t, ...), where for data scale σ_d and
/// v = (1-ᾱ) + ᾱ σ_d², c_in = 1/sqrt(v), c_skip = sqrt(1-ᾱ)/v and
/// c_out = -σ_d sqrt(ᾱ/v). The skip term is the exact optimum for
/// zero-mean Gaussian data of scale σ_d.
struct ScoreNet {
    int patch_radius = 3;
    int num_classes = 2;
    TanhMlp net;
    double sigma_data = 0.5;

    int patch_width() const noexcept { return 2 * patch_radius + 1; }
    int input_width() const noexcept {
        const int area = patch_width() * patch_width();
        return area * (1 + num_classes) + kTimeFeatures;
    }
};

inline ScoreNet make_score_net(int num_classes, int patch_radius, int hidden, std::uint64_t seed) {
    if (num_classes < 1 || patch_radius < 0) {
        throw std::invalid_argument("make_score_net: need num_classes >= 1, patch_radius >= 0");
    }
    ScoreNet s{patch_radius, num_classes, {}};
    Rng rng = make_rng(seed, 0x5c0);
    s.net = TanhMlp(s.input_width(), hidden, 1, rng);
    return s;
}

struct Preconditioning {
    double c_in = 1.0;
    double c_skip = 0.0;
    double c_out = 1.0;
};

inline Preconditioning preconditioning(double alpha_bar, double sigma_data) {
    const double v = (1.0 - alpha_bar) + alpha_bar * sigma_data * sigma_data;
    return {1.0 / std::sqrt(v), std::sqrt(1.0 - alpha_bar) / v, -sigma_data * std::sqrt(alpha_bar / v)};
}

inline std::array<double, kTimeFeatures> time_features(double alpha_bar) {
    const double phi = std::atan2(std::sqrt(1.0 - alpha_bar), std::sqrt(alpha_bar));
    const double c_noise = 0.25 * std::log(std::tan(phi));
    return {c_noise, c_noise * c_noise, std::sin(phi), std::cos(phi)};
}

/// Network input matrix, one column per requested pixel. Out-of-image
/// positions contribute zero intensity and an all-zero one-hot vector.
inline Matrix score_inputs(const ScoreNet& net, const ImageGrid& x_t, const MaskGrid& cond, double ab,
                           std::span<const std::size_t> pixels) {
    require_same_shape(x_t, cond, "score_inputs");
    const int radius = net.patch_radius;
    const int w = net.patch_width();
    const int area = w * w;
    const int classes = net.num_classes;
    const auto tf = time_features(ab);
    const double c_in = preconditioning(ab, net.sigma_data).c_in;
    Matrix x = Matrix::Zero(net.input_width(), static_cast<Eigen::Index>(pixels.size()));
    for (std::size_t j = 0; j < pixels.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        const int r = static_cast<int>(pixels[j] / static_cast<std::size_t>(x_t.width()));
        const int c = static_cast<int>(pixels[j] % static_cast<std::size_t>(x_t.width()));
        int pos = 0;
        for (int dr = -radius; dr <= radius; ++dr) {
            for (int dc = -radius; dc <= radius; ++dc, ++pos) {
                const int rr = r + dr;
                const int cc = c + dc;
                if (rr < 0 || rr >= x_t.height() || cc < 0 || cc >= x_t.width()) {
                    continue;
                }
                x(pos, col) = c_in * x_t(rr, cc);
                const int label = cond(rr, cc);
                if (label >= classes) {
                    throw std::invalid_argument("score_inputs: condition label exceeds num_classes");
                }
                x(area + pos * classes + label, col) = 1.0;
            }
        }
        for (int f = 0; f < kTimeFeatures; ++f) {
            x(area * (1 + classes) + f, col) = tf[static_cast<std::size_t>(f)];
        }
    }
    return x;
}

/// Per-pixel ε-prediction (equivalently a rescaled score).
using ScoreField = ImageGrid;

namespace detail {

struct EpsPass {
    Matrix inputs;
    TanhMlp::Activations act;
    std::vector<double> eps;
    double c_out = 1.0;
};

inline EpsPass eps_pass(const ScoreNet& net, const ImageGrid& x_t, const MaskGrid& cond, double ab,
                        std::span<const std::size_t> pixels) {
    const auto pc = preconditioning(ab, net.sigma_data);
    EpsPass out;
    out.inputs = score_inputs(net, x_t, cond, ab, pixels);
    out.act = net.net.forward(out.inputs);
    out.c_out = pc.c_out;
    out.eps.resize(pixels.size());
    for (std::size_t j = 0; j < pixels.size(); ++j) {
        out.eps[j] = pc.c_skip * x_t[pixels[j]] + pc.c_out * out.act.output(0, static_cast<Eigen::Index>(j));
    }
    return out;
}

} // namespace detail

inline ScoreField predict_eps(const ScoreNet& net, const ImageGrid& x_t, const MaskGrid& cond, int t,
                              const NoiseSchedule& schedule) {
    const auto pixels = all_pixels(x_t.size());
    const auto pass = detail::eps_pass(net, x_t, cond, schedule.alpha_bar(t), pixels);
    ScoreField out(x_t.height(), x_t.width());
    for (std::size_t p = 0; p < pixels.size(); ++p) {
        out[p] = pass.eps[p];
    }
    return out;
}

struct NoisySample {
    ImageGrid x_t;
    ImageGrid eps;
};

/// x_t = sqrt(ᾱ_t) x0 + sqrt(1-ᾱ_t) ε with x0 rescaled from [0,1] to [-1,1].
inline NoisySample forward_sample(const ImageGrid& x0, int t, const NoiseSchedule& schedule, Rng& rng) {
    if (t < 1 || t > schedule.T) {
        throw std::out_of_range("forward_sample: t must be in [1, T]");
    }
    const double a = std::sqrt(schedule.alpha_bar(t));
    const double s = std::sqrt(1.0 - schedule.alpha_bar(t));
    NoisySample ns{ImageGrid(x0.height(), x0.width()), ImageGrid(x0.height(), x0.width())};
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double e = standard_normal(rng);
        ns.eps[i] = e;
        ns.x_t[i] = a * (2.0 * x0[i] - 1.0) + s * e;
    }
    return ns;
}

/// Divides the k confidences at each pixel by their sum so they form a
/// convex combination.
inline RankedPrediction normalize_confidences(RankedPrediction rp) {
    for (std::size_t p = 0; p < rp.labels.front().size(); ++p) {
        double sum = 0.0;
        for (const auto& c : rp.confidences) {
            sum += c[p];
        }
        if (!(sum > 0.0)) {
            throw std::invalid_argument("normalize_confidences: nonpositive confidence mass");
        }
        for (auto& c : rp.confidences) {
            c[p] /= sum;
        }
    }
    return rp;
}

/// One-hot (weight 1) condition on a single mask.
inline RankedPrediction single_condition(const MaskGrid& mask) {
    return {1, {mask}, {ImageGrid(mask.height(), mask.width(), 1.0)}};
}

namespace detail {

inline void check_convex_weights(const RankedPrediction& rp) {
    for (std::size_t p = 0; p < rp.labels.front().size(); ++p) {
        double sum = 0.0;
        for (const auto& c : rp.confidences) {
            sum += c[p];
        }
        if (std::abs(sum - 1.0) > 1e-5) {
            throw std::invalid_argument("combined_score: confidences must sum to 1 at every pixel");
        }
    }
}

} // namespace detail

/// Σ_k c^(k) ⊙ ε̂(x_t, ỹ^(k), t), pixel-wise. Ranks with identical label maps
/// share one prediction, weighted by their summed confidences.
inline ScoreField combined_score(const ScoreNet& net, const ImageGrid& x_t, const RankedPrediction& rp, int t,
                                 const NoiseSchedule& schedule) {
    detail::check_convex_weights(rp);
    ScoreField out(x_t.height(), x_t.width(), 0.0);
    std::vector<bool> merged(rp.labels.size(), false);
    for (std::size_t k = 0; k < rp.labels.size(); ++k) {
        if (merged[k]) {
            continue;
        }
        ImageGrid weight = rp.confidences[k];
        for (std::size_t j = k + 1; j < rp.labels.size(); ++j) {
            if (!merged[j] && rp.labels[j] == rp.labels[k]) {
                merged[j] = true;
                for (std::size_t p = 0; p < weight.size(); ++p) {
                    weight[p] += rp.confidences[j][p];
                }
            }
        }
        const auto e = predict_eps(net, x_t, rp.labels[k], t, schedule);
        for (std::size_t p = 0; p < out.size(); ++p) {
            out[p] += weight[p] * e[p];
        }
    }
    return out;
}

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
    int t = 0;
};

/// Uncertainty-guided score-matching loss for one image:
/// λ(t) · mean_p (Σ_k c^(k)_p ε̂^(k)_p − ε_p)^2, with t ~ U{1..T} and ε drawn
/// from rng (t first, then the whole-image noise). When `pixels` is nonempty
/// the mean runs over that subset only.
inline LossAndGrad ugsm_loss(const ScoreNet& net, const ImageGrid& x0, const RankedPrediction& rp,
                             const NoiseSchedule& schedule, Rng& rng, std::span<const std::size_t> pixels = {}) {
    const int t = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(schedule.T)));
    const auto ns = forward_sample(x0, t, schedule, rng);
    std::vector<std::size_t> all;
    if (pixels.empty()) {
        all = all_pixels(x0.size());
        pixels = all;
    }
    const auto n = static_cast<Eigen::Index>(pixels.size());

    std::vector<detail::EpsPass> passes;
    Matrix combined = Matrix::Zero(1, n);
    for (std::size_t k = 0; k < rp.labels.size(); ++k) {
        passes.push_back(detail::eps_pass(net, ns.x_t, rp.labels[k], schedule.alpha_bar(t), pixels));
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto pj = static_cast<std::size_t>(j);
            combined(0, j) += rp.confidences[k][pixels[pj]] * passes.back().eps[pj];
        }
    }

    const double lambda = schedule.lambda(t);
    LossAndGrad out;
    out.t = t;
    out.grad.assign(net.net.parameter_count(), 0.0);
    Matrix dcomb(1, n);
    double sq = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double r = combined(0, j) - ns.eps[pixels[static_cast<std::size_t>(j)]];
        sq += r * r;
        dcomb(0, j) = 2.0 * lambda * r / static_cast<double>(n);
    }
    out.loss = lambda * sq / static_cast<double>(n);
    for (std::size_t k = 0; k < rp.labels.size(); ++k) {
        Matrix dk(1, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            dk(0, j) = passes[k].c_out * rp.confidences[k][pixels[static_cast<std::size_t>(j)]] * dcomb(0, j);
        }
        net.net.backward(passes[k].inputs, passes[k].act, dk, out.grad);
    }
    return out;
}

/// Standard conditional denoising loss λ(t) · mean_p (ε̂(x_t, y, t)_p − ε_p)^2,
/// consuming rng exactly like ugsm_loss.
inline LossAndGrad conditional_loss(const ScoreNet& net, const ImageGrid& x0, const MaskGrid& labels,
                                    const NoiseSchedule& schedule, Rng& rng,
                                    std::span<const std::size_t> pixels = {}) {
    const int t = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(schedule.T)));
    const auto ns = forward_sample(x0, t, schedule, rng);
    std::vector<std::size_t> all;
    if (pixels.empty()) {
        all = all_pixels(x0.size());
        pixels = all;
    }
    const auto n = static_cast<Eigen::Index>(pixels.size());
    const auto pass = detail::eps_pass(net, ns.x_t, labels, schedule.alpha_bar(t), pixels);
    const double lambda = schedule.lambda(t);
    LossAndGrad out;
    out.t = t;
    out.grad.assign(net.net.parameter_count(), 0.0);
    Matrix d(1, n);
    double sq = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto pj = static_cast<std::size_t>(j);
        const double r = pass.eps[pj] - ns.eps[pixels[pj]];
        sq += r * r;
        d(0, j) = pass.c_out * (2.0 * lambda * r / static_cast<double>(n));
    }
    out.loss = lambda * sq / static_cast<double>(n);
    net.net.backward(pass.inputs, pass.act, d, out.grad);
    return out;
}

struct CdmOptions {
    int k = 2;
    double delta = 0.8;
    int iters = 2000;
    int batch = 8;
    double lr = 2e-3;
    /// pixels drawn per image per step; 0 uses every pixel
    int pixels_per_image = 0;
    int patch_radius = 3;
    int hidden_units = 64;
    /// cosine learning-rate decay to zero over `iters`
    bool cosine_decay = true;
    /// decay of the exponential moving average of weights returned as the
    /// trained net; 0 returns the raw weights
    double ema_decay = 0.995;
    std::uint64_t seed = 0;
};

struct CdmTraining {
    ScoreNet net;
    std::vector<double> losses;  // mean batch loss per iteration
};

/// Adam on ugsm_loss over fixed (image, normalized condition) pairs.
inline CdmTraining fit_score_net(std::span<const ImageGrid> images, std::span<const RankedPrediction> conditions,
                                 int num_classes, const NoiseSchedule& schedule, const CdmOptions& opts) {
    if (images.empty() || images.size() != conditions.size()) {
        throw std::invalid_argument("fit_score_net: need matching, nonempty images and conditions");
    }
    if (opts.batch < 1 || opts.iters < 0) {
        throw std::invalid_argument("fit_score_net: batch >= 1 and iters >= 0 required");
    }
    CdmTraining out{make_score_net(num_classes, opts.patch_radius, opts.hidden_units, opts.seed), {}};
    Rng rng = make_rng(opts.seed, 0xcd1);
    Adam adam(out.net.net.parameter_count(), opts.lr);
    std::vector<double> grad(out.net.net.parameter_count());
    const auto live = out.net.net.parameters();
    std::vector<double> ema(live.begin(), live.end());
    std::vector<std::size_t> pixels;
    for (int it = 0; it < opts.iters; ++it) {
        if (opts.cosine_decay) {
            adam.set_learning_rate(opts.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * it / double(opts.iters))));
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        for (int b = 0; b < opts.batch; ++b) {
            const std::size_t i = uniform_index(rng, images.size());
            const auto& img = images[i];
            pixels.clear();
            if (opts.pixels_per_image > 0 && static_cast<std::size_t>(opts.pixels_per_image) < img.size()) {
                for (int j = 0; j < opts.pixels_per_image; ++j) {
                    pixels.push_back(uniform_index(rng, img.size()));
                }
            }
            const auto lg = ugsm_loss(out.net, img, conditions[i], schedule, rng, pixels);
            loss += lg.loss / opts.batch;
            for (std::size_t p = 0; p < grad.size(); ++p) {
                grad[p] += lg.grad[p] / opts.batch;
            }
        }
        adam.step(out.net.net.parameters(), grad);
        // warm-up so early iterations do not anchor the average to the init
        const double d = std::min(opts.ema_decay, (1.0 + it) / (10.0 + it));
        for (std::size_t p = 0; p < ema.size(); ++p) {
            ema[p] = d * ema[p] + (1.0 - d) * live[p];
        }
        out.losses.push_back(loss);
    }
    if (opts.ema_decay > 0.0) {
        out.net.net.set_parameters(ema);
    }
    return out;
}

/// Pseudo-label conditions for CDM training: rank the segmentation model's
/// probabilities, threshold at delta, renormalize the k confidences.
inline RankedPrediction cdm_condition(const PixelClassifier& seg_model, const ImageGrid& img, int k, double delta) {
    const auto probs = predict_probs(seg_model, img);
    return normalize_confidences(apply_threshold(ranked_predictions(probs, k), delta, seg_model.num_classes));
}

/// Uncertainty-guided CDM training on unlabeled target images.
inline CdmTraining train_cdm(std::span<const ImageGrid> target_imgs, const PixelClassifier& seg_model,
                             const NoiseSchedule& schedule, const CdmOptions& opts) {
    if (target_imgs.empty()) {
        throw std::invalid_argument("train_cdm: no target images");
    }
    // the segmentation model is frozen, so conditions are computed once per image
    std::vector<RankedPrediction> conditions;
    for (const auto& img : target_imgs) {
        conditions.push_back(cdm_condition(seg_model, img, opts.k, opts.delta));
    }
    return fit_score_net(target_imgs, conditions, seg_model.num_classes, schedule, opts);
}

/// Ancestral DDPM sampling from N(0, I) at t = T down to t = 1 with the
/// posterior variance β̃_t; result mapped back to [0,1] and clamped.
inline ImageGrid sample(const ScoreNet& net, const MaskGrid& condition, const NoiseSchedule& schedule, Rng& rng) {
    ImageGrid x(condition.height(), condition.width());
    for (auto& v : x) {
        v = standard_normal(rng);
    }
    for (int t = schedule.T; t >= 1; --t) {
        const auto eps = predict_eps(net, x, condition, t, schedule);
        const double beta = schedule.beta(t);
        const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
        const double var = beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - schedule.alpha_bar(t));
        for (std::size_t p = 0; p < x.size(); ++p) {
            x[p] = inv_sqrt_alpha * (x[p] - coef * eps[p]);
            if (t > 1) {
                x[p] += std::sqrt(var) * standard_normal(rng);
            }
        }
    }
    for (auto& v : x) {
        v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
    }
    return x;
}

/// Two-class per-pixel Gaussian data with a closed-form optimal
/// ε-predictor, used to validate the score-matching machinery. Means and
/// sigma are in the network's [-1,1] space.
struct GaussianToy {
    MaskGrid mask;
    std::array<double, 2> mean{-0.5, 0.5};
    double sigma = 0.25;

    /// 4x4, left half class 0, right half class 1.
    static GaussianToy standard() {
        GaussianToy g;
        g.mask = MaskGrid(4, 4, 0);
        for (int r = 0; r < 4; ++r) {
            for (int c = 2; c < 4; ++c) {
                g.mask(r, c) = 1;
            }
        }
        return g;
    }

    /// Image in [0,1] coordinates (values may leave [0,1]; no clamping).
    ImageGrid draw(Rng& rng) const {
        ImageGrid img(mask.height(), mask.width());
        for (std::size_t p = 0; p < img.size(); ++p) {
            const double v = mean[mask[p]] + sigma * standard_normal(rng);
            img[p] = 0.5 * (v + 1.0);
        }
        return img;
    }

    /// E[ε | x_t] = (x_t − sqrt(ᾱ) μ) sqrt(1−ᾱ) / ((1−ᾱ) + ᾱ σ²).
    double optimal_eps(double x_t, int t, int label, const NoiseSchedule& schedule) const {
        const double ab = schedule.alpha_bar(t);
        return (x_t - std::sqrt(ab) * mean[static_cast<std::size_t>(label)]) * std::sqrt(1.0 - ab) /
               ((1.0 - ab) + ab * sigma * sigma);
    }

    /// Standard deviation of x_t under the data marginal.
    double marginal_std(int t, const NoiseSchedule& schedule) const {
        const double ab = schedule.alpha_bar(t);
        return std::sqrt((1.0 - ab) + ab * sigma * sigma);
    }
};

/// Max |ε̂ − E[ε|x_t]| over probes. For each t on a 9-point grid over [1,T],
/// each pixel position and each z in {−2, −1.5, ..., 2}, the probed pixel is
/// set to sqrt(ᾱ_t) μ + z·std(x_t) while the other pixels are drawn from the
/// x_t marginal with a fixed probe stream. Probes with |x_t| > 2 are skipped.
/// `predict` maps (x_t, t) to a per-pixel ε field.
template <class Predictor>
double gaussian_probe_error(const NoiseSchedule& schedule, Predictor&& predict, const GaussianToy& toy) {
    Rng rng = make_rng(0xa11a, 0);
    double max_err = 0.0;
    for (int i = 0; i <= 8; ++i) {
        const int t = std::max(1, static_cast<int>(std::lround(schedule.T * i / 8.0)));
        const double ab = schedule.alpha_bar(t);
        const double sd = toy.marginal_std(t, schedule);
        for (std::size_t p = 0; p < toy.mask.size(); ++p) {
            for (int zi = -4; zi <= 4; ++zi) {
                ImageGrid x_t(toy.mask.height(), toy.mask.width());
                for (std::size_t q = 0; q < x_t.size(); ++q) {
                    x_t[q] = std::sqrt(ab) * toy.mean[toy.mask[q]] + sd * standard_normal(rng);
                }
                const int label = toy.mask[p];
                x_t[p] = std::sqrt(ab) * toy.mean[static_cast<std::size_t>(label)] + 0.5 * zi * sd;
                if (std::abs(x_t[p]) > 2.0) {
                    continue;
                }
                const ScoreField eps = predict(x_t, t);
                max_err = std::max(max_err, std::abs(eps[p] - toy.optimal_eps(x_t[p], t, label, schedule)));
            }
        }
    }
    return max_err;
}

inline double analytic_gaussian_check(const NoiseSchedule& schedule, const ScoreNet& net, const GaussianToy& toy) {
    return gaussian_probe_error(
        schedule, [&](const ImageGrid& x_t, int t) { return predict_eps(net, x_t, toy.mask, t, schedule); }, toy);
}

} // namespace bmd
