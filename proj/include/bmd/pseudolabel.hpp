#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "grid.hpp"
#include "mlp.hpp"
#include "rng.hpp"
#include "segmodel.hpp"

namespace bmd {

struct PLConfig {
    double lambda_pl = 0.7;
    double tau_u = 0.7;
    double tau_l = 0.5;
    double ema_momentum = 0.99;
    int epochs = 10;
    int batch_pixels = 256;
    double lr = 5e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(0.0 <= tau_l && tau_l <= tau_u && tau_u <= 1.0)) {
            throw std::invalid_argument("PLConfig: need 0 <= tau_l <= tau_u <= 1");
        }
        if (!(lambda_pl >= 0.0)) {
            throw std::invalid_argument("PLConfig: lambda_pl must be >= 0");
        }
        if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) {
            throw std::invalid_argument("PLConfig: ema_momentum must lie in [0,1]");
        }
        if (epochs < 1 || batch_pixels < 1) {
            throw std::invalid_argument("PLConfig: epochs and batch_pixels must be >= 1");
        }
    }
};

inline void ema_update(std::span<double> teacher, std::span<const double> student, double momentum) {
    if (teacher.size() != student.size()) {
        throw std::invalid_argument("ema_update: parameter length mismatch");
    }
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        teacher[i] = momentum * teacher[i] + (1.0 - momentum) * student[i];
    }
}

/// Linear decay from tau_u at epoch 0 to tau_l at the last epoch.
inline double threshold_schedule(int epoch, int total_epochs, double tau_u, double tau_l) {
    if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
        throw std::out_of_range("threshold_schedule: epoch must be in [0, total_epochs)");
    }
    if (total_epochs == 1) {
        return tau_u;
    }
    return tau_u - (tau_u - tau_l) * static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
}

inline BoolGrid confidence_filter(const ProbMap& probs, double tau) {
    BoolGrid keep(probs.height, probs.width, 0);
    for (std::size_t p = 0; p < probs.pixels(); ++p) {
        double m = probs(p, 0);
        for (int c = 1; c < probs.num_classes; ++c) {
            m = std::max(m, probs(p, c));
        }
        keep[p] = m >= tau;
    }
    return keep;
}

struct SegLosses {
    double ce = 0.0;
    double dice = 0.0;
};

inline constexpr double kDiceSmoothing = 1.0;

namespace detail {

/// CE + soft Dice over the retained columns of a C x N probability matrix.
/// When dlogits is non-null it receives d(ce + dice)/d(logits).
inline SegLosses seg_losses_columns(const Matrix& probs, std::span<const Label> target,
                                    std::span<const std::uint8_t> retained, Matrix* dlogits) {
    const auto classes = probs.rows();
    const auto n = probs.cols();
    if (dlogits != nullptr) {
        dlogits->setZero(classes, n);
    }
    std::size_t kept = 0;
    for (auto r : retained) {
        kept += r != 0;
    }
    SegLosses out;
    if (kept == 0) {
        return out;
    }
    const double nk = static_cast<double>(kept);
    Matrix dprob = Matrix::Zero(classes, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        if (retained[static_cast<std::size_t>(j)] == 0) {
            continue;
        }
        const Label y = target[static_cast<std::size_t>(j)];
        out.ce -= std::log(std::max(probs(y, j), 1e-300)) / nk;
    }
    const double fg = static_cast<double>(classes - 1);
    for (Eigen::Index c = 1; c < classes; ++c) {
        double inter = 0.0;
        double sum = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (retained[static_cast<std::size_t>(j)] == 0) {
                continue;
            }
            const double g = target[static_cast<std::size_t>(j)] == c ? 1.0 : 0.0;
            inter += probs(c, j) * g;
            sum += probs(c, j) + g;
        }
        const double den = sum + kDiceSmoothing;
        const double num = 2.0 * inter + kDiceSmoothing;
        out.dice += (1.0 - num / den) / fg;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (retained[static_cast<std::size_t>(j)] == 0) {
                continue;
            }
            const double g = target[static_cast<std::size_t>(j)] == c ? 1.0 : 0.0;
            dprob(c, j) -= (2.0 * g * den - num) / (den * den) / fg;
        }
    }
    if (dlogits != nullptr) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (retained[static_cast<std::size_t>(j)] == 0) {
                continue;
            }
            // softmax Jacobian applied to the Dice part, closed form for CE
            const double dot = probs.col(j).dot(dprob.col(j));
            for (Eigen::Index k = 0; k < classes; ++k) {
                (*dlogits)(k, j) = probs(k, j) * (dprob(k, j) - dot) + probs(k, j) / nk;
            }
            (*dlogits)(target[static_cast<std::size_t>(j)], j) -= 1.0 / nk;
        }
    }
    return out;
}

} // namespace detail

/// Masked mean cross-entropy and soft Dice loss (foreground classes,
/// smoothing 1) over retained pixels; (0,0) when nothing is retained.
inline SegLosses seg_losses(const ProbMap& probs, const MaskGrid& target, const BoolGrid& retained) {
    if (!probs.same_shape(target) || !probs.same_shape(retained)) {
        throw std::invalid_argument("seg_losses: shape mismatch");
    }
    const Eigen::Map<const Matrix> p(probs.data.data(), probs.num_classes, static_cast<Eigen::Index>(probs.pixels()));
    return detail::seg_losses_columns(p, target.values(), retained.values(), nullptr);
}

/// weight * (ce + dice) of the model on patch columns x; accumulates the
/// parameter gradient into grad when nonempty.
inline SegLosses seg_loss_step(const PixelClassifier& model, const Matrix& x, std::span<const Label> target,
                               std::span<const std::uint8_t> retained, double weight, std::span<double> grad = {}) {
    const auto act = model.net.forward(x);
    const Matrix probs = softmax_columns(act.output);
    Matrix dlogits;
    const auto l = detail::seg_losses_columns(probs, target, retained, grad.empty() ? nullptr : &dlogits);
    if (!grad.empty()) {
        dlogits *= weight;
        model.net.backward(x, act, dlogits, grad);
    }
    return l;
}

struct PLEpochLog {
    int epoch = 0;
    double tau = 0.0;
    double supervised_loss = 0.0;
    double pseudo_loss = 0.0;
    double retained_fraction = 0.0;
};

struct TargetTraining {
    PixelClassifier teacher;
    PixelClassifier student;
    std::vector<PLEpochLog> log;
};

/// Mean-teacher training. Each step draws one labeled image (synthetic or
/// real) and, when lambda_pl > 0, one unlabeled target image from a separate
/// stream; the teacher's filtered arg-max labels supervise the student on
/// the unlabeled pixels. The teacher follows the student by EMA every step.
inline TargetTraining train_target(const PixelClassifier& init, std::span<const LabeledImage> synth_labeled,
                                   std::span<const LabeledImage> real_labeled,
                                   std::span<const ImageGrid> unlabeled_target, const PLConfig& cfg) {
    cfg.validate();
    std::vector<const LabeledImage*> labeled;
    for (const auto& x : synth_labeled) {
        labeled.push_back(&x);
    }
    for (const auto& x : real_labeled) {
        labeled.push_back(&x);
    }
    if (labeled.empty()) {
        throw std::invalid_argument("train_target: no labeled images");
    }
    for (const auto* item : labeled) {
        require_same_shape(item->image, item->mask, "train_target");
    }

    TargetTraining out{init, init, {}};
    Rng rng = make_rng(cfg.seed, 0x9e1);
    Rng unl_rng = make_rng(cfg.seed, 0x9e2);
    Adam adam(out.student.net.parameter_count(), cfg.lr);
    std::vector<double> grad(out.student.net.parameter_count());
    std::size_t total_pixels = 0;
    for (const auto* item : labeled) {
        total_pixels += item->image.size();
    }
    const auto batch = static_cast<std::size_t>(cfg.batch_pixels);
    const std::size_t steps = (total_pixels + batch - 1) / batch;
    const bool use_pl = cfg.lambda_pl > 0.0 && !unlabeled_target.empty();

    std::vector<std::size_t> pixels(batch);
    std::vector<Label> labels(batch);
    const std::vector<std::uint8_t> all_kept(batch, 1);
    std::vector<std::uint8_t> kept(batch);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        PLEpochLog entry;
        entry.epoch = epoch;
        entry.tau = threshold_schedule(epoch, cfg.epochs, cfg.tau_u, cfg.tau_l);
        std::size_t retained = 0;
        for (std::size_t s = 0; s < steps; ++s) {
            std::fill(grad.begin(), grad.end(), 0.0);
            const auto& item = *labeled[uniform_index(rng, labeled.size())];
            for (std::size_t j = 0; j < batch; ++j) {
                pixels[j] = uniform_index(rng, item.image.size());
                labels[j] = item.mask[pixels[j]];
            }
            const auto sup = seg_loss_step(out.student, patch_inputs(item.image, out.student.patch_radius, pixels),
                                           labels, all_kept, 1.0, grad);
            entry.supervised_loss += (sup.ce + sup.dice) / static_cast<double>(steps);

            if (use_pl) {
                const auto& img = unlabeled_target[uniform_index(unl_rng, unlabeled_target.size())];
                for (std::size_t j = 0; j < batch; ++j) {
                    pixels[j] = uniform_index(unl_rng, img.size());
                }
                const Matrix x = patch_inputs(img, out.student.patch_radius, pixels);
                const Matrix tp = softmax_columns(out.teacher.net.forward(x).output);
                for (std::size_t j = 0; j < batch; ++j) {
                    Eigen::Index arg = 0;
                    const double top = tp.col(static_cast<Eigen::Index>(j)).maxCoeff(&arg);
                    labels[j] = static_cast<Label>(arg);
                    kept[j] = top >= entry.tau;
                    retained += kept[j];
                }
                const auto pl = seg_loss_step(out.student, x, labels, kept, cfg.lambda_pl, grad);
                entry.pseudo_loss += cfg.lambda_pl * (pl.ce + pl.dice) / static_cast<double>(steps);
            }
            adam.step(out.student.net.parameters(), grad);
            ema_update(out.teacher.net.parameters(), out.student.net.parameters(), cfg.ema_momentum);
        }
        entry.retained_fraction = use_pl ? static_cast<double>(retained) / static_cast<double>(steps * batch) : 0.0;
        out.log.push_back(entry);
    }
    return out;
}

} // namespace bmd
