#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "traj/errors.hpp"
#include "traj/nn.hpp"
#include "traj/pipeline.hpp"

namespace traj {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 256;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double scheduler_factor = 0.5;
    int scheduler_patience = 10;
    double min_learning_rate = 1e-5;
    double val_fraction = 0.2; // fraction of routes held out for validation

    void validate() const {
        if (epochs < 0) throw InvalidInput("train: epochs must be non-negative");
        if (batch_size < 1) throw InvalidInput("train: batch_size must be positive");
        if (!(learning_rate > 0.0)) throw InvalidInput("train: learning_rate must be positive");
        if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
            throw InvalidInput("train: scheduler_factor must lie in (0, 1)");
        }
        if (scheduler_patience < 1) throw InvalidInput("train: patience must be positive");
        if (!(min_learning_rate > 0.0)) throw InvalidInput("train: min_learning_rate must be positive");
        if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
            throw InvalidInput("train: val_fraction must lie in [0, 1)");
        }
    }
};

/// Halves the learning rate (by `factor`) once the monitored loss has failed
/// to improve for `patience` consecutive epochs, never dropping below
/// `min_lr`. The stale counter resets after each reduction.
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, double factor, int patience, double min_lr)
        : lr_(initial_lr), factor_(factor), patience_(patience), min_lr_(min_lr) {}

    /// Feed one epoch's monitored loss; returns the learning rate to use for
    /// the next epoch.
    double step(double monitored) {
        if (!seen_any_ || monitored < best_) {
            best_ = monitored;
            bad_epochs_ = 0;
            seen_any_ = true;
        } else {
            ++bad_epochs_;
            if (bad_epochs_ >= patience_) {
                lr_ = std::max(lr_ * factor_, min_lr_);
                bad_epochs_ = 0;
            }
        }
        return lr_;
    }

    double learning_rate() const { return lr_; }

private:
    double lr_;
    double factor_;
    int patience_;
    double min_lr_;
    double best_ = 0.0;
    int bad_epochs_ = 0;
    bool seen_any_ = false;
};

struct EpochStats {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochStats> history;
};

/// One training batch in network layout: per-step [features x batch] inputs
/// and targets. Targets are the inputs shifted one step ahead with the
/// sequence's future frame appended as the final step.
struct Batch {
    StepTensor inputs;
    StepTensor targets;
};

namespace detail {

inline std::array<double, 6> normalized(const FeatureStats& stats,
                                        const std::array<double, 6>& f) {
    std::array<double, 6> out{};
    for (int i = 0; i < kFeatureCount; ++i) {
        out[static_cast<std::size_t>(i)] =
            (f[static_cast<std::size_t>(i)] - stats.mean[i]) / stats.stddev[i];
    }
    return out;
}

} // namespace detail

/// Per-feature mean / standard deviation over every window frame of the
/// given sequences. Standard deviations are floored to keep the transform
/// invertible for constant features.
inline FeatureStats compute_feature_stats(const std::vector<Sequence>& seqs) {
    FeatureStats stats;
    if (seqs.empty()) return stats;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(kFeatureCount);
    Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(kFeatureCount);
    double n = 0.0;
    for (const auto& seq : seqs) {
        for (const auto& frame : seq.frames) {
            const auto f = frame.features();
            for (int i = 0; i < kFeatureCount; ++i) {
                sum[i] += f[static_cast<std::size_t>(i)];
                sum_sq[i] += f[static_cast<std::size_t>(i)] * f[static_cast<std::size_t>(i)];
            }
            n += 1.0;
        }
    }
    stats.mean = sum / n;
    for (int i = 0; i < kFeatureCount; ++i) {
        const double var = std::max(sum_sq[i] / n - stats.mean[i] * stats.mean[i], 0.0);
        stats.stddev[i] = std::max(std::sqrt(var), 1e-8);
    }
    return stats;
}

/// Assemble the network tensors for the given sequences, standardized with
/// `stats`. Column j of each step holds sequence j.
inline Batch make_batch(const std::vector<Sequence>& seqs,
                        const std::vector<std::size_t>& indices,
                        const FeatureStats& stats) {
    if (indices.empty()) throw InvalidInput("train: empty batch");
    const auto nb = static_cast<Eigen::Index>(indices.size());
    Batch batch;
    batch.inputs.assign(kWindowFrames, Eigen::MatrixXd(kFeatureCount, nb));
    batch.targets.assign(kWindowFrames, Eigen::MatrixXd(kFeatureCount, nb));

    for (Eigen::Index col = 0; col < nb; ++col) {
        const Sequence& seq = seqs[indices[static_cast<std::size_t>(col)]];
        seq.validate();
        for (int t = 0; t < kWindowFrames; ++t) {
            const auto in = detail::normalized(stats, seq.frames[static_cast<std::size_t>(t)].features());
            const auto tgt = t + 1 < kWindowFrames
                                 ? detail::normalized(stats, seq.frames[static_cast<std::size_t>(t) + 1].features())
                                 : detail::normalized(stats, seq.target.features());
            for (int i = 0; i < kFeatureCount; ++i) {
                batch.inputs[static_cast<std::size_t>(t)](i, col) = in[static_cast<std::size_t>(i)];
                batch.targets[static_cast<std::size_t>(t)](i, col) = tgt[static_cast<std::size_t>(i)];
            }
        }
    }
    return batch;
}

/// Deterministic route-wise split: routes keep their first-appearance order
/// and the trailing `val_fraction` of them form the validation set, so no
/// route contributes sequences to both sides.
inline void split_by_route(const std::vector<Sequence>& seqs, double val_fraction,
                           std::vector<std::size_t>& train_idx,
                           std::vector<std::size_t>& val_idx) {
    std::vector<std::string> routes;
    for (const auto& s : seqs) {
        if (std::find(routes.begin(), routes.end(), s.route) == routes.end()) {
            routes.push_back(s.route);
        }
    }
    std::size_t n_val = 0;
    if (routes.size() >= 2 && val_fraction > 0.0) {
        n_val = static_cast<std::size_t>(
            std::llround(val_fraction * static_cast<double>(routes.size())));
        n_val = std::clamp<std::size_t>(n_val, 1, routes.size() - 1);
    }
    const std::size_t first_val = routes.size() - n_val;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto pos = static_cast<std::size_t>(
            std::find(routes.begin(), routes.end(), seqs[i].route) - routes.begin());
        (pos >= first_val ? val_idx : train_idx).push_back(i);
    }
}

namespace detail {

inline Eigen::VectorXd flatten(const ModelParams& p) {
    Eigen::VectorXd flat(p.parameter_count());
    Eigen::Index at = 0;
    p.visit([&](const char*, const auto& t) {
        flat.segment(at, t.size()) = Eigen::Map<const Eigen::VectorXd>(t.data(), t.size());
        at += t.size();
    });
    return flat;
}

inline void unflatten(ModelParams& p, const Eigen::VectorXd& flat) {
    Eigen::Index at = 0;
    p.visit([&](const char*, auto& t) {
        Eigen::Map<Eigen::VectorXd>(t.data(), t.size()) = flat.segment(at, t.size());
        at += t.size();
    });
}

/// Mean combined loss over the given sequences, evaluated in inference mode
/// (weighted so the result is independent of batch partitioning).
inline double dataset_loss(const ModelParams& params, const std::vector<Sequence>& seqs,
                           const std::vector<std::size_t>& indices, int batch_size) {
    if (indices.empty()) return 0.0;
    double weighted = 0.0;
    for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
        const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(at),
                                             indices.begin() + static_cast<std::ptrdiff_t>(end));
        const Batch batch = make_batch(seqs, chunk, params.stats);
        const LossValue v = loss(forward(params, batch.inputs), batch.targets);
        weighted += v.total * static_cast<double>(chunk.size());
    }
    return weighted / static_cast<double>(indices.size());
}

} // namespace detail

/// Train the forecaster on labeled sequences. Deterministic for a fixed
/// (dataset, config, seed) triple: initialization, shuffling, and the update
/// order all derive from `seed`.
inline TrainResult train(const std::vector<Sequence>& dataset, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    model_cfg.validate();
    if (dataset.empty()) throw InvalidInput("train: empty dataset");

    std::vector<std::size_t> train_idx, val_idx;
    split_by_route(dataset, cfg.val_fraction, train_idx, val_idx);

    TrainResult result;
    result.params = init_params(model_cfg, seed);
    result.params.stats = compute_feature_stats([&] {
        std::vector<Sequence> train_seqs;
        train_seqs.reserve(train_idx.size());
        for (auto i : train_idx) train_seqs.push_back(dataset[i]);
        return train_seqs;
    }());
    if (cfg.epochs == 0) return result;

    Eigen::VectorXd theta = detail::flatten(result.params);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
    std::uint64_t adam_step = 0;

    PlateauScheduler scheduler(cfg.learning_rate, cfg.scheduler_factor,
                               cfg.scheduler_patience, cfg.min_learning_rate);
    double lr = cfg.learning_rate;
    std::mt19937_64 rng(seed ^ 0xA24BAED4963EE407ULL);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);

        double weighted_loss = 0.0;
        for (std::size_t at = 0; at < train_idx.size();
             at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(train_idx.size(), at + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> chunk(
                train_idx.begin() + static_cast<std::ptrdiff_t>(at),
                train_idx.begin() + static_cast<std::ptrdiff_t>(end));
            const Batch batch = make_batch(dataset, chunk, result.params.stats);

            LossValue value;
            const ModelParams grads =
                backward(result.params, batch.inputs, batch.targets, &value);
            weighted_loss += value.total * static_cast<double>(chunk.size());
            const Eigen::VectorXd grad = detail::flatten(grads);

            ++adam_step;
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
            const double bias1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam_step));
            const double bias2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam_step));
            theta -= (lr / bias1) *
                     m.cwiseQuotient(((v / bias2).cwiseSqrt().array() + cfg.adam_epsilon).matrix());
            detail::unflatten(result.params, theta);
        }

        const double train_loss = weighted_loss / static_cast<double>(train_idx.size());
        if (!std::isfinite(train_loss)) {
            throw NonFiniteError("train: loss diverged at epoch " + std::to_string(epoch));
        }
        const double val_loss =
            val_idx.empty() ? train_loss
                            : detail::dataset_loss(result.params, dataset, val_idx, cfg.batch_size);

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = train_loss;
        stats.val_loss = val_loss;
        stats.learning_rate = lr;
        result.history.push_back(stats);

        lr = scheduler.step(val_loss);
    }
    return result;
}

} // namespace traj
