#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rpose/common.hpp"
#include "rpose/nn.hpp"

namespace rpose {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// Standard Adam update with bias correction; state and params advance in
// place.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
                      double lr) {
    if (state.m.size() != params.size() || state.v.size() != params.size() ||
        grad.size() != params.size())
        throw invalid_input("adam_step: vector length mismatch");

    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

enum class FineTuneScope { all_layers, last_layer };

// Per-axis and per-joint mean absolute error, in centimeters. Targets are
// stored joint-major: coordinate i belongs to joint i/3, axis i%3.
struct Metrics {
    double mae_x = 0.0;
    double mae_y = 0.0;
    double mae_z = 0.0;
    double mae_avg = 0.0;
    std::vector<double> per_joint;
    int epoch = 0;
};

inline Metrics evaluate_mae(const CnnParams& params, const Batch& eval_set) {
    eval_set.validate(params.config);
    if (params.config.out_dim % 3 != 0)
        throw invalid_input("evaluate_mae: out_dim must be a multiple of 3");
    const int joints = params.config.out_dim / 3;

    Metrics m;
    m.per_joint.assign(static_cast<std::size_t>(joints), 0.0);
    double axis_sum[3] = {0.0, 0.0, 0.0};

    Activations acts;
    for (std::size_t s = 0; s < eval_set.size(); ++s) {
        forward_pass(params.config, params.values, eval_set.inputs[s], acts);
        for (int i = 0; i < params.config.out_dim; ++i) {
            const double err =
                std::abs(acts.out[static_cast<std::size_t>(i)] -
                         eval_set.targets[s][static_cast<std::size_t>(i)]);
            axis_sum[i % 3] += err;
            m.per_joint[static_cast<std::size_t>(i / 3)] += err;
        }
    }

    const double meters_to_cm = 100.0;
    const double n_axis = static_cast<double>(eval_set.size()) * joints;
    m.mae_x = meters_to_cm * axis_sum[0] / n_axis;
    m.mae_y = meters_to_cm * axis_sum[1] / n_axis;
    m.mae_z = meters_to_cm * axis_sum[2] / n_axis;
    m.mae_avg = (m.mae_x + m.mae_y + m.mae_z) / 3.0;
    for (double& j : m.per_joint) j *= meters_to_cm / (static_cast<double>(eval_set.size()) * 3.0);
    return m;
}

struct TrainConfig {
    int epochs = 150;
    int batch_size = 128;
    double lr = 0.001;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const {
        if (epochs < 0) throw invalid_config("TrainConfig: epochs must be >= 0");
        if (batch_size < 1) throw invalid_config("TrainConfig: batch_size must be >= 1");
        if (lr < 0.0) throw invalid_config("TrainConfig: lr must be >= 0");
    }
};

struct CurvePoint {
    int epoch = 0;
    std::string split;
    Metrics metrics;
};

using LearningCurve = std::vector<CurvePoint>;

struct TrainResult {
    CnnParams params;
    LearningCurve curve;
};

using NamedEvalSets = std::vector<std::pair<std::string, const Batch*>>;

namespace detail {

// Shared epoch loop for supervised training and fine-tuning: shuffled
// mini-batch Adam on the mean L1 loss, optional gradient mask, per-epoch
// MAE rows for every eval set.
inline TrainResult training_loop(const Batch& train, const CnnParams& theta0,
                                 const TrainConfig& cfg, const std::optional<ParamLayout>& freeze,
                                 const NamedEvalSets& evals) {
    cfg.validate();
    train.validate(theta0.config);

    TrainResult result;
    result.params = theta0;
    if (cfg.epochs == 0) return result;

    AdamState adam(result.params.values.size());
    Rng shuffle_rng = make_rng(cfg.seed, "train.shuffle");

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(shuffle_rng, i));
            std::swap(order[i - 1], order[j]);
        }

        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            BackwardResult batch = backward_subset(
                result.params, train, std::span(order).subspan(begin, end - begin), cfg.threads);
            check_finite(batch.loss, "training loss");
            if (freeze) {
                // last_layer scope: only fc2 weights and bias may move
                std::fill(batch.grad.begin(), batch.grad.begin() + static_cast<std::ptrdiff_t>(freeze->fc2_w), 0.0);
            }
            adam_step(adam, result.params.values, batch.grad, cfg.lr);
        }

        for (const auto& [split, pool] : evals) {
            if (pool == nullptr || pool->size() == 0) continue;
            Metrics m = evaluate_mae(result.params, *pool);
            m.epoch = epoch;
            result.curve.push_back(CurvePoint{epoch, split, std::move(m)});
        }
    }
    return result;
}

}  // namespace detail

inline TrainResult train_supervised(const Batch& train, const Batch& validation,
                                    const TrainConfig& cfg, const CnnParams& theta0) {
    NamedEvalSets evals{{"train", &train}};
    if (validation.size() > 0) evals.emplace_back("val", &validation);
    return detail::training_loop(train, theta0, cfg, std::nullopt, evals);
}

// Same loop as train_supervised restricted to the tune set; with
// scope=last_layer, gradients outside fc2 are zeroed before the optimizer
// step so all other parameters stay bit-identical. `evals` rows (for
// example the original and new splits) are appended per epoch.
inline TrainResult fine_tune(const CnnParams& theta, const Batch& tune_set, FineTuneScope scope,
                             const TrainConfig& cfg, const NamedEvalSets& extra_evals = {}) {
    NamedEvalSets evals{{"train", &tune_set}};
    evals.insert(evals.end(), extra_evals.begin(), extra_evals.end());
    std::optional<ParamLayout> freeze;
    if (scope == FineTuneScope::last_layer) freeze.emplace(theta.config);
    return detail::training_loop(tune_set, theta, cfg, freeze, evals);
}

}  // namespace rpose
