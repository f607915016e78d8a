#pragma once

#include <chrono>
#include <functional>
#include <span>
#include <vector>

#include "rpose/common.hpp"
#include "rpose/nn.hpp"
#include "rpose/train.hpp"

namespace rpose {

// Support drives the inner (sample-level) update, query evaluates it for the
// outer (task-level) update.
struct TaskSample {
    Batch support;
    Batch query;
};

enum class MetaMode { first_order, second_order };

enum class OuterOptimizer { sgd, adam };

struct MetaConfig {
    double alpha = 0.1;   // sample-level learning rate
    double beta = 0.001;  // task-level meta learning rate
    int tasks_per_iteration = 32;
    int frames_per_task = 1000;
    double support_fraction = 0.5;
    int iterations = 20000;
    MetaMode mode = MetaMode::second_order;
    OuterOptimizer outer = OuterOptimizer::sgd;
    double hvp_epsilon = 1e-4;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const {
        if (alpha < 0.0) throw invalid_config("MetaConfig: alpha must be >= 0");
        if (tasks_per_iteration < 1) throw invalid_config("MetaConfig: tasks_per_iteration >= 1");
        if (frames_per_task < 2) throw invalid_config("MetaConfig: frames_per_task >= 2");
        if (!(support_fraction > 0.0 && support_fraction < 1.0))
            throw invalid_config("MetaConfig: support_fraction must be in (0,1)");
        if (iterations < 0) throw invalid_config("MetaConfig: iterations must be >= 0");
        if (!(hvp_epsilon > 0.0)) throw invalid_config("MetaConfig: hvp_epsilon must be > 0");
    }
};

// Draws frames_per_task pool entries uniformly without replacement and
// splits them disjointly into support and query.
inline TaskSample sample_task(const Batch& train_pool, const MetaConfig& cfg, Rng& rng) {
    cfg.validate();
    if (train_pool.size() < static_cast<std::size_t>(cfg.frames_per_task))
        throw invalid_config("sample_task: pool smaller than frames_per_task");

    const std::size_t n = static_cast<std::size_t>(cfg.frames_per_task);
    std::size_t n_support =
        static_cast<std::size_t>(std::llround(cfg.support_fraction * static_cast<double>(n)));
    if (n_support < 1) n_support = 1;
    if (n_support > n - 1) n_support = n - 1;

    const std::vector<std::size_t> drawn = sample_without_replacement(rng, train_pool.size(), n);

    TaskSample task;
    for (std::size_t i = 0; i < n; ++i) {
        Batch& side = i < n_support ? task.support : task.query;
        side.inputs.push_back(train_pool.inputs[drawn[i]]);
        side.targets.push_back(train_pool.targets[drawn[i]]);
    }
    return task;
}

// One plain gradient step on the support loss: theta' = theta - alpha * grad.
template <Objective Sup>
std::vector<double> inner_update(std::span<const double> theta, const Sup& support, double alpha,
                                 double* support_loss = nullptr) {
    std::vector<double> adapted(theta.begin(), theta.end());
    std::vector<double> grad(theta.size(), 0.0);
    const double loss = support.loss_and_grad(theta, grad);
    if (support_loss) *support_loss = loss;
    if (alpha != 0.0) axpy(-alpha, grad, adapted);
    return adapted;
}

inline CnnParams inner_update(const CnnParams& theta, const Batch& support, double alpha,
                              int threads = 1) {
    if (alpha < 0.0) throw invalid_input("inner_update: alpha must be >= 0");
    BatchObjective obj(theta.config, support, threads);
    return unflatten(theta.config, inner_update(theta.values, obj, alpha));
}

struct OuterGradient {
    std::vector<double> grad;
    double support_loss = 0.0;
    double query_loss = 0.0;
};

// Per-task contribution to the meta gradient. first_order evaluates the
// query gradient at the adapted parameters; second_order additionally
// applies (I - alpha * H_support(theta)) via a Hessian-vector product
// against the query gradient direction.
template <Objective Sup, Objective Qry>
OuterGradient outer_gradient(std::span<const double> theta, const Sup& support, const Qry& query,
                             double alpha, MetaMode mode, double hvp_eps = 1e-4) {
    OuterGradient out;
    const std::vector<double> adapted = inner_update(theta, support, alpha, &out.support_loss);

    out.grad.assign(theta.size(), 0.0);
    out.query_loss = query.loss_and_grad(adapted, out.grad);

    if (mode == MetaMode::second_order && alpha != 0.0) {
        const std::vector<double> correction = hvp(support, theta, out.grad, hvp_eps);
        axpy(-alpha, correction, out.grad);
    }
    return out;
}

inline OuterGradient outer_gradient(const CnnParams& theta, const TaskSample& task, double alpha,
                                    MetaMode mode, double hvp_eps = 1e-4, int threads = 1) {
    BatchObjective sup(theta.config, task.support, threads);
    BatchObjective qry(theta.config, task.query, threads);
    return outer_gradient(theta.values, sup, qry, alpha, mode, hvp_eps);
}

struct MetaStepResult {
    std::vector<double> grad_sum;  // sum of per-task outer gradients
    double mean_support_loss = 0.0;
    double mean_query_loss = 0.0;
};

// Evaluates every task's outer gradient at the same theta and sums in task
// order. The caller owns the parameter update.
template <Objective Sup, Objective Qry>
MetaStepResult meta_step(std::span<const double> theta,
                         std::span<const std::pair<Sup, Qry>> tasks, double alpha, MetaMode mode,
                         double hvp_eps = 1e-4) {
    if (tasks.empty()) throw invalid_input("meta_step: no tasks");
    MetaStepResult result;
    result.grad_sum.assign(theta.size(), 0.0);
    for (const auto& [support, query] : tasks) {
        OuterGradient g = outer_gradient(theta, support, query, alpha, mode, hvp_eps);
        axpy(1.0, g.grad, result.grad_sum);
        result.mean_support_loss += g.support_loss;
        result.mean_query_loss += g.query_loss;
    }
    result.mean_support_loss /= static_cast<double>(tasks.size());
    result.mean_query_loss /= static_cast<double>(tasks.size());
    return result;
}

struct MetaProgress {
    int iteration = 0;
    double mean_support_loss = 0.0;
    double mean_query_loss = 0.0;
    double wall_seconds = 0.0;
};

using MetaProgressSink = std::function<void(const MetaProgress&)>;

// Meta-training loop. Each iteration samples tasks_per_iteration tasks from
// the pool, accumulates their outer gradients at the iteration's initial
// theta and applies a single update theta <- theta - beta * sum(g).
inline CnnParams meta_train(const Batch& train_pool, const MetaConfig& cfg,
                            const CnnParams& theta0, const MetaProgressSink& progress = {}) {
    cfg.validate();
    train_pool.validate(theta0.config);

    CnnParams theta = theta0;
    Rng task_rng = make_rng(cfg.seed, "meta.tasks");
    AdamState adam(theta.values.size());
    const auto start = std::chrono::steady_clock::now();

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<double> grad_sum(theta.values.size(), 0.0);
        double support_loss = 0.0;
        double query_loss = 0.0;

        for (int t = 0; t < cfg.tasks_per_iteration; ++t) {
            const TaskSample task = sample_task(train_pool, cfg, task_rng);
            OuterGradient g =
                outer_gradient(theta, task, cfg.alpha, cfg.mode, cfg.hvp_epsilon, cfg.threads);
            axpy(1.0, g.grad, grad_sum);
            support_loss += g.support_loss;
            query_loss += g.query_loss;
        }
        support_loss /= static_cast<double>(cfg.tasks_per_iteration);
        query_loss /= static_cast<double>(cfg.tasks_per_iteration);
        check_finite(query_loss, "meta_train: query loss");

        if (cfg.outer == OuterOptimizer::sgd) {
            axpy(-cfg.beta, grad_sum, theta.values);
        } else {
            adam_step(adam, theta.values, grad_sum, cfg.beta);
        }

        if (progress) {
            const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
            progress(MetaProgress{iter, support_loss, query_loss, elapsed.count()});
        }
    }
    return theta;
}

}  // namespace rpose
