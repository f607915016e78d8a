#include <doctest.h>

#include <rpose/meta.hpp>

#include "grad_check_util.hpp"
#include "test_objectives.hpp"

using namespace rpose;
using oracles::DiagQuadratic;
using oracles::ScalarAbs;

namespace {

CnnConfig tiny_config() {
    CnnConfig c;
    c.grid_size = 2;
    c.in_channels = 1;
    c.conv1_out = 2;
    c.conv2_out = 2;
    c.fc_hidden = 4;
    c.out_dim = 3;
    return c;
}

Batch tiny_pool(const CnnConfig& c, int n, std::uint64_t seed) {
    Rng rng = make_rng(seed, "test.meta.pool");
    return gradcheck::random_batch(c, rng, n);
}

MetaConfig small_meta(int frames_per_task) {
    MetaConfig cfg;
    cfg.frames_per_task = frames_per_task;
    cfg.tasks_per_iteration = 2;
    cfg.iterations = 3;
    return cfg;
}

}  // namespace

TEST_CASE("sample_task draws the whole pool when frames_per_task equals its size") {
    const CnnConfig c = tiny_config();
    const Batch pool = tiny_pool(c, 10, 1);
    MetaConfig cfg = small_meta(10);

    Rng rng = make_rng(2, "test.sample");
    const TaskSample task = sample_task(pool, cfg, rng);
    CHECK(task.support.size() == 5);
    CHECK(task.query.size() == 5);

    // support and query together cover the pool exactly once
    std::vector<std::vector<double>> seen;
    for (const auto& t : task.support.targets) seen.push_back(t);
    for (const auto& t : task.query.targets) seen.push_back(t);
    std::sort(seen.begin(), seen.end());
    std::vector<std::vector<double>> expected = pool.targets;
    std::sort(expected.begin(), expected.end());
    CHECK(seen == expected);
}

TEST_CASE("sample_task is deterministic for a fixed seed") {
    const CnnConfig c = tiny_config();
    const Batch pool = tiny_pool(c, 20, 3);
    const MetaConfig cfg = small_meta(8);

    Rng rng_a = make_rng(7, "test.sample.det");
    Rng rng_b = make_rng(7, "test.sample.det");
    const TaskSample a = sample_task(pool, cfg, rng_a);
    const TaskSample b = sample_task(pool, cfg, rng_b);
    CHECK(a.support.targets == b.support.targets);
    CHECK(a.query.targets == b.query.targets);
}

TEST_CASE("sample_task splits by the support fraction") {
    const CnnConfig c = tiny_config();
    const Batch pool = tiny_pool(c, 1000, 4);
    MetaConfig cfg = small_meta(1000);
    cfg.support_fraction = 0.5;

    Rng rng = make_rng(5, "test.sample.frac");
    const TaskSample task = sample_task(pool, cfg, rng);
    CHECK(task.support.size() == 500);
    CHECK(task.query.size() == 500);
}

TEST_CASE("sample_task rejects a pool smaller than frames_per_task") {
    const CnnConfig c = tiny_config();
    const Batch pool = tiny_pool(c, 5, 6);
    const MetaConfig cfg = small_meta(10);
    Rng rng = make_rng(8, "test.sample.small");
    CHECK_THROWS_AS(sample_task(pool, cfg, rng), invalid_config);
}

TEST_CASE("inner_update with alpha 0 returns theta bitwise") {
    const CnnConfig c = tiny_config();
    Rng rng = make_rng(9, "test.inner0");
    const CnnParams theta = gradcheck::random_params(c, rng);
    const Batch support = gradcheck::random_batch(c, rng, 4);

    const CnnParams adapted = inner_update(theta, support, 0.0);
    CHECK(adapted.values == theta.values);
}

TEST_CASE("inner_update at a stationary point returns theta") {
    const CnnConfig c = tiny_config();
    Rng rng = make_rng(10, "test.inner.fit");
    const CnnParams theta = gradcheck::random_params(c, rng);

    Batch support = gradcheck::random_batch(c, rng, 3);
    for (std::size_t s = 0; s < support.size(); ++s)
        support.targets[s] = forward(theta, support.inputs[s]);

    const CnnParams adapted = inner_update(theta, support, 0.1);
    CHECK(adapted.values == theta.values);
}

TEST_CASE("inner_update on the scalar |theta - 1| toy model") {
    const ScalarAbs support{1.0};
    const std::vector<double> theta{0.0};
    const std::vector<double> adapted = inner_update(std::span<const double>(theta), support, 0.1);
    CHECK(adapted[0] == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("outer_gradient with alpha 0 equals the plain query gradient in both modes") {
    DiagQuadratic sup{{1.0, 2.0, 3.0}};
    DiagQuadratic qry{{0.5, 1.5, 2.5}};
    const std::vector<double> theta{0.4, -0.8, 1.2};

    std::vector<double> plain(3, 0.0);
    qry.loss_and_grad(theta, plain);

    for (MetaMode mode : {MetaMode::first_order, MetaMode::second_order}) {
        const OuterGradient g = outer_gradient(std::span<const double>(theta), sup, qry, 0.0, mode);
        CHECK(g.grad == plain);
    }
}

TEST_CASE("second-order outer_gradient matches the closed form on quadratics") {
    const std::vector<double> diag{1.0, 2.0, 0.5, 3.0, 1.5};
    DiagQuadratic shared{diag};
    const std::vector<double> theta{0.7, -0.4, 1.3, 0.2, -0.9};
    const double alpha = 0.1;

    const OuterGradient g = outer_gradient(std::span<const double>(theta), shared, shared, alpha,
                                           MetaMode::second_order, 1e-4);

    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double im = 1.0 - alpha * diag[i];
        const double expected = im * diag[i] * im * theta[i];
        CHECK(g.grad[i] == doctest::Approx(expected).epsilon(1e-2));
    }
}

TEST_CASE("first- and second-order modes differ by exactly the curvature term") {
    const std::vector<double> diag{2.0, 1.0, 3.0};
    DiagQuadratic shared{diag};
    const std::vector<double> theta{0.5, -1.0, 0.25};
    const double alpha = 0.1;

    const OuterGradient first = outer_gradient(std::span<const double>(theta), shared, shared,
                                               alpha, MetaMode::first_order);
    const OuterGradient second = outer_gradient(std::span<const double>(theta), shared, shared,
                                                alpha, MetaMode::second_order, 1e-4);

    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double curvature = alpha * diag[i] * first.grad[i];  // alpha * H * grad_qry
        CHECK(first.grad[i] - second.grad[i] == doctest::Approx(curvature).epsilon(1e-6));
    }
}

TEST_CASE("swapping support and query changes the outer gradient") {
    const CnnConfig c = tiny_config();
    Rng rng = make_rng(11, "test.swap");
    const CnnParams theta = gradcheck::random_params(c, rng);

    TaskSample task;
    task.support = gradcheck::random_batch(c, rng, 4);
    task.query = gradcheck::random_batch(c, rng, 4);
    TaskSample swapped;
    swapped.support = task.query;
    swapped.query = task.support;

    const OuterGradient a = outer_gradient(theta, task, 0.1, MetaMode::first_order);
    const OuterGradient b = outer_gradient(theta, swapped, 0.1, MetaMode::first_order);
    CHECK(a.grad != b.grad);
}

TEST_CASE("meta_train with zero iterations or zero beta returns theta0") {
    const CnnConfig c = tiny_config();
    Rng rng = make_rng(12, "test.meta.noop");
    const CnnParams theta0 = gradcheck::random_params(c, rng);
    const Batch pool = tiny_pool(c, 16, 13);

    MetaConfig cfg = small_meta(8);
    cfg.iterations = 0;
    CHECK(meta_train(pool, cfg, theta0).values == theta0.values);

    cfg.iterations = 3;
    cfg.beta = 0.0;
    CHECK(meta_train(pool, cfg, theta0).values == theta0.values);
}

TEST_CASE("query loss decreases monotonically on a quadratic task family") {
    DiagQuadratic shared{{1.0, 2.0, 0.5, 1.5}};
    std::vector<std::pair<DiagQuadratic, DiagQuadratic>> tasks{{shared, shared}, {shared, shared}};

    std::vector<double> theta{1.0, -2.0, 3.0, -1.5};
    const double alpha = 0.1;
    const double beta = 0.001;

    double previous = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 10; ++iter) {
        const MetaStepResult step = meta_step(std::span<const double>(theta),
                                              std::span(std::as_const(tasks)), alpha,
                                              MetaMode::second_order, 1e-4);
        CHECK(step.mean_query_loss < previous);
        previous = step.mean_query_loss;
        axpy(-beta, step.grad_sum, theta);
    }
}

TEST_CASE("alpha 0 meta_train reduces to gradient descent on query losses") {
    const CnnConfig c = tiny_config();
    Rng rng = make_rng(14, "test.meta.alpha0");
    const CnnParams theta0 = gradcheck::random_params(c, rng);
    const Batch pool = tiny_pool(c, 24, 15);

    MetaConfig cfg = small_meta(8);
    cfg.alpha = 0.0;
    cfg.iterations = 4;
    cfg.beta = 0.01;
    cfg.seed = 99;

    const CnnParams trained = meta_train(pool, cfg, theta0);

    // reference loop: replay the task stream, step on summed query gradients
    CnnParams reference = theta0;
    Rng task_rng = make_rng(cfg.seed, "meta.tasks");
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<double> grad_sum(reference.values.size(), 0.0);
        for (int t = 0; t < cfg.tasks_per_iteration; ++t) {
            const TaskSample task = sample_task(pool, cfg, task_rng);
            const BackwardResult qry = backward(reference, task.query);
            axpy(1.0, qry.grad, grad_sum);
        }
        axpy(-cfg.beta, grad_sum, reference.values);
    }
    CHECK(trained.values == reference.values);
}

TEST_CASE("meta_train is bit-identical across runs with a fixed seed") {
    const CnnConfig c = tiny_config();
    Rng rng = make_rng(16, "test.meta.det");
    const CnnParams theta0 = gradcheck::random_params(c, rng);
    const Batch pool = tiny_pool(c, 20, 17);

    MetaConfig cfg = small_meta(6);
    cfg.seed = 5;
    cfg.iterations = 3;

    std::vector<MetaProgress> progress_a;
    const CnnParams a =
        meta_train(pool, cfg, theta0, [&](const MetaProgress& p) { progress_a.push_back(p); });
    const CnnParams b = meta_train(pool, cfg, theta0);
    CHECK(a.values == b.values);
    CHECK(progress_a.size() == 3);
}

TEST_CASE("meta_train applies one update per iteration") {
    // With one task per iteration and sgd outer updates, each iteration must
    // move theta by exactly -beta times that task's outer gradient.
    const CnnConfig c = tiny_config();
    Rng rng = make_rng(18, "test.meta.once");
    const CnnParams theta0 = gradcheck::random_params(c, rng);
    const Batch pool = tiny_pool(c, 12, 19);

    MetaConfig cfg = small_meta(6);
    cfg.tasks_per_iteration = 1;
    cfg.iterations = 1;
    cfg.seed = 31;
    cfg.mode = MetaMode::first_order;

    const CnnParams after = meta_train(pool, cfg, theta0);

    Rng task_rng = make_rng(cfg.seed, "meta.tasks");
    const TaskSample task = sample_task(pool, cfg, task_rng);
    const OuterGradient g = outer_gradient(theta0, task, cfg.alpha, cfg.mode, cfg.hvp_epsilon);
    for (std::size_t i = 0; i < after.values.size(); ++i)
        CHECK(after.values[i] == theta0.values[i] - cfg.beta * g.grad[i]);
}
