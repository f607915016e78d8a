#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <thread>
#include <vector>

#include "rpose/common.hpp"
#include "rpose/pointcloud.hpp"

namespace rpose {

// ---------------------------------------------------------------------------
// Architecture: conv(k,same) -> ReLU -> conv(k,same) -> ReLU -> flatten ->
// fc -> ReLU -> fc, linear output of out_dim joint coordinates.
// ---------------------------------------------------------------------------

struct CnnConfig {
    int grid_size = 8;
    int in_channels = 5;
    int conv1_out = 16;
    int conv2_out = 32;
    int kernel = 3;
    int fc_hidden = 512;
    int out_dim = 57;

    void validate() const {
        if (grid_size <= 0 || in_channels <= 0 || conv1_out <= 0 || conv2_out <= 0 ||
            fc_hidden <= 0 || out_dim <= 0)
            throw invalid_config("CnnConfig: all dimensions must be positive");
        if (kernel <= 0 || kernel % 2 == 0)
            throw invalid_config("CnnConfig: kernel must be odd and positive");
    }

    friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

// Offsets of each layer's weights/biases inside the flat parameter vector.
// Flatten order: conv1 w, conv1 b, conv2 w, conv2 b, fc1 w, fc1 b, fc2 w,
// fc2 b. Conv weights are [out][in][ky][kx], fc weights [out][in].
struct ParamLayout {
    std::size_t conv1_w = 0, conv1_b = 0;
    std::size_t conv2_w = 0, conv2_b = 0;
    std::size_t fc1_w = 0, fc1_b = 0;
    std::size_t fc2_w = 0, fc2_b = 0;
    std::size_t total = 0;
    std::size_t flat_dim = 0;  // conv output size feeding fc1

    explicit ParamLayout(const CnnConfig& c) {
        const auto k2 = static_cast<std::size_t>(c.kernel) * c.kernel;
        const auto g2 = static_cast<std::size_t>(c.grid_size) * c.grid_size;
        flat_dim = g2 * c.conv2_out;
        std::size_t at = 0;
        conv1_w = at;
        at += k2 * c.in_channels * c.conv1_out;
        conv1_b = at;
        at += c.conv1_out;
        conv2_w = at;
        at += k2 * c.conv1_out * c.conv2_out;
        conv2_b = at;
        at += c.conv2_out;
        fc1_w = at;
        at += flat_dim * c.fc_hidden;
        fc1_b = at;
        at += c.fc_hidden;
        fc2_w = at;
        at += static_cast<std::size_t>(c.fc_hidden) * c.out_dim;
        fc2_b = at;
        at += c.out_dim;
        total = at;
    }
};

// Closed-form parameter count: k^2*C*c1 + c1 + k^2*c1*c2 + c2 +
// (G^2*c2)*fc + fc + fc*out + out.
inline std::size_t param_count(const CnnConfig& config) {
    config.validate();
    return ParamLayout(config).total;
}

struct CnnParams {
    CnnConfig config;
    std::vector<double> values;

    CnnParams() = default;
    explicit CnnParams(const CnnConfig& cfg) : config(cfg), values(param_count(cfg), 0.0) {}
};

// flatten/unflatten are a bijection by construction; unflatten re-checks the
// size so a truncated vector cannot masquerade as parameters.
inline std::vector<double> flatten(const CnnParams& params) { return params.values; }

inline CnnParams unflatten(const CnnConfig& config, std::span<const double> flat) {
    if (flat.size() != param_count(config))
        throw invalid_input("unflatten: flat vector size does not match config");
    CnnParams p(config);
    p.values.assign(flat.begin(), flat.end());
    return p;
}

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer, biases
// zero. Weight tensors drawn in flatten order.
inline CnnParams init_params(const CnnConfig& config, std::uint64_t seed) {
    CnnParams params(config);
    const ParamLayout L(config);
    Rng rng = make_rng(seed, "nn.init");

    auto fill = [&](std::size_t begin, std::size_t end, double bound) {
        for (std::size_t i = begin; i < end; ++i) params.values[i] = uniform(rng, -bound, bound);
    };
    const double k2 = static_cast<double>(config.kernel) * config.kernel;
    fill(L.conv1_w, L.conv1_b, 1.0 / std::sqrt(k2 * config.in_channels));
    fill(L.conv2_w, L.conv2_b, 1.0 / std::sqrt(k2 * config.conv1_out));
    fill(L.fc1_w, L.fc1_b, 1.0 / std::sqrt(static_cast<double>(L.flat_dim)));
    fill(L.fc2_w, L.fc2_b, 1.0 / std::sqrt(static_cast<double>(config.fc_hidden)));
    return params;
}

struct Batch {
    std::vector<InputGrid> inputs;
    std::vector<std::vector<double>> targets;  // out_dim joint coordinates, meters

    std::size_t size() const { return inputs.size(); }

    void validate(const CnnConfig& config) const {
        if (inputs.empty() || inputs.size() != targets.size())
            throw invalid_input("Batch: inputs/targets must be non-empty and equally sized");
        for (const InputGrid& g : inputs)
            if (g.size != config.grid_size || g.channels != config.in_channels)
                throw invalid_input("Batch: input grid shape does not match config");
        for (const auto& t : targets)
            if (t.size() != static_cast<std::size_t>(config.out_dim))
                throw invalid_input("Batch: target length does not match config");
    }
};

// Mean absolute error over coordinates.
inline double loss_l1(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty())
        throw invalid_input("loss_l1: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

// Per-sample activations, kept around for backprop and for kink inspection
// in the gradient-check tests (pre-activations carry the ReLU gate signs).
struct Activations {
    std::vector<double> z1, a1;  // conv1 pre/post, [c1*G*G]
    std::vector<double> z2, a2;  // conv2 pre/post, [c2*G*G]
    std::vector<double> z3, a3;  // fc1 pre/post, [fc_hidden]
    std::vector<double> out;     // [out_dim]

    void resize(const CnnConfig& c) {
        const auto g2 = static_cast<std::size_t>(c.grid_size) * c.grid_size;
        z1.assign(g2 * c.conv1_out, 0.0);
        a1.assign(g2 * c.conv1_out, 0.0);
        z2.assign(g2 * c.conv2_out, 0.0);
        a2.assign(g2 * c.conv2_out, 0.0);
        z3.assign(static_cast<std::size_t>(c.fc_hidden), 0.0);
        a3.assign(static_cast<std::size_t>(c.fc_hidden), 0.0);
        out.assign(static_cast<std::size_t>(c.out_dim), 0.0);
    }
};

namespace detail {

// Same-padding convolution: out[oc][y][x] = b[oc] + sum w[oc][ic][ky][kx] *
// in[ic][y+ky-pad][x+kx-pad], zero outside the grid. Kernel bounds are
// hoisted out of the inner loops; summation order stays fixed.
inline void conv_forward(std::span<const double> w, std::span<const double> b,
                         std::span<const double> in, std::span<double> out, int g, int in_ch,
                         int out_ch, int kernel) {
    const int pad = kernel / 2;
    for (int oc = 0; oc < out_ch; ++oc) {
        const double bias = b[static_cast<std::size_t>(oc)];
        double* orow = &out[static_cast<std::size_t>(oc) * g * g];
        const double* wbase = &w[static_cast<std::size_t>(oc) * in_ch * kernel * kernel];
        for (int y = 0; y < g; ++y) {
            const int ky0 = std::max(0, pad - y);
            const int ky1 = std::min(kernel, g + pad - y);
            for (int x = 0; x < g; ++x) {
                const int kx0 = std::max(0, pad - x);
                const int kx1 = std::min(kernel, g + pad - x);
                double acc = bias;
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* iplane = &in[static_cast<std::size_t>(ic) * g * g];
                    const double* wplane = wbase + static_cast<std::size_t>(ic) * kernel * kernel;
                    for (int ky = ky0; ky < ky1; ++ky) {
                        const int irow = (y + ky - pad) * g + x - pad;  // irow + kx0 >= 0
                        const double* wrow = wplane + static_cast<std::size_t>(ky) * kernel;
                        for (int kx = kx0; kx < kx1; ++kx) acc += wrow[kx] * iplane[irow + kx];
                    }
                }
                orow[static_cast<std::size_t>(y) * g + x] = acc;
            }
        }
    }
}

// Accumulates weight/bias gradients and (optionally) the input delta for one
// convolution layer given the output delta.
inline void conv_backward(std::span<const double> w, std::span<const double> in,
                          std::span<const double> delta_out, std::span<double> grad_w,
                          std::span<double> grad_b, std::span<double> delta_in, int g, int in_ch,
                          int out_ch, int kernel) {
    const int pad = kernel / 2;
    const bool with_input_delta = !delta_in.empty();
    for (int oc = 0; oc < out_ch; ++oc) {
        const std::size_t obase = static_cast<std::size_t>(oc) * g * g;
        const std::size_t wplane0 = static_cast<std::size_t>(oc) * in_ch * kernel * kernel;
        double gb = 0.0;
        for (int y = 0; y < g; ++y) {
            const int ky0 = std::max(0, pad - y);
            const int ky1 = std::min(kernel, g + pad - y);
            for (int x = 0; x < g; ++x) {
                const double d = delta_out[obase + static_cast<std::size_t>(y) * g + x];
                if (d == 0.0) continue;
                gb += d;
                const int kx0 = std::max(0, pad - x);
                const int kx1 = std::min(kernel, g + pad - x);
                for (int ic = 0; ic < in_ch; ++ic) {
                    const double* iplane = &in[static_cast<std::size_t>(ic) * g * g];
                    const std::size_t wbase = wplane0 + static_cast<std::size_t>(ic) * kernel * kernel;
                    for (int ky = ky0; ky < ky1; ++ky) {
                        const int irow = (y + ky - pad) * g + x - pad;  // irow + kx0 >= 0
                        double* gw = &grad_w[wbase + static_cast<std::size_t>(ky) * kernel];
                        if (with_input_delta) {
                            double* dplane = &delta_in[static_cast<std::size_t>(ic) * g * g];
                            const double* wrow = &w[wbase + static_cast<std::size_t>(ky) * kernel];
                            for (int kx = kx0; kx < kx1; ++kx) {
                                gw[kx] += d * iplane[irow + kx];
                                dplane[irow + kx] += d * wrow[kx];
                            }
                        } else {
                            for (int kx = kx0; kx < kx1; ++kx) gw[kx] += d * iplane[irow + kx];
                        }
                    }
                }
            }
        }
        grad_b[static_cast<std::size_t>(oc)] += gb;
    }
}

inline void relu(std::span<const double> z, std::span<double> a) {
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = z[i] > 0.0 ? z[i] : 0.0;
}

// Subgradient convention: ReLU'(0) = 0.
inline void relu_gate(std::span<const double> z, std::span<double> delta) {
    for (std::size_t i = 0; i < z.size(); ++i)
        if (z[i] <= 0.0) delta[i] = 0.0;
}

}  // namespace detail

// Forward pass for a single grid; activations land in `acts`.
inline void forward_pass(const CnnConfig& config, std::span<const double> theta,
                         const InputGrid& grid, Activations& acts) {
    if (grid.size != config.grid_size || grid.channels != config.in_channels)
        throw invalid_input("forward: input grid shape does not match config");
    const ParamLayout L(config);
    if (theta.size() != L.total) throw invalid_input("forward: parameter vector size mismatch");
    acts.resize(config);

    const int g = config.grid_size;
    detail::conv_forward(theta.subspan(L.conv1_w), theta.subspan(L.conv1_b), grid.values, acts.z1,
                         g, config.in_channels, config.conv1_out, config.kernel);
    detail::relu(acts.z1, acts.a1);
    detail::conv_forward(theta.subspan(L.conv2_w), theta.subspan(L.conv2_b), acts.a1, acts.z2, g,
                         config.conv1_out, config.conv2_out, config.kernel);
    detail::relu(acts.z2, acts.a2);

    for (int h = 0; h < config.fc_hidden; ++h) {
        const std::size_t wbase = L.fc1_w + static_cast<std::size_t>(h) * L.flat_dim;
        double acc = theta[L.fc1_b + static_cast<std::size_t>(h)];
        for (std::size_t f = 0; f < L.flat_dim; ++f) acc += theta[wbase + f] * acts.a2[f];
        acts.z3[static_cast<std::size_t>(h)] = acc;
    }
    detail::relu(acts.z3, acts.a3);

    for (int o = 0; o < config.out_dim; ++o) {
        const std::size_t wbase = L.fc2_w + static_cast<std::size_t>(o) * config.fc_hidden;
        double acc = theta[L.fc2_b + static_cast<std::size_t>(o)];
        for (int h = 0; h < config.fc_hidden; ++h)
            acc += theta[wbase + static_cast<std::size_t>(h)] * acts.a3[static_cast<std::size_t>(h)];
        acts.out[static_cast<std::size_t>(o)] = acc;
    }
}

inline std::vector<double> forward(const CnnParams& params, const InputGrid& grid) {
    Activations acts;
    forward_pass(params.config, params.values, grid, acts);
    return acts.out;
}

struct BackwardResult {
    double loss = 0.0;
    std::vector<double> grad;
};

namespace detail {

// Adds one sample's loss gradient (of mean-|.|-over-coordinates loss, scaled
// by `weight`) into grad. Subgradient 0 at residual == 0 and ReLU input == 0.
inline double backward_sample(const CnnConfig& config, const ParamLayout& L,
                              std::span<const double> theta, const InputGrid& input,
                              std::span<const double> target, double weight,
                              std::span<double> grad, Activations& acts,
                              std::vector<double>& dout, std::vector<double>& dz3,
                              std::vector<double>& d2, std::vector<double>& d1) {
    forward_pass(config, theta, input, acts);

    const double coord_scale = weight / static_cast<double>(config.out_dim);
    double loss = 0.0;
    dout.assign(static_cast<std::size_t>(config.out_dim), 0.0);
    for (int o = 0; o < config.out_dim; ++o) {
        const double r = acts.out[static_cast<std::size_t>(o)] - target[static_cast<std::size_t>(o)];
        loss += std::abs(r);
        dout[static_cast<std::size_t>(o)] = r > 0.0 ? coord_scale : (r < 0.0 ? -coord_scale : 0.0);
    }
    loss /= static_cast<double>(config.out_dim);

    // fc2
    dz3.assign(static_cast<std::size_t>(config.fc_hidden), 0.0);
    for (int o = 0; o < config.out_dim; ++o) {
        const double d = dout[static_cast<std::size_t>(o)];
        grad[L.fc2_b + static_cast<std::size_t>(o)] += d;
        if (d == 0.0) continue;
        const std::size_t wbase = L.fc2_w + static_cast<std::size_t>(o) * config.fc_hidden;
        for (int h = 0; h < config.fc_hidden; ++h) {
            grad[wbase + static_cast<std::size_t>(h)] += d * acts.a3[static_cast<std::size_t>(h)];
            dz3[static_cast<std::size_t>(h)] += d * theta[wbase + static_cast<std::size_t>(h)];
        }
    }
    relu_gate(acts.z3, dz3);

    // fc1
    d2.assign(L.flat_dim, 0.0);
    for (int h = 0; h < config.fc_hidden; ++h) {
        const double d = dz3[static_cast<std::size_t>(h)];
        if (d == 0.0) continue;
        grad[L.fc1_b + static_cast<std::size_t>(h)] += d;
        const std::size_t wbase = L.fc1_w + static_cast<std::size_t>(h) * L.flat_dim;
        for (std::size_t f = 0; f < L.flat_dim; ++f) {
            grad[wbase + f] += d * acts.a2[f];
            d2[f] += d * theta[wbase + f];
        }
    }
    relu_gate(acts.z2, d2);

    // conv2
    const int g = config.grid_size;
    d1.assign(static_cast<std::size_t>(config.conv1_out) * g * g, 0.0);
    conv_backward(theta.subspan(L.conv2_w), acts.a1, d2, grad.subspan(L.conv2_w),
                  grad.subspan(L.conv2_b), d1, g, config.conv1_out, config.conv2_out,
                  config.kernel);
    relu_gate(acts.z1, d1);

    // conv1 (input delta not needed)
    conv_backward(theta.subspan(L.conv1_w), input.values, d1, grad.subspan(L.conv1_w),
                  grad.subspan(L.conv1_b), {}, g, config.in_channels, config.conv1_out,
                  config.kernel);
    return loss;
}

}  // namespace detail

// Exact reverse-mode gradient of the mean batch L1 loss over the listed
// sample indices. With threads > 1 the samples are split into contiguous
// chunks; partial sums are combined in chunk order so the result does not
// depend on scheduling.
inline BackwardResult backward_subset(const CnnParams& params, const Batch& batch,
                                      std::span<const std::size_t> indices, int threads = 1) {
    batch.validate(params.config);
    if (indices.empty()) throw invalid_input("backward: empty sample subset");
    const ParamLayout L(params.config);
    const double weight = 1.0 / static_cast<double>(indices.size());

    const std::size_t n = indices.size();
    std::size_t chunks = threads < 1 ? 1 : static_cast<std::size_t>(threads);
    if (chunks > n) chunks = n;

    std::vector<std::vector<double>> grads(chunks);
    std::vector<double> losses(chunks, 0.0);

    auto run_chunk = [&](std::size_t ci) {
        const std::size_t begin = ci * n / chunks;
        const std::size_t end = (ci + 1) * n / chunks;
        grads[ci].assign(L.total, 0.0);
        Activations acts;
        std::vector<double> dout, dz3, d2, d1;
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t s = indices[i];
            losses[ci] += weight * detail::backward_sample(params.config, L, params.values,
                                                           batch.inputs[s], batch.targets[s],
                                                           weight, grads[ci], acts, dout, dz3, d2,
                                                           d1);
        }
    };

    if (chunks == 1) {
        run_chunk(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(chunks);
        for (std::size_t ci = 0; ci < chunks; ++ci) pool.emplace_back(run_chunk, ci);
        for (std::thread& t : pool) t.join();
    }

    BackwardResult result;
    result.loss = 0.0;
    result.grad = std::move(grads[0]);
    for (std::size_t ci = 1; ci < chunks; ++ci)
        axpy(1.0, grads[ci], result.grad);
    for (std::size_t ci = 0; ci < chunks; ++ci) result.loss += losses[ci];
    return result;
}

inline BackwardResult backward(const CnnParams& params, const Batch& batch, int threads = 1) {
    std::vector<std::size_t> idx(batch.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return backward_subset(params, batch, idx, threads);
}

// Mean batch loss without gradients (finite-difference oracles and metric
// code paths).
inline double batch_loss(const CnnParams& params, const Batch& batch) {
    batch.validate(params.config);
    Activations acts;
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        forward_pass(params.config, params.values, batch.inputs[i], acts);
        loss += loss_l1(acts.out, batch.targets[i]);
    }
    return loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Differentiable objective over a flat parameter vector. The batch loss is
// the production instance; tests substitute closed-form surrogates.
// ---------------------------------------------------------------------------

template <typename F>
concept Objective = requires(const F f, std::span<const double> theta, std::span<double> grad) {
    { f.dim() } -> std::convertible_to<std::size_t>;
    { f.loss_and_grad(theta, grad) } -> std::convertible_to<double>;
};

struct BatchObjective {
    const CnnConfig* config;
    const Batch* batch;
    int threads = 1;

    BatchObjective(const CnnConfig& cfg, const Batch& b, int t = 1)
        : config(&cfg), batch(&b), threads(t) {}

    std::size_t dim() const { return param_count(*config); }

    double loss_and_grad(std::span<const double> theta, std::span<double> grad) const {
        CnnParams p = unflatten(*config, theta);
        BackwardResult r = backward(p, *batch, threads);
        std::copy(r.grad.begin(), r.grad.end(), grad.begin());
        return r.loss;
    }
};

// Hessian-vector product by central differences of exact gradients along the
// normalized direction: (grad(theta + eps*v_hat) - grad(theta - eps*v_hat))
// / (2 eps) * |v|. Returns zero for |v| < 1e-12.
template <Objective F>
std::vector<double> hvp(const F& f, std::span<const double> theta, std::span<const double> v,
                        double eps) {
    if (theta.size() != f.dim() || v.size() != f.dim())
        throw invalid_input("hvp: vector length mismatch");
    if (!(eps > 0.0)) throw invalid_input("hvp: eps must be positive");

    const double vnorm = norm2(v);
    std::vector<double> result(v.size(), 0.0);
    if (vnorm < 1e-12) return result;

    std::vector<double> shifted(theta.begin(), theta.end());
    std::vector<double> grad_plus(v.size(), 0.0), grad_minus(v.size(), 0.0);

    const double step = eps / vnorm;
    for (std::size_t i = 0; i < v.size(); ++i) shifted[i] = theta[i] + step * v[i];
    f.loss_and_grad(shifted, grad_plus);
    for (std::size_t i = 0; i < v.size(); ++i) shifted[i] = theta[i] - step * v[i];
    f.loss_and_grad(shifted, grad_minus);

    const double scale = vnorm / (2.0 * eps);
    for (std::size_t i = 0; i < v.size(); ++i) result[i] = (grad_plus[i] - grad_minus[i]) * scale;
    return result;
}

inline std::vector<double> hvp(const CnnParams& params, const Batch& batch,
                               std::span<const double> v, double eps, int threads = 1) {
    BatchObjective obj(params.config, batch, threads);
    return hvp(obj, params.values, v, eps);
}

}  // namespace rpose
