#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rpose/common.hpp"
#include "rpose/data.hpp"

namespace rpose {

// ---------------------------------------------------------------------------
// Synthetic task family for desk-scale verification. Each task is one
// synthetic "movement": a 19-joint skeleton animated by task-specific
// sinusoidal joint rotations, observed as a sparse noisy point cloud.
// Labels are the exact joint positions.
// ---------------------------------------------------------------------------

// Kinematic tree: parent index and rest offset (meters, unit scale) of each
// joint relative to its parent. x lateral, y depth from the sensor, z up.
inline constexpr std::array<int, kJoints> kSynthParent = {
    -1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 13, 0, 15, 16, 17};

inline constexpr std::array<std::array<double, 3>, kJoints> kSynthOffset = {{
    {0.0, 0.0, 0.0},      // 0 spine base (root)
    {0.0, 0.0, 0.26},     // 1 spine mid
    {0.0, 0.0, 0.24},     // 2 spine shoulder
    {0.0, 0.0, 0.09},     // 3 neck
    {0.0, 0.0, 0.16},     // 4 head
    {-0.19, 0.0, 0.01},   // 5 left shoulder
    {-0.05, 0.0, -0.27},  // 6 left elbow
    {0.0, 0.0, -0.25},    // 7 left wrist
    {0.19, 0.0, 0.01},    // 8 right shoulder
    {0.05, 0.0, -0.27},   // 9 right elbow
    {0.0, 0.0, -0.25},    // 10 right wrist
    {-0.09, 0.0, -0.04},  // 11 left hip
    {0.0, 0.0, -0.40},    // 12 left knee
    {0.0, 0.0, -0.38},    // 13 left ankle
    {0.0, -0.14, -0.04},  // 14 left foot
    {0.09, 0.0, -0.04},   // 15 right hip
    {0.0, 0.0, -0.40},    // 16 right knee
    {0.0, 0.0, -0.38},    // 17 right ankle
    {0.0, -0.14, -0.04},  // 18 right foot
}};

struct SynthConfig {
    int n_tasks = 5;
    int frames_per_task = 500;
    int points_per_frame = 32;
    double noise_std = 0.02;  // meters, isotropic
    std::uint64_t seed = 0;

    void validate() const {
        if (n_tasks < 1 || frames_per_task < 1 || points_per_frame < 1)
            throw invalid_config("SynthConfig: counts must be positive");
        if (noise_std < 0.0) throw invalid_config("SynthConfig: noise_std must be >= 0");
    }
};

// Task-specific motion parameterization, deterministic in (seed, task).
struct SynthTaskParams {
    double scale = 1.0;
    std::array<double, 3> root_base{};
    std::array<double, 3> root_amp{};
    std::array<double, 3> root_freq{};
    std::array<double, 3> root_phase{};
    std::array<double, kJoints> rest_angle{};  // rad; task posture, entry 0 unused
    std::array<double, kJoints> amplitude{};   // rad; entry 0 unused
    std::array<double, kJoints> frequency{};   // Hz
    std::array<double, kJoints> phase{};
    std::array<std::array<double, 3>, kJoints> axis{};  // unit rotation axes
};

namespace detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;

inline std::array<double, 3> rotate(const std::array<double, 3>& v,
                                    const std::array<double, 3>& u, double angle) {
    // Rodrigues rotation of v about unit axis u.
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double d = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) * (1.0 - c);
    return {
        v[0] * c + (u[1] * v[2] - u[2] * v[1]) * s + u[0] * d,
        v[1] * c + (u[2] * v[0] - u[0] * v[2]) * s + u[1] * d,
        v[2] * c + (u[0] * v[1] - u[1] * v[0]) * s + u[2] * d,
    };
}

inline std::array<double, 3> random_unit_axis(Rng& rng) {
    while (true) {
        const double x = uniform(rng, -1.0, 1.0);
        const double y = uniform(rng, -1.0, 1.0);
        const double z = uniform(rng, -1.0, 1.0);
        const double n2 = x * x + y * y + z * z;
        if (n2 > 1e-4 && n2 <= 1.0) {
            const double inv = 1.0 / std::sqrt(n2);
            return {x * inv, y * inv, z * inv};
        }
    }
}

}  // namespace detail

inline SynthTaskParams synth_task_params(const SynthConfig& cfg, int task) {
    Rng rng = make_rng(cfg.seed, "synth.task." + std::to_string(task));
    SynthTaskParams p;
    p.scale = uniform(rng, 0.80, 1.25);
    p.root_base = {uniform(rng, -0.5, 0.5), 2.2 + uniform(rng, -0.5, 0.5), 0.95 * p.scale};
    for (int a = 0; a < 3; ++a) {
        p.root_amp[static_cast<std::size_t>(a)] = uniform(rng, 0.02, 0.15);
        p.root_freq[static_cast<std::size_t>(a)] = uniform(rng, 0.15, 0.45);
        p.root_phase[static_cast<std::size_t>(a)] = uniform(rng, 0.0, detail::kTwoPi);
    }
    for (int j = 1; j < kJoints; ++j) {
        p.rest_angle[static_cast<std::size_t>(j)] = uniform(rng, -0.45, 0.45);
        p.amplitude[static_cast<std::size_t>(j)] = uniform(rng, 0.20, 1.20);
        p.frequency[static_cast<std::size_t>(j)] = uniform(rng, 0.20, 0.80);
        p.phase[static_cast<std::size_t>(j)] = uniform(rng, 0.0, detail::kTwoPi);
        p.axis[static_cast<std::size_t>(j)] = detail::random_unit_axis(rng);
    }
    return p;
}

// Exact joint positions at time t (seconds).
inline std::array<std::array<double, 3>, kJoints> synth_skeleton(const SynthTaskParams& p,
                                                                 double t) {
    std::array<std::array<double, 3>, kJoints> pos;
    for (int a = 0; a < 3; ++a)
        pos[0][static_cast<std::size_t>(a)] =
            p.root_base[static_cast<std::size_t>(a)] +
            p.root_amp[static_cast<std::size_t>(a)] *
                std::sin(detail::kTwoPi * p.root_freq[static_cast<std::size_t>(a)] * t +
                         p.root_phase[static_cast<std::size_t>(a)]);

    for (int j = 1; j < kJoints; ++j) {
        const auto js = static_cast<std::size_t>(j);
        const double angle =
            p.rest_angle[js] +
            p.amplitude[js] * std::sin(detail::kTwoPi * p.frequency[js] * t + p.phase[js]);
        const std::array<double, 3> off = detail::rotate(kSynthOffset[js], p.axis[js], angle);
        const auto parent = static_cast<std::size_t>(kSynthParent[js]);
        for (int a = 0; a < 3; ++a)
            pos[js][static_cast<std::size_t>(a)] =
                pos[parent][static_cast<std::size_t>(a)] + p.scale * off[static_cast<std::size_t>(a)];
    }
    return pos;
}

// One synthetic recording. Points cover a per-frame random subset of the
// joints first, then uniform samples along the bones; every point gets
// isotropic Gaussian positional noise. Doppler is the radial velocity of
// the underlying skeleton point between consecutive frames, intensity the
// inverse distance to the sensor at the origin.
inline Recording synth_recording(const SynthConfig& cfg, int task) {
    cfg.validate();
    const SynthTaskParams params = synth_task_params(cfg, task);
    Rng rng = make_rng(cfg.seed, "synth.points." + std::to_string(task));
    const double ts = 0.1;

    Recording rec;
    rec.subject_id = task;
    rec.movement_id = task;
    rec.sampling_period = ts;

    for (int k = 0; k < cfg.frames_per_task; ++k) {
        const double t = k * ts;
        const auto now = synth_skeleton(params, t);
        const auto prev = synth_skeleton(params, t - ts);

        std::vector<double> label(kLabelDim);
        for (int j = 0; j < kJoints; ++j)
            for (int a = 0; a < 3; ++a)
                label[static_cast<std::size_t>(3 * j + a)] = now[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)];

        Frame frame;
        frame.index = k;

        auto emit = [&](const std::array<double, 3>& at, const std::array<double, 3>& at_prev) {
            const double dist = std::sqrt(at[0] * at[0] + at[1] * at[1] + at[2] * at[2]);
            double doppler = 0.0;
            if (k > 0 && dist > 1e-9) {
                const double vx = (at[0] - at_prev[0]) / ts;
                const double vy = (at[1] - at_prev[1]) / ts;
                const double vz = (at[2] - at_prev[2]) / ts;
                doppler = (vx * at[0] + vy * at[1] + vz * at[2]) / dist;
            }
            Point p;
            p.x = at[0] + cfg.noise_std * gaussian(rng);
            p.y = at[1] + cfg.noise_std * gaussian(rng);
            p.z = at[2] + cfg.noise_std * gaussian(rng);
            p.doppler = doppler;
            p.intensity = dist > 1e-9 ? 1.0 / dist : 1.0;
            frame.points.push_back(p);
        };

        const int n_anchor = std::min(cfg.points_per_frame, kJoints);
        const std::vector<std::size_t> anchors =
            sample_without_replacement(rng, kJoints, static_cast<std::size_t>(n_anchor));
        for (const std::size_t j : anchors) emit(now[j], prev[j]);

        for (int p = n_anchor; p < cfg.points_per_frame; ++p) {
            const int bone = 1 + static_cast<int>(uniform_index(rng, kJoints - 1));
            const auto bs = static_cast<std::size_t>(bone);
            const auto ps = static_cast<std::size_t>(kSynthParent[bs]);
            const double w = uniform01(rng);
            std::array<double, 3> at, at_prev;
            for (int a = 0; a < 3; ++a) {
                const auto as = static_cast<std::size_t>(a);
                at[as] = now[ps][as] + w * (now[bs][as] - now[ps][as]);
                at_prev[as] = prev[ps][as] + w * (prev[bs][as] - prev[ps][as]);
            }
            emit(at, at_prev);
        }
        rec.frames.push_back(std::move(frame));
        rec.labels.push_back(std::move(label));
    }
    return rec;
}

inline std::vector<Recording> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<Recording> recordings;
    recordings.reserve(static_cast<std::size_t>(cfg.n_tasks));
    for (int task = 0; task < cfg.n_tasks; ++task) recordings.push_back(synth_recording(cfg, task));
    return recordings;
}

}  // namespace rpose
