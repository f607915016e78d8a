#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <tuple>
#include <vector>

#include "rpose/common.hpp"

namespace rpose {

// One radar return: spatial position (m), Doppler velocity (m/s) and signal
// intensity. Five features per point throughout the pipeline.
struct Point {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double doppler = 0.0;
    double intensity = 0.0;

    static constexpr int kFeatures = 5;

    double feature(int f) const {
        switch (f) {
            case 0: return x;
            case 1: return y;
            case 2: return z;
            case 3: return doppler;
            default: return intensity;
        }
    }

    friend bool operator==(const Point&, const Point&) = default;
};

// All points detected during one sampling period. `index` is the frame's
// position within its recording (consecutive from 0).
struct Frame {
    int index = 0;
    std::vector<Point> points;
};

// 2M+1 consecutive frames centered on `center_index`, boundary neighbors
// clamped to the recording edge.
struct FusedFrame {
    int center_index = 0;
    int half_width = 0;
    std::vector<Frame> frames;
};

// Fixed-shape network input: `size` x `size` spatial grid with `channels`
// feature planes, stored channel-major.
struct InputGrid {
    int size = 0;
    int channels = 0;
    std::vector<double> values;  // [channel][row][col]

    InputGrid() = default;
    InputGrid(int g, int c) : size(g), channels(c), values(static_cast<std::size_t>(g) * g * c, 0.0) {}

    double& at(int c, int y, int x) {
        return values[(static_cast<std::size_t>(c) * size + y) * size + x];
    }
    double at(int c, int y, int x) const {
        return values[(static_cast<std::size_t>(c) * size + y) * size + x];
    }
};

// Per-channel standardization statistics, computed over the training split
// only.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

inline int fused_channels(int half_width) {
    return Point::kFeatures * (2 * half_width + 1);
}

// Gathers the 2M+1 frames centered on frame k. Neighbor indices that fall
// outside the recording are clamped to the nearest valid frame, so every
// frame of a recording yields a sample.
inline FusedFrame fuse_frames(std::span<const Frame> recording, int k, int half_width) {
    if (recording.empty()) throw invalid_input("fuse_frames: empty recording");
    if (k < 0 || static_cast<std::size_t>(k) >= recording.size())
        throw invalid_input("fuse_frames: center index out of range");
    if (half_width < 0) throw invalid_input("fuse_frames: negative half width");

    FusedFrame fused;
    fused.center_index = k;
    fused.half_width = half_width;
    fused.frames.reserve(static_cast<std::size_t>(2 * half_width + 1));
    const int last = static_cast<int>(recording.size()) - 1;
    for (int off = -half_width; off <= half_width; ++off) {
        const int src = std::clamp(k + off, 0, last);
        fused.frames.push_back(recording[static_cast<std::size_t>(src)]);
    }
    return fused;
}

// Fixed point order: descending intensity, ties broken lexicographically on
// (x, y, z, doppler). Pads with zero points or truncates to exactly n_fixed.
inline std::vector<Point> canonicalize_frame(const Frame& frame, int n_fixed) {
    if (n_fixed <= 0) throw invalid_input("canonicalize_frame: n_fixed must be positive");

    std::vector<Point> pts = frame.points;
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        if (a.intensity != b.intensity) return a.intensity > b.intensity;
        return std::tie(a.x, a.y, a.z, a.doppler) < std::tie(b.x, b.y, b.z, b.doppler);
    });
    pts.resize(static_cast<std::size_t>(n_fixed));  // zero points at the tail
    return pts;
}

// Canonicalizes every constituent frame to n_fixed points, lays each frame's
// n_fixed x 5 feature matrix out row-major on a G x G grid and stacks the
// per-frame grids along the channel axis in frame order.
inline InputGrid to_grid(const FusedFrame& fused, int n_fixed, int grid_size) {
    if (grid_size * grid_size != n_fixed)
        throw invalid_config("to_grid: grid_size^2 must equal n_fixed");

    InputGrid grid(grid_size, fused_channels(fused.half_width));
    for (std::size_t f = 0; f < fused.frames.size(); ++f) {
        const std::vector<Point> pts = canonicalize_frame(fused.frames[f], n_fixed);
        const int base = static_cast<int>(f) * Point::kFeatures;
        for (int p = 0; p < n_fixed; ++p) {
            const int y = p / grid_size;
            const int x = p % grid_size;
            for (int c = 0; c < Point::kFeatures; ++c)
                grid.at(base + c, y, x) = pts[static_cast<std::size_t>(p)].feature(c);
        }
    }
    return grid;
}

// Mean and standard deviation per channel over a set of grids. Standard
// deviations below 1e-8 are clamped to 1 so constant channels standardize to
// zero instead of blowing up.
inline ChannelStats compute_channel_stats(std::span<const InputGrid> grids) {
    if (grids.empty()) throw invalid_input("compute_channel_stats: no grids");
    const int channels = grids.front().channels;
    const int g = grids.front().size;
    const double per_channel = static_cast<double>(grids.size()) * g * g;

    ChannelStats stats;
    stats.mean.assign(static_cast<std::size_t>(channels), 0.0);
    stats.stddev.assign(static_cast<std::size_t>(channels), 0.0);

    for (const InputGrid& grid : grids) {
        if (grid.channels != channels || grid.size != g)
            throw invalid_input("compute_channel_stats: mixed grid shapes");
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x) stats.mean[static_cast<std::size_t>(c)] += grid.at(c, y, x);
    }
    for (int c = 0; c < channels; ++c) stats.mean[static_cast<std::size_t>(c)] /= per_channel;

    for (const InputGrid& grid : grids) {
        for (int c = 0; c < channels; ++c) {
            const double m = stats.mean[static_cast<std::size_t>(c)];
            for (int y = 0; y < g; ++y)
                for (int x = 0; x < g; ++x) {
                    const double d = grid.at(c, y, x) - m;
                    stats.stddev[static_cast<std::size_t>(c)] += d * d;
                }
        }
    }
    for (int c = 0; c < channels; ++c) {
        double s = std::sqrt(stats.stddev[static_cast<std::size_t>(c)] / per_channel);
        if (s < 1e-8) s = 1.0;
        stats.stddev[static_cast<std::size_t>(c)] = s;
    }
    return stats;
}

inline InputGrid standardize(const InputGrid& grid, const ChannelStats& stats) {
    if (static_cast<std::size_t>(grid.channels) != stats.mean.size() ||
        static_cast<std::size_t>(grid.channels) != stats.stddev.size())
        throw invalid_input("standardize: channel count mismatch");

    InputGrid out = grid;
    for (int c = 0; c < grid.channels; ++c) {
        const double m = stats.mean[static_cast<std::size_t>(c)];
        const double inv = 1.0 / stats.stddev[static_cast<std::size_t>(c)];
        for (int y = 0; y < grid.size; ++y)
            for (int x = 0; x < grid.size; ++x) out.at(c, y, x) = (grid.at(c, y, x) - m) * inv;
    }
    return out;
}

}  // namespace rpose
