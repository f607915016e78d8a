#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rpose/common.hpp"
#include "rpose/nn.hpp"
#include "rpose/pointcloud.hpp"

namespace rpose {

// One subject performing one movement: aligned frames and 19x3 joint labels
// in meters.
struct Recording {
    int subject_id = 0;
    int movement_id = 0;
    double sampling_period = 0.1;  // seconds
    std::vector<Frame> frames;
    std::vector<std::vector<double>> labels;
};

struct LoadedRecording {
    Recording recording;
    std::size_t dropped_frames = 0;  // frames present in the frames CSV but unlabeled
};

constexpr int kJoints = 19;
constexpr int kLabelDim = kJoints * 3;

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline double parse_double(std::string_view s, const std::string& file, std::size_t line) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw parse_error(file, line, "expected a number, got '" + std::string(s) + "'");
    return v;
}

inline long parse_int(std::string_view s, const std::string& file, std::size_t line) {
    long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw parse_error(file, line, "expected an integer, got '" + std::string(s) + "'");
    return v;
}

inline std::string strip_cr(std::string line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    return line;
}

inline std::string labels_header() {
    std::string h = "frame_id";
    for (int j = 0; j < kJoints; ++j)
        for (const char* axis : {"x", "y", "z"})
            h += ",j" + std::to_string(j) + "_" + axis;
    return h;
}

}  // namespace detail

inline constexpr std::string_view kFramesHeader = "frame_id,point_idx,x,y,z,doppler,intensity";

// Parses a frames CSV and a labels CSV, groups points by frame id and keeps
// the frames that carry a label. Unlabeled frames are dropped and counted;
// more than 10% dropped is treated as misalignment.
inline LoadedRecording load_recording(const std::string& frames_path,
                                      const std::string& labels_path) {
    std::ifstream frames_file(frames_path);
    if (!frames_file) throw io_error("cannot open frames file: " + frames_path);
    std::ifstream labels_file(labels_path);
    if (!labels_file) throw io_error("cannot open labels file: " + labels_path);

    std::string line;
    std::size_t lineno = 0;

    // frame_id -> points, insertion ordered by first appearance
    std::vector<std::pair<long, std::vector<Point>>> frame_groups;

    if (!std::getline(frames_file, line))
        throw parse_error(frames_path, 1, "missing header");
    if (detail::strip_cr(line) != kFramesHeader)
        throw parse_error(frames_path, 1, "unexpected header, want '" + std::string(kFramesHeader) + "'");
    lineno = 1;
    while (std::getline(frames_file, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != 7)
            throw parse_error(frames_path, lineno, "expected 7 fields");
        const long frame_id = detail::parse_int(fields[0], frames_path, lineno);
        Point p;
        p.x = detail::parse_double(fields[2], frames_path, lineno);
        p.y = detail::parse_double(fields[3], frames_path, lineno);
        p.z = detail::parse_double(fields[4], frames_path, lineno);
        p.doppler = detail::parse_double(fields[5], frames_path, lineno);
        p.intensity = detail::parse_double(fields[6], frames_path, lineno);
        if (frame_groups.empty() || frame_groups.back().first != frame_id) {
            auto it = std::find_if(frame_groups.begin(), frame_groups.end(),
                                   [&](const auto& g) { return g.first == frame_id; });
            if (it == frame_groups.end()) {
                frame_groups.emplace_back(frame_id, std::vector<Point>{});
                it = std::prev(frame_groups.end());
            }
            it->second.push_back(p);
        } else {
            frame_groups.back().second.push_back(p);
        }
    }

    std::vector<std::pair<long, std::vector<double>>> label_rows;
    if (!std::getline(labels_file, line))
        throw parse_error(labels_path, 1, "missing header");
    if (detail::strip_cr(line) != detail::labels_header())
        throw parse_error(labels_path, 1, "unexpected header");
    lineno = 1;
    while (std::getline(labels_file, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != 1 + kLabelDim)
            throw parse_error(labels_path, lineno, "expected 58 fields");
        const long frame_id = detail::parse_int(fields[0], labels_path, lineno);
        std::vector<double> label(kLabelDim);
        for (int i = 0; i < kLabelDim; ++i)
            label[static_cast<std::size_t>(i)] =
                detail::parse_double(fields[static_cast<std::size_t>(i) + 1], labels_path, lineno);
        label_rows.emplace_back(frame_id, std::move(label));
    }

    std::sort(frame_groups.begin(), frame_groups.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::sort(label_rows.begin(), label_rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    LoadedRecording out;
    auto label_it = label_rows.begin();
    for (auto& [frame_id, points] : frame_groups) {
        while (label_it != label_rows.end() && label_it->first < frame_id) ++label_it;
        if (label_it == label_rows.end() || label_it->first != frame_id) {
            ++out.dropped_frames;
            continue;
        }
        Frame frame;
        frame.index = static_cast<int>(out.recording.frames.size());
        frame.points = std::move(points);
        out.recording.frames.push_back(std::move(frame));
        out.recording.labels.push_back(label_it->second);
    }

    if (!frame_groups.empty() &&
        static_cast<double>(out.dropped_frames) > 0.10 * static_cast<double>(frame_groups.size()))
        throw parse_error(frames_path, 0,
                          "more than 10% of frames have no label (" +
                              std::to_string(out.dropped_frames) + " of " +
                              std::to_string(frame_groups.size()) + ")");
    return out;
}

inline constexpr std::string_view kManifestHeader =
    "subject_id,movement_id,frames_path,labels_path";

// Manifest rows name one recording each; relative paths resolve against the
// manifest's directory.
inline std::vector<LoadedRecording> load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open manifest: " + manifest_path);
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

    std::string line;
    if (!std::getline(in, line)) throw parse_error(manifest_path, 1, "missing header");
    if (detail::strip_cr(line) != kManifestHeader)
        throw parse_error(manifest_path, 1, "unexpected header");

    std::vector<LoadedRecording> recordings;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != 4) throw parse_error(manifest_path, lineno, "expected 4 fields");
        auto resolve = [&](std::string_view p) {
            std::filesystem::path fp{std::string(p)};
            return fp.is_absolute() ? fp.string() : (base / fp).string();
        };
        LoadedRecording rec =
            load_recording(resolve(fields[2]), resolve(fields[3]));
        rec.recording.subject_id = static_cast<int>(detail::parse_int(fields[0], manifest_path, lineno));
        rec.recording.movement_id = static_cast<int>(detail::parse_int(fields[1], manifest_path, lineno));
        recordings.push_back(std::move(rec));
    }
    return recordings;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitMode { per_movement_602020, leave_out };

struct SplitSpec {
    SplitMode mode = SplitMode::per_movement_602020;
    std::optional<int> held_movement;
    std::optional<int> held_user;
    int finetune_frames = 200;
    std::uint64_t seed = 0;

    void validate() const {
        if (mode == SplitMode::leave_out && (!held_movement || !held_user))
            throw invalid_config("SplitSpec: leave_out requires held_movement and held_user");
        if (finetune_frames < 0)
            throw invalid_config("SplitSpec: finetune_frames must be >= 0");
    }
};

struct LabeledFrame {
    FusedFrame fused;
    std::vector<double> target;
};

using FramePool = std::vector<LabeledFrame>;

struct SplitResult {
    FramePool train;
    FramePool validation;
    FramePool test_finetune;
    FramePool test_eval;
};

namespace detail {

inline void append_fused(FramePool& pool, const Recording& rec, std::size_t begin,
                         std::size_t end, int half_width) {
    for (std::size_t k = begin; k < end; ++k) {
        LabeledFrame item;
        item.fused = fuse_frames(rec.frames, static_cast<int>(k), half_width);
        item.target = rec.labels[k];
        pool.push_back(std::move(item));
    }
}

}  // namespace detail

// per_movement: contiguous 60/20/20 train/validation/test within every
// recording; the test portion goes to test_eval.
// leave_out: recordings carrying neither held attribute are split 75/25
// into train/validation; recordings matching BOTH held attributes form the
// unseen-scenario pool (first finetune_frames chronologically to
// test_finetune, remainder to test_eval). Recordings matching exactly one
// held attribute are excluded entirely, so nothing about the held movement
// or user leaks into training.
// Fusion never crosses recording boundaries.
inline SplitResult build_split(std::span<const Recording> recordings, const SplitSpec& spec,
                               int half_width) {
    spec.validate();
    if (recordings.empty()) throw invalid_input("build_split: no recordings");

    SplitResult result;

    if (spec.mode == SplitMode::per_movement_602020) {
        for (const Recording& rec : recordings) {
            const std::size_t n = rec.frames.size();
            if (n == 0) continue;
            const std::size_t n_train = n * 6 / 10;
            const std::size_t n_val = n * 2 / 10;
            detail::append_fused(result.train, rec, 0, n_train, half_width);
            detail::append_fused(result.validation, rec, n_train, n_train + n_val, half_width);
            detail::append_fused(result.test_eval, rec, n_train + n_val, n, half_width);
        }
        return result;
    }

    const int held_movement = *spec.held_movement;
    const int held_user = *spec.held_user;
    bool movement_seen = false;
    bool user_seen = false;
    for (const Recording& rec : recordings) {
        movement_seen = movement_seen || rec.movement_id == held_movement;
        user_seen = user_seen || rec.subject_id == held_user;
    }
    if (!movement_seen || !user_seen)
        throw invalid_config("build_split: held movement/user not present in the data");

    FramePool held;
    for (const Recording& rec : recordings) {
        const bool holds_movement = rec.movement_id == held_movement;
        const bool holds_user = rec.subject_id == held_user;
        if (holds_movement && holds_user) {
            detail::append_fused(held, rec, 0, rec.frames.size(), half_width);
        } else if (!holds_movement && !holds_user) {
            const std::size_t n = rec.frames.size();
            const std::size_t n_train = n * 3 / 4;
            detail::append_fused(result.train, rec, 0, n_train, half_width);
            detail::append_fused(result.validation, rec, n_train, n, half_width);
        }
        // exactly one held attribute: excluded from both sides
    }
    if (held.empty())
        throw invalid_config("build_split: held movement/user combination has no frames");

    const std::size_t n_ft = std::min(held.size(), static_cast<std::size_t>(spec.finetune_frames));
    result.test_finetune.assign(held.begin(), held.begin() + static_cast<std::ptrdiff_t>(n_ft));
    result.test_eval.assign(held.begin() + static_cast<std::ptrdiff_t>(n_ft), held.end());
    return result;
}

// ---------------------------------------------------------------------------
// Grid materialization: fused frames -> standardized network inputs.
// Standardization statistics come from the training pool only.
// ---------------------------------------------------------------------------

struct GridPools {
    Batch train;
    Batch validation;
    Batch test_finetune;
    Batch test_eval;
    ChannelStats stats;
};

namespace detail {

inline Batch pool_to_batch(const FramePool& pool, int n_fixed, int grid_size) {
    Batch batch;
    batch.inputs.reserve(pool.size());
    batch.targets.reserve(pool.size());
    for (const LabeledFrame& item : pool) {
        batch.inputs.push_back(to_grid(item.fused, n_fixed, grid_size));
        batch.targets.push_back(item.target);
    }
    return batch;
}

inline void standardize_batch(Batch& batch, const ChannelStats& stats) {
    for (InputGrid& grid : batch.inputs) grid = standardize(grid, stats);
}

}  // namespace detail

inline GridPools make_grid_pools(const SplitResult& split, int n_fixed, int grid_size) {
    if (split.train.empty()) throw invalid_input("make_grid_pools: empty training pool");

    GridPools pools;
    pools.train = detail::pool_to_batch(split.train, n_fixed, grid_size);
    pools.validation = detail::pool_to_batch(split.validation, n_fixed, grid_size);
    pools.test_finetune = detail::pool_to_batch(split.test_finetune, n_fixed, grid_size);
    pools.test_eval = detail::pool_to_batch(split.test_eval, n_fixed, grid_size);

    pools.stats = compute_channel_stats(pools.train.inputs);
    detail::standardize_batch(pools.train, pools.stats);
    detail::standardize_batch(pools.validation, pools.stats);
    detail::standardize_batch(pools.test_finetune, pools.stats);
    detail::standardize_batch(pools.test_eval, pools.stats);
    return pools;
}

}  // namespace rpose
