#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rpose/common.hpp"
#include "rpose/data.hpp"
#include "rpose/meta.hpp"
#include "rpose/nn.hpp"
#include "rpose/train.hpp"

namespace rpose {

// Shortest round-trip decimal representation; keeps emitted CSVs
// bit-reproducible across runs.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// All artifact files are written via temp-then-rename so a crashed command
// never leaves a half-written file behind.
inline void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw io_error("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw io_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Checkpoint: text key:value header, blank line, then the flattened
// parameters as little-endian IEEE-754 float32 in flatten order.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "rpose-checkpoint";

struct Checkpoint {
    CnnParams params;
    std::uint64_t seed = 0;
};

inline void save_checkpoint(const std::string& path, const CnnParams& params,
                            std::uint64_t seed) {
    params.config.validate();
    std::string out;
    out += kCheckpointMagic;
    out += "\nformat_version: 1";
    out += "\ngrid_size: " + std::to_string(params.config.grid_size);
    out += "\nin_channels: " + std::to_string(params.config.in_channels);
    out += "\nconv1_out: " + std::to_string(params.config.conv1_out);
    out += "\nconv2_out: " + std::to_string(params.config.conv2_out);
    out += "\nkernel: " + std::to_string(params.config.kernel);
    out += "\nfc_hidden: " + std::to_string(params.config.fc_hidden);
    out += "\nout_dim: " + std::to_string(params.config.out_dim);
    out += "\nseed: " + std::to_string(seed);
    out += "\nparam_count: " + std::to_string(params.values.size());
    out += "\n\n";

    for (const double v : params.values) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        out.push_back(static_cast<char>(bits & 0xff));
        out.push_back(static_cast<char>((bits >> 8) & 0xff));
        out.push_back(static_cast<char>((bits >> 16) & 0xff));
        out.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
    write_file_atomic(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint: " + path);

    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line) || detail::strip_cr(line) != kCheckpointMagic)
        throw parse_error(path, 1, "not a checkpoint file");

    std::map<std::string, long long> header;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) break;
        const std::size_t colon = line.find(": ");
        if (colon == std::string::npos) throw parse_error(path, lineno, "expected 'key: value'");
        const std::string key = line.substr(0, colon);
        header[key] = detail::parse_int(line.substr(colon + 2), path, lineno);
    }

    auto take = [&](const char* key) {
        const auto it = header.find(key);
        if (it == header.end()) throw parse_error(path, lineno, std::string("missing key ") + key);
        const long long v = it->second;
        header.erase(it);
        return v;
    };

    if (take("format_version") != 1) throw parse_error(path, lineno, "unsupported format version");
    Checkpoint ckpt;
    ckpt.params.config.grid_size = static_cast<int>(take("grid_size"));
    ckpt.params.config.in_channels = static_cast<int>(take("in_channels"));
    ckpt.params.config.conv1_out = static_cast<int>(take("conv1_out"));
    ckpt.params.config.conv2_out = static_cast<int>(take("conv2_out"));
    ckpt.params.config.kernel = static_cast<int>(take("kernel"));
    ckpt.params.config.fc_hidden = static_cast<int>(take("fc_hidden"));
    ckpt.params.config.out_dim = static_cast<int>(take("out_dim"));
    ckpt.seed = static_cast<std::uint64_t>(take("seed"));
    const auto count = static_cast<std::size_t>(take("param_count"));
    if (!header.empty()) throw parse_error(path, lineno, "unknown header key " + header.begin()->first);

    ckpt.params.config.validate();
    if (count != param_count(ckpt.params.config))
        throw parse_error(path, lineno, "param_count does not match config");

    ckpt.params.values.resize(count);
    std::vector<char> raw(count * 4);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw parse_error(path, lineno, "truncated parameter data");
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits =
            static_cast<std::uint8_t>(raw[4 * i]) |
            (static_cast<std::uint32_t>(static_cast<std::uint8_t>(raw[4 * i + 1])) << 8) |
            (static_cast<std::uint32_t>(static_cast<std::uint8_t>(raw[4 * i + 2])) << 16) |
            (static_cast<std::uint32_t>(static_cast<std::uint8_t>(raw[4 * i + 3])) << 24);
        ckpt.params.values[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------

inline void write_curve_csv(const std::string& path, const LearningCurve& curve) {
    std::string out = "epoch,split,mae_x,mae_y,mae_z,mae_avg\n";
    for (const CurvePoint& p : curve) {
        out += std::to_string(p.epoch) + "," + p.split + "," + format_double(p.metrics.mae_x) +
               "," + format_double(p.metrics.mae_y) + "," + format_double(p.metrics.mae_z) + "," +
               format_double(p.metrics.mae_avg) + "\n";
    }
    write_file_atomic(path, out);
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, Metrics>>& rows) {
    std::string out = "setting,mae_x,mae_y,mae_z,mae_avg\n";
    for (const auto& [setting, m] : rows) {
        out += setting + "," + format_double(m.mae_x) + "," + format_double(m.mae_y) + "," +
               format_double(m.mae_z) + "," + format_double(m.mae_avg) + "\n";
    }
    write_file_atomic(path, out);
}

inline void write_progress_csv(const std::string& path, const std::vector<MetaProgress>& rows) {
    std::string out = "iteration,support_loss,query_loss,wall_seconds\n";
    for (const MetaProgress& r : rows) {
        out += std::to_string(r.iteration) + "," + format_double(r.mean_support_loss) + "," +
               format_double(r.mean_query_loss) + "," + format_double(r.wall_seconds) + "\n";
    }
    write_file_atomic(path, out);
}

inline void write_channel_stats_csv(const std::string& path, const ChannelStats& stats) {
    std::string out = "channel,mean,stddev\n";
    for (std::size_t c = 0; c < stats.mean.size(); ++c)
        out += std::to_string(c) + "," + format_double(stats.mean[c]) + "," +
               format_double(stats.stddev[c]) + "\n";
    write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Recording export (synth writes data in the same CSV dialect the loader
// reads).
// ---------------------------------------------------------------------------

inline void write_recording_csvs(const Recording& rec, const std::string& frames_path,
                                 const std::string& labels_path) {
    std::string frames(kFramesHeader);
    frames += "\n";
    for (std::size_t k = 0; k < rec.frames.size(); ++k) {
        const Frame& f = rec.frames[k];
        for (std::size_t p = 0; p < f.points.size(); ++p) {
            const Point& pt = f.points[p];
            frames += std::to_string(k) + "," + std::to_string(p) + "," + format_double(pt.x) +
                      "," + format_double(pt.y) + "," + format_double(pt.z) + "," +
                      format_double(pt.doppler) + "," + format_double(pt.intensity) + "\n";
        }
    }
    write_file_atomic(frames_path, frames);

    std::string labels = detail::labels_header();
    labels += "\n";
    for (std::size_t k = 0; k < rec.labels.size(); ++k) {
        labels += std::to_string(k);
        for (const double v : rec.labels[k]) labels += "," + format_double(v);
        labels += "\n";
    }
    write_file_atomic(labels_path, labels);
}

struct ManifestEntry {
    int subject_id = 0;
    int movement_id = 0;
    std::string frames_path;
    std::string labels_path;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::string out(kManifestHeader);
    out += "\n";
    for (const ManifestEntry& e : entries)
        out += std::to_string(e.subject_id) + "," + std::to_string(e.movement_id) + "," +
               e.frames_path + "," + e.labels_path + "\n";
    write_file_atomic(path, out);
}

}  // namespace rpose
