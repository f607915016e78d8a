#include <doctest.h>

#include <rpose/io.hpp>
#include <rpose/synth.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace rpose;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int n = 0;
        path = fs::temp_directory_path() /
               ("rpose_io_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("checkpoints round-trip config, seed and float32 parameters") {
    TempDir dir;
    CnnConfig c;
    c.grid_size = 4;
    c.in_channels = 3;
    c.conv1_out = 2;
    c.conv2_out = 2;
    c.fc_hidden = 4;
    c.out_dim = 6;

    CnnParams params = init_params(c, 71);
    // parameters survive exactly once rounded to float32
    for (double& v : params.values) v = static_cast<double>(static_cast<float>(v));

    save_checkpoint(dir.file("model.ckpt"), params, 71);
    const Checkpoint loaded = load_checkpoint(dir.file("model.ckpt"));
    CHECK(loaded.params.config == c);
    CHECK(loaded.seed == 71);
    CHECK(loaded.params.values == params.values);
}

TEST_CASE("checkpoint storage is float32") {
    TempDir dir;
    CnnConfig c;
    c.grid_size = 1;
    c.in_channels = 1;
    c.conv1_out = 1;
    c.conv2_out = 1;
    c.kernel = 1;
    c.fc_hidden = 1;
    c.out_dim = 1;

    CnnParams params(c);
    params.values.assign(params.values.size(), 1.0 / 3.0);
    save_checkpoint(dir.file("m.ckpt"), params, 0);
    const Checkpoint loaded = load_checkpoint(dir.file("m.ckpt"));
    CHECK(loaded.params.values[0] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST_CASE("checkpoint loader rejects damaged files") {
    TempDir dir;
    {
        std::ofstream out(dir.file("bad_magic"));
        out << "something-else\n";
    }
    CHECK_THROWS_AS(load_checkpoint(dir.file("bad_magic")), parse_error);
    CHECK_THROWS_AS(load_checkpoint(dir.file("missing")), io_error);

    CnnConfig c;
    c.grid_size = 1;
    c.in_channels = 1;
    c.conv1_out = 1;
    c.conv2_out = 1;
    c.kernel = 1;
    c.fc_hidden = 1;
    c.out_dim = 1;
    save_checkpoint(dir.file("ok.ckpt"), CnnParams(c), 0);

    // truncate the binary payload
    std::string content;
    {
        std::ifstream in(dir.file("ok.ckpt"), std::ios::binary);
        content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    {
        std::ofstream out(dir.file("short.ckpt"), std::ios::binary);
        out.write(content.data(), static_cast<std::streamsize>(content.size() - 5));
    }
    CHECK_THROWS_AS(load_checkpoint(dir.file("short.ckpt")), parse_error);
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.1, -3.25, 1e-17, 123456.789, 0.0}) {
        const std::string s = format_double(v);
        CHECK(std::stod(s) == v);
    }
}

TEST_CASE("atomic writes leave no temp file behind") {
    TempDir dir;
    write_file_atomic(dir.file("out.txt"), "payload");
    CHECK(fs::exists(dir.file("out.txt")));
    CHECK(!fs::exists(dir.file("out.txt") + ".tmp"));

    std::ifstream in(dir.file("out.txt"));
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(content == "payload");
}

TEST_CASE("recording CSV export loads back bit-identically") {
    TempDir dir;
    SynthConfig cfg;
    cfg.n_tasks = 1;
    cfg.frames_per_task = 12;
    cfg.points_per_frame = 7;
    cfg.seed = 21;
    const Recording rec = synth_generate(cfg)[0];

    write_recording_csvs(rec, dir.file("frames.csv"), dir.file("labels.csv"));
    const LoadedRecording loaded = load_recording(dir.file("frames.csv"), dir.file("labels.csv"));

    CHECK(loaded.dropped_frames == 0);
    REQUIRE(loaded.recording.frames.size() == rec.frames.size());
    CHECK(loaded.recording.labels == rec.labels);
    for (std::size_t k = 0; k < rec.frames.size(); ++k)
        CHECK(loaded.recording.frames[k].points == rec.frames[k].points);
}

TEST_CASE("curve and metrics CSVs have the documented schemas") {
    TempDir dir;
    Metrics m;
    m.mae_x = 1.5;
    m.mae_y = 0.25;
    m.mae_z = 0.5;
    m.mae_avg = 0.75;

    LearningCurve curve{{1, "train", m}, {1, "val", m}};
    write_curve_csv(dir.file("curve.csv"), curve);
    {
        std::ifstream in(dir.file("curve.csv"));
        std::string header, row;
        std::getline(in, header);
        std::getline(in, row);
        CHECK(header == "epoch,split,mae_x,mae_y,mae_z,mae_avg");
        CHECK(row == "1,train,1.5,0.25,0.5,0.75");
    }

    write_metrics_csv(dir.file("metrics.csv"), {{"baseline_test", m}});
    {
        std::ifstream in(dir.file("metrics.csv"));
        std::string header, row;
        std::getline(in, header);
        std::getline(in, row);
        CHECK(header == "setting,mae_x,mae_y,mae_z,mae_avg");
        CHECK(row == "baseline_test,1.5,0.25,0.5,0.75");
    }
}
