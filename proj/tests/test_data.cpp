#include <doctest.h>

#include <rpose/data.hpp>
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
        path = fs::temp_directory_path() / ("rpose_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int n = 0;
        return n;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string label_row(long frame_id, double value) {
    std::string row = std::to_string(frame_id);
    for (int i = 0; i < kLabelDim; ++i) row += "," + std::to_string(value);
    return row + "\n";
}

std::string labels_header_line() {
    std::string h = "frame_id";
    for (int j = 0; j < 19; ++j) {
        h += ",j" + std::to_string(j) + "_x";
        h += ",j" + std::to_string(j) + "_y";
        h += ",j" + std::to_string(j) + "_z";
    }
    return h + "\n";
}

}  // namespace

TEST_CASE("a header-only frames file loads as zero frames") {
    TempDir dir;
    write(dir.file("frames.csv"), std::string(kFramesHeader) + "\n");
    write(dir.file("labels.csv"), labels_header_line());

    const LoadedRecording rec = load_recording(dir.file("frames.csv"), dir.file("labels.csv"));
    CHECK(rec.recording.frames.empty());
    CHECK(rec.dropped_frames == 0);
}

TEST_CASE("points group by frame id") {
    TempDir dir;
    std::string frames(kFramesHeader);
    frames += "\n";
    for (int k = 0; k < 2; ++k)
        for (int p = 0; p < 3; ++p)
            frames += std::to_string(k) + "," + std::to_string(p) + ",0.1,0.2,0.3,0.0,1.5\n";
    write(dir.file("frames.csv"), frames);
    write(dir.file("labels.csv"), labels_header_line() + label_row(0, 0.5) + label_row(1, 0.6));

    const LoadedRecording rec = load_recording(dir.file("frames.csv"), dir.file("labels.csv"));
    REQUIRE(rec.recording.frames.size() == 2);
    CHECK(rec.recording.frames[0].points.size() == 3);
    CHECK(rec.recording.frames[1].points.size() == 3);
    CHECK(rec.recording.frames[0].index == 0);
    CHECK(rec.recording.frames[1].index == 1);
    CHECK(rec.recording.labels[1][0] == doctest::Approx(0.6));
}

TEST_CASE("a frame without a label is dropped and counted") {
    TempDir dir;
    std::string frames(kFramesHeader);
    frames += "\n";
    for (int k = 0; k < 10; ++k)
        frames += std::to_string(k) + ",0,0.1,0.2,0.3,0.0,1.0\n";
    write(dir.file("frames.csv"), frames);

    std::string labels = labels_header_line();
    for (int k = 0; k < 10; ++k)
        if (k != 4) labels += label_row(k, 0.1 * k);
    write(dir.file("labels.csv"), labels);

    const LoadedRecording rec = load_recording(dir.file("frames.csv"), dir.file("labels.csv"));
    CHECK(rec.recording.frames.size() == 9);
    CHECK(rec.dropped_frames == 1);
}

TEST_CASE("a malformed row reports its line number") {
    TempDir dir;
    write(dir.file("frames.csv"),
          std::string(kFramesHeader) + "\n0,0,0.1,0.2,0.3,0.0,1.0\n0,1,not_a_number,0,0,0,1\n");
    write(dir.file("labels.csv"), labels_header_line() + label_row(0, 0.0));

    try {
        load_recording(dir.file("frames.csv"), dir.file("labels.csv"));
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(e.line == 3);
    }
}

TEST_CASE("misalignment beyond 10% is an error") {
    TempDir dir;
    std::string frames(kFramesHeader);
    frames += "\n";
    for (int k = 0; k < 10; ++k)
        frames += std::to_string(k) + ",0,0.1,0.2,0.3,0.0,1.0\n";
    write(dir.file("frames.csv"), frames);
    write(dir.file("labels.csv"), labels_header_line() + label_row(0, 0.0) + label_row(1, 0.0));

    CHECK_THROWS_AS(load_recording(dir.file("frames.csv"), dir.file("labels.csv")), parse_error);
}

TEST_CASE("per-movement split is contiguous 60/20/20") {
    SynthConfig synth;
    synth.n_tasks = 1;
    synth.frames_per_task = 100;
    synth.points_per_frame = 4;
    synth.seed = 5;
    const std::vector<Recording> recs = synth_generate(synth);

    SplitSpec spec;
    spec.mode = SplitMode::per_movement_602020;
    const SplitResult split = build_split(recs, spec, 0);
    CHECK(split.train.size() == 60);
    CHECK(split.validation.size() == 20);
    CHECK(split.test_eval.size() == 20);
    CHECK(split.test_finetune.empty());

    // contiguity: center indices are consecutive within each pool
    for (std::size_t i = 0; i < split.train.size(); ++i)
        CHECK(split.train[i].fused.center_index == static_cast<int>(i));
    CHECK(split.validation.front().fused.center_index == 60);
    CHECK(split.test_eval.front().fused.center_index == 80);
}

TEST_CASE("leave-out split holds out the (movement, user) intersection") {
    SynthConfig synth;
    synth.n_tasks = 4;
    synth.frames_per_task = 300;
    synth.points_per_frame = 4;
    synth.seed = 6;
    const std::vector<Recording> recs = synth_generate(synth);  // subject==movement==task

    SplitSpec spec;
    spec.mode = SplitMode::leave_out;
    spec.held_movement = 3;
    spec.held_user = 3;
    spec.finetune_frames = 200;
    const SplitResult split = build_split(recs, spec, 1);

    // three kept recordings split 75/25
    CHECK(split.train.size() == 3 * 225);
    CHECK(split.validation.size() == 3 * 75);
    // held-out recording: first 200 frames tune, the rest evaluate
    CHECK(split.test_finetune.size() == 200);
    CHECK(split.test_eval.size() == 100);

    // the held task's frames appear nowhere in train/validation: its frames
    // have recognizably different labels (task parameters differ), so check
    // via center-frame label identity against the held recording
    const Recording& held = recs[3];
    for (const LabeledFrame& item : split.train)
        CHECK(item.target != held.labels[static_cast<std::size_t>(item.fused.center_index)]);
}

TEST_CASE("leave-out requires held ids that exist") {
    SynthConfig synth;
    synth.n_tasks = 2;
    synth.frames_per_task = 50;
    synth.points_per_frame = 4;
    const std::vector<Recording> recs = synth_generate(synth);

    SplitSpec spec;
    spec.mode = SplitMode::leave_out;
    spec.held_movement = 9;
    spec.held_user = 0;
    CHECK_THROWS_AS(build_split(recs, spec, 0), invalid_config);

    spec.held_movement.reset();
    CHECK_THROWS_AS(build_split(recs, spec, 0), invalid_config);
}

TEST_CASE("recordings with exactly one held attribute are excluded entirely") {
    // two "users" each performing two "movements"
    std::vector<Recording> recs;
    for (int user = 0; user < 2; ++user)
        for (int movement = 0; movement < 2; ++movement) {
            SynthConfig synth;
            synth.n_tasks = 1;
            synth.frames_per_task = 40;
            synth.points_per_frame = 4;
            synth.seed = static_cast<std::uint64_t>(10 + 2 * user + movement);
            Recording rec = synth_generate(synth)[0];
            rec.subject_id = user;
            rec.movement_id = movement;
            recs.push_back(std::move(rec));
        }

    SplitSpec spec;
    spec.mode = SplitMode::leave_out;
    spec.held_movement = 1;
    spec.held_user = 1;
    spec.finetune_frames = 10;
    const SplitResult split = build_split(recs, spec, 0);

    // only (user 0, movement 0) trains; only (user 1, movement 1) tests
    CHECK(split.train.size() + split.validation.size() == 40);
    CHECK(split.test_finetune.size() + split.test_eval.size() == 40);
}

TEST_CASE("fused frames never mix points from different recordings") {
    // one-point frames tagged with the recording id in x
    std::vector<Recording> recs(2);
    for (int r = 0; r < 2; ++r) {
        auto& rec = recs[static_cast<std::size_t>(r)];
        rec.subject_id = r;
        rec.movement_id = r;
        for (int k = 0; k < 30; ++k) {
            Frame f;
            f.index = k;
            f.points.push_back(Point{static_cast<double>(r), 0, 0, 0, 1});
            rec.frames.push_back(f);
            rec.labels.push_back(std::vector<double>(kLabelDim, static_cast<double>(r)));
        }
    }

    SplitSpec spec;
    const SplitResult split = build_split(recs, spec, 2);
    auto check_pool = [](const FramePool& pool) {
        for (const LabeledFrame& item : pool) {
            const double tag = item.target[0];
            for (const Frame& f : item.fused.frames)
                for (const Point& p : f.points) CHECK(p.x == tag);
        }
    };
    check_pool(split.train);
    check_pool(split.validation);
    check_pool(split.test_eval);
}

TEST_CASE("pools are disjoint by (recording, center index)") {
    SynthConfig synth;
    synth.n_tasks = 2;
    synth.frames_per_task = 50;
    synth.points_per_frame = 4;
    synth.seed = 7;
    const std::vector<Recording> recs = synth_generate(synth);

    SplitSpec spec;
    const SplitResult split = build_split(recs, spec, 1);

    // identify each pool entry by its center label (unique per task+frame
    // because labels are exact continuous joint positions)
    std::vector<std::vector<double>> seen;
    auto collect = [&](const FramePool& pool) {
        for (const LabeledFrame& item : pool) seen.push_back(item.target);
    };
    collect(split.train);
    collect(split.validation);
    collect(split.test_finetune);
    collect(split.test_eval);
    std::sort(seen.begin(), seen.end());
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    CHECK(seen.size() == 100);
}

TEST_CASE("grid pools standardize with statistics from the training split only") {
    SynthConfig synth;
    synth.n_tasks = 1;
    synth.frames_per_task = 60;
    synth.points_per_frame = 8;
    synth.seed = 8;
    const std::vector<Recording> recs = synth_generate(synth);

    SplitSpec spec;
    const SplitResult split = build_split(recs, spec, 0);
    const GridPools pools = make_grid_pools(split, 64, 8);

    CHECK(pools.train.size() == 36);
    CHECK(pools.validation.size() == 12);
    CHECK(pools.test_eval.size() == 12);
    REQUIRE(pools.stats.mean.size() == 5);

    // standardized training channels have mean ~0 and stddev ~1
    for (int c = 0; c < 5; ++c) {
        double sum = 0.0, sq = 0.0;
        double n = 0.0;
        for (const InputGrid& g : pools.train.inputs)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    sum += g.at(c, y, x);
                    sq += g.at(c, y, x) * g.at(c, y, x);
                    n += 1.0;
                }
        CHECK(std::abs(sum / n) < 1e-9);
        if (pools.stats.stddev[static_cast<std::size_t>(c)] != 1.0)
            CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("manifest loading resolves relative paths and assigns ids") {
    TempDir dir;
    SynthConfig synth;
    synth.n_tasks = 1;
    synth.frames_per_task = 5;
    synth.points_per_frame = 3;
    const Recording rec = synth_generate(synth)[0];

    // write via the io helpers used by cmd_synth
    std::string frames(kFramesHeader);
    frames += "\n";
    for (std::size_t k = 0; k < rec.frames.size(); ++k)
        for (std::size_t p = 0; p < rec.frames[k].points.size(); ++p) {
            const Point& pt = rec.frames[k].points[p];
            frames += std::to_string(k) + "," + std::to_string(p) + "," + std::to_string(pt.x) +
                      "," + std::to_string(pt.y) + "," + std::to_string(pt.z) + "," +
                      std::to_string(pt.doppler) + "," + std::to_string(pt.intensity) + "\n";
        }
    write(dir.file("frames.csv"), frames);

    std::string labels = labels_header_line();
    for (std::size_t k = 0; k < rec.labels.size(); ++k) {
        labels += std::to_string(k);
        for (double v : rec.labels[k]) labels += "," + std::to_string(v);
        labels += "\n";
    }
    write(dir.file("labels.csv"), labels);
    write(dir.file("manifest.csv"),
          std::string(kManifestHeader) + "\n2,5,frames.csv,labels.csv\n");

    const auto loaded = load_manifest(dir.file("manifest.csv"));
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].recording.subject_id == 2);
    CHECK(loaded[0].recording.movement_id == 5);
    CHECK(loaded[0].recording.frames.size() == 5);
}
