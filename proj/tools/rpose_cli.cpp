// rpose command line: wires the fusion/training/meta-learning pipeline into
// reproducible experiments. One subcommand per pipeline stage; every stage
// reads the same config file, so checkpoints produced by one stage feed the
// next with identical data handling.

#include <CLI11.hpp>
#include <json.hpp>

#include <rpose/rpose.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rpose;

namespace {

// Exit codes: 0 success, 1 usage/config, 2 IO/parse, 3 numeric failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

void reject_unknown_keys(const json& node, std::initializer_list<const char*> allowed,
                         const std::string& context) {
    for (const auto& [key, value] : node.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw invalid_config("config: unknown key '" + context + key + "'");
    }
}

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int fusion_m = 1;
    int n_fixed = 64;

    std::string manifest;  // empty -> synthetic data
    SynthConfig synth;

    SplitSpec split;
    CnnConfig cnn;  // in_channels derived from fusion_m

    TrainConfig train;
    MetaConfig meta;

    TrainConfig fine_tune;
    FineTuneScope scope = FineTuneScope::all_layers;

    std::string checkpoint;             // input for fine-tune / evaluate
    std::string evaluate_split = "test_eval";

    int threads = 1;

    json resolved;  // echoed to the output directory
};

json default_config() {
    return json{
        {"seed", 0},
        {"fusion_m", 1},
        {"n_fixed", 64},
        {"data",
         {{"manifest", ""},
          {"synth",
           {{"n_tasks", 5}, {"frames_per_task", 500}, {"points_per_frame", 32}, {"noise_std", 0.02}}}}},
        {"split",
         {{"mode", "per_movement"}, {"held_movement", -1}, {"held_user", -1}, {"finetune_frames", 200}}},
        {"cnn",
         {{"grid_size", 8}, {"conv1_out", 16}, {"conv2_out", 32}, {"kernel", 3}, {"fc_hidden", 512}, {"out_dim", 57}}},
        {"train", {{"epochs", 150}, {"batch_size", 128}, {"lr", 0.001}}},
        {"meta",
         {{"alpha", 0.1},
          {"beta", 0.001},
          {"tasks_per_iteration", 32},
          {"frames_per_task", 1000},
          {"support_fraction", 0.5},
          {"iterations", 20000},
          {"mode", "second_order"},
          {"outer_optimizer", "sgd"},
          {"hvp_epsilon", 1e-4}}},
        {"fine_tune", {{"epochs", 50}, {"batch_size", 32}, {"lr", 0.001}, {"scope", "all_layers"}}},
        {"checkpoint", ""},
        {"evaluate_split", "test_eval"},
    };
}

// Overlays the user config onto the defaults, rejecting unknown keys at
// every level.
json merge_config(const json& user) {
    json merged = default_config();
    reject_unknown_keys(user, {"seed", "fusion_m", "n_fixed", "data", "split", "cnn", "train",
                               "meta", "fine_tune", "checkpoint", "evaluate_split"},
                        "");
    for (const auto& [key, value] : user.items()) {
        if (!value.is_object()) {
            merged[key] = value;
            continue;
        }
        if (key == "data") {
            reject_unknown_keys(value, {"manifest", "synth"}, "data.");
            if (value.contains("manifest")) merged["data"]["manifest"] = value["manifest"];
            if (value.contains("synth")) {
                reject_unknown_keys(value["synth"],
                                    {"n_tasks", "frames_per_task", "points_per_frame", "noise_std"},
                                    "data.synth.");
                for (const auto& [k, v] : value["synth"].items()) merged["data"]["synth"][k] = v;
            }
        } else if (key == "split") {
            reject_unknown_keys(value, {"mode", "held_movement", "held_user", "finetune_frames"},
                                "split.");
            for (const auto& [k, v] : value.items()) merged["split"][k] = v;
        } else if (key == "cnn") {
            reject_unknown_keys(value,
                                {"grid_size", "conv1_out", "conv2_out", "kernel", "fc_hidden", "out_dim"},
                                "cnn.");
            for (const auto& [k, v] : value.items()) merged["cnn"][k] = v;
        } else if (key == "train") {
            reject_unknown_keys(value, {"epochs", "batch_size", "lr"}, "train.");
            for (const auto& [k, v] : value.items()) merged["train"][k] = v;
        } else if (key == "meta") {
            reject_unknown_keys(value,
                                {"alpha", "beta", "tasks_per_iteration", "frames_per_task",
                                 "support_fraction", "iterations", "mode", "outer_optimizer",
                                 "hvp_epsilon"},
                                "meta.");
            for (const auto& [k, v] : value.items()) merged["meta"][k] = v;
        } else if (key == "fine_tune") {
            reject_unknown_keys(value, {"epochs", "batch_size", "lr", "scope"}, "fine_tune.");
            for (const auto& [k, v] : value.items()) merged["fine_tune"][k] = v;
        }
    }
    return merged;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override,
                             int threads) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config: " + path);
    json user;
    try {
        user = json::parse(in);
    } catch (const json::parse_error& e) {
        throw parse_error(path, 0, e.what());
    }

    json merged = merge_config(user);
    if (seed_override) merged["seed"] = *seed_override;

    ExperimentConfig cfg;
    cfg.resolved = merged;
    cfg.seed = merged["seed"].get<std::uint64_t>();
    cfg.fusion_m = merged["fusion_m"].get<int>();
    cfg.n_fixed = merged["n_fixed"].get<int>();
    cfg.threads = threads;

    cfg.manifest = merged["data"]["manifest"].get<std::string>();
    const json& synth = merged["data"]["synth"];
    cfg.synth.n_tasks = synth["n_tasks"].get<int>();
    cfg.synth.frames_per_task = synth["frames_per_task"].get<int>();
    cfg.synth.points_per_frame = synth["points_per_frame"].get<int>();
    cfg.synth.noise_std = synth["noise_std"].get<double>();
    cfg.synth.seed = derive_seed(cfg.seed, "data.synth");

    const json& split = merged["split"];
    const std::string mode = split["mode"].get<std::string>();
    if (mode == "per_movement")
        cfg.split.mode = SplitMode::per_movement_602020;
    else if (mode == "leave_out")
        cfg.split.mode = SplitMode::leave_out;
    else
        throw invalid_config("config: split.mode must be per_movement or leave_out");
    if (split["held_movement"].get<int>() >= 0)
        cfg.split.held_movement = split["held_movement"].get<int>();
    if (split["held_user"].get<int>() >= 0) cfg.split.held_user = split["held_user"].get<int>();
    cfg.split.finetune_frames = split["finetune_frames"].get<int>();
    cfg.split.seed = derive_seed(cfg.seed, "data.split");

    const json& cnn = merged["cnn"];
    cfg.cnn.grid_size = cnn["grid_size"].get<int>();
    cfg.cnn.in_channels = fused_channels(cfg.fusion_m);
    cfg.cnn.conv1_out = cnn["conv1_out"].get<int>();
    cfg.cnn.conv2_out = cnn["conv2_out"].get<int>();
    cfg.cnn.kernel = cnn["kernel"].get<int>();
    cfg.cnn.fc_hidden = cnn["fc_hidden"].get<int>();
    cfg.cnn.out_dim = cnn["out_dim"].get<int>();
    cfg.cnn.validate();
    if (cfg.cnn.grid_size * cfg.cnn.grid_size != cfg.n_fixed)
        throw invalid_config("config: n_fixed must equal cnn.grid_size^2");

    const json& train = merged["train"];
    cfg.train.epochs = train["epochs"].get<int>();
    cfg.train.batch_size = train["batch_size"].get<int>();
    cfg.train.lr = train["lr"].get<double>();
    cfg.train.seed = derive_seed(cfg.seed, "train");
    cfg.train.threads = threads;
    cfg.train.validate();

    const json& meta = merged["meta"];
    cfg.meta.alpha = meta["alpha"].get<double>();
    cfg.meta.beta = meta["beta"].get<double>();
    cfg.meta.tasks_per_iteration = meta["tasks_per_iteration"].get<int>();
    cfg.meta.frames_per_task = meta["frames_per_task"].get<int>();
    cfg.meta.support_fraction = meta["support_fraction"].get<double>();
    cfg.meta.iterations = meta["iterations"].get<int>();
    const std::string meta_mode = meta["mode"].get<std::string>();
    if (meta_mode == "first_order")
        cfg.meta.mode = MetaMode::first_order;
    else if (meta_mode == "second_order")
        cfg.meta.mode = MetaMode::second_order;
    else
        throw invalid_config("config: meta.mode must be first_order or second_order");
    const std::string outer = meta["outer_optimizer"].get<std::string>();
    if (outer == "sgd")
        cfg.meta.outer = OuterOptimizer::sgd;
    else if (outer == "adam")
        cfg.meta.outer = OuterOptimizer::adam;
    else
        throw invalid_config("config: meta.outer_optimizer must be sgd or adam");
    cfg.meta.hvp_epsilon = meta["hvp_epsilon"].get<double>();
    cfg.meta.seed = derive_seed(cfg.seed, "meta");
    cfg.meta.threads = threads;
    cfg.meta.validate();

    const json& ft = merged["fine_tune"];
    cfg.fine_tune.epochs = ft["epochs"].get<int>();
    cfg.fine_tune.batch_size = ft["batch_size"].get<int>();
    cfg.fine_tune.lr = ft["lr"].get<double>();
    cfg.fine_tune.seed = derive_seed(cfg.seed, "fine_tune");
    cfg.fine_tune.threads = threads;
    cfg.fine_tune.validate();
    const std::string scope = ft["scope"].get<std::string>();
    if (scope == "all_layers")
        cfg.scope = FineTuneScope::all_layers;
    else if (scope == "last_layer")
        cfg.scope = FineTuneScope::last_layer;
    else
        throw invalid_config("config: fine_tune.scope must be all_layers or last_layer");

    cfg.checkpoint = merged["checkpoint"].get<std::string>();
    cfg.evaluate_split = merged["evaluate_split"].get<std::string>();
    return cfg;
}

void echo_config(const ExperimentConfig& cfg, const std::string& out_dir) {
    write_file_atomic((fs::path(out_dir) / "config.json").string(), cfg.resolved.dump(2) + "\n");
}

std::vector<Recording> load_recordings(const ExperimentConfig& cfg) {
    if (!cfg.manifest.empty()) {
        std::vector<Recording> recordings;
        std::size_t dropped = 0;
        for (LoadedRecording& rec : load_manifest(cfg.manifest)) {
            dropped += rec.dropped_frames;
            recordings.push_back(std::move(rec.recording));
        }
        if (dropped > 0)
            std::cerr << "warning: dropped " << dropped << " unlabeled frames\n";
        return recordings;
    }
    return synth_generate(cfg.synth);
}

GridPools build_pools(const ExperimentConfig& cfg) {
    const std::vector<Recording> recordings = load_recordings(cfg);
    const SplitResult split = build_split(recordings, cfg.split, cfg.fusion_m);
    return make_grid_pools(split, cfg.n_fixed, cfg.cnn.grid_size);
}

std::string out_path(const std::string& out_dir, const std::string& name) {
    return (fs::path(out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_fuse(const ExperimentConfig& cfg, const std::string& out_dir) {
    const GridPools pools = build_pools(cfg);

    json stats{
        {"fusion_m", cfg.fusion_m},
        {"channels", fused_channels(cfg.fusion_m)},
        {"grid_size", cfg.cnn.grid_size},
        {"n_fixed", cfg.n_fixed},
        {"train_frames", pools.train.size()},
        {"validation_frames", pools.validation.size()},
        {"test_finetune_frames", pools.test_finetune.size()},
        {"test_eval_frames", pools.test_eval.size()},
    };
    write_file_atomic(out_path(out_dir, "fusion_stats.json"), stats.dump(2) + "\n");
    write_channel_stats_csv(out_path(out_dir, "channel_stats.csv"), pools.stats);

    std::cout << "fused " << pools.train.size() << " train / " << pools.validation.size()
              << " val / " << pools.test_finetune.size() << " tune / " << pools.test_eval.size()
              << " eval frames, " << fused_channels(cfg.fusion_m) << " channels\n";
    return kExitOk;
}

int cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
    const std::vector<Recording> recordings = synth_generate(cfg.synth);
    std::vector<ManifestEntry> entries;
    for (const Recording& rec : recordings) {
        const std::string tag = std::to_string(rec.movement_id);
        write_recording_csvs(rec, out_path(out_dir, "frames_" + tag + ".csv"),
                             out_path(out_dir, "labels_" + tag + ".csv"));
        entries.push_back(ManifestEntry{rec.subject_id, rec.movement_id, "frames_" + tag + ".csv",
                                        "labels_" + tag + ".csv"});
    }
    write_manifest(out_path(out_dir, "manifest.csv"), entries);
    std::cout << "wrote " << recordings.size() << " synthetic recordings\n";
    return kExitOk;
}

int cmd_train_baseline(const ExperimentConfig& cfg, const std::string& out_dir) {
    const GridPools pools = build_pools(cfg);
    const CnnParams theta0 = init_params(cfg.cnn, derive_seed(cfg.seed, "nn.init"));

    const TrainResult result = train_supervised(pools.train, pools.validation, cfg.train, theta0);
    save_checkpoint(out_path(out_dir, "baseline.ckpt"), result.params, cfg.seed);
    write_curve_csv(out_path(out_dir, "curve.csv"), result.curve);

    const std::string setting = "baseline_m" + std::to_string(cfg.fusion_m);
    std::vector<std::pair<std::string, Metrics>> rows;
    if (pools.validation.size() > 0)
        rows.emplace_back(setting + "_val", evaluate_mae(result.params, pools.validation));
    if (pools.test_eval.size() > 0)
        rows.emplace_back(setting + "_test", evaluate_mae(result.params, pools.test_eval));
    write_metrics_csv(out_path(out_dir, "metrics.csv"), rows);

    for (const auto& [name, m] : rows)
        std::cout << name << ": avg " << m.mae_avg << " cm\n";
    return kExitOk;
}

int cmd_meta_train(const ExperimentConfig& cfg, const std::string& out_dir) {
    const GridPools pools = build_pools(cfg);
    const CnnParams theta0 = init_params(cfg.cnn, derive_seed(cfg.seed, "nn.init"));

    std::vector<MetaProgress> progress;
    const CnnParams trained = meta_train(pools.train, cfg.meta, theta0,
                                         [&](const MetaProgress& p) { progress.push_back(p); });

    save_checkpoint(out_path(out_dir, "meta.ckpt"), trained, cfg.seed);
    write_progress_csv(out_path(out_dir, "progress.csv"), progress);

    const std::string setting = "meta_m" + std::to_string(cfg.fusion_m);
    std::vector<std::pair<std::string, Metrics>> rows;
    if (pools.validation.size() > 0)
        rows.emplace_back(setting + "_val", evaluate_mae(trained, pools.validation));
    if (pools.test_eval.size() > 0)
        rows.emplace_back(setting + "_test", evaluate_mae(trained, pools.test_eval));
    write_metrics_csv(out_path(out_dir, "metrics.csv"), rows);

    if (!progress.empty())
        std::cout << "meta-trained " << progress.size() << " iterations, final query loss "
                  << progress.back().mean_query_loss << "\n";
    return kExitOk;
}

int cmd_fine_tune(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (cfg.checkpoint.empty())
        throw invalid_config("fine-tune requires config key 'checkpoint'");
    const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
    if (!(ckpt.params.config == cfg.cnn))
        throw invalid_config("checkpoint architecture does not match config");

    const GridPools pools = build_pools(cfg);
    if (pools.test_finetune.size() == 0)
        throw invalid_config("fine-tune requires a non-empty test_finetune pool (leave_out split)");

    std::vector<std::pair<std::string, Metrics>> rows;
    rows.emplace_back("original_pre", evaluate_mae(ckpt.params, pools.validation));
    if (pools.test_eval.size() > 0)
        rows.emplace_back("new_pre", evaluate_mae(ckpt.params, pools.test_eval));

    // per-epoch curves over the original split and the unseen data, the
    // two-line comparison plots are generated from this file
    NamedEvalSets evals{{"original", &pools.validation}};
    if (pools.test_eval.size() > 0) evals.emplace_back("new", &pools.test_eval);

    const TrainResult result =
        fine_tune(ckpt.params, pools.test_finetune, cfg.scope, cfg.fine_tune, evals);

    save_checkpoint(out_path(out_dir, "finetuned.ckpt"), result.params, cfg.seed);
    write_curve_csv(out_path(out_dir, "curve.csv"), result.curve);

    auto metrics_at = [&](const std::string& split, int epoch) -> std::optional<Metrics> {
        for (const CurvePoint& p : result.curve)
            if (p.split == split && p.epoch == epoch) return p.metrics;
        return std::nullopt;
    };
    for (const std::string split : {"original", "new"}) {
        for (const int epoch : {5, cfg.fine_tune.epochs}) {
            if (const auto m = metrics_at(split, epoch))
                rows.emplace_back(split + "_epoch" + std::to_string(epoch), *m);
        }
    }
    write_metrics_csv(out_path(out_dir, "metrics.csv"), rows);

    for (const auto& [name, m] : rows)
        std::cout << name << ": avg " << m.mae_avg << " cm\n";
    return kExitOk;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& out_dir) {
    if (cfg.checkpoint.empty())
        throw invalid_config("evaluate requires config key 'checkpoint'");
    const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
    if (!(ckpt.params.config == cfg.cnn))
        throw invalid_config("checkpoint architecture does not match config");

    const GridPools pools = build_pools(cfg);
    const Batch* pool = nullptr;
    if (cfg.evaluate_split == "train")
        pool = &pools.train;
    else if (cfg.evaluate_split == "validation")
        pool = &pools.validation;
    else if (cfg.evaluate_split == "test_finetune")
        pool = &pools.test_finetune;
    else if (cfg.evaluate_split == "test_eval")
        pool = &pools.test_eval;
    else
        throw invalid_config("config: evaluate_split must name a pool");
    if (pool->size() == 0) throw invalid_config("evaluate: selected pool is empty");

    const Metrics m = evaluate_mae(ckpt.params, *pool);
    write_metrics_csv(out_path(out_dir, "metrics.csv"), {{"evaluate_" + cfg.evaluate_split, m}});

    std::string joints = "joint,mae_cm\n";
    for (std::size_t j = 0; j < m.per_joint.size(); ++j)
        joints += std::to_string(j) + "," + format_double(m.per_joint[j]) + "\n";
    write_file_atomic(out_path(out_dir, "joints.csv"), joints);

    std::cout << "evaluate_" << cfg.evaluate_split << ": x " << m.mae_x << " y " << m.mae_y
              << " z " << m.mae_z << " avg " << m.mae_avg << " cm\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mmWave point-cloud pose estimation: frame fusion, CNN regression and "
                 "meta-learned fast adaptation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;

    const std::vector<std::string> names = {"fuse",      "synth",     "train-baseline",
                                            "meta-train", "fine-tune", "evaluate"};
    for (const std::string& name : names) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--threads", threads, "worker threads for batch gradients");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        const ExperimentConfig cfg = load_config(config_path, seed, threads);
        fs::create_directories(out_dir);
        echo_config(cfg, out_dir);

        const std::string command = app.get_subcommands().front()->get_name();
        if (command == "fuse") return cmd_fuse(cfg, out_dir);
        if (command == "synth") return cmd_synth(cfg, out_dir);
        if (command == "train-baseline") return cmd_train_baseline(cfg, out_dir);
        if (command == "meta-train") return cmd_meta_train(cfg, out_dir);
        if (command == "fine-tune") return cmd_fine_tune(cfg, out_dir);
        if (command == "evaluate") return cmd_evaluate(cfg, out_dir);
        return kExitConfig;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}
