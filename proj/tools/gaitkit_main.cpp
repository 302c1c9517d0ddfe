// gaitkit command line: dataset synthesis, training, evaluation, the
// temporal-modeling ablation, activation export, and model inspection.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gaitkit/gaitkit.hpp"

using namespace gaitkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Resolved config + seed + version beside every run's outputs.
void write_run_record(const std::string& out_dir, const TrainConfig& cfg,
                      const std::string& command, const nlohmann::json& extra = {}) {
    std::filesystem::create_directories(out_dir);
    nlohmann::json rec;
    rec["artifact_version"] = kVersion;
    rec["command"] = command;
    rec["seed"] = cfg.seed;
    rec["config"] = cfg.to_json();
    for (auto it = extra.begin(); it != extra.end(); ++it) rec[it.key()] = it.value();
    std::ofstream out(out_dir + "/run.json", std::ios::binary);
    out << rec.dump(2) << "\n";
}

// CLI > config file > defaults; GAITKIT_SEED fills in when nothing set one.
TrainConfig resolve_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
    TrainConfig cfg;
    bool seed_was_set = false;
    if (!config_path.empty()) {
        apply_config_file(cfg, config_path);
        std::ifstream probe(config_path);
        std::string line;
        while (std::getline(probe, line))
            if (line.find("seed") != std::string::npos) seed_was_set = true;
    }
    for (const std::string& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must be key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq);
        cfg.set(key, kv.substr(eq + 1));
        if (key == "seed") seed_was_set = true;
    }
    if (!seed_was_set) {
        if (const char* env = std::getenv("GAITKIT_SEED")) cfg.set("seed", env);
    }
    return cfg;
}

DatasetIndex load_dataset(const TrainConfig& cfg) {
    if (cfg.data.empty()) throw ConfigError("missing config key: 'data' (dataset manifest)");
    return DatasetIndex::from_manifest(cfg.data);
}

int cmd_synth(const TrainConfig& cfg, size_t ids, size_t seqs,
              const std::string& views_csv, size_t min_len, size_t max_len,
              double noise, const std::string& variation, double drift,
              const std::string& out_dir) {
    SynthDatasetConfig sc;
    sc.n_identities = ids;
    sc.seqs_per_id = seqs;
    sc.views = detail::parse_int_list(views_csv);
    sc.min_len = min_len;
    sc.max_len = max_len;
    sc.noise_sigma = noise;
    sc.drift = drift;
    sc.seed = cfg.seed;
    if (variation == "full") {
        sc.variation = {true, true, false};
    } else if (variation == "dynamics-only") {
        sc.variation = {false, true, false};
    } else if (variation == "frequency-only") {
        sc.variation = {false, true, true};
    } else if (variation == "bones-only") {
        sc.variation = {true, false, false};
    } else {
        throw ConfigError("unknown variation '" + variation +
                          "' (full, dynamics-only, frequency-only, bones-only)");
    }
    DatasetIndex idx = make_synthetic_dataset(sc);
    SkeletonSpec spec = coco17();
    idx.save(out_dir, spec);
    TrainConfig rec = cfg;
    rec.out = out_dir;
    write_run_record(out_dir, rec, "synth",
                     {{"identities", ids},
                      {"sequences_per_id", seqs},
                      {"views", sc.views},
                      {"variation", variation},
                      {"noise_sigma", noise}});
    std::cout << "wrote " << idx.size() << " sequences to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(TrainConfig cfg) {
    DatasetIndex idx = load_dataset(cfg);
    Trainer trainer(std::move(cfg), std::move(idx));
    const TrainConfig& rc = trainer.config();
    write_run_record(rc.out, rc, "train",
                     {{"steps_per_epoch", trainer.steps_per_epoch()},
                      {"total_steps", trainer.schedule().total_steps}});
    std::string final_path = trainer.run();
    std::cout << "final checkpoint: " << final_path << "\n";
    return kExitOk;
}

int cmd_eval(TrainConfig cfg) {
    if (cfg.checkpoint.empty())
        throw ConfigError("missing config key: 'checkpoint'");
    Checkpoint ck = load_checkpoint(cfg.checkpoint);
    ModelBundle mb = bundle_from_checkpoint(ck);
    DatasetIndex idx = load_dataset(cfg);
    EvalResult res = evaluate(mb, idx, cfg);
    write_rank_tables(res, cfg.out);
    write_run_record(cfg.out, cfg, "eval",
                     {{"checkpoint", cfg.checkpoint},
                      {"mean_of_means", res.mean_of_means},
                      {"model_trained", mb.state.counters.step > 0}});
    for (const auto& [cond, table] : res.tables)
        std::cout << "rank-1 " << condition_name(cond) << ": " << table.overall_mean
                  << " %\n";
    return kExitOk;
}

int cmd_ablate(TrainConfig cfg, const std::string& mode) {
    bool train_shuffle, test_shuffle;
    if (mode == "sort-sort") {
        train_shuffle = false;
        test_shuffle = false;
    } else if (mode == "sort-shuffle") {
        train_shuffle = false;
        test_shuffle = true;
    } else if (mode == "shuffle-sort") {
        train_shuffle = true;
        test_shuffle = false;
    } else {
        throw ConfigError("unknown ablation mode '" + mode +
                          "' (sort-sort, sort-shuffle, shuffle-sort)");
    }
    if (!cfg.joints_only && cfg.preset.find("-joints") == std::string::npos)
        cfg.joints_only = true;  // multi-branch inputs would leak temporal info
    cfg.shuffle_train = train_shuffle;
    cfg.shuffle_test = test_shuffle;
    cfg.tta = false;

    DatasetIndex idx = load_dataset(cfg);
    std::string base_out = cfg.out;
    cfg.out = base_out + "/" + mode;
    Trainer trainer(cfg, idx);
    write_run_record(cfg.out, cfg, "ablate", {{"mode", mode}});
    trainer.run();
    EvalResult res = evaluate(trainer.bundle(), idx, cfg);
    write_rank_tables(res, cfg.out);
    for (const auto& [cond, table] : res.tables)
        std::cout << "ablate " << mode << " rank-1 " << condition_name(cond) << ": "
                  << table.overall_mean << " %\n";
    return kExitOk;
}

int cmd_activations(TrainConfig cfg, const std::string& subject_filter) {
    if (cfg.checkpoint.empty())
        throw ConfigError("missing config key: 'checkpoint'");
    Checkpoint ck = load_checkpoint(cfg.checkpoint);
    ModelBundle mb = bundle_from_checkpoint(ck);
    DatasetIndex idx = load_dataset(cfg);
    std::filesystem::create_directories(cfg.out);
    size_t written = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
        const auto& r = idx.records[i];
        if (!subject_filter.empty() && r.subject != subject_filter) continue;
        PoseSequence seq = idx.load(i, mb.skeleton);
        ActivationMap am = activation_map(mb.cfg, mb.part, mb.state, mb.skeleton, seq);
        char name[128];
        std::snprintf(name, sizeof(name), "%s/activation_%s_%s-%02d_%03d.csv",
                      cfg.out.c_str(), r.subject.c_str(),
                      condition_name(r.condition).c_str(), r.seq_index, r.view);
        write_activation_csv(name, am);
        ++written;
    }
    write_run_record(cfg.out, cfg, "activations",
                     {{"sequences", written},
                      {"model_trained", mb.state.counters.step > 0}});
    std::cout << "wrote " << written << " activation maps to " << cfg.out << "\n";
    return kExitOk;
}

int cmd_inspect(const TrainConfig& cfg) {
    ModelConfig mc = make_preset(cfg.preset, cfg.skeleton, cfg.width_mult);
    if (cfg.joints_only) mc = joints_only(mc);
    size_t count = count_parameters(mc);
    std::cout << "preset: " << mc.preset_name << " (width_mult " << cfg.width_mult
              << ", skeleton " << cfg.skeleton << ")\n";
    std::cout << "trainable parameters: " << count << "\n";
    std::cout << "embedding dim: " << mc.embedding_dim << "\n";
    std::cout << "temporal downsampling: x" << mc.stride_product() << "\n";
    auto print_block = [](const std::string& where, const BlockConfig& b) {
        std::cout << "  " << where << ": "
                  << (b.kind == BlockKind::basic ? "basic" : "bottleneck") << " "
                  << b.in_ch << "->" << b.out_ch << " r=" << b.reduction
                  << " K=" << b.kernel << " stride=" << b.stride << " residual="
                  << (b.residual == ResidualKind::none
                          ? "none"
                          : (b.residual == ResidualKind::identity ? "identity"
                                                                  : "projection"))
                  << "\n";
    };
    for (size_t i = 0; i < mc.branch_blocks.size(); ++i) {
        std::cout << "branch " << i << " (in " << mc.branch_in[i] << " ch):\n";
        for (size_t j = 0; j < mc.branch_blocks[i].size(); ++j)
            print_block("b" + std::to_string(j), mc.branch_blocks[i][j]);
    }
    std::cout << "main stream:\n";
    for (size_t j = 0; j < mc.main_blocks.size(); ++j)
        print_block("b" + std::to_string(j), mc.main_blocks[j]);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gaitkit: skeleton-based gait recognition"};
    app.require_subcommand(1);
    app.fallthrough();  // parent --config/--set stay usable after a subcommand

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "flat key = value config file")
        ->configurable(false);
    app.add_option("--set", overrides, "config override key=value (repeatable)");

    auto* synth = app.add_subcommand("synth", "emit a synthetic gait dataset");
    size_t ids = 20, seqs = 8, min_len = 60, max_len = 90;
    std::string views = "0,30,60,90", variation = "full", out_dir = "synth_data";
    double noise = 1.0, drift = 1.0;
    synth->add_option("--ids", ids, "number of identities");
    synth->add_option("--seqs", seqs, "sequences per identity");
    synth->add_option("--views", views, "comma-separated view angles");
    synth->add_option("--min-len", min_len);
    synth->add_option("--max-len", max_len);
    synth->add_option("--noise", noise, "keypoint gaussian noise sigma (px)");
    synth->add_option("--variation", variation,
                      "full | dynamics-only | frequency-only | bones-only");
    synth->add_option("--drift", drift, "forward-speed factor (0 = treadmill)");
    synth->add_option("--out", out_dir, "output directory");

    auto* train = app.add_subcommand("train", "train a model, write checkpoints + metrics");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, write rank-1 tables");
    auto* ablate = app.add_subcommand("ablate", "temporal-modeling control condition");
    std::string ablate_mode = "sort-sort";
    ablate->add_option("--mode", ablate_mode, "sort-sort | sort-shuffle | shuffle-sort");
    auto* activ = app.add_subcommand("activations", "export per-joint activation CSVs");
    std::string subject_filter;
    activ->add_option("--subject", subject_filter, "restrict to one subject id");
    auto* inspect = app.add_subcommand("inspect", "print preset parameter counts and shapes");
    std::string inspect_preset;
    inspect->add_option("--preset", inspect_preset, "n21-r8 | n51-r4");

    CLI11_PARSE(app, argc, argv);

    try {
        TrainConfig cfg = resolve_config(config_path, overrides);
        if (synth->parsed())
            return cmd_synth(cfg, ids, seqs, views, min_len, max_len, noise, variation,
                             drift, out_dir);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg);
        if (ablate->parsed()) return cmd_ablate(cfg, ablate_mode);
        if (activ->parsed()) return cmd_activations(cfg, subject_filter);
        if (inspect->parsed()) {
            if (!inspect_preset.empty()) cfg.preset = inspect_preset;
            return cmd_inspect(cfg);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
