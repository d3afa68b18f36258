// rlab: train small convolutional classifiers from scratch, attack them with
// PGD and spatial grid search, build robust/non-robust dataset variants, and
// sweep batch-mixing defenses. Every command is reproducible from
// (config, seed, --threads 1).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "rlab/checkpoint.hpp"
#include "rlab/report.hpp"
#include "rlab/robustify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rlab;

namespace {

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

const json& require_field(const json& j, const std::string& key, const std::string& ctx) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError("missing field: " + ctx + key);
    return *it;
}

template <class T>
T field_or(const json& j, const std::string& key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad field " + key + ": " + e.what());
    }
}

AttackSpec attack_from_json(const json& j) {
    if (j.is_string()) return attack_preset(j.get<std::string>());
    if (!j.is_object()) throw ConfigError("attack entry must be a preset name or an object");

    const std::string kind = require_field(j, "kind", "attack.").get<std::string>();
    AttackSpec s;
    s.id = field_or<std::string>(j, "id", kind);
    if (kind == "pgd-l2" || kind == "pgd-linf") {
        s.kind = kind == "pgd-l2" ? AttackKind::PgdL2 : AttackKind::PgdLinf;
        s.epsilon = require_field(j, "eps", "attack.").get<double>();
        s.step_size = field_or<double>(j, "step", s.epsilon > 0 ? s.epsilon / 4.0 : 0.01);
        s.iterations = field_or<int>(j, "iters", kind == "pgd-l2" ? 100 : 7);
        s.random_start = field_or<bool>(j, "random_start", kind == "pgd-linf");
    } else if (kind == "grid") {
        s.kind = AttackKind::Grid;
        if (j.contains("preset")) {
            s.grid = grid_preset(j.at("preset").get<std::string>());
        } else {
            s.grid.name = s.id;
            s.grid.translation_values_per_axis = field_or<int>(j, "ntrans", 1);
            s.grid.rotation_value_count = field_or<int>(j, "nrot", 1);
            s.grid.max_translation_px = field_or<double>(j, "max_px", 0.0);
            s.grid.max_rotation_deg = field_or<double>(j, "max_deg", 0.0);
        }
        s.exhaustive = field_or<bool>(j, "exhaustive", false);
    } else if (kind == "none") {
        s.kind = AttackKind::None;
    } else {
        throw ConfigError("unknown attack kind: " + kind);
    }
    s.validate();
    return s;
}

std::vector<AttackSpec> attacks_from_json(const json& j, const std::string& ctx) {
    if (!j.is_array()) throw ConfigError(ctx + " must be an array of attacks");
    std::vector<AttackSpec> out;
    for (const auto& e : j) out.push_back(attack_from_json(e));
    return out;
}

struct LoadedData {
    DatasetHandle train;
    DatasetHandle test;
};

LoadedData load_data(const json& cfg, uint64_t seed, bool need_test) {
    const json& d = require_field(cfg, "dataset", "");
    const std::string kind = require_field(d, "kind", "dataset.").get<std::string>();
    LoadedData out;
    if (kind == "synth") {
        SynthSpec spec;
        spec.n = field_or<int64_t>(d, "n", 2000);
        spec.image_size = field_or<int>(d, "size", 28);
        spec.channels = field_or<int>(d, "channels", 1);
        spec.class_count = field_or<int>(d, "classes", 10);
        spec.noise = field_or<double>(d, "noise", 0.08);
        spec.cue_amplitude = field_or<double>(d, "cue_amplitude", 0.05);
        spec.cue_period = field_or<int>(d, "cue_period", 5);
        const uint64_t dseed = field_or<uint64_t>(d, "seed", seed);
        out.train = make_synthetic(spec, dseed);
        SynthSpec tspec = spec;
        tspec.n = field_or<int64_t>(d, "test_n", spec.n / 2);
        out.test = make_synthetic(tspec, derive_seed(dseed, 0x7E57));
    } else if (kind == "cifar") {
        std::string dir = field_or<std::string>(d, "dir", "");
        if (dir.empty()) {
            const char* env = std::getenv("RLAB_DATA_DIR");
            if (!env)
                throw ConfigError("missing field: dataset.dir (and RLAB_DATA_DIR is unset)");
            dir = env;
        }
        std::vector<std::string> train_files =
            field_or<std::vector<std::string>>(d, "train_files",
                                               {"data_batch_1.bin", "data_batch_2.bin",
                                                "data_batch_3.bin", "data_batch_4.bin",
                                                "data_batch_5.bin"});
        std::vector<std::string> test_files =
            field_or<std::vector<std::string>>(d, "test_files", {"test_batch.bin"});
        for (auto& f : train_files) f = dir + "/" + f;
        for (auto& f : test_files) f = dir + "/" + f;
        out.train = load_cifar_binary(train_files);
        if (need_test) out.test = load_cifar_binary(test_files);
    } else if (kind == "rdst") {
        out.train = load_dataset(require_field(d, "train", "dataset.").get<std::string>());
        if (need_test) {
            if (d.contains("test"))
                out.test = load_dataset(d.at("test").get<std::string>());
            else
                throw ConfigError("missing field: dataset.test");
        }
    } else {
        throw ConfigError("unknown dataset kind: " + kind);
    }
    return out;
}

Hyperparams hyper_from_json(const json& cfg, uint64_t seed) {
    const json& h = require_field(cfg, "hyper", "");
    Hyperparams out;
    out.batch_size = field_or<int>(h, "batch_size", 64);
    out.initial_lr = field_or<double>(h, "lr", 0.1);
    out.weight_decay = field_or<double>(h, "weight_decay", 2e-4);
    out.momentum = field_or<double>(h, "momentum", 0.9);
    out.total_epochs = field_or<int>(h, "epochs", 100);
    out.iteration_milestones = field_or<std::vector<int64_t>>(h, "milestones", {});
    out.epoch_period = field_or<int>(h, "epoch_period", 0);
    out.augmentation = field_or<std::string>(h, "augment", "std");
    out.seed = seed;
    out.validate();
    return out;
}

int64_t epoch_length_from_json(const json& cfg, const DatasetHandle& train) {
    const json& h = require_field(cfg, "hyper", "");
    return field_or<int64_t>(h, "epoch_length", train.size());
}

SnapshotPlan plan_from_json(const json& cfg) {
    SnapshotPlan plan;
    plan.dense_until_epochs = 0.0;
    plan.sparse_interval_epochs = 0.0;
    plan.attacks = {attack_preset("none")};
    if (!cfg.contains("snapshot")) return plan;
    const json& s = cfg.at("snapshot");
    plan.dense_interval = field_or<int64_t>(s, "dense_interval", 625);
    plan.dense_until_epochs = field_or<double>(s, "dense_until_epochs", 4.0);
    plan.sparse_interval_epochs = field_or<double>(s, "sparse_interval_epochs", 4.0);
    plan.eval_n = field_or<int64_t>(s, "eval_n", 1000);
    if (s.contains("attacks")) plan.attacks = attacks_from_json(s.at("attacks"), "snapshot.attacks");
    return plan;
}

RobustifySpec robustify_from_json(const json& cfg, uint64_t seed) {
    RobustifySpec spec;
    spec.inner_attack = attack_preset("linf-8");
    spec.pairing_seed = seed;
    if (cfg.contains("robustify")) {
        const json& r = cfg.at("robustify");
        if (r.contains("inner_attack")) spec.inner_attack = attack_from_json(r.at("inner_attack"));
        spec.repr_steps = field_or<int>(r, "repr_steps", 200);
        spec.repr_step_size = field_or<double>(r, "repr_step_size", 0.1);
        spec.eps_free = field_or<bool>(r, "eps_free", true);
        spec.pairing_seed = field_or<uint64_t>(r, "pairing_seed", seed);
    }
    return spec;
}

std::string out_dir_of(const json& cfg, const std::string& override_out) {
    std::string out = override_out.empty() ? field_or<std::string>(cfg, "out", "runs/out")
                                           : override_out;
    fs::create_directories(out);
    return out;
}

uint64_t seed_of(const json& cfg, int64_t override_seed) {
    if (override_seed >= 0) return static_cast<uint64_t>(override_seed);
    return field_or<uint64_t>(cfg, "seed", 0);
}

void apply_threads(const json& cfg, int override_threads) {
    const int t = override_threads > 0 ? override_threads : field_or<int>(cfg, "threads", 1);
    set_thread_count(t);
}

// ---------------------------------------------------------------------------

int cmd_train(const json& cfg, uint64_t seed, const std::string& out_override,
              bool adversarial) {
    const std::string out = out_dir_of(cfg, out_override);
    LoadedData data = load_data(cfg, seed, true);
    Hyperparams hyper = hyper_from_json(cfg, seed);
    SnapshotPlan plan = plan_from_json(cfg);

    const double alpha = field_or<double>(cfg, "alpha", 0.0);
    DatasetHandle robust;
    const DatasetHandle* robust_ptr = nullptr;
    if (alpha > 0.0) {
        robust = load_dataset(require_field(cfg, "robust_dataset", "").get<std::string>());
        robust_ptr = &robust;
    }

    const std::string arch = field_or<std::string>(cfg, "arch", "micro");
    ModelGraph model = make_model(arch, data.train.image_shape, data.train.class_count,
                                  derive_seed(seed, 0x0D31));
    MixPolicy policy{alpha, hyper.batch_size, epoch_length_from_json(cfg, data.train)};
    BatchStream stream(data.train, robust_ptr, policy, derive_seed(seed, 0x57EA));

    TrainOptions opts;
    opts.metrics_csv = out + "/metrics.csv";
    opts.checkpoint_path = out + "/checkpoint.rlab";

    TrainResult res;
    if (adversarial) {
        RobustifySpec rspec = robustify_from_json(cfg, seed);
        res = adversarial_train(model, stream, hyper, plan, data.test, rspec, opts);
    } else {
        res = train(model, stream, hyper, plan, data.test, opts);
    }

    std::printf("steps: %lld\n", static_cast<long long>(res.steps_run));
    std::printf("metrics: %s\n", opts.metrics_csv.c_str());
    std::printf("checkpoint: %s\n", opts.checkpoint_path.c_str());
    std::printf("final natural accuracy: %.4f\n", res.final_nat_acc);
    return 0;
}

int cmd_attack(const json& cfg, uint64_t seed, const std::string& out_override) {
    const std::string out = out_dir_of(cfg, out_override);
    ModelGraph model =
        load_checkpoint(require_field(cfg, "checkpoint", "").get<std::string>());
    LoadedData data = load_data(cfg, seed, true);
    const auto attacks = attacks_from_json(require_field(cfg, "attacks", ""), "attacks");
    const int64_t eval_n = field_or<int64_t>(cfg, "eval_n", 1000);

    const auto records =
        evaluate_model(model, data.test, eval_n, attacks, 0, 0.0, derive_seed(seed, 0xE0AL));
    write_metrics_csv(out + "/attack.csv", records);
    std::cout << metrics_csv_header() << "\n";
    for (const auto& rec : records) std::cout << metrics_csv_row(rec) << "\n";
    std::printf("wrote %s\n", (out + "/attack.csv").c_str());
    return 0;
}

int cmd_mkrobust(const json& cfg, uint64_t seed, const std::string& out_override) {
    const std::string out = out_dir_of(cfg, out_override);
    const std::string ckpt = require_field(cfg, "checkpoint", "").get<std::string>();
    ModelGraph f_a = load_checkpoint(ckpt);
    LoadedData data = load_data(cfg, seed, false);
    RobustifySpec spec = robustify_from_json(cfg, seed);

    ReprTrace trace;
    DatasetHandle d_r = construct_robust_dataset(f_a, data.train, spec, &trace);
    char prov[256];
    std::snprintf(prov, sizeof(prov), "d_r fA=%016llx repr_steps=%d step=%g seed=%llu",
                  static_cast<unsigned long long>(file_hash(ckpt)), spec.repr_steps,
                  spec.repr_step_size, static_cast<unsigned long long>(spec.pairing_seed));
    d_r.provenance = prov;
    save_dataset(d_r, out + "/d_r.rdst");

    double start = 0.0, final = 0.0;
    int64_t flagged = 0;
    for (const auto& seq : trace.distances) {
        start += seq.front();
        final += seq.back();
    }
    for (uint8_t f : trace.zero_grad_at_start) flagged += f;
    const double n = static_cast<double>(trace.distances.size());
    std::printf("examples: %lld\n", static_cast<long long>(d_r.size()));
    std::printf("mean repr distance: %.4f -> %.4f\n", start / n, final / n);
    std::printf("zero-gradient starts: %lld\n", static_cast<long long>(flagged));
    std::printf("wrote %s\n", (out + "/d_r.rdst").c_str());
    return 0;
}

int cmd_mknonrobust(const json& cfg, uint64_t seed, const std::string& out_override) {
    const std::string out = out_dir_of(cfg, out_override);
    const std::string ckpt = require_field(cfg, "checkpoint", "").get<std::string>();
    ModelGraph f = load_checkpoint(ckpt);
    LoadedData data = load_data(cfg, seed, false);

    AttackSpec attack = attack_preset("l2-0.5");
    if (cfg.contains("nonrobust") && cfg.at("nonrobust").contains("attack"))
        attack = attack_from_json(cfg.at("nonrobust").at("attack"));

    double rate = 0.0;
    std::vector<uint8_t> unconverted;
    DatasetHandle d_nr =
        construct_nonrobust_dataset(f, data.train, attack, seed, &rate, &unconverted);
    char prov[256];
    std::snprintf(prov, sizeof(prov), "d_nr f=%016llx attack=%s seed=%llu",
                  static_cast<unsigned long long>(file_hash(ckpt)), attack.id.c_str(),
                  static_cast<unsigned long long>(seed));
    d_nr.provenance = prov;
    save_dataset(d_nr, out + "/d_nr.rdst");
    std::printf("examples: %lld\n", static_cast<long long>(d_nr.size()));
    std::printf("conversion rate: %.4f\n", rate);
    std::printf("wrote %s\n", (out + "/d_nr.rdst").c_str());
    return 0;
}

int cmd_mix_sweep(const json& cfg, uint64_t seed, const std::string& out_override) {
    const std::string out = out_dir_of(cfg, out_override);
    LoadedData data = load_data(cfg, seed, true);
    Hyperparams hyper = hyper_from_json(cfg, seed);
    SnapshotPlan plan = plan_from_json(cfg);

    const auto alphas = require_field(cfg, "alphas", "").get<std::vector<double>>();
    const auto attacks = attacks_from_json(require_field(cfg, "attacks", ""), "attacks");
    const int64_t eval_n = field_or<int64_t>(cfg, "eval_n", 1000);

    DatasetHandle robust =
        load_dataset(require_field(cfg, "robust_dataset", "").get<std::string>());
    const std::string arch = field_or<std::string>(cfg, "arch", "micro");
    const int64_t epoch_length = epoch_length_from_json(cfg, data.train);

    std::ofstream sweep(out + "/sweep.csv", std::ios::trunc);
    if (!sweep) throw FormatError("cannot write sweep csv: " + out + "/sweep.csv");
    sweep << sweep_csv_header() << "\n" << std::flush;

    for (double alpha : alphas) {
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alphas entries must lie in [0,1]");
        char tag[32];
        std::snprintf(tag, sizeof(tag), "%.2f", alpha);

        ModelGraph model = make_model(arch, data.train.image_shape, data.train.class_count,
                                      derive_seed(seed, 0x0D31));
        BatchStream stream(data.train, alpha > 0.0 ? &robust : nullptr,
                           {alpha, hyper.batch_size, epoch_length},
                           derive_seed(seed, 0x57EA));
        TrainOptions opts;
        opts.metrics_csv = out + "/metrics_a" + tag + ".csv";
        opts.checkpoint_path = out + "/checkpoint_a" + tag + ".rlab";
        TrainResult res = train(model, stream, hyper, plan, data.test, opts);

        const auto records = evaluate_model(model, data.test, eval_n, attacks, res.steps_run,
                                            hyper.total_epochs, derive_seed(seed, 0x3FA1));
        for (const auto& rec : records) sweep << sweep_csv_row(alpha, rec) << "\n";
        sweep << std::flush;
        std::printf("alpha %.2f: nat %.4f\n", alpha, records.front().nat_acc);
    }
    std::printf("wrote %s\n", (out + "/sweep.csv").c_str());
    return 0;
}

int cmd_report(const std::vector<std::string>& metrics, const std::vector<std::string>& sweeps,
               const std::string& out) {
    fs::create_directories(out.empty() ? "." : out);
    const std::string dir = out.empty() ? "." : out;
    for (const auto& csv : metrics) {
        const auto files = report_metrics(csv, dir);
        std::cout << summary_table(read_metrics_csv(csv));
        for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    }
    for (const auto& csv : sweeps) {
        const auto files = report_sweep(csv, dir);
        for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial-robustness laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_override;
    int64_t seed_override = -1;
    int threads_override = 0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        if (needs_config)
            sub->add_option("--config", config_path, "experiment config (json)")->required();
        sub->add_option("--seed", seed_override, "seed override");
        sub->add_option("--threads", threads_override, "worker cap (1 = reference mode)");
        sub->add_option("--out", out_override, "output directory override");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a classifier");
    CLI::App* advtrain_cmd = app.add_subcommand("advtrain", "PGD adversarial training");
    CLI::App* attack_cmd = app.add_subcommand("attack", "evaluate attacks on a checkpoint");
    CLI::App* mkrobust_cmd = app.add_subcommand("mkrobust", "construct D_R by representation matching");
    CLI::App* mknonrobust_cmd =
        app.add_subcommand("mknonrobust", "construct D_NR from targeted adversarial examples");
    CLI::App* sweep_cmd = app.add_subcommand("mix-sweep", "train across mix ratios");
    for (CLI::App* sub : {train_cmd, advtrain_cmd, attack_cmd, mkrobust_cmd, mknonrobust_cmd,
                          sweep_cmd})
        add_common(sub, true);

    std::vector<std::string> report_metrics_files, report_sweep_files;
    CLI::App* report_cmd = app.add_subcommand("report", "render CSV logs as SVG + tables");
    report_cmd->add_option("--metrics", report_metrics_files, "metrics csv files");
    report_cmd->add_option("--sweep", report_sweep_files, "sweep csv files");
    add_common(report_cmd, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (report_cmd->parsed()) {
            set_thread_count(threads_override > 0 ? threads_override : 1);
            return cmd_report(report_metrics_files, report_sweep_files, out_override);
        }
        const json cfg = load_config(config_path);
        apply_threads(cfg, threads_override);
        const uint64_t seed = seed_of(cfg, seed_override);
        if (train_cmd->parsed()) return cmd_train(cfg, seed, out_override, false);
        if (advtrain_cmd->parsed()) return cmd_train(cfg, seed, out_override, true);
        if (attack_cmd->parsed()) return cmd_attack(cfg, seed, out_override);
        if (mkrobust_cmd->parsed()) return cmd_mkrobust(cfg, seed, out_override);
        if (mknonrobust_cmd->parsed()) return cmd_mknonrobust(cfg, seed, out_override);
        if (sweep_cmd->parsed()) return cmd_mix_sweep(cfg, seed, out_override);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
