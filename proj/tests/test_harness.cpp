#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "rlab/checkpoint.hpp"
#include "rlab/harness.hpp"

using namespace rlab;

namespace {

Hyperparams q1_hyper() {
    Hyperparams h;
    h.batch_size = 64;
    h.initial_lr = 0.1;
    h.weight_decay = 2e-4;
    h.momentum = 0.9;
    h.total_epochs = 100;
    h.iteration_milestones = {40000, 60000};
    h.augmentation = "std";
    return h;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("lr schedule: iteration milestones 40000/60000") {
    const Hyperparams h = q1_hyper();
    CHECK(lr_at(h, 0, 0.0) == doctest::Approx(0.1));
    CHECK(lr_at(h, 39999, 3.2) == doctest::Approx(0.1));
    CHECK(lr_at(h, 40000, 3.2) == doctest::Approx(0.01));
    CHECK(lr_at(h, 59999, 4.8) == doctest::Approx(0.01));
    CHECK(lr_at(h, 60000, 4.8) == doctest::Approx(0.001));
    CHECK(lr_at(h, 90000, 9.0) == doctest::Approx(0.001));
}

TEST_CASE("lr schedule: epoch period 50 over a 150-epoch run") {
    Hyperparams h = q1_hyper();
    h.iteration_milestones.clear();
    h.epoch_period = 50;
    h.total_epochs = 150;
    CHECK(lr_at(h, 1000, 49.0) == doctest::Approx(0.1));
    CHECK(lr_at(h, 1000, 49.9) == doctest::Approx(0.1));
    CHECK(lr_at(h, 1000, 50.0) == doctest::Approx(0.01));
    CHECK(lr_at(h, 1000, 100.0) == doctest::Approx(0.001));
    CHECK(lr_at(h, 1000, 149.0) == doctest::Approx(0.001));
}

TEST_CASE("lr schedule: no milestones means constant, and lr never increases") {
    Hyperparams h = q1_hyper();
    h.iteration_milestones.clear();
    CHECK(lr_at(h, 0, 0.0) == 0.1);
    CHECK(lr_at(h, 1000000, 500.0) == 0.1);

    for (const bool by_epoch : {false, true}) {
        Hyperparams s = q1_hyper();
        if (by_epoch) {
            s.iteration_milestones.clear();
            s.epoch_period = 7;
        }
        double prev = 1e9;
        for (int64_t it = 0; it < 100000; it += 913) {
            const double epoch = static_cast<double>(it) / 781.25;
            const double lr = lr_at(s, it, epoch);
            CHECK(lr <= prev + 1e-15);
            prev = lr;
        }
    }
}

TEST_CASE("hyperparameter validation") {
    Hyperparams h = q1_hyper();
    h.initial_lr = 0.0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = q1_hyper();
    h.epoch_period = 50;  // both schedule families set
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = q1_hyper();
    h.iteration_milestones = {40000, 40000};
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = q1_hyper();
    h.augmentation = "heavy";
    CHECK_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("snapshot steps at the paper cadence (B=64, epoch 50000)") {
    SnapshotPlan plan;
    plan.dense_interval = 625;
    plan.dense_until_epochs = 4.0;
    plan.sparse_interval_epochs = 4.0;
    const double spe = 50000.0 / 64.0;  // 781.25
    auto steps = snapshot_steps(plan, spe, 78200);

    // Dense phase: multiples of 625 strictly before 4 epochs (3125), then the
    // 4-epoch snapshot at 3125 itself from the sparse cadence.
    REQUIRE(steps.size() >= 6);
    CHECK(steps[0] == 625);
    CHECK(steps[1] == 1250);
    CHECK(steps[2] == 1875);
    CHECK(steps[3] == 2500);
    CHECK(steps[4] == 3125);
    CHECK(steps[5] == 6250);
    CHECK(steps.back() == 78200);
    for (size_t i = 1; i < steps.size(); ++i) CHECK(steps[i] > steps[i - 1]);
}

TEST_CASE("snapshot steps: degenerate plans") {
    SnapshotPlan sparse_only;
    sparse_only.dense_until_epochs = 0.0;
    sparse_only.sparse_interval_epochs = 2.0;
    auto steps = snapshot_steps(sparse_only, 10.0, 100);
    CHECK(steps.front() == 20);
    CHECK(steps.back() == 100);

    SnapshotPlan plan;
    plan.dense_interval = 625;
    auto tiny = snapshot_steps(plan, 10.0, 37);  // total smaller than interval
    CHECK(tiny == std::vector<int64_t>{37});
}

TEST_CASE("training run: zero-budget attack logs ASR 0; csv and checkpoint round-trip") {
    SynthSpec sspec;
    sspec.n = 128;
    sspec.image_size = 10;
    DatasetHandle data = make_synthetic(sspec, 3);
    DatasetHandle eval_set = make_synthetic(sspec, 4);

    ModelGraph model = make_model("tiny", data.image_shape, 10, 11);
    BatchStream stream(data, nullptr, {0.0, 16, 128}, 11);

    Hyperparams hyper;
    hyper.batch_size = 16;
    hyper.initial_lr = 0.05;
    hyper.weight_decay = 2e-4;
    hyper.momentum = 0.9;
    hyper.total_epochs = 2;
    hyper.iteration_milestones.clear();
    hyper.augmentation = "none";
    hyper.seed = 11;

    SnapshotPlan plan;
    plan.dense_interval = 3;
    plan.dense_until_epochs = 1.0;
    plan.sparse_interval_epochs = 1.0;
    plan.eval_n = 64;
    AttackSpec zero = attack_preset("linf-8");
    zero.id = "linf-zero";
    zero.epsilon = 0.0;
    zero.step_size = 0.01;  // step must stay positive
    plan.attacks = {attack_preset("none"), zero};

    TrainOptions opts;
    opts.metrics_csv = "train_smoke.csv";
    opts.checkpoint_path = "train_smoke.rlab";
    TrainResult res = train(model, stream, hyper, plan, eval_set, opts);

    CHECK(res.steps_run == 16);
    REQUIRE(!res.log.empty());
    CHECK(res.log.size() % 2 == 0);  // two attacks per snapshot
    for (const auto& rec : res.log) {
        REQUIRE(rec.asr.has_value());
        CHECK(*rec.asr == 0.0);  // both attacks leave predictions unchanged
        CHECK(rec.rob_acc == rec.nat_acc);
        CHECK(rec.example_count == 64);
        CHECK(rec.nat_acc >= 0.0);
        CHECK(rec.nat_acc <= 1.0);
    }
    // Final snapshot at the final step is present.
    CHECK(res.log.back().step == 16);

    // CSV on disk matches the in-memory log re-serialized.
    auto parsed = read_metrics_csv("train_smoke.csv");
    REQUIRE(parsed.size() == res.log.size());
    for (size_t i = 0; i < parsed.size(); ++i)
        CHECK(metrics_csv_row(parsed[i]) == metrics_csv_row(res.log[i]));

    // Checkpoint reloads and predicts identically.
    ModelGraph back = load_checkpoint("train_smoke.rlab");
    Tensor probe = eval_set.gather({0, 1, 2, 3}, nullptr);
    auto a = predict(model, probe);
    // Loaded params are f32-quantized; predictions may differ only on ties.
    auto b = predict(back, probe);
    CHECK(a == b);

    std::remove("train_smoke.csv");
    std::remove("train_smoke.rlab");
}

TEST_CASE("same seed, same log; snapshots do not disturb the trajectory") {
    SynthSpec sspec;
    sspec.n = 96;
    sspec.image_size = 10;
    DatasetHandle data = make_synthetic(sspec, 5);
    DatasetHandle eval_set = make_synthetic(sspec, 6);

    Hyperparams hyper;
    hyper.batch_size = 16;
    hyper.initial_lr = 0.05;
    hyper.total_epochs = 2;
    hyper.iteration_milestones.clear();
    hyper.augmentation = "std";
    hyper.seed = 21;

    SnapshotPlan dense;
    dense.dense_interval = 2;
    dense.dense_until_epochs = 1.0;
    dense.sparse_interval_epochs = 1.0;
    dense.eval_n = 32;
    dense.attacks = {attack_preset("none")};

    auto run = [&](const SnapshotPlan& plan, const std::string& csv) {
        ModelGraph m = make_model("tiny", data.image_shape, 10, 31);
        BatchStream stream(data, nullptr, {0.0, 16, 96}, 31);
        TrainOptions opts;
        opts.metrics_csv = csv;
        TrainResult r = train(m, stream, hyper, plan, eval_set, opts);
        return std::make_pair(std::move(m), std::move(r));
    };

    auto [m1, r1] = run(dense, "det_a.csv");
    auto [m2, r2] = run(dense, "det_b.csv");
    CHECK(slurp("det_a.csv") == slurp("det_b.csv"));
    for (const auto& [name, p] : m1.params) CHECK(p.values == m2.params.at(name).values);

    SnapshotPlan final_only;
    final_only.dense_until_epochs = 0.0;
    final_only.sparse_interval_epochs = 0.0;
    final_only.eval_n = 32;
    final_only.attacks = {attack_preset("none")};
    auto [m3, r3] = run(final_only, "det_c.csv");
    for (const auto& [name, p] : m1.params) CHECK(p.values == m3.params.at(name).values);

    std::remove("det_a.csv");
    std::remove("det_b.csv");
    std::remove("det_c.csv");
}

TEST_CASE("training loss decreases across the first epoch on synthetic data") {
    SynthSpec sspec;
    sspec.n = 512;
    sspec.image_size = 12;
    DatasetHandle data = make_synthetic(sspec, 7);

    ModelGraph model = make_model("tiny", data.image_shape, 10, 41);
    BatchStream stream(data, nullptr, {0.0, 16, 512}, 41);

    Hyperparams hyper;
    hyper.batch_size = 16;
    hyper.initial_lr = 0.08;
    hyper.total_epochs = 1;
    hyper.iteration_milestones.clear();
    hyper.augmentation = "none";
    hyper.seed = 41;

    SnapshotPlan plan;
    plan.dense_until_epochs = 0.0;
    plan.sparse_interval_epochs = 0.0;
    plan.eval_n = 32;

    TrainResult res = train(model, stream, hyper, plan, data, {});
    CHECK(res.first_epoch_loss_back < res.first_epoch_loss_front);
}

TEST_CASE("metrics csv reader rejects malformed input") {
    {
        std::ofstream out("bad.csv");
        out << "step,epoch,attack\n1,2,3\n";
    }
    CHECK_THROWS_AS(read_metrics_csv("bad.csv"), FormatError);
    {
        std::ofstream out("bad.csv");
        out << metrics_csv_header() << "\n";
        out << "1,0.5,none,xyz,0.5,,100,7\n";
    }
    CHECK_THROWS_AS(read_metrics_csv("bad.csv"), FormatError);
    std::remove("bad.csv");

    // Empty asr field round-trips as absent.
    {
        std::ofstream out("ok.csv");
        out << metrics_csv_header() << "\n";
        out << "5,0.1000,grid135,0.000000,0.000000,,50,9\n";
    }
    auto log = read_metrics_csv("ok.csv");
    REQUIRE(log.size() == 1);
    CHECK_FALSE(log[0].asr.has_value());
    CHECK(log[0].attack_id == "grid135");
    std::remove("ok.csv");
}
