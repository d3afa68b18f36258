#include "rlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rlab/checkpoint.hpp"
#include "rlab/transforms.hpp"

namespace rlab {

void Hyperparams::validate() const {
    if (batch_size < 1) throw ConfigError("hyper.batch_size must be >= 1");
    if (initial_lr <= 0.0) throw ConfigError("hyper.initial_lr must be positive");
    if (total_epochs < 1) throw ConfigError("hyper.total_epochs must be >= 1");
    if (epoch_period < 0) throw ConfigError("hyper.epoch_period must be >= 0");
    if (!iteration_milestones.empty() && epoch_period > 0)
        throw ConfigError("hyper: choose either iteration milestones or an epoch period");
    for (size_t i = 1; i < iteration_milestones.size(); ++i)
        if (iteration_milestones[i] <= iteration_milestones[i - 1])
            throw ConfigError("hyper.milestones must be strictly increasing");
    augment_policy(augmentation);  // throws on unknown name
}

double lr_at(const Hyperparams& hyper, int64_t iteration, double epoch) {
    double lr = hyper.initial_lr;
    if (!hyper.iteration_milestones.empty()) {
        for (int64_t m : hyper.iteration_milestones)
            if (iteration >= m) lr /= 10.0;
    } else if (hyper.epoch_period > 0) {
        const auto periods = static_cast<int64_t>(std::floor(epoch) /
                                                  hyper.epoch_period);
        for (int64_t i = 0; i < periods; ++i) lr /= 10.0;
    }
    return lr;
}

std::vector<int64_t> snapshot_steps(const SnapshotPlan& plan, double steps_per_epoch,
                                    int64_t total_steps) {
    if (steps_per_epoch < 1.0) throw ConfigError("snapshot: steps_per_epoch must be >= 1");
    std::vector<int64_t> steps;
    if (plan.dense_interval > 0 && plan.dense_until_epochs > 0.0) {
        const double limit = plan.dense_until_epochs * steps_per_epoch;
        for (int64_t k = 1; static_cast<double>(k * plan.dense_interval) < limit; ++k) {
            const int64_t s = k * plan.dense_interval;
            if (s > total_steps) break;
            steps.push_back(s);
        }
    }
    if (plan.sparse_interval_epochs > 0.0) {
        for (int64_t m = 1;; ++m) {
            const int64_t s = static_cast<int64_t>(
                std::llround(static_cast<double>(m) * plan.sparse_interval_epochs *
                             steps_per_epoch));
            if (s > total_steps) break;
            if (s >= 1) steps.push_back(s);
        }
    }
    steps.push_back(total_steps);
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    return steps;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string metrics_csv_header() { return "step,epoch,attack,nat_acc,rob_acc,asr,n,seed"; }

std::string metrics_csv_row(const MetricsRecord& rec) {
    char buf[256];
    if (rec.asr.has_value()) {
        std::snprintf(buf, sizeof(buf), "%lld,%.4f,%s,%.6f,%.6f,%.6f,%lld,%llu",
                      static_cast<long long>(rec.step), rec.epoch, rec.attack_id.c_str(),
                      rec.nat_acc, rec.rob_acc, *rec.asr,
                      static_cast<long long>(rec.example_count),
                      static_cast<unsigned long long>(rec.seed));
    } else {
        std::snprintf(buf, sizeof(buf), "%lld,%.4f,%s,%.6f,%.6f,,%lld,%llu",
                      static_cast<long long>(rec.step), rec.epoch, rec.attack_id.c_str(),
                      rec.nat_acc, rec.rob_acc, static_cast<long long>(rec.example_count),
                      static_cast<unsigned long long>(rec.seed));
    }
    return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write metrics csv: " + path);
    out << metrics_csv_header() << "\n";
    for (const auto& rec : log) out << metrics_csv_row(rec) << "\n";
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metrics csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty metrics csv");
    if (line != metrics_csv_header())
        throw FormatError(path + ": unexpected csv header: " + line);

    std::vector<MetricsRecord> log;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (line.back() == ',') fields.push_back("");
        if (fields.size() != 8)
            throw FormatError(path + ": malformed row at line " + std::to_string(lineno));
        try {
            MetricsRecord rec;
            rec.step = std::stoll(fields[0]);
            rec.epoch = std::stod(fields[1]);
            rec.attack_id = fields[2];
            rec.nat_acc = std::stod(fields[3]);
            rec.rob_acc = std::stod(fields[4]);
            if (!fields[5].empty()) rec.asr = std::stod(fields[5]);
            rec.example_count = std::stoll(fields[6]);
            rec.seed = std::stoull(fields[7]);
            log.push_back(std::move(rec));
        } catch (const std::exception&) {
            throw FormatError(path + ": malformed row at line " + std::to_string(lineno));
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

std::vector<int64_t> eval_subset_indices(int64_t pool, int64_t want, uint64_t seed) {
    std::vector<int64_t> all(static_cast<size_t>(pool));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
    if (want >= pool) return all;
    Rng rng(derive_seed(seed, 0xE7A1));
    rng.shuffle(all);
    all.resize(static_cast<size_t>(want));
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

std::vector<MetricsRecord> evaluate_model(const ModelGraph& model,
                                          const DatasetHandle& eval_set, int64_t eval_n,
                                          const std::vector<AttackSpec>& attacks,
                                          int64_t step, double epoch, uint64_t seed) {
    const auto indices = eval_subset_indices(eval_set.size(), eval_n, seed);
    std::vector<int> labels;
    Tensor batch = eval_set.gather(indices, &labels);

    std::vector<MetricsRecord> records;
    for (size_t a = 0; a < attacks.size(); ++a) {
        const uint64_t attack_seed = derive_seed(seed, 0xA77AC + a);
        AttackOutcome outcome = run_attack(model, batch, labels, attacks[a], attack_seed);
        records.push_back(
            compute_metrics(outcome, attacks[a].id, step, epoch, attack_seed));
    }
    return records;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

TrainResult train(ModelGraph& model, BatchStream& stream, const Hyperparams& hyper,
                  const SnapshotPlan& plan, const DatasetHandle& eval_set,
                  const TrainOptions& opts) {
    hyper.validate();
    for (const auto& a : plan.attacks) a.validate();

    const int64_t spe = stream.steps_per_epoch();
    const double spe_exact = static_cast<double>(stream.policy().epoch_length) /
                             static_cast<double>(hyper.batch_size);
    const int64_t total_steps = static_cast<int64_t>(hyper.total_epochs) * spe;
    auto snaps = snapshot_steps(plan, spe_exact, total_steps);

    std::vector<AttackSpec> eval_attacks = plan.attacks;
    if (eval_attacks.empty()) eval_attacks.push_back(attack_preset("none"));

    const uint64_t aug_seed = derive_seed(hyper.seed, 1);
    const uint64_t eval_seed = derive_seed(hyper.seed, 2);

    const AugmentPolicy policy = augment_policy(hyper.augmentation);

    std::ofstream csv;
    if (!opts.metrics_csv.empty()) {
        csv.open(opts.metrics_csv, std::ios::trunc);
        if (!csv) throw FormatError("cannot write metrics csv: " + opts.metrics_csv);
        csv << metrics_csv_header() << "\n" << std::flush;
    }

    // Always have a "last good" checkpoint on disk for the failure contract.
    if (!opts.checkpoint_path.empty()) save_checkpoint(model, opts.checkpoint_path);

    TrainResult result;
    SgdState sgd;
    size_t next_snap = 0;
    int64_t image_counter = 0;
    double front_loss = 0.0, back_loss = 0.0;
    int64_t front_n = 0, back_n = 0;

    for (int64_t step = 1; step <= total_steps; ++step) {
        Batch batch = stream.next();

        // Per-image derived rng: augmentation order-independent and aligned
        // with the image counter, not with thread scheduling.
        for (int64_t i = 0; i < batch.images.dim(0); ++i) {
            Rng rng(derive_seed(aug_seed, static_cast<uint64_t>(image_counter++)));
            Tensor img = batch.images.example(i);
            batch.images.set_example(i, augment(img, policy, rng));
        }

        if (opts.batch_hook) opts.batch_hook(model, batch.images, batch.labels, step);

        const double epoch_f = static_cast<double>(step - 1) / spe_exact;
        const double lr = lr_at(hyper, step - 1, epoch_f);

        Gradients grads;
        const double loss = loss_and_grads(model, batch.images, batch.labels,
                                           GradWant::Params, grads);
        sgd_step(model, grads, sgd, lr, hyper.momentum, hyper.weight_decay);

        if (step <= (spe + 3) / 4) {
            front_loss += loss;
            ++front_n;
        } else if (step > spe - (spe + 3) / 4 && step <= spe) {
            back_loss += loss;
            ++back_n;
        }

        if (next_snap < snaps.size() && step == snaps[next_snap]) {
            ++next_snap;
            const double snap_epoch =
                static_cast<double>(step) * hyper.batch_size /
                static_cast<double>(stream.policy().epoch_length);
            auto records = evaluate_model(model, eval_set, plan.eval_n, eval_attacks, step,
                                          snap_epoch, derive_seed(eval_seed, static_cast<uint64_t>(step)));
            for (auto& rec : records) {
                if (csv.is_open()) csv << metrics_csv_row(rec) << "\n";
                result.final_nat_acc = rec.nat_acc;
                result.log.push_back(std::move(rec));
            }
            if (csv.is_open()) csv << std::flush;
            if (!opts.checkpoint_path.empty()) save_checkpoint(model, opts.checkpoint_path);
        }
        result.steps_run = step;
    }

    result.first_epoch_loss_front = front_n ? front_loss / static_cast<double>(front_n) : 0.0;
    result.first_epoch_loss_back = back_n ? back_loss / static_cast<double>(back_n) : 0.0;
    return result;
}

}  // namespace rlab
