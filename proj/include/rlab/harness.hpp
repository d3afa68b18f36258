#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rlab/attacks.hpp"
#include "rlab/data.hpp"
#include "rlab/optim.hpp"

namespace rlab {

struct Hyperparams {
    int batch_size = 64;
    double initial_lr = 0.1;
    double weight_decay = 2e-4;
    double momentum = 0.9;
    int total_epochs = 100;
    // Schedule: either iteration milestones (divide lr by 10 at each) or an
    // epoch period (divide by 10 every `epoch_period` epochs). At most one.
    std::vector<int64_t> iteration_milestones;
    int epoch_period = 0;
    std::string augmentation = "std";
    uint64_t seed = 0;

    void validate() const;
};

struct SnapshotPlan {
    int64_t dense_interval = 625;        // steps; dense snapshots before...
    double dense_until_epochs = 4.0;     // ...this epoch, strictly
    double sparse_interval_epochs = 4.0; // then every this many epochs
    std::vector<AttackSpec> attacks;     // evaluated at every snapshot
    int64_t eval_n = 1000;               // seeded eval subset size
};

/// Piecewise-constant decayed learning rate; pure in (hyper, iteration, epoch).
double lr_at(const Hyperparams& hyper, int64_t iteration, double epoch);

/// Snapshot step list: dense multiples of dense_interval strictly before
/// dense_until_epochs, then every sparse_interval_epochs, plus the final
/// step; sorted and deduplicated. steps_per_epoch may be fractional
/// (epoch_length / batch_size).
std::vector<int64_t> snapshot_steps(const SnapshotPlan& plan, double steps_per_epoch,
                                    int64_t total_steps);

/// Replaces a batch in place before the SGD step (adversarial training).
using BatchHook =
    std::function<void(const ModelGraph&, Tensor&, const std::vector<int>&, int64_t step)>;

struct TrainOptions {
    std::string metrics_csv;      // appended after every snapshot (crash-safe)
    std::string checkpoint_path;  // rewritten after every snapshot
    BatchHook batch_hook;
};

struct TrainResult {
    std::vector<MetricsRecord> log;
    double final_nat_acc = 0.0;
    int64_t steps_run = 0;
    double first_epoch_loss_front = 0.0;  // mean train loss, first quarter epoch
    double first_epoch_loss_back = 0.0;   // mean train loss, last quarter of epoch 1
};

/// SGD training with per-image augmentation and interleaved snapshot
/// evaluation. Snapshots never advance the training rng streams, so their
/// presence cannot change the trajectory. Deterministic in (model, stream,
/// hyper, plan, seed, thread count). On a numerical failure the last
/// checkpoint written remains on disk and the error propagates.
TrainResult train(ModelGraph& model, BatchStream& stream, const Hyperparams& hyper,
                  const SnapshotPlan& plan, const DatasetHandle& eval_set,
                  const TrainOptions& opts = {});

/// One-off evaluation of a model against a list of attacks on a seeded
/// subset of `eval_set`; one record per attack.
std::vector<MetricsRecord> evaluate_model(const ModelGraph& model,
                                          const DatasetHandle& eval_set, int64_t eval_n,
                                          const std::vector<AttackSpec>& attacks,
                                          int64_t step, double epoch, uint64_t seed);

// Metrics CSV, schema: step,epoch,attack,nat_acc,rob_acc,asr,n,seed.
// `asr` is written empty when undefined.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& rec);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& log);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

}  // namespace rlab
