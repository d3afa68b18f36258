#pragma once

#include "rlab/harness.hpp"

namespace rlab {

struct RobustifySpec {
    AttackSpec inner_attack;      // PGD kind; drives adversarial training
    int repr_steps = 200;         // representation-matching iterations
    double repr_step_size = 0.1;  // halved on objective increase, per step
    bool eps_free = true;         // no norm constraint during matching
    uint64_t pairing_seed = 0;    // start-image pairing for D_R

    void validate() const;
};

/// Per-example representation distances ||g(x_r) - g(x_target)||_2 over the
/// accepted optimization steps (entry 0 is the starting distance).
struct ReprTrace {
    std::vector<std::vector<double>> distances;
    std::vector<uint8_t> zero_grad_at_start;
};

/// Natural training loop with every batch replaced by its PGD counterpart
/// (generated against the current parameters) before the SGD step. With a
/// zero-budget inner attack this is bit-identical to harness::train under
/// the same seed.
TrainResult adversarial_train(ModelGraph& model, BatchStream& stream,
                              const Hyperparams& hyper, const SnapshotPlan& plan,
                              const DatasetHandle& eval_set, const RobustifySpec& spec,
                              const TrainOptions& opts = {});

/// D_R: for each target (x, y), start from a uniformly chosen different image
/// x' and descend || g(x_r) - g(x) ||^2 on the input (clamped to [0,1] each
/// step, unconstrained in norm). Emits (x_r, y): same size and label multiset
/// as D. g() is the input of f_A's final dense layer.
DatasetHandle construct_robust_dataset(const ModelGraph& f_a, const DatasetHandle& d,
                                       const RobustifySpec& spec, ReprTrace* trace = nullptr);

/// D_NR: targeted PGD toward a seeded y_false != y_true, relabeled to y_false.
/// Unconverted examples (prediction never flipped) are still emitted and
/// flagged; `conversion_rate` reports the flipped fraction.
DatasetHandle construct_nonrobust_dataset(const ModelGraph& f, const DatasetHandle& d,
                                          const AttackSpec& attack, uint64_t seed,
                                          double* conversion_rate = nullptr,
                                          std::vector<uint8_t>* unconverted = nullptr);

}  // namespace rlab
