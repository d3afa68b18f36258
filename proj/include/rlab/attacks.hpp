#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rlab/model.hpp"
#include "rlab/transforms.hpp"

namespace rlab {

enum class AttackKind { None, PgdL2, PgdLinf, Grid };

/// Declarative attack description. Presets (attack_preset) carry the paper
/// parameters; custom instances are validated the same way.
struct AttackSpec {
    std::string id = "none";
    AttackKind kind = AttackKind::None;
    double epsilon = 0.0;    // l2 radius on the flattened pixel vector, or
                             // linf radius in pixel units
    double step_size = 0.0;  // > 0 for PGD kinds
    int iterations = 0;
    bool random_start = false;
    bool targeted = false;   // PGD descends toward `labels` instead of away
    GridSpec grid;           // kind == Grid only
    bool exhaustive = false; // grid: evaluate every pose (per-pose statistics)
    bool record_loss = false;

    void validate() const;
};

/// Named presets: none, l2-0.25, l2-0.5, linf-1, linf-2, linf-4, linf-8,
/// grid775, grid135, grid775-10, rot30, rot10.
AttackSpec attack_preset(const std::string& name);
std::vector<std::string> attack_preset_names();

struct AttackOutcome {
    Tensor adversarial;  // same shape as the input batch, pixels in [0,1]
    std::vector<Pose> worst_pose;  // grid attacks only
    std::vector<uint8_t> naturally_correct;
    std::vector<uint8_t> adversarially_correct;
    int64_t zero_grad_steps = 0;   // PGD steps skipped for vanishing gradients
    int64_t poses_evaluated = 0;   // grid: total model evaluations
    std::vector<std::vector<double>> loss_trace;  // record_loss: per example,
                                                  // losses at x0..x_T
};

/// One snapshot row. `asr` is absent when no example is naturally correct.
struct MetricsRecord {
    int64_t step = 0;
    double epoch = 0.0;
    std::string attack_id;
    double nat_acc = 0.0;
    double rob_acc = 0.0;
    std::optional<double> asr;
    int64_t example_count = 0;
    uint64_t seed = 0;
};

// Exposed projection primitives (unit-testable).
void project_l2(std::vector<double>& delta, double eps);
inline double clip3(double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

/// Untargeted (or targeted, per spec) PGD under the l2 ball:
///   x <- clamp01( project_l2(x + step * g/||g||2) ), per example.
/// Examples with a vanishing gradient skip the step (counted).
AttackOutcome pgd_l2(const ModelGraph& model, const Tensor& batch,
                     const std::vector<int>& labels, const AttackSpec& spec, uint64_t seed);

/// PGD under the linf box: x <- clamp01( clip_{x0 +- eps}(x + step*sign(g)) ).
AttackOutcome pgd_linf(const ModelGraph& model, const Tensor& batch,
                       const std::vector<int>& labels, const AttackSpec& spec, uint64_t seed);

/// Exhaustive pose search. Adversarially correct iff every pose is classified
/// correctly; worst pose is the first misclassifying pose in grid order, else
/// identity. Short-circuits per example unless `exhaustive`.
AttackOutcome grid_attack(const ModelGraph& model, const Tensor& batch,
                          const std::vector<int>& labels, const AttackSpec& spec);

/// Grid attack over an explicit pose list (subset-dominance tests and custom
/// meshes).
AttackOutcome grid_attack_poses(const ModelGraph& model, const Tensor& batch,
                                const std::vector<int>& labels,
                                const std::vector<Pose>& poses, bool exhaustive);

/// Dispatch on spec.kind. `seed` feeds PGD random starts only.
AttackOutcome run_attack(const ModelGraph& model, const Tensor& batch,
                         const std::vector<int>& labels, const AttackSpec& spec,
                         uint64_t seed);

/// nat = mean(naturally-correct); rob = mean(adversarially-correct);
/// ASR = |nat and not adv| / |nat|, absent on a zero denominator.
MetricsRecord compute_metrics(const AttackOutcome& outcome, const std::string& attack_id,
                              int64_t step, double epoch, uint64_t seed);

}  // namespace rlab
