#include "rlab/robustify.hpp"

#include <algorithm>
#include <cmath>

namespace rlab {

void RobustifySpec::validate() const {
    if (inner_attack.kind != AttackKind::PgdL2 && inner_attack.kind != AttackKind::PgdLinf)
        throw ConfigError("robustify: inner attack must be a PGD kind");
    inner_attack.validate();
    if (repr_steps < 1) throw ConfigError("robustify: repr_steps must be >= 1");
    if (repr_step_size <= 0.0) throw ConfigError("robustify: repr_step_size must be > 0");
}

TrainResult adversarial_train(ModelGraph& model, BatchStream& stream,
                              const Hyperparams& hyper, const SnapshotPlan& plan,
                              const DatasetHandle& eval_set, const RobustifySpec& spec,
                              const TrainOptions& opts) {
    spec.validate();
    const uint64_t attack_seed = derive_seed(hyper.seed, 0xADF0);

    TrainOptions hooked = opts;
    hooked.batch_hook = [&spec, attack_seed](const ModelGraph& m, Tensor& images,
                                             const std::vector<int>& labels, int64_t step) {
        AttackOutcome out = run_attack(m, images, labels, spec.inner_attack,
                                       derive_seed(attack_seed, static_cast<uint64_t>(step)));
        images = std::move(out.adversarial);
    };
    return train(model, stream, hyper, plan, eval_set, hooked);
}

// ---------------------------------------------------------------------------
// D_R: representation matching
// ---------------------------------------------------------------------------

namespace {

inline void clamp01_all(Tensor& t) {
    for (auto& v : t.values) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

}  // namespace

DatasetHandle construct_robust_dataset(const ModelGraph& f_a, const DatasetHandle& d,
                                       const RobustifySpec& spec, ReprTrace* trace) {
    spec.validate();
    const int64_t n = d.size();
    if (n < 2) throw ConfigError("robust dataset: need at least two source images");

    // Target representations, batched.
    const int64_t repr_dim = [&] {
        Tensor probe = representation(f_a, d.gather({0}, nullptr));
        return probe.dim(1);
    }();
    Tensor targets({n, repr_dim});
    constexpr int64_t kChunk = 64;
    for (int64_t base = 0; base < n; base += kChunk) {
        std::vector<int64_t> idx;
        for (int64_t i = base; i < std::min(n, base + kChunk); ++i) idx.push_back(i);
        Tensor reprs = representation(f_a, d.gather(idx, nullptr));
        std::copy_n(reprs.values.begin(), reprs.numel(),
                    targets.values.begin() + base * repr_dim);
    }

    DatasetHandle out;
    out.image_shape = d.image_shape;
    out.class_count = d.class_count;
    out.role = DatasetRole::Robust;
    out.labels.assign(d.labels.begin(), d.labels.end());
    out.pixels.assign(d.pixels.size(), 0.0f);

    if (trace) {
        trace->distances.assign(static_cast<size_t>(n), {});
        trace->zero_grad_at_start.assign(static_cast<size_t>(n), 0);
    }
    const int64_t img_d = d.pixels_per_image();

#pragma omp parallel for schedule(dynamic, 1) num_threads(thread_count())
    for (int64_t i = 0; i < n; ++i) {
        // Uniformly chosen start image different from the target.
        Rng rng(derive_seed(spec.pairing_seed, static_cast<uint64_t>(i)));
        int64_t j = rng.uniform_int(n - 1);
        if (j >= i) ++j;

        Tensor target({1, repr_dim});
        std::copy_n(targets.values.begin() + i * repr_dim, repr_dim, target.values.begin());

        Tensor x = d.gather({j}, nullptr);  // (1,C,H,W)
        Tensor grad;
        double dist_sq = repr_match_loss_input_grad(f_a, x, target, grad);
        std::vector<double> dists{std::sqrt(dist_sq)};

        double gnorm = 0.0;
        for (double g : grad.values) gnorm += g * g;
        if (gnorm == 0.0) {
            if (trace) trace->zero_grad_at_start[static_cast<size_t>(i)] = 1;
        } else {
            for (int step = 0; step < spec.repr_steps; ++step) {
                // Try the base step, halving until the objective stops
                // increasing; the accepted evaluation also provides the next
                // gradient.
                double lr = spec.repr_step_size;
                bool accepted = false;
                for (int half = 0; half < 24; ++half) {
                    Tensor cand = x;
                    for (size_t k = 0; k < cand.values.size(); ++k)
                        cand.values[k] -= lr * grad.values[k];
                    clamp01_all(cand);
                    Tensor cand_grad;
                    const double cand_sq =
                        repr_match_loss_input_grad(f_a, cand, target, cand_grad);
                    if (cand_sq <= dist_sq) {
                        x = std::move(cand);
                        grad = std::move(cand_grad);
                        dist_sq = cand_sq;
                        accepted = true;
                        break;
                    }
                    lr *= 0.5;
                }
                if (!accepted) break;  // no descent direction left at this scale
                dists.push_back(std::sqrt(dist_sq));
            }
        }

        float* dst = out.pixels.data() + i * img_d;
        for (int64_t k = 0; k < img_d; ++k)
            dst[k] = static_cast<float>(x.values[static_cast<size_t>(k)]);
        if (trace) trace->distances[static_cast<size_t>(i)] = std::move(dists);
    }
    return out;
}

// ---------------------------------------------------------------------------
// D_NR: relabeled targeted adversarial examples
// ---------------------------------------------------------------------------

DatasetHandle construct_nonrobust_dataset(const ModelGraph& f, const DatasetHandle& d,
                                          const AttackSpec& attack, uint64_t seed,
                                          double* conversion_rate,
                                          std::vector<uint8_t>* unconverted) {
    if (attack.kind != AttackKind::PgdL2 && attack.kind != AttackKind::PgdLinf)
        throw ConfigError("nonrobust dataset: attack must be a PGD kind");
    attack.validate();
    AttackSpec targeted = attack;
    targeted.targeted = true;

    const int64_t n = d.size();
    DatasetHandle out;
    out.image_shape = d.image_shape;
    out.class_count = d.class_count;
    out.role = DatasetRole::NonRobust;
    out.pixels.assign(d.pixels.size(), 0.0f);
    out.labels.assign(static_cast<size_t>(n), 0);

    // Deterministic-from-seed targets, y_false != y_true.
    std::vector<int> targets_v(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
        int y_false = static_cast<int>(rng.uniform_int(d.class_count - 1));
        if (y_false >= d.label(i)) ++y_false;
        targets_v[static_cast<size_t>(i)] = y_false;
        out.labels[static_cast<size_t>(i)] = static_cast<uint16_t>(y_false);
    }

    if (unconverted) unconverted->assign(static_cast<size_t>(n), 0);
    int64_t converted = 0;
    const int64_t img_d = d.pixels_per_image();
    constexpr int64_t kChunk = 64;

    for (int64_t base = 0; base < n; base += kChunk) {
        std::vector<int64_t> idx;
        std::vector<int> chunk_targets;
        for (int64_t i = base; i < std::min(n, base + kChunk); ++i) {
            idx.push_back(i);
            chunk_targets.push_back(targets_v[static_cast<size_t>(i)]);
        }
        Tensor batch = d.gather(idx, nullptr);
        AttackOutcome res = run_attack(f, batch, chunk_targets, targeted,
                                       derive_seed(seed, 0xD0E5 + static_cast<uint64_t>(base)));
        // adversarially_correct against the targets == prediction reached y_false
        for (size_t k = 0; k < idx.size(); ++k) {
            const int64_t i = idx[k];
            const double* src = res.adversarial.data() + static_cast<int64_t>(k) * img_d;
            float* dst = out.pixels.data() + i * img_d;
            for (int64_t p = 0; p < img_d; ++p) dst[p] = static_cast<float>(src[p]);
            if (res.adversarially_correct[k]) {
                ++converted;
            } else if (unconverted) {
                (*unconverted)[static_cast<size_t>(i)] = 1;
            }
        }
    }
    if (conversion_rate)
        *conversion_rate = static_cast<double>(converted) / static_cast<double>(n);
    return out;
}

}  // namespace rlab
