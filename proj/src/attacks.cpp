#include "rlab/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace rlab {

void AttackSpec::validate() const {
    if (epsilon < 0.0) throw ConfigError("attack " + id + ": epsilon must be >= 0");
    if (kind == AttackKind::PgdL2 || kind == AttackKind::PgdLinf) {
        if (step_size <= 0.0) throw ConfigError("attack " + id + ": step size must be > 0");
        if (iterations < 1) throw ConfigError("attack " + id + ": iterations must be >= 1");
        if (!grid.name.empty())
            throw ConfigError("attack " + id + ": grid only valid for grid attacks");
    }
    if (kind == AttackKind::Grid && grid.name.empty())
        throw ConfigError("attack " + id + ": grid attack requires a grid spec");
}

AttackSpec attack_preset(const std::string& name) {
    AttackSpec s;
    s.id = name;
    auto pgd_l2_spec = [&](double eps) {
        s.kind = AttackKind::PgdL2;
        s.epsilon = eps;
        s.step_size = 0.1;
        s.iterations = 100;
        s.random_start = false;
    };
    auto pgd_linf_spec = [&](double eps255) {
        s.kind = AttackKind::PgdLinf;
        s.epsilon = eps255 / 255.0;
        s.step_size = s.epsilon / 4.0;
        s.iterations = 7;
        s.random_start = true;
    };
    if (name == "none") {
        s.kind = AttackKind::None;
    } else if (name == "l2-0.25") {
        pgd_l2_spec(0.25);
    } else if (name == "l2-0.5") {
        pgd_l2_spec(0.5);
    } else if (name == "linf-1") {
        pgd_linf_spec(1.0);
    } else if (name == "linf-2") {
        pgd_linf_spec(2.0);
    } else if (name == "linf-4") {
        pgd_linf_spec(4.0);
    } else if (name == "linf-8") {
        pgd_linf_spec(8.0);
    } else if (name == "grid775" || name == "grid135" || name == "grid775-10" ||
               name == "rot30" || name == "rot10") {
        s.kind = AttackKind::Grid;
        s.grid = grid_preset(name);
    } else {
        throw ConfigError("unknown attack preset: " + name);
    }
    return s;
}

std::vector<std::string> attack_preset_names() {
    return {"none",   "l2-0.25", "l2-0.5",  "linf-1",     "linf-2", "linf-4",
            "linf-8", "grid775", "grid135", "grid775-10", "rot30",  "rot10"};
}

void project_l2(std::vector<double>& delta, double eps) {
    double sq = 0.0;
    for (double v : delta) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > eps) {
        const double scale = eps / norm;
        for (auto& v : delta) v *= scale;
    }
}

namespace {

std::vector<uint8_t> correct_flags(const ModelGraph& model, const Tensor& batch,
                                   const std::vector<int>& labels) {
    const auto preds = predict(model, batch);
    std::vector<uint8_t> flags(preds.size());
    for (size_t i = 0; i < preds.size(); ++i)
        flags[i] = preds[i] == labels[i] ? 1 : 0;
    return flags;
}

enum class Ball { L2, Linf };

AttackOutcome pgd_core(const ModelGraph& model, const Tensor& batch,
                       const std::vector<int>& labels, const AttackSpec& spec,
                       uint64_t seed, Ball ball) {
    spec.validate();
    const int64_t n = batch.dim(0);
    const int64_t d = batch.numel() / n;
    const double dir = spec.targeted ? -1.0 : 1.0;

    AttackOutcome out;
    out.naturally_correct = correct_flags(model, batch, labels);
    if (spec.record_loss)
        out.loss_trace.assign(static_cast<size_t>(n), {});

    Tensor x = batch;
    if (spec.random_start) {
        for (int64_t i = 0; i < n; ++i) {
            Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
            double* xi = x.data() + i * d;
            const double* x0 = batch.data() + i * d;
            if (ball == Ball::Linf) {
                for (int64_t j = 0; j < d; ++j)
                    xi[j] = clip3(x0[j] + rng.uniform(-spec.epsilon, spec.epsilon), 0.0, 1.0);
            } else {
                std::vector<double> noise(static_cast<size_t>(d));
                double sq = 0.0;
                for (auto& v : noise) {
                    v = rng.normal();
                    sq += v * v;
                }
                const double norm = std::sqrt(sq);
                const double radius = spec.epsilon * rng.uniform();
                if (norm > 0.0)
                    for (int64_t j = 0; j < d; ++j)
                        xi[j] = clip3(x0[j] + radius * noise[static_cast<size_t>(j)] / norm,
                                      0.0, 1.0);
            }
        }
    }

    Tensor grads;
    for (int it = 0; it < spec.iterations; ++it) {
        const auto losses = per_example_ce_input_grad(model, x, labels, grads);
        if (spec.record_loss)
            for (int64_t i = 0; i < n; ++i)
                out.loss_trace[static_cast<size_t>(i)].push_back(losses[static_cast<size_t>(i)]);

        for (int64_t i = 0; i < n; ++i) {
            double* xi = x.data() + i * d;
            const double* x0 = batch.data() + i * d;
            const double* gi = grads.data() + i * d;
            if (ball == Ball::L2) {
                double sq = 0.0;
                for (int64_t j = 0; j < d; ++j) sq += gi[j] * gi[j];
                const double gnorm = std::sqrt(sq);
                if (gnorm == 0.0) {
                    ++out.zero_grad_steps;
                    continue;
                }
                const double scale = dir * spec.step_size / gnorm;
                std::vector<double> delta(static_cast<size_t>(d));
                for (int64_t j = 0; j < d; ++j) delta[static_cast<size_t>(j)] = xi[j] + scale * gi[j] - x0[j];
                project_l2(delta, spec.epsilon);
                for (int64_t j = 0; j < d; ++j)
                    xi[j] = clip3(x0[j] + delta[static_cast<size_t>(j)], 0.0, 1.0);
            } else {
                bool all_zero = true;
                for (int64_t j = 0; j < d; ++j) {
                    const double g = gi[j];
                    if (g == 0.0) continue;
                    all_zero = false;
                    const double sgn = g > 0.0 ? 1.0 : -1.0;
                    double v = xi[j] + dir * spec.step_size * sgn;
                    v = clip3(v, x0[j] - spec.epsilon, x0[j] + spec.epsilon);
                    xi[j] = clip3(v, 0.0, 1.0);
                }
                if (all_zero) ++out.zero_grad_steps;
            }
        }
    }

    if (spec.record_loss) {
        Tensor unused;
        const auto losses = per_example_ce_input_grad(model, x, labels, unused);
        for (int64_t i = 0; i < n; ++i)
            out.loss_trace[static_cast<size_t>(i)].push_back(losses[static_cast<size_t>(i)]);
    }

    out.adversarially_correct = correct_flags(model, x, labels);
    out.adversarial = std::move(x);
    return out;
}

}  // namespace

AttackOutcome pgd_l2(const ModelGraph& model, const Tensor& batch,
                     const std::vector<int>& labels, const AttackSpec& spec, uint64_t seed) {
    if (spec.kind != AttackKind::PgdL2) throw ConfigError("pgd_l2: wrong attack kind");
    return pgd_core(model, batch, labels, spec, seed, Ball::L2);
}

AttackOutcome pgd_linf(const ModelGraph& model, const Tensor& batch,
                       const std::vector<int>& labels, const AttackSpec& spec, uint64_t seed) {
    if (spec.kind != AttackKind::PgdLinf) throw ConfigError("pgd_linf: wrong attack kind");
    return pgd_core(model, batch, labels, spec, seed, Ball::Linf);
}

AttackOutcome grid_attack_poses(const ModelGraph& model, const Tensor& batch,
                                const std::vector<int>& labels,
                                const std::vector<Pose>& poses, bool exhaustive) {
    const int64_t n = batch.dim(0);
    constexpr int64_t kChunk = 64;

    AttackOutcome out;
    out.naturally_correct = correct_flags(model, batch, labels);
    out.adversarially_correct.assign(static_cast<size_t>(n), 1);
    out.worst_pose.assign(static_cast<size_t>(n), Pose{});
    out.adversarial = batch;

    std::vector<int64_t> evals(static_cast<size_t>(n), 0);

#pragma omp parallel for schedule(dynamic, 1) num_threads(thread_count())
    for (int64_t i = 0; i < n; ++i) {
        const Tensor img = batch.example(i);
        const int label = labels[static_cast<size_t>(i)];
        bool all_correct = true;
        bool found_worst = false;

        for (int64_t base = 0; base < static_cast<int64_t>(poses.size()); base += kChunk) {
            const int64_t m = std::min<int64_t>(kChunk, static_cast<int64_t>(poses.size()) - base);
            Tensor chunk({m, img.dim(0), img.dim(1), img.dim(2)});
            for (int64_t j = 0; j < m; ++j)
                chunk.set_example(j, warp(img, poses[static_cast<size_t>(base + j)]));
            const auto preds = predict(model, chunk);
            evals[static_cast<size_t>(i)] += m;
            for (int64_t j = 0; j < m; ++j) {
                if (preds[static_cast<size_t>(j)] != label) {
                    all_correct = false;
                    if (!found_worst) {
                        found_worst = true;
                        out.worst_pose[static_cast<size_t>(i)] = poses[static_cast<size_t>(base + j)];
                    }
                    break;
                }
            }
            if (!all_correct && !exhaustive) break;
            if (!all_correct && exhaustive && found_worst) {
                // keep scanning remaining chunks for the eval count only when
                // exhaustive statistics were requested
                continue;
            }
        }
        out.adversarially_correct[static_cast<size_t>(i)] = all_correct ? 1 : 0;
        if (found_worst)
            out.adversarial.set_example(i, warp(img, out.worst_pose[static_cast<size_t>(i)]));
    }

    for (int64_t e : evals) out.poses_evaluated += e;
    return out;
}

AttackOutcome grid_attack(const ModelGraph& model, const Tensor& batch,
                          const std::vector<int>& labels, const AttackSpec& spec) {
    if (spec.kind != AttackKind::Grid) throw ConfigError("grid_attack: wrong attack kind");
    spec.validate();
    return grid_attack_poses(model, batch, labels, make_grid(spec.grid), spec.exhaustive);
}

AttackOutcome run_attack(const ModelGraph& model, const Tensor& batch,
                         const std::vector<int>& labels, const AttackSpec& spec,
                         uint64_t seed) {
    switch (spec.kind) {
        case AttackKind::None: {
            AttackOutcome out;
            out.naturally_correct = correct_flags(model, batch, labels);
            out.adversarially_correct = out.naturally_correct;
            out.adversarial = batch;
            return out;
        }
        case AttackKind::PgdL2:
            return pgd_l2(model, batch, labels, spec, seed);
        case AttackKind::PgdLinf:
            return pgd_linf(model, batch, labels, spec, seed);
        case AttackKind::Grid:
            return grid_attack(model, batch, labels, spec);
    }
    throw ConfigError("run_attack: unknown attack kind");
}

MetricsRecord compute_metrics(const AttackOutcome& outcome, const std::string& attack_id,
                              int64_t step, double epoch, uint64_t seed) {
    const size_t n = outcome.naturally_correct.size();
    if (n == 0 || outcome.adversarially_correct.size() != n)
        throw ShapeError("compute_metrics: flag arrays missing or mismatched");

    int64_t nat = 0, rob = 0, fooled = 0;
    for (size_t i = 0; i < n; ++i) {
        nat += outcome.naturally_correct[i];
        rob += outcome.adversarially_correct[i];
        fooled += outcome.naturally_correct[i] && !outcome.adversarially_correct[i];
    }

    MetricsRecord rec;
    rec.step = step;
    rec.epoch = epoch;
    rec.attack_id = attack_id;
    rec.example_count = static_cast<int64_t>(n);
    rec.seed = seed;
    rec.nat_acc = static_cast<double>(nat) / static_cast<double>(n);
    rec.rob_acc = static_cast<double>(rob) / static_cast<double>(n);
    if (nat > 0)
        rec.asr = static_cast<double>(fooled) / static_cast<double>(nat);
    return rec;
}

}  // namespace rlab
