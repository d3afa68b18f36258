#pragma once

// Shared test oracles. Everything here is independent of the library's
// backward pass: gradients come from central finite differences on the
// forward pass, and reference forwards are straight-line loops.

#include <cmath>
#include <string>
#include <vector>

#include "rlab/model.hpp"

namespace rlab::testsupport {

/// Mean cross-entropy via forward only (no gradient machinery).
inline double loss_only(const ModelGraph& m, const Tensor& batch,
                        const std::vector<int>& labels) {
    Tensor logits = forward(m, batch);
    return softmax_cross_entropy(logits, labels, nullptr, nullptr);
}

struct FdReport {
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    std::string worst_at;
    int64_t checked = 0;
};

/// Central-difference check of every parameter and input gradient.
/// Elements with |fd| < abs_floor are compared absolutely (tolerance
/// abs_floor) per the tensor-core invariant; others relatively.
inline bool finite_diff_check(const ModelGraph& model_in, const Tensor& batch,
                              const std::vector<int>& labels, double h, double rtol,
                              double abs_floor, FdReport* report = nullptr) {
    ModelGraph model = model_in;  // local copy; we nudge params in place
    Gradients grads;
    loss_and_grads(model, batch, labels, GradWant::Both, grads);

    FdReport rep;
    bool ok = true;
    auto check_one = [&](double analytic, double* slot, const std::string& where) {
        const double keep = *slot;
        *slot = keep + h;
        const double up = loss_only(model, batch, labels);
        *slot = keep - h;
        const double dn = loss_only(model, batch, labels);
        *slot = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double abs_err = std::fabs(analytic - fd);
        ++rep.checked;
        if (std::fabs(fd) < abs_floor) {
            if (abs_err > rep.worst_abs) {
                rep.worst_abs = abs_err;
                rep.worst_at = where;
            }
            if (abs_err > abs_floor) ok = false;
        } else {
            const double rel = abs_err / std::fabs(fd);
            if (rel > rep.worst_rel) {
                rep.worst_rel = rel;
                rep.worst_at = where;
            }
            if (rel > rtol) ok = false;
        }
    };

    for (auto& [name, p] : model.params) {
        const Tensor& g = grads.params.at(name);
        for (size_t i = 0; i < p.values.size(); ++i)
            check_one(g.values[i], &p.values[i], name + "[" + std::to_string(i) + "]");
    }
    // Input gradient: perturb batch pixels through a mutable copy.
    Tensor nudged = batch;
    auto check_input = [&](size_t i) {
        const double keep = nudged.values[i];
        nudged.values[i] = keep + h;
        const double up = loss_only(model, nudged, labels);
        nudged.values[i] = keep - h;
        const double dn = loss_only(model, nudged, labels);
        nudged.values[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double analytic = grads.input.values[i];
        const double abs_err = std::fabs(analytic - fd);
        ++rep.checked;
        if (std::fabs(fd) < abs_floor) {
            if (abs_err > rep.worst_abs) {
                rep.worst_abs = abs_err;
                rep.worst_at = "input[" + std::to_string(i) + "]";
            }
            if (abs_err > abs_floor) ok = false;
        } else {
            const double rel = abs_err / std::fabs(fd);
            if (rel > rep.worst_rel) {
                rep.worst_rel = rel;
                rep.worst_at = "input[" + std::to_string(i) + "]";
            }
            if (rel > rtol) ok = false;
        }
    };
    for (size_t i = 0; i < batch.values.size(); ++i) check_input(i);

    if (report) *report = rep;
    return ok;
}

/// Random micro-model (< 5k params) cycling through the layer zoo; `pick`
/// selects the template so a sweep covers every backward path.
inline ModelGraph make_micro_model(int pick, uint64_t seed) {
    const int classes = 4;
    ModelGraph m;
    switch (pick % 6) {
        case 0: {  // conv + maxpool + dense
            std::vector<LayerSpec> layers{
                conv2d_layer("c1", 1, 4, 3, 1, 1), relu_layer(), maxpool_layer(2, 2),
                flatten_layer(), dense_layer("head", 4 * 3 * 3, classes)};
            m = build_model({1, 6, 6}, classes, std::move(layers));
            break;
        }
        case 1: {  // strided conv + 1x1 conv + dense
            std::vector<LayerSpec> layers{
                conv2d_layer("c1", 2, 4, 3, 2, 1), relu_layer(),
                conv2d_layer("c2", 4, 6, 1, 1, 0), relu_layer(), flatten_layer(),
                dense_layer("head", 6 * 3 * 3, classes)};
            m = build_model({2, 6, 6}, classes, std::move(layers));
            break;
        }
        case 2: {  // residual block with projection + GAP
            std::vector<LayerSpec> layers{
                conv2d_layer("stem", 1, 4, 3, 1, 1), relu_layer(),
                residual_block_layer("rb", 4, 8, 2), global_avgpool_layer(),
                dense_layer("head", 8, classes)};
            m = build_model({1, 6, 6}, classes, std::move(layers));
            break;
        }
        case 3: {  // p4 lifting conv + group pool
            std::vector<LayerSpec> layers{
                p4conv_layer("lift", 1, 3, 3, 1), relu_layer(), group_pool_layer(4),
                global_avgpool_layer(), dense_layer("head", 3, classes)};
            m = build_model({1, 6, 6}, classes, std::move(layers));
            break;
        }
        case 4: {  // p4m lifting + p4m group conv
            std::vector<LayerSpec> layers{
                p4mconv_layer("lift", 1, 2, 3, 1), relu_layer(),
                p4mconv_layer("g1", 16, 2, 3, 1, 8), relu_layer(), group_pool_layer(8),
                global_avgpool_layer(), dense_layer("head", 2, classes)};
            m = build_model({1, 6, 6}, classes, std::move(layers));
            break;
        }
        default: {  // p4 lift + group residual block + avgpool
            std::vector<LayerSpec> layers{
                p4conv_layer("lift", 1, 2, 3, 1), relu_layer(),
                residual_block_layer("rb", 8, 16, 1, 4), avgpool_layer(2, 2),
                group_pool_layer(4), global_avgpool_layer(),
                dense_layer("head", 4, classes)};
            m = build_model({1, 6, 6}, classes, std::move(layers));
            break;
        }
    }
    init_params(m, seed);
    return m;
}

/// Smallest distance of any activation-pattern decision (relu preactivation,
/// maxpool winner margin) from its switching point. Central differences are a
/// valid oracle only when this margin comfortably exceeds what an h-sized
/// parameter nudge can move a preactivation.
inline double kink_margin(const ModelGraph& m, const Tensor& batch) {
    ForwardTrace trace;
    forward(m, batch, trace);
    double margin = 1e300;
    auto relu_margin = [&](const Tensor& pre) {
        for (double v : pre.values) margin = std::min(margin, std::fabs(v));
    };
    for (size_t li = 0; li < m.layers.size(); ++li) {
        const LayerSpec& s = m.layers[li];
        if (s.kind == LayerKind::Relu) relu_margin(trace.acts[li]);
        if (s.kind == LayerKind::ResidualBlock) relu_margin(trace.aux[li].t1);
        if (s.kind == LayerKind::MaxPool) {
            const Tensor& x = trace.acts[li];
            const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
            const int64_t ho = (h - s.kernel) / s.stride + 1;
            const int64_t wo = (w - s.kernel) / s.stride + 1;
            for (int64_t p = 0; p < n * c; ++p) {
                const double* plane = x.data() + p * h * w;
                for (int64_t oh = 0; oh < ho; ++oh)
                    for (int64_t ow = 0; ow < wo; ++ow) {
                        double top = -1e300, second = -1e300;
                        for (int kh = 0; kh < s.kernel; ++kh)
                            for (int kw = 0; kw < s.kernel; ++kw) {
                                const double v =
                                    plane[(oh * s.stride + kh) * w + ow * s.stride + kw];
                                if (v > top) {
                                    second = top;
                                    top = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        margin = std::min(margin, top - second);
                    }
            }
        }
    }
    return margin;
}

struct FdCase {
    ModelGraph model;
    Tensor batch;
    std::vector<int> labels;
};

/// Deterministic micro-model + batch whose activation pattern is stable
/// under the FD stencil (kink margin filter; never consults gradients).
inline FdCase make_fd_case(int pick, uint64_t base_seed) {
    for (uint64_t trial = 0;; ++trial) {
        const uint64_t seed = base_seed + trial * 101;
        FdCase c;
        c.model = make_micro_model(pick, seed);
        c.batch = Tensor({2, c.model.input_shape[0], c.model.input_shape[1],
                          c.model.input_shape[2]});
        Rng rng(seed ^ 0xabcdef);
        for (auto& v : c.batch.values) v = rng.uniform();
        c.labels.resize(2);
        for (auto& l : c.labels) l = static_cast<int>(rng.uniform_int(c.model.class_count));
        if (kink_margin(c.model, c.batch) > 1.5e-3) return c;
    }
}

inline Tensor random_batch(const ModelGraph& m, int n, uint64_t seed) {
    Rng rng(seed);
    Tensor batch({n, m.input_shape[0], m.input_shape[1], m.input_shape[2]});
    for (auto& v : batch.values) v = rng.uniform();
    return batch;
}

inline std::vector<int> random_labels(int n, int classes, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(classes));
    return labels;
}

/// Straight-line reimplementation of conv3x3(pad 1) + relu + flatten + dense,
/// written with direct nested loops and no layer machinery.
inline std::vector<double> straightline_conv_relu_dense(
    const Tensor& image,  // (C,H,W)
    const Tensor& conv_w, const Tensor& conv_b,  // (F,C,3,3), (F)
    const Tensor& fc_w, const Tensor& fc_b) {    // (K, F*H*W), (K)
    const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const int64_t f = conv_w.dim(0);
    std::vector<double> feat(static_cast<size_t>(f * h * w), 0.0);
    for (int64_t oc = 0; oc < f; ++oc)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = conv_b.values[static_cast<size_t>(oc)];
                for (int64_t ic = 0; ic < c; ++ic)
                    for (int64_t ky = 0; ky < 3; ++ky)
                        for (int64_t kx = 0; kx < 3; ++kx) {
                            const int64_t iy = y + ky - 1;
                            const int64_t ix = x + kx - 1;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += image.at3(ic, iy, ix) * conv_w.at4(oc, ic, ky, kx);
                        }
                if (acc < 0.0) acc = 0.0;  // relu
                feat[static_cast<size_t>((oc * h + y) * w + x)] = acc;
            }
    const int64_t k = fc_w.dim(0);
    std::vector<double> logits(static_cast<size_t>(k), 0.0);
    for (int64_t j = 0; j < k; ++j) {
        double acc = fc_b.values[static_cast<size_t>(j)];
        for (size_t i = 0; i < feat.size(); ++i)
            acc += fc_w.values[static_cast<size_t>(j) * feat.size() + i] * feat[i];
        logits[static_cast<size_t>(j)] = acc;
    }
    return logits;
}

}  // namespace rlab::testsupport
