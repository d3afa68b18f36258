#include "rlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace rlab {

namespace {

// Parameter shapes per layer, in fixed declaration order.
struct ParamDecl {
    std::string name;
    std::vector<int64_t> shape;
    bool is_weight;  // weights get Kaiming init, biases zero
    int64_t fan_in;
};

std::vector<ParamDecl> layer_params(const LayerSpec& s) {
    std::vector<ParamDecl> out;
    auto conv_decl = [&](const std::string& prefix, int64_t cout, int64_t cin, int64_t k) {
        out.push_back({prefix + ".w", {cout, cin, k, k}, true, cin * k * k});
        out.push_back({prefix + ".b", {cout}, false, 0});
    };
    switch (s.kind) {
        case LayerKind::Dense:
            out.push_back({s.name + ".w",
                           {s.out_features, s.in_features},
                           true,
                           s.in_features});
            out.push_back({s.name + ".b", {s.out_features}, false, 0});
            break;
        case LayerKind::Conv2d:
            conv_decl(s.name, s.out_channels, s.in_channels, s.kernel);
            break;
        case LayerKind::P4Conv:
        case LayerKind::P4MConv:
            // Base filters; group copies are generated, not stored.
            conv_decl(s.name, s.out_channels, s.in_channels, s.kernel);
            break;
        case LayerKind::ResidualBlock: {
            // Group blocks store base filters; plain blocks store full ones.
            const int64_t ob = (s.block_group > 1) ? s.out_channels / s.block_group
                                                   : s.out_channels;
            conv_decl(s.name + ".c1", ob, s.in_channels, 3);
            conv_decl(s.name + ".c2", ob, s.out_channels, 3);
            if (s.projection) conv_decl(s.name + ".sc", ob, s.in_channels, 1);
            break;
        }
        default:
            break;
    }
    return out;
}

void check_group_block(const LayerSpec& s) {
    if (s.kind == LayerKind::ResidualBlock && s.block_group > 1) {
        if (s.in_channels % s.block_group || s.out_channels % s.block_group)
            throw ShapeError("residual-block: channels not divisible by group size");
    }
}

Tensor expanded_bias(const Tensor& base, int group) {
    const int64_t cb = base.dim(0);
    Tensor out({cb * group});
    for (int64_t i = 0; i < cb; ++i)
        for (int g = 0; g < group; ++g)
            out.values[static_cast<size_t>(i * group + g)] = base.values[static_cast<size_t>(i)];
    return out;
}

void reduce_bias_grad(const Tensor& db_exp, int group, Tensor& db_base) {
    const int64_t cb = db_base.dim(0);
    for (int64_t i = 0; i < cb; ++i) {
        double s = 0.0;
        for (int g = 0; g < group; ++g)
            s += db_exp.values[static_cast<size_t>(i * group + g)];
        db_base.values[static_cast<size_t>(i)] += s;
    }
}

// Group-conv helper shared by p4 layers and group residual blocks.
void group_conv_forward(const Tensor& x, const Tensor& w_base, const Tensor& b_base,
                        int group, int group_in, int stride, int padding, Tensor& y) {
    Tensor w_exp;
    expand_group_filters(w_base, group, group_in, w_exp);
    Tensor b_exp = expanded_bias(b_base, group);
    conv2d_forward(x, w_exp, b_exp, stride, padding, y);
}

void group_conv_backward(const Tensor& x, const Tensor& w_base, int group, int group_in,
                         int stride, int padding, const Tensor& dy, Tensor* dx,
                         Tensor* dw_base, Tensor* db_base) {
    Tensor w_exp;
    expand_group_filters(w_base, group, group_in, w_exp);
    Tensor dw_exp, db_exp;
    if (dw_base) dw_exp = Tensor(w_exp.shape);
    if (db_base) db_exp = Tensor({w_exp.dim(0)});
    conv2d_backward(x, w_exp, stride, padding, dy, dx, dw_base ? &dw_exp : nullptr,
                    db_base ? &db_exp : nullptr);
    if (dw_base) reduce_group_filter_grads(dw_exp, group, group_in, *dw_base);
    if (db_base) reduce_bias_grad(db_exp, group, *db_base);
}

}  // namespace

std::vector<std::vector<int64_t>> ModelGraph::shape_chain() const {
    std::vector<std::vector<int64_t>> chain;
    chain.push_back(input_shape);
    for (size_t i = 0; i < layers.size(); ++i)
        chain.push_back(layer_output_shape(layers[i], chain.back(), static_cast<int>(i)));
    return chain;
}

ModelGraph build_model(std::vector<int64_t> input_shape, int class_count,
                       std::vector<LayerSpec> layers) {
    ModelGraph m;
    m.input_shape = std::move(input_shape);
    m.class_count = class_count;
    m.layers = std::move(layers);

    auto chain = m.shape_chain();  // validates
    const auto& out = chain.back();
    if (out.size() != 1 || out[0] != class_count)
        throw ShapeError("model output length " +
                         (out.size() == 1 ? std::to_string(out[0]) : std::string("(non-flat)")) +
                         " does not equal class count " + std::to_string(class_count));

    for (const auto& spec : m.layers) {
        spec.validate();
        check_group_block(spec);
        for (const auto& decl : layer_params(spec)) {
            if (m.params.count(decl.name))
                throw ShapeError("duplicate parameter name: " + decl.name);
            m.params.emplace(decl.name, Tensor(decl.shape));
        }
    }
    return m;
}

void init_params(ModelGraph& model, uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1217));
    // Deterministic order: layer order, then declaration order within a layer.
    for (const auto& spec : model.layers) {
        for (const auto& decl : layer_params(spec)) {
            Tensor& p = model.params.at(decl.name);
            if (decl.is_weight) {
                const double bound = std::sqrt(6.0 / static_cast<double>(decl.fan_in));
                for (auto& v : p.values) v = rng.uniform(-bound, bound);
            } else {
                std::fill(p.values.begin(), p.values.end(), 0.0);
            }
        }
    }
}

ModelGraph make_micro_resnet(std::vector<int64_t> input_shape, int class_count, int width) {
    const int w1 = width, w2 = 2 * width, w3 = 4 * width;
    const int cin = static_cast<int>(input_shape[0]);
    std::vector<LayerSpec> layers;
    layers.push_back(conv2d_layer("stem", cin, w1, 3, 1, 1));
    layers.push_back(relu_layer());
    layers.push_back(residual_block_layer("s1b1", w1, w1, 1));
    layers.push_back(residual_block_layer("s1b2", w1, w1, 1));
    layers.push_back(residual_block_layer("s2b1", w1, w2, 2));
    layers.push_back(residual_block_layer("s2b2", w2, w2, 1));
    layers.push_back(residual_block_layer("s3b1", w2, w3, 2));
    layers.push_back(residual_block_layer("s3b2", w3, w3, 1));
    layers.push_back(global_avgpool_layer());
    layers.push_back(dense_layer("head", w3, class_count));
    return build_model(std::move(input_shape), class_count, std::move(layers));
}

ModelGraph make_micro_p4_resnet(std::vector<int64_t> input_shape, int class_count,
                                int base_width) {
    // Stride-1 group convolutions with 2x2 average pooling between stages keep
    // the whole stack exactly equivariant to 90-degree rotations.
    const int b1 = base_width, b2 = 2 * base_width, b3 = 4 * base_width;
    const int cin = static_cast<int>(input_shape[0]);
    std::vector<LayerSpec> layers;
    layers.push_back(p4conv_layer("stem", cin, b1, 3, 1, 1));
    layers.push_back(relu_layer());
    layers.push_back(residual_block_layer("s1b1", b1 * 4, b1 * 4, 1, 4));
    layers.push_back(residual_block_layer("s1b2", b1 * 4, b1 * 4, 1, 4));
    layers.push_back(avgpool_layer(2, 2));
    layers.push_back(residual_block_layer("s2b1", b1 * 4, b2 * 4, 1, 4));
    layers.push_back(residual_block_layer("s2b2", b2 * 4, b2 * 4, 1, 4));
    layers.push_back(avgpool_layer(2, 2));
    layers.push_back(residual_block_layer("s3b1", b2 * 4, b3 * 4, 1, 4));
    layers.push_back(residual_block_layer("s3b2", b3 * 4, b3 * 4, 1, 4));
    layers.push_back(group_pool_layer(4));
    layers.push_back(global_avgpool_layer());
    layers.push_back(dense_layer("head", b3, class_count));
    return build_model(std::move(input_shape), class_count, std::move(layers));
}

ModelGraph make_tiny_conv(std::vector<int64_t> input_shape, int class_count) {
    const int cin = static_cast<int>(input_shape[0]);
    std::vector<LayerSpec> layers;
    layers.push_back(conv2d_layer("c1", cin, 8, 3, 1, 1));
    layers.push_back(relu_layer());
    layers.push_back(maxpool_layer(2, 2));
    layers.push_back(conv2d_layer("c2", 8, 16, 3, 1, 1));
    layers.push_back(relu_layer());
    layers.push_back(global_avgpool_layer());
    layers.push_back(dense_layer("head", 16, class_count));
    return build_model(std::move(input_shape), class_count, std::move(layers));
}

ModelGraph make_model(const std::string& arch, std::vector<int64_t> input_shape,
                      int class_count, uint64_t seed) {
    ModelGraph m;
    if (arch == "micro") {
        m = make_micro_resnet(std::move(input_shape), class_count, 16);
    } else if (arch == "micro-w8") {
        m = make_micro_resnet(std::move(input_shape), class_count, 8);
    } else if (arch == "micro-p4") {
        m = make_micro_p4_resnet(std::move(input_shape), class_count, 8);
    } else if (arch == "tiny") {
        m = make_tiny_conv(std::move(input_shape), class_count);
    } else if (arch == "linear") {
        int64_t f = 1;
        for (int64_t e : input_shape) f *= e;
        std::vector<LayerSpec> layers{flatten_layer(),
                                      dense_layer("head", static_cast<int>(f), class_count)};
        m = build_model(std::move(input_shape), class_count, std::move(layers));
    } else {
        throw ConfigError("unknown architecture: " + arch);
    }
    init_params(m, seed);
    return m;
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

namespace {

void layer_forward(const ModelGraph& m, size_t li, const Tensor& x, Tensor& y, LayerAux& aux) {
    const LayerSpec& s = m.layers[li];
    switch (s.kind) {
        case LayerKind::Dense:
            dense_forward(x, m.params.at(s.name + ".w"), m.params.at(s.name + ".b"), y);
            break;
        case LayerKind::Conv2d:
            conv2d_forward(x, m.params.at(s.name + ".w"), m.params.at(s.name + ".b"),
                           s.stride, s.padding, y);
            break;
        case LayerKind::P4Conv:
        case LayerKind::P4MConv:
            group_conv_forward(x, m.params.at(s.name + ".w"), m.params.at(s.name + ".b"),
                               s.group_out, s.group_in, s.stride, s.padding, y);
            break;
        case LayerKind::Relu:
            relu_forward(x, y);
            break;
        case LayerKind::MaxPool:
            maxpool_forward(x, s.kernel, s.stride, y, aux.argmax);
            break;
        case LayerKind::AvgPool:
            avgpool_forward(x, s.kernel, s.stride, y);
            break;
        case LayerKind::GlobalAvgPool:
            global_avgpool_forward(x, y);
            break;
        case LayerKind::GroupPool:
            group_pool_forward(x, s.group_in, y);
            break;
        case LayerKind::Flatten: {
            y = x;
            y.shape = {x.dim(0), x.numel() / x.dim(0)};
            break;
        }
        case LayerKind::ResidualBlock: {
            const int g = s.block_group;
            if (g > 1) {
                group_conv_forward(x, m.params.at(s.name + ".c1.w"),
                                   m.params.at(s.name + ".c1.b"), g, g, s.stride, 1, aux.t1);
            } else {
                conv2d_forward(x, m.params.at(s.name + ".c1.w"), m.params.at(s.name + ".c1.b"),
                               s.stride, 1, aux.t1);
            }
            relu_forward(aux.t1, aux.r1);
            if (g > 1) {
                group_conv_forward(aux.r1, m.params.at(s.name + ".c2.w"),
                                   m.params.at(s.name + ".c2.b"), g, g, 1, 1, y);
            } else {
                conv2d_forward(aux.r1, m.params.at(s.name + ".c2.w"),
                               m.params.at(s.name + ".c2.b"), 1, 1, y);
            }
            if (s.projection) {
                Tensor skip;
                if (g > 1) {
                    group_conv_forward(x, m.params.at(s.name + ".sc.w"),
                                       m.params.at(s.name + ".sc.b"), g, g, s.stride, 0, skip);
                } else {
                    conv2d_forward(x, m.params.at(s.name + ".sc.w"),
                                   m.params.at(s.name + ".sc.b"), s.stride, 0, skip);
                }
                for (size_t i = 0; i < y.values.size(); ++i) y.values[i] += skip.values[i];
            } else {
                for (size_t i = 0; i < y.values.size(); ++i) y.values[i] += x.values[i];
            }
            break;
        }
    }
}

Tensor* grad_for(Gradients& out, const std::string& name) {
    auto it = out.params.find(name);
    return it == out.params.end() ? nullptr : &it->second;
}

// dtop is the gradient w.r.t. the output of layer `from`; propagates down to
// the input, filling parameter grads when requested.
void backward_from(const ModelGraph& m, const ForwardTrace& trace, Tensor dtop,
                   size_t from, bool want_params, bool want_input, Gradients& out) {
    Tensor dcur = std::move(dtop);
    for (size_t li = from + 1; li-- > 0;) {
        const LayerSpec& s = m.layers[li];
        const Tensor& x = trace.acts[li];
        const LayerAux& aux = trace.aux[li];
        const bool need_dx = want_input || li > 0;
        Tensor dx;
        switch (s.kind) {
            case LayerKind::Dense:
                dense_backward(x, m.params.at(s.name + ".w"), dcur,
                               need_dx ? &dx : nullptr,
                               want_params ? grad_for(out, s.name + ".w") : nullptr,
                               want_params ? grad_for(out, s.name + ".b") : nullptr);
                break;
            case LayerKind::Conv2d:
                conv2d_backward(x, m.params.at(s.name + ".w"), s.stride, s.padding, dcur,
                                need_dx ? &dx : nullptr,
                                want_params ? grad_for(out, s.name + ".w") : nullptr,
                                want_params ? grad_for(out, s.name + ".b") : nullptr);
                break;
            case LayerKind::P4Conv:
            case LayerKind::P4MConv:
                group_conv_backward(x, m.params.at(s.name + ".w"), s.group_out, s.group_in,
                                    s.stride, s.padding, dcur, need_dx ? &dx : nullptr,
                                    want_params ? grad_for(out, s.name + ".w") : nullptr,
                                    want_params ? grad_for(out, s.name + ".b") : nullptr);
                break;
            case LayerKind::Relu:
                relu_backward(x, dcur, dx);
                break;
            case LayerKind::MaxPool:
                maxpool_backward(x, s.kernel, s.stride, dcur, aux.argmax, dx);
                break;
            case LayerKind::AvgPool:
                avgpool_backward(x, s.kernel, s.stride, dcur, dx);
                break;
            case LayerKind::GlobalAvgPool:
                global_avgpool_backward(x, dcur, dx);
                break;
            case LayerKind::GroupPool:
                group_pool_backward(x, s.group_in, dcur, dx);
                break;
            case LayerKind::Flatten:
                dx = dcur;
                dx.shape = x.shape;
                break;
            case LayerKind::ResidualBlock: {
                const int g = s.block_group;
                Tensor dr1, dt1, dx1;
                if (g > 1) {
                    group_conv_backward(aux.r1, m.params.at(s.name + ".c2.w"), g, g, 1, 1,
                                        dcur, &dr1,
                                        want_params ? grad_for(out, s.name + ".c2.w") : nullptr,
                                        want_params ? grad_for(out, s.name + ".c2.b") : nullptr);
                } else {
                    conv2d_backward(aux.r1, m.params.at(s.name + ".c2.w"), 1, 1, dcur, &dr1,
                                    want_params ? grad_for(out, s.name + ".c2.w") : nullptr,
                                    want_params ? grad_for(out, s.name + ".c2.b") : nullptr);
                }
                relu_backward(aux.t1, dr1, dt1);
                if (g > 1) {
                    group_conv_backward(x, m.params.at(s.name + ".c1.w"), g, g, s.stride, 1,
                                        dt1, need_dx ? &dx1 : nullptr,
                                        want_params ? grad_for(out, s.name + ".c1.w") : nullptr,
                                        want_params ? grad_for(out, s.name + ".c1.b") : nullptr);
                } else {
                    conv2d_backward(x, m.params.at(s.name + ".c1.w"), s.stride, 1, dt1,
                                    need_dx ? &dx1 : nullptr,
                                    want_params ? grad_for(out, s.name + ".c1.w") : nullptr,
                                    want_params ? grad_for(out, s.name + ".c1.b") : nullptr);
                }
                if (s.projection) {
                    Tensor dxp;
                    if (g > 1) {
                        group_conv_backward(x, m.params.at(s.name + ".sc.w"), g, g, s.stride, 0,
                                            dcur, need_dx ? &dxp : nullptr,
                                            want_params ? grad_for(out, s.name + ".sc.w") : nullptr,
                                            want_params ? grad_for(out, s.name + ".sc.b") : nullptr);
                    } else {
                        conv2d_backward(x, m.params.at(s.name + ".sc.w"), s.stride, 0, dcur,
                                        need_dx ? &dxp : nullptr,
                                        want_params ? grad_for(out, s.name + ".sc.w") : nullptr,
                                        want_params ? grad_for(out, s.name + ".sc.b") : nullptr);
                    }
                    if (need_dx) {
                        dx = std::move(dx1);
                        for (size_t i = 0; i < dx.values.size(); ++i)
                            dx.values[i] += dxp.values[i];
                    }
                } else if (need_dx) {
                    dx = std::move(dx1);
                    for (size_t i = 0; i < dx.values.size(); ++i) dx.values[i] += dcur.values[i];
                }
                break;
            }
        }
        dcur = std::move(dx);
        if (li == 0) break;
    }
    if (want_input) out.input = std::move(dcur);
}

}  // namespace

Tensor forward(const ModelGraph& model, const Tensor& batch, ForwardTrace& trace) {
    if (batch.rank() != 4)
        throw ShapeError("forward: batch must be rank 4 (N,C,H,W)", 0);
    if (batch.dim(1) != model.input_shape[0] || batch.dim(2) != model.input_shape[1] ||
        batch.dim(3) != model.input_shape[2])
        throw ShapeError("forward: batch shape does not match model input", 0);

    trace.acts.clear();
    trace.aux.assign(model.layers.size(), LayerAux{});
    trace.acts.reserve(model.layers.size() + 1);
    trace.acts.push_back(batch);
    for (size_t li = 0; li < model.layers.size(); ++li) {
        Tensor y;
        layer_forward(model, li, trace.acts.back(), y, trace.aux[li]);
        trace.acts.push_back(std::move(y));
    }
    return trace.acts.back();
}

Tensor forward(const ModelGraph& model, const Tensor& batch) {
    ForwardTrace trace;
    return forward(model, batch, trace);
}

std::vector<int> predict(const ModelGraph& model, const Tensor& batch) {
    Tensor logits = forward(model, batch);
    const int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double* row = logits.data() + i * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits_mean, std::vector<double>* per_example) {
    const int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("cross-entropy: label count mismatch");
    if (dlogits_mean) *dlogits_mean = Tensor(logits.shape);
    if (per_example) per_example->assign(static_cast<size_t>(n), 0.0);

    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= k)
            throw ShapeError("cross-entropy: label " + std::to_string(y) + " out of range");
        const double* row = logits.data() + i * k;
        double m = row[0];
        for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
        const double lse = m + std::log(sum);
        const double li = lse - row[y];
        if (!std::isfinite(li))
            throw NumericError("non-finite cross-entropy at batch index " + std::to_string(i), i);
        total += li;
        if (per_example) (*per_example)[static_cast<size_t>(i)] = li;
        if (dlogits_mean) {
            double* d = dlogits_mean->data() + i * k;
            for (int64_t j = 0; j < k; ++j) {
                const double p = std::exp(row[j] - m) / sum;
                d[j] = (p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n);
            }
        }
    }
    return total / static_cast<double>(n);
}

namespace {

Gradients prepare_gradients(const ModelGraph& m, bool want_params) {
    Gradients g;
    if (want_params)
        for (const auto& [name, p] : m.params) g.params.emplace(name, Tensor(p.shape));
    return g;
}

}  // namespace

double loss_and_grads(const ModelGraph& model, const Tensor& batch,
                      const std::vector<int>& labels, GradWant want, Gradients& out) {
    const bool wp = want != GradWant::Input;
    const bool wi = want != GradWant::Params;
    ForwardTrace trace;
    Tensor logits = forward(model, batch, trace);
    Tensor dlogits;
    const double loss = softmax_cross_entropy(logits, labels, &dlogits, nullptr);
    out = prepare_gradients(model, wp);
    backward_from(model, trace, std::move(dlogits), model.layers.size() - 1, wp, wi, out);
    return loss;
}

std::vector<double> per_example_ce_input_grad(const ModelGraph& model, const Tensor& batch,
                                              const std::vector<int>& labels,
                                              Tensor& input_grad) {
    ForwardTrace trace;
    Tensor logits = forward(model, batch, trace);
    Tensor dlogits;
    std::vector<double> losses;
    softmax_cross_entropy(logits, labels, &dlogits, &losses);
    // Undo the mean scaling: per-example sum semantics.
    const double n = static_cast<double>(batch.dim(0));
    for (auto& v : dlogits.values) v *= n;
    Gradients out;
    backward_from(model, trace, std::move(dlogits), model.layers.size() - 1, false, true, out);
    input_grad = std::move(out.input);
    return losses;
}

Tensor representation(const ModelGraph& model, const Tensor& batch) {
    if (model.layers.empty() || model.layers.back().kind != LayerKind::Dense)
        throw ShapeError("representation: model must end with a dense head");
    ForwardTrace trace;
    forward(model, batch, trace);
    return trace.acts[model.layers.size() - 1];
}

double repr_match_loss_input_grad(const ModelGraph& model, const Tensor& batch,
                                  const Tensor& target_repr, Tensor& input_grad) {
    if (model.layers.empty() || model.layers.back().kind != LayerKind::Dense)
        throw ShapeError("repr match: model must end with a dense head");
    ForwardTrace trace;
    forward(model, batch, trace);
    const Tensor& g = trace.acts[model.layers.size() - 1];
    if (!g.same_shape(target_repr))
        throw ShapeError("repr match: target representation shape mismatch");
    Tensor dg(g.shape);
    double loss = 0.0;
    for (size_t i = 0; i < g.values.size(); ++i) {
        const double diff = g.values[i] - target_repr.values[i];
        loss += diff * diff;
        dg.values[i] = 2.0 * diff;
    }
    Gradients out;
    backward_from(model, trace, std::move(dg), model.layers.size() - 2, false, true, out);
    input_grad = std::move(out.input);
    return loss;
}

}  // namespace rlab
