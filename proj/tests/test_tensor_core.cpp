#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "rlab/checkpoint.hpp"
#include "rlab/model.hpp"
#include "rlab/optim.hpp"
#include "test_support.hpp"

using namespace rlab;
namespace ts = rlab::testsupport;

TEST_CASE("dense layer with identity weights is the identity map") {
    const int k = 5;
    std::vector<LayerSpec> layers{flatten_layer(), dense_layer("head", k, k)};
    ModelGraph m = build_model({1, 1, k}, k, std::move(layers));
    Tensor& w = m.params.at("head.w");
    for (int i = 0; i < k; ++i) w.values[static_cast<size_t>(i * k + i)] = 1.0;

    Tensor batch({1, 1, 1, k});
    for (int i = 0; i < k; ++i) batch.values[static_cast<size_t>(i)] = 0.1 * (i + 1);
    Tensor logits = forward(m, batch);
    for (int i = 0; i < k; ++i)
        CHECK(logits.values[static_cast<size_t>(i)] == batch.values[static_cast<size_t>(i)]);
}

TEST_CASE("1x1 conv with unit weight passes the input through") {
    std::vector<LayerSpec> layers{conv2d_layer("c", 1, 1, 1, 1, 0), flatten_layer(),
                                  dense_layer("head", 16, 3)};
    ModelGraph m = build_model({1, 4, 4}, 3, std::move(layers));
    m.params.at("c.w").values[0] = 1.0;

    Tensor batch = ts::random_batch(m, 1, 7);
    ForwardTrace trace;
    forward(m, batch, trace);
    CHECK(trace.acts[1].values == batch.values);
}

TEST_CASE("random conv+relu+dense matches a straight-line reimplementation") {
    const int classes = 4;
    std::vector<LayerSpec> layers{conv2d_layer("c", 2, 3, 3, 1, 1), relu_layer(),
                                  flatten_layer(), dense_layer("fc", 3 * 6 * 6, classes)};
    ModelGraph m = build_model({2, 6, 6}, classes, std::move(layers));
    init_params(m, 99);

    Tensor batch = ts::random_batch(m, 3, 5);
    Tensor logits = forward(m, batch);
    for (int64_t n = 0; n < 3; ++n) {
        auto ref = ts::straightline_conv_relu_dense(batch.example(n), m.params.at("c.w"),
                                                    m.params.at("c.b"), m.params.at("fc.w"),
                                                    m.params.at("fc.b"));
        for (int j = 0; j < classes; ++j)
            CHECK(std::fabs(logits.values[static_cast<size_t>(n * classes + j)] -
                            ref[static_cast<size_t>(j)]) < 1e-12);
    }
}

TEST_CASE("shape mismatch is rejected with the offending layer index") {
    ModelGraph m = make_tiny_conv({1, 8, 8}, 3);
    Tensor bad({2, 1, 7, 8});
    try {
        forward(m, bad);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(e.layer_index == 0);
    }
    // Incompatible chain is rejected at build time, naming the layer.
    try {
        build_model({1, 8, 8}, 3,
                    {conv2d_layer("a", 1, 4, 3, 1, 1), conv2d_layer("b", 5, 4, 3, 1, 1),
                     global_avgpool_layer(), dense_layer("head", 4, 3)});
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(e.layer_index == 1);
    }
}

TEST_CASE("uniform logits give loss ln(k)") {
    for (int k : {2, 4, 10}) {
        Tensor logits({2, k});
        for (auto& v : logits.values) v = 0.7;  // any constant row
        const double loss = softmax_cross_entropy(logits, {0, k - 1}, nullptr, nullptr);
        CHECK(loss == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-12));
    }
}

TEST_CASE("softmax-minus-onehot gradient, two equal logits") {
    Tensor logits({1, 2});
    logits.values = {3.3, 3.3};
    Tensor dlogits;
    std::vector<double> per;
    const double loss = softmax_cross_entropy(logits, {0}, &dlogits, &per);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(per[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(dlogits.values[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(dlogits.values[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cross-entropy is non-negative and rejects bad labels") {
    Rng rng(11);
    Tensor logits({4, 5});
    for (auto& v : logits.values) v = rng.uniform(-3, 3);
    CHECK(softmax_cross_entropy(logits, {0, 1, 2, 3}, nullptr, nullptr) >= 0.0);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 1, 2, 5}, nullptr, nullptr), ShapeError);
}

TEST_CASE("analytic gradients match central finite differences") {
    for (int pick = 0; pick < 6; ++pick) {
        auto c = ts::make_fd_case(pick, 1000 + static_cast<uint64_t>(pick));
        ts::FdReport rep;
        const bool ok = ts::finite_diff_check(c.model, c.batch, c.labels, 1e-4, 1e-4, 1e-6, &rep);
        INFO("template ", pick, " worst rel ", rep.worst_rel, " at ", rep.worst_at);
        CHECK(ok);
    }
}

TEST_CASE("input gradients never mutate parameters") {
    ModelGraph m = ts::make_micro_model(2, 42);
    auto before = m.params;
    Tensor batch = ts::random_batch(m, 2, 43);
    Gradients g;
    loss_and_grads(m, batch, ts::random_labels(2, m.class_count, 44), GradWant::Input, g);
    CHECK(g.params.empty());
    CHECK(g.input.same_shape(batch));
    for (const auto& [name, p] : m.params) CHECK(p.values == before.at(name).values);
}

TEST_CASE("sgd: lr=0 leaves parameters unchanged") {
    ModelGraph m = ts::make_micro_model(0, 7);
    auto before = m.params;
    Gradients g;
    Tensor batch = ts::random_batch(m, 2, 8);
    loss_and_grads(m, batch, ts::random_labels(2, m.class_count, 9), GradWant::Params, g);
    SgdState st;
    sgd_step(m, g, st, 0.0, 0.9, 2e-4);
    for (const auto& [name, p] : m.params) CHECK(p.values == before.at(name).values);
}

TEST_CASE("sgd: plain step is p - lr*g; momentum unrolls to lr*g*(1+1.9)") {
    std::vector<LayerSpec> layers{flatten_layer(), dense_layer("d", 1, 1)};
    ModelGraph m = build_model({1, 1, 1}, 1, std::move(layers));
    m.params.at("d.w").values[0] = 0.5;

    Gradients g;
    g.params.emplace("d.w", Tensor({1, 1}));
    g.params.emplace("d.b", Tensor({1}));
    g.params.at("d.w").values[0] = 0.2;

    SgdState st;
    ModelGraph plain = m;
    sgd_step(plain, g, st, 0.1, 0.0, 0.0);
    CHECK(plain.params.at("d.w").values[0] == doctest::Approx(0.5 - 0.1 * 0.2).epsilon(1e-15));

    // Two momentum steps on a constant gradient: v1 = g, v2 = 1.9 g.
    SgdState st2;
    ModelGraph mom = m;
    sgd_step(mom, g, st2, 0.1, 0.9, 0.0);
    sgd_step(mom, g, st2, 0.1, 0.9, 0.0);
    CHECK(mom.params.at("d.w").values[0] ==
          doctest::Approx(0.5 - 0.1 * 0.2 * (1.0 + 1.9)).epsilon(1e-15));
}

TEST_CASE("sgd: weight decay adds wd*param to the gradient") {
    std::vector<LayerSpec> layers{flatten_layer(), dense_layer("d", 1, 1)};
    ModelGraph m = build_model({1, 1, 1}, 1, std::move(layers));
    m.params.at("d.w").values[0] = 2.0;
    Gradients g;
    g.params.emplace("d.w", Tensor({1, 1}));
    g.params.emplace("d.b", Tensor({1}));
    SgdState st;
    sgd_step(m, g, st, 0.1, 0.0, 0.01);
    CHECK(m.params.at("d.w").values[0] == doctest::Approx(2.0 - 0.1 * 0.01 * 2.0).epsilon(1e-15));
}

TEST_CASE("sgd: non-finite update raises NumericError") {
    std::vector<LayerSpec> layers{flatten_layer(), dense_layer("d", 1, 1)};
    ModelGraph m = build_model({1, 1, 1}, 1, std::move(layers));
    Gradients g;
    g.params.emplace("d.w", Tensor({1, 1}));
    g.params.emplace("d.b", Tensor({1}));
    g.params.at("d.w").values[0] = std::numeric_limits<double>::infinity();
    SgdState st;
    CHECK_THROWS_AS(sgd_step(m, g, st, 0.1, 0.9, 0.0), NumericError);
}

// --------------------------------------------------------------------------
// p4 / p4m
// --------------------------------------------------------------------------

TEST_CASE("p4 lifting: output channel count is base x 4 (8 for p4m)") {
    auto shape4 = layer_output_shape(p4conv_layer("l", 1, 3, 3, 1), {1, 8, 8}, 0);
    CHECK(shape4[0] == 12);
    auto shape8 = layer_output_shape(p4mconv_layer("l", 1, 3, 3, 1), {1, 8, 8}, 0);
    CHECK(shape8[0] == 24);
    CHECK_THROWS_AS(layer_output_shape(p4conv_layer("l", 1, 3, 3, 1), {1, 8, 6}, 0), ShapeError);
}

TEST_CASE("p4 filter expansion: single-entry 3x3 filter yields its four exact rotations") {
    Tensor base({1, 1, 3, 3});
    base.at4(0, 0, 0, 1) = 1.0;  // north-center entry
    Tensor exp;
    expand_group_filters(base, 4, 1, exp);
    CHECK(exp.dim(0) == 4);
    // Hand-enumerated destinations of (0,1) under CCW quarter turns.
    const int want[4][2] = {{0, 1}, {1, 0}, {2, 1}, {1, 2}};
    for (int e = 0; e < 4; ++e) {
        int ones = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const double v = exp.at4(e, 0, i, j);
                if (i == want[e][0] && j == want[e][1]) {
                    CHECK(v == 1.0);
                    ++ones;
                } else {
                    CHECK(v == 0.0);
                }
            }
        CHECK(ones == 1);
    }
}

TEST_CASE("p4 lifting layer is exactly equivariant to 90-degree rotation") {
    std::vector<LayerSpec> layers{p4conv_layer("lift", 1, 2, 3, 1), group_pool_layer(4),
                                  global_avgpool_layer(), dense_layer("head", 2, 2)};
    ModelGraph m = build_model({1, 8, 8}, 2, std::move(layers));
    init_params(m, 17);

    Tensor x = ts::random_batch(m, 1, 18);
    ForwardTrace t0, t1;
    forward(m, x, t0);
    forward(m, rot90(x, 1), t1);
    const Tensor& y = t0.acts[1];   // (1, 8, 8, 8): 2 base ch x 4 group
    const Tensor& yr = t1.acts[1];

    const int64_t hw = 8 * 8;
    double worst = 0.0;
    for (int ob = 0; ob < 2; ++ob)
        for (int e = 0; e < 4; ++e) {
            // rotated-input output at slot e == rot90 of original at slot e-1.
            Tensor slice({1, 1, 8, 8});
            const int src = (e + 3) % 4;
            std::copy_n(y.data() + (ob * 4 + src) * hw, hw, slice.data());
            Tensor rs = rot90(slice, 1);
            const double* got = yr.data() + (ob * 4 + e) * hw;
            for (int64_t i = 0; i < hw; ++i)
                worst = std::max(worst, std::fabs(rs.values[static_cast<size_t>(i)] - got[i]));
        }
    CHECK(worst <= 1e-6);
}

TEST_CASE("p4 group conv stack stays equivariant; p4m handles mirrors") {
    // Lifting + group conv: full stack equivariance at the feature-map level.
    std::vector<LayerSpec> layers{p4conv_layer("lift", 1, 2, 3, 1), relu_layer(),
                                  p4conv_layer("g", 8, 3, 3, 1, 4), group_pool_layer(4),
                                  global_avgpool_layer(), dense_layer("head", 3, 2)};
    ModelGraph m = build_model({1, 8, 8}, 2, std::move(layers));
    init_params(m, 21);

    Tensor x = ts::random_batch(m, 1, 22);
    ForwardTrace t0, t1;
    forward(m, x, t0);
    forward(m, rot90(x, 1), t1);
    const Tensor& y = t0.acts[3];  // output of the group conv
    const Tensor& yr = t1.acts[3];
    const int64_t hw = 8 * 8;
    double worst = 0.0;
    for (int ob = 0; ob < 3; ++ob)
        for (int e = 0; e < 4; ++e) {
            Tensor slice({1, 1, 8, 8});
            const int src = (e + 3) % 4;
            std::copy_n(y.data() + (ob * 4 + src) * hw, hw, slice.data());
            Tensor rs = rot90(slice, 1);
            const double* got = yr.data() + (ob * 4 + e) * hw;
            for (int64_t i = 0; i < hw; ++i)
                worst = std::max(worst, std::fabs(rs.values[static_cast<size_t>(i)] - got[i]));
        }
    CHECK(worst <= 1e-6);

    // p4m: horizontal mirror swaps the mirror coset, same rotation index.
    std::vector<LayerSpec> mlayers{p4mconv_layer("lift", 1, 2, 3, 1), group_pool_layer(8),
                                   global_avgpool_layer(), dense_layer("head", 2, 2)};
    ModelGraph mm = build_model({1, 8, 8}, 2, std::move(mlayers));
    init_params(mm, 23);
    ForwardTrace mt0, mt1;
    forward(mm, x, mt0);
    forward(mm, mirror_w(x), mt1);
    const Tensor& my = mt0.acts[1];
    const Tensor& myr = mt1.acts[1];
    worst = 0.0;
    for (int ob = 0; ob < 2; ++ob)
        for (int e = 0; e < 8; ++e) {
            const int src = (e >= 4) ? e - 4 : e + 4;  // flip mirror bit, keep rotation
            Tensor slice({1, 1, 8, 8});
            std::copy_n(my.data() + (ob * 8 + src) * hw, hw, slice.data());
            Tensor ms = mirror_w(slice);
            const double* got = myr.data() + (ob * 8 + e) * hw;
            for (int64_t i = 0; i < hw; ++i)
                worst = std::max(worst, std::fabs(ms.values[static_cast<size_t>(i)] - got[i]));
        }
    CHECK(worst <= 1e-6);
}

TEST_CASE("residual block with zero final conv equals the skip path") {
    std::vector<LayerSpec> layers{residual_block_layer("rb", 4, 4, 1), global_avgpool_layer(),
                                  dense_layer("head", 4, 3)};
    ModelGraph m = build_model({4, 6, 6}, 3, std::move(layers));
    init_params(m, 31);
    auto& c2w = m.params.at("rb.c2.w");
    std::fill(c2w.values.begin(), c2w.values.end(), 0.0);
    auto& c2b = m.params.at("rb.c2.b");
    std::fill(c2b.values.begin(), c2b.values.end(), 0.0);

    Tensor x = ts::random_batch(m, 2, 32);
    ForwardTrace trace;
    forward(m, x, trace);
    CHECK(trace.acts[1].values == x.values);
}

TEST_CASE("forward is pure and safe under concurrent callers") {
    ModelGraph m = ts::make_micro_model(5, 51);
    Tensor x = ts::random_batch(m, 2, 52);
    Tensor a = forward(m, x);
    Tensor b = forward(m, x);
    CHECK(a.values == b.values);  // bitwise

    std::vector<Tensor> results(4);
    std::vector<std::thread> workers;
    for (int i = 0; i < 4; ++i)
        workers.emplace_back([&, i] { results[static_cast<size_t>(i)] = forward(m, x); });
    for (auto& t : workers) t.join();
    for (const auto& r : results) CHECK(r.values == a.values);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    ModelGraph m = ts::make_micro_model(2, 61);
    const std::string p1 = "ckpt_roundtrip_a.rlab";
    const std::string p2 = "ckpt_roundtrip_b.rlab";
    save_checkpoint(m, p1);
    ModelGraph loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // Loaded params equal the f32 quantisation of the originals.
    for (const auto& [name, p] : m.params) {
        const Tensor& q = loaded.params.at(name);
        for (size_t i = 0; i < p.values.size(); ++i)
            CHECK(q.values[i] == static_cast<double>(static_cast<float>(p.values[i])));
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint loader rejects bad magic and truncation") {
    const std::string path = "ckpt_bad.rlab";
    {
        std::ofstream out(path, std::ios::binary);
        out << "RDSTxxxxxxxxxxxxxxxx";
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    ModelGraph m = ts::make_micro_model(0, 62);
    save_checkpoint(m, path);
    auto bytes = [&] {
        std::ifstream in(path, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
    }();
    bytes.resize(bytes.size() / 2);
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::remove(path.c_str());
}
