#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "rlab/data.hpp"

using namespace rlab;

namespace {

// Crafted CIFAR-style binary: one record is 1 label byte + 3072 pixel bytes.
void write_cifar_file(const std::string& path, const std::vector<uint8_t>& labels,
                      bool truncate_last = false) {
    std::ofstream out(path, std::ios::binary);
    for (size_t r = 0; r < labels.size(); ++r) {
        out.put(static_cast<char>(labels[r]));
        const size_t n = (truncate_last && r + 1 == labels.size()) ? 1000 : 3072;
        for (size_t j = 0; j < n; ++j)
            out.put(static_cast<char>((r * 31 + j) % 256));
    }
}

DatasetHandle tiny_dataset(int n, int label, double value) {
    DatasetHandle ds;
    ds.class_count = 10;
    Tensor img({1, 2, 2});
    for (auto& v : img.values) v = value;
    for (int i = 0; i < n; ++i) ds.append(img, label);
    return ds;
}

}  // namespace

TEST_CASE("cifar loader: record arithmetic, labels, pixel scaling, planar order") {
    const std::string path = "cifar_test.bin";
    write_cifar_file(path, {6, 0, 9});
    DatasetHandle ds = load_cifar_binary(path);
    CHECK(ds.size() == 3);
    CHECK(ds.image_shape == std::vector<int64_t>{3, 32, 32});
    CHECK(ds.label(0) == 6);
    CHECK(ds.label(2) == 9);

    // Record 0 pixel j has byte value j % 256; planar channel-major layout.
    Tensor img = ds.image(0);
    CHECK(img.at3(0, 0, 0) == doctest::Approx(0.0 / 255.0));
    CHECK(img.at3(0, 0, 255) == doctest::Approx(255.0 / 255.0));  // byte 255 -> 1.0
    CHECK(img.at3(1, 0, 0) == doctest::Approx((1024 % 256) / 255.0));
    for (double v : img.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("cifar loader rejects truncated records with the byte offset") {
    const std::string path = "cifar_trunc.bin";
    write_cifar_file(path, {1, 2}, true);
    try {
        load_cifar_binary(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("3073") != std::string::npos);  // offset of record 1
    }
    std::remove(path.c_str());
}

TEST_CASE("cifar loader rejects out-of-range labels") {
    const std::string path = "cifar_badlabel.bin";
    write_cifar_file(path, {3, 10});
    CHECK_THROWS_AS(load_cifar_binary(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("RDST round-trip is lossless, including role and provenance") {
    SynthSpec spec;
    spec.n = 20;
    spec.image_size = 12;
    DatasetHandle ds = make_synthetic(spec, 5);
    ds.role = DatasetRole::Robust;
    ds.provenance = "fA=deadbeef steps=200 seed=5";

    const std::string path = "ds_roundtrip.rdst";
    save_dataset(ds, path);
    DatasetHandle back = load_dataset(path);
    CHECK(back.pixels == ds.pixels);
    CHECK(back.labels == ds.labels);
    CHECK(back.image_shape == ds.image_shape);
    CHECK(back.class_count == ds.class_count);
    CHECK(back.role == DatasetRole::Robust);
    CHECK(back.provenance == ds.provenance);
    std::remove(path.c_str());
}

TEST_CASE("dataset loader rejects foreign magic") {
    const std::string path = "not_a_dataset.rdst";
    {
        std::ofstream out(path, std::ios::binary);
        out << "RLABxxxxxxxxxxxxxxxxxxxx";  // checkpoint magic
    }
    try {
        load_dataset(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("mix stream: alpha 0 and 1 are pure; 0.5 at B=128 is exactly 64+64") {
    DatasetHandle nat = tiny_dataset(300, 0, 0.1);
    DatasetHandle rob = tiny_dataset(200, 1, 0.9);

    BatchStream pure_nat(nat, &rob, {0.0, 16, 300}, 1);
    Batch b0 = pure_nat.next();
    CHECK(b0.robust_count == 0);
    for (int l : b0.labels) CHECK(l == 0);

    BatchStream pure_rob(nat, &rob, {1.0, 16, 300}, 1);
    Batch b1 = pure_rob.next();
    CHECK(b1.robust_count == 16);
    for (int l : b1.labels) CHECK(l == 1);

    BatchStream half(nat, &rob, {0.5, 128, 300}, 2);
    for (int step = 0; step < 10; ++step) {
        Batch b = half.next();
        CHECK(b.robust_count == 64);
        int robust_labels = 0;
        for (int l : b.labels) robust_labels += (l == 1);
        CHECK(robust_labels == 64);
    }
}

TEST_CASE("robust share is round(alpha*B), half rounded up, every batch") {
    DatasetHandle nat = tiny_dataset(50, 0, 0.1);
    DatasetHandle rob = tiny_dataset(50, 1, 0.9);
    const struct {
        double alpha;
        int b;
        int want;
    } cases[] = {{0.3, 10, 3}, {0.25, 10, 3}, {0.24, 10, 2}, {0.1, 64, 6}, {0.5, 7, 4}};
    for (const auto& c : cases) {
        BatchStream s(nat, &rob, {c.alpha, c.b, 100}, 3);
        for (int i = 0; i < 5; ++i) {
            Batch b = s.next();
            int robust_labels = 0;
            for (int l : b.labels) robust_labels += (l == 1);
            CHECK(robust_labels == c.want);
        }
    }
}

TEST_CASE("epoch accounting: 50000 images at B=64 gives 782 steps, 625 = 0.8 epochs") {
    DatasetHandle nat = tiny_dataset(10, 0, 0.1);
    BatchStream s(nat, nullptr, {0.0, 64, 50000}, 1);
    CHECK(s.steps_per_epoch() == 782);
    CHECK(625 * 64 == 40000);  // the paper's dense cadence is 0.8 epochs
    CHECK(0.8 * 50000 == doctest::Approx(40000.0));

    for (int i = 0; i < 782; ++i) {
        CHECK(s.epoch() == 0);
        s.next();
    }
    CHECK(s.epoch() == 1);
}

TEST_CASE("streams with equal seeds are identical; robust counts hold for any seed") {
    SynthSpec spec;
    spec.n = 60;
    spec.image_size = 10;
    DatasetHandle nat = make_synthetic(spec, 1);
    DatasetHandle rob = make_synthetic(spec, 2);
    rob.role = DatasetRole::Robust;

    BatchStream a(nat, &rob, {0.5, 16, 60}, 42);
    BatchStream b(nat, &rob, {0.5, 16, 60}, 42);
    BatchStream c(nat, &rob, {0.5, 16, 60}, 43);
    bool any_diff = false;
    for (int i = 0; i < 8; ++i) {
        Batch ba = a.next(), bb = b.next(), bc = c.next();
        CHECK(ba.images.values == bb.images.values);
        CHECK(ba.labels == bb.labels);
        CHECK(bc.robust_count == 8);
        any_diff |= ba.images.values != bc.images.values;
    }
    CHECK(any_diff);
}

TEST_CASE("batch contents are shuffled, not robust-first") {
    DatasetHandle nat = tiny_dataset(100, 0, 0.1);
    DatasetHandle rob = tiny_dataset(100, 1, 0.9);
    BatchStream s(nat, &rob, {0.5, 32, 100}, 9);
    bool robust_seen_late = false;
    for (int i = 0; i < 4; ++i) {
        Batch b = s.next();
        for (size_t j = 16; j < 32; ++j) robust_seen_late |= (b.labels[j] == 1);
    }
    CHECK(robust_seen_late);
}

TEST_CASE("every image is touched before any repeats (permutation sampling)") {
    DatasetHandle nat = tiny_dataset(40, 0, 0.1);
    // Tag images by a unique pixel value so draws are identifiable.
    for (int i = 0; i < 40; ++i)
        nat.pixels[static_cast<size_t>(i) * 4] = static_cast<float>(i) / 100.0f;
    BatchStream s(nat, nullptr, {0.0, 10, 40}, 4);
    std::vector<int> seen(40, 0);
    for (int step = 0; step < 4; ++step) {
        Batch b = s.next();
        for (int j = 0; j < 10; ++j) {
            const float tag =
                static_cast<float>(b.images.values[static_cast<size_t>(j) * 4]);
            seen[static_cast<size_t>(std::lround(tag * 100.0f))]++;
        }
    }
    for (int count : seen) CHECK(count == 1);
}

TEST_CASE("mix stream rejects bad configurations") {
    DatasetHandle nat = tiny_dataset(10, 0, 0.1);
    DatasetHandle empty;
    CHECK_THROWS_AS(BatchStream(nat, &empty, {0.5, 8, 100}, 1), ConfigError);
    CHECK_THROWS_AS(BatchStream(nat, nullptr, {0.5, 8, 100}, 1), ConfigError);

    DatasetHandle other = tiny_dataset(10, 1, 0.5);
    other.image_shape = {1, 4, 1};
    CHECK_THROWS_AS(BatchStream(nat, &other, {0.5, 8, 100}, 1), ConfigError);
}

TEST_CASE("synthetic dataset: determinism, ranges, class coverage") {
    SynthSpec spec;
    spec.n = 300;
    DatasetHandle a = make_synthetic(spec, 7);
    DatasetHandle b = make_synthetic(spec, 7);
    DatasetHandle c = make_synthetic(spec, 8);
    CHECK(a.pixels == b.pixels);
    CHECK(a.labels == b.labels);
    CHECK(a.pixels != c.pixels);

    CHECK(a.size() == 300);
    std::vector<int> per_class(10, 0);
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(a.label(i) < 10);
        per_class[static_cast<size_t>(a.label(i))]++;
    }
    for (int count : per_class) CHECK(count > 0);
    for (float v : a.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    SynthSpec no_cue = spec;
    no_cue.cue_amplitude = 0.0;
    DatasetHandle plain = make_synthetic(no_cue, 7);
    CHECK(plain.pixels != a.pixels);
}
