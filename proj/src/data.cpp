#include "rlab/data.hpp"

#include <algorithm>
#include <cmath>

#include "wire.hpp"

namespace rlab {

const char* dataset_role_name(DatasetRole r) {
    switch (r) {
        case DatasetRole::Natural: return "natural";
        case DatasetRole::Robust: return "robust";
        case DatasetRole::NonRobust: return "nonrobust";
        case DatasetRole::Mixed: return "mixed";
    }
    return "?";
}

Tensor DatasetHandle::image(int64_t i) const {
    Tensor img(image_shape);
    const int64_t d = pixels_per_image();
    const float* src = pixels.data() + i * d;
    for (int64_t j = 0; j < d; ++j) img.values[static_cast<size_t>(j)] = src[j];
    return img;
}

void DatasetHandle::append(const Tensor& img, int label) {
    if (image_shape.empty()) image_shape = img.shape;
    if (img.shape != image_shape) throw ShapeError("dataset: heterogeneous image shape");
    for (double v : img.values) pixels.push_back(static_cast<float>(v));
    labels.push_back(static_cast<uint16_t>(label));
}

Tensor DatasetHandle::gather(const std::vector<int64_t>& indices,
                             std::vector<int>* labels_out) const {
    Tensor batch({static_cast<int64_t>(indices.size()), image_shape[0], image_shape[1],
                  image_shape[2]});
    const int64_t d = pixels_per_image();
    if (labels_out) labels_out->resize(indices.size());
    for (size_t n = 0; n < indices.size(); ++n) {
        const float* src = pixels.data() + indices[n] * d;
        double* dst = batch.data() + static_cast<int64_t>(n) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
        if (labels_out) (*labels_out)[n] = label(indices[n]);
    }
    return batch;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary
// ---------------------------------------------------------------------------

namespace {
constexpr int64_t kCifarRecord = 3073;  // label byte + 3*32*32 pixels
}

DatasetHandle load_cifar_binary(const std::vector<std::string>& paths) {
    DatasetHandle ds;
    ds.image_shape = {3, 32, 32};
    ds.class_count = 10;
    ds.role = DatasetRole::Natural;

    for (const auto& path : paths) {
        const auto bytes = wire::read_file(path);
        if (bytes.size() % kCifarRecord != 0) {
            const int64_t offset =
                (static_cast<int64_t>(bytes.size()) / kCifarRecord) * kCifarRecord;
            throw FormatError(path + ": truncated record at byte offset " +
                              std::to_string(offset));
        }
        const int64_t count = static_cast<int64_t>(bytes.size()) / kCifarRecord;
        ds.pixels.reserve(ds.pixels.size() + static_cast<size_t>(count * 3072));
        for (int64_t r = 0; r < count; ++r) {
            const uint8_t* rec = bytes.data() + r * kCifarRecord;
            if (rec[0] >= 10)
                throw FormatError(path + ": label byte " + std::to_string(rec[0]) +
                                  " out of range in record " + std::to_string(r));
            ds.labels.push_back(rec[0]);
            for (int64_t j = 0; j < 3072; ++j)
                ds.pixels.push_back(static_cast<float>(rec[1 + j]) / 255.0f);
        }
    }
    if (ds.labels.empty()) throw FormatError("cifar loader: no records found");
    ds.provenance = "cifar10-binary";
    return ds;
}

DatasetHandle load_cifar_binary(const std::string& path) {
    return load_cifar_binary(std::vector<std::string>{path});
}

// ---------------------------------------------------------------------------
// RDST container
// ---------------------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[4] = {'R', 'D', 'S', 'T'};
constexpr uint16_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const DatasetHandle& ds, const std::string& path) {
    wire::Writer w;
    w.raw(kDatasetMagic, 4);
    w.u16(kDatasetVersion);
    w.u8(static_cast<uint8_t>(ds.role));
    w.u32(static_cast<uint32_t>(ds.class_count));
    w.str32(ds.provenance);
    w.u32(static_cast<uint32_t>(ds.size()));
    w.u8(static_cast<uint8_t>(ds.image_shape.size()));
    for (int64_t e : ds.image_shape) w.i64(e);
    const int64_t d = ds.pixels_per_image();
    for (int64_t i = 0; i < ds.size(); ++i) {
        w.u16(ds.labels[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < d; ++j) w.f32(ds.pixels[static_cast<size_t>(i * d + j)]);
    }
    wire::write_file(path, w.bytes);
}

DatasetHandle load_dataset(const std::string& path) {
    const auto bytes = wire::read_file(path);
    wire::Reader r(bytes);
    wire::expect_magic(r, kDatasetMagic, "dataset");
    const uint16_t version = r.u16();
    if (version != kDatasetVersion)
        throw FormatError("dataset: unsupported version " + std::to_string(version));

    DatasetHandle ds;
    ds.role = static_cast<DatasetRole>(r.u8());
    ds.class_count = static_cast<int>(r.u32());
    ds.provenance = r.str32();
    const uint32_t count = r.u32();
    const int rank = r.u8();
    ds.image_shape.resize(static_cast<size_t>(rank));
    for (auto& e : ds.image_shape) e = r.i64();
    if (rank != 3) throw FormatError("dataset: expected rank-3 images");

    const int64_t d = ds.pixels_per_image();
    ds.labels.reserve(count);
    ds.pixels.reserve(static_cast<size_t>(count) * static_cast<size_t>(d));
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t label = r.u16();
        if (label >= ds.class_count)
            throw FormatError("dataset: label out of range in record " + std::to_string(i));
        ds.labels.push_back(label);
        for (int64_t j = 0; j < d; ++j) ds.pixels.push_back(r.f32());
    }
    if (r.pos != bytes.size())
        throw FormatError("dataset: trailing bytes at offset " + std::to_string(r.pos));
    return ds;
}

// ---------------------------------------------------------------------------
// BatchStream
// ---------------------------------------------------------------------------

BatchStream::BatchStream(const DatasetHandle& natural, const DatasetHandle* robust,
                         MixPolicy policy, uint64_t seed)
    : natural_(natural),
      robust_(robust),
      policy_(policy),
      robust_per_batch_(static_cast<int>(std::floor(
          policy.alpha * static_cast<double>(policy.batch_size) + 0.5))),
      rng_(derive_seed(seed, 0x5EED)) {
    if (policy.batch_size < 1) throw ConfigError("mix: batch size must be >= 1");
    if (policy.alpha < 0.0 || policy.alpha > 1.0)
        throw ConfigError("mix: alpha must lie in [0,1]");
    if (natural_.size() == 0) throw ConfigError("mix: natural dataset is empty");
    if (policy.alpha > 0.0 && (!robust_ || robust_->size() == 0))
        throw ConfigError("mix: alpha > 0 requires a non-empty robust dataset");
    if (robust_ && robust_->size() > 0 && robust_->image_shape != natural_.image_shape)
        throw ConfigError("mix: datasets disagree on image shape");
    if (robust_ && robust_->size() > 0 && robust_->class_count != natural_.class_count)
        throw ConfigError("mix: datasets disagree on class count");

    nat_perm_.resize(static_cast<size_t>(natural_.size()));
    for (size_t i = 0; i < nat_perm_.size(); ++i) nat_perm_[i] = static_cast<int64_t>(i);
    rng_.shuffle(nat_perm_);
    if (robust_ && robust_->size() > 0) {
        rob_perm_.resize(static_cast<size_t>(robust_->size()));
        for (size_t i = 0; i < rob_perm_.size(); ++i) rob_perm_[i] = static_cast<int64_t>(i);
        rng_.shuffle(rob_perm_);
    }
}

int64_t BatchStream::steps_per_epoch() const {
    return (policy_.epoch_length + policy_.batch_size - 1) / policy_.batch_size;
}

int64_t BatchStream::draw(std::vector<int64_t>& perm, size_t& cursor) {
    if (cursor == perm.size()) {
        rng_.shuffle(perm);
        cursor = 0;
    }
    return perm[cursor++];
}

Batch BatchStream::next() {
    const int b = policy_.batch_size;
    const int r = robust_per_batch_;

    // Slot assignment: robust examples first, then natural, then one shuffle
    // of the combined batch.
    std::vector<int64_t> nat_idx, rob_idx;
    for (int i = 0; i < r; ++i) rob_idx.push_back(draw(rob_perm_, rob_cursor_));
    for (int i = 0; i < b - r; ++i) nat_idx.push_back(draw(nat_perm_, nat_cursor_));

    std::vector<int> labels;
    Batch out;
    out.robust_count = r;
    out.images = Tensor({b, natural_.image_shape[0], natural_.image_shape[1],
                         natural_.image_shape[2]});
    out.labels.resize(static_cast<size_t>(b));

    std::vector<int> order(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) order[static_cast<size_t>(i)] = i;
    rng_.shuffle(order);

    const int64_t d = natural_.pixels_per_image();
    for (int slot = 0; slot < b; ++slot) {
        const int src = order[static_cast<size_t>(slot)];
        const bool from_robust = src < r;
        const DatasetHandle& ds = from_robust ? *robust_ : natural_;
        const int64_t idx = from_robust ? rob_idx[static_cast<size_t>(src)]
                                        : nat_idx[static_cast<size_t>(src - r)];
        const float* p = ds.pixels.data() + idx * d;
        double* dst = out.images.data() + static_cast<int64_t>(slot) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = p[j];
        out.labels[static_cast<size_t>(slot)] = ds.label(idx);
    }
    ++steps_;
    return out;
}

// ---------------------------------------------------------------------------
// synthetic shapes
// ---------------------------------------------------------------------------

namespace {

// Class-keyed +-1 micro-texture; fixed internal seed so train and test splits
// share the same cue structure.
void cue_motif(int cls, double motif[9]) {
    Rng rng(derive_seed(0xC0DEBA5E, static_cast<uint64_t>(cls)));
    for (int i = 0; i < 9; ++i) motif[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
}

bool in_shape(int cls, double dx, double dy, double r) {
    const double ax = std::fabs(dx), ay = std::fabs(dy);
    switch (cls) {
        case 0: return dx * dx + dy * dy <= r * r;                      // disc
        case 1: return ax <= 0.35 * r && ay <= r;                       // vertical bar
        case 2: return ay <= 0.35 * r && ax <= r;                       // horizontal bar
        case 3: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);  // plus
        case 4: return (std::fabs(dx - dy) <= 0.45 * r || std::fabs(dx + dy) <= 0.45 * r) &&
                       ax <= r && ay <= r;                              // X
        case 5: {                                                       // square frame
            const double m = std::max(ax, ay);
            return m >= 0.55 * r && m <= r;
        }
        case 6: return dy >= -r && dy <= r && ax <= 0.5 * (dy + r);     // triangle
        case 7: return std::fabs(ax - 0.65 * r) <= 0.22 * r && ay <= r; // twin bars
        case 8: {                                                       // ring
            const double d2 = dx * dx + dy * dy;
            return d2 >= 0.55 * r * 0.55 * r && d2 <= r * r;
        }
        default: return ax <= 0.7 * r && ay <= 0.7 * r;                 // filled square
    }
}

}  // namespace

DatasetHandle make_synthetic(const SynthSpec& spec, uint64_t seed) {
    DatasetHandle ds;
    const int s = spec.image_size;
    ds.image_shape = {spec.channels, s, s};
    ds.class_count = spec.class_count;
    ds.role = DatasetRole::Natural;
    ds.provenance = "synthetic shapes seed=" + std::to_string(seed);

    Rng rng(derive_seed(seed, 0xDA7A));
    const double base_r = 0.28 * static_cast<double>(s);
    Tensor img(ds.image_shape);

    for (int64_t i = 0; i < spec.n; ++i) {
        const int cls = static_cast<int>(rng.uniform_int(spec.class_count));
        const double cx = (s - 1) / 2.0 + rng.uniform(-3.0, 3.0);
        const double cy = (s - 1) / 2.0 + rng.uniform(-3.0, 3.0);
        const double r = base_r * rng.uniform(0.8, 1.25);
        const double intensity = rng.uniform(0.55, 0.95);

        for (auto& v : img.values) v = rng.uniform(0.0, spec.noise);
        for (int ch = 0; ch < spec.channels; ++ch) {
            const double tint =
                spec.channels == 1 ? 1.0 : 0.7 + 0.3 * ((ch + cls) % 3) / 2.0;
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x)
                    if (in_shape(cls % 10, x - cx, y - cy, r))
                        img.at3(ch, y, x) = intensity * tint;
        }

        if (spec.cue_amplitude > 0.0) {
            double motif[9];
            cue_motif(cls, motif);
            for (int ch = 0; ch < spec.channels; ++ch)
                for (int ay = 1; ay + 3 <= s; ay += spec.cue_period)
                    for (int ax = 1; ax + 3 <= s; ax += spec.cue_period)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                double& v = img.at3(ch, ay + ky, ax + kx);
                                v += spec.cue_amplitude * motif[ky * 3 + kx];
                            }
        }

        for (auto& v : img.values) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        ds.append(img, cls);
    }
    return ds;
}

}  // namespace rlab
