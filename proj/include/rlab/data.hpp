#pragma once

#include <string>
#include <vector>

#include "rlab/tensor.hpp"

namespace rlab {

enum class DatasetRole : uint8_t {
    Natural = 0,   // D
    Robust = 1,    // D_R
    NonRobust = 2, // D_NR
    Mixed = 3,
};

const char* dataset_role_name(DatasetRole r);

struct LabeledExample {
    Tensor image;  // (C,H,W) in [0,1]
    int label = 0;
};

/// Labeled image collection. Pixels are stored as f32 (the container format)
/// and widened to double when batches are formed.
struct DatasetHandle {
    std::vector<int64_t> image_shape;  // (C,H,W)
    std::vector<float> pixels;         // size() * C*H*W
    std::vector<uint16_t> labels;
    int class_count = 10;
    DatasetRole role = DatasetRole::Natural;
    std::string provenance;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    int64_t pixels_per_image() const {
        return image_shape[0] * image_shape[1] * image_shape[2];
    }
    Tensor image(int64_t i) const;
    int label(int64_t i) const { return labels[static_cast<size_t>(i)]; }
    LabeledExample example(int64_t i) const { return {image(i), label(i)}; }
    void append(const Tensor& img, int label);

    /// Batch of the given example indices, images widened to double.
    Tensor gather(const std::vector<int64_t>& indices, std::vector<int>* labels_out) const;
};

/// CIFAR-10 binary files: 3073-byte records, 1 label byte + 3072 pixel bytes
/// in planar channel order. Pixels scale to [0,1] as byte/255.
DatasetHandle load_cifar_binary(const std::vector<std::string>& paths);
DatasetHandle load_cifar_binary(const std::string& path);

/// RDST container (same family as checkpoints): magic, version, role,
/// class count, provenance, then per-example label u16 + raw f32 pixels.
/// Lossless round-trip.
void save_dataset(const DatasetHandle& ds, const std::string& path);
DatasetHandle load_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// D_mix batch stream
// ---------------------------------------------------------------------------

struct MixPolicy {
    double alpha = 0.0;          // robust share of every batch
    int batch_size = 1;
    int64_t epoch_length = 50000;  // images per epoch, whatever the sources hold
};

struct Batch {
    Tensor images;  // (B,C,H,W)
    std::vector<int> labels;
    int robust_count = 0;
};

/// Single-producer iterator over mixed batches: exactly round(alpha*B) images
/// of every batch come from the robust source, the rest from the natural one.
/// Both sources are sampled by reshuffled permutation (every image is touched
/// before any repeats). Deterministic in (sources, policy, seed).
class BatchStream {
public:
    BatchStream(const DatasetHandle& natural, const DatasetHandle* robust,
                MixPolicy policy, uint64_t seed);

    Batch next();
    int robust_per_batch() const { return robust_per_batch_; }
    int64_t steps_per_epoch() const;     // ceil(epoch_length / batch_size)
    int64_t steps_emitted() const { return steps_; }
    int64_t epoch() const { return steps_ / steps_per_epoch(); }
    const MixPolicy& policy() const { return policy_; }

private:
    int64_t draw(std::vector<int64_t>& perm, size_t& cursor);

    const DatasetHandle& natural_;
    const DatasetHandle* robust_;
    MixPolicy policy_;
    int robust_per_batch_;
    Rng rng_;
    std::vector<int64_t> nat_perm_, rob_perm_;
    size_t nat_cursor_ = 0, rob_cursor_ = 0;
    int64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic desk-scale dataset
// ---------------------------------------------------------------------------

/// Procedural 10-class shape dataset. Each class has a distinct high-contrast
/// glyph (robust feature, drawn with position/scale/intensity jitter over
/// background noise) plus an optional class-keyed 3x3 micro-texture tiled
/// across the image at low amplitude: a perfectly predictive cue that sits
/// within reach of small-norm attacks but contributes nothing once flipped.
struct SynthSpec {
    int64_t n = 1000;
    int image_size = 28;
    int channels = 1;
    int class_count = 10;
    double noise = 0.08;
    double cue_amplitude = 0.05;  // 0 disables the planted non-robust cue
    int cue_period = 5;           // tile stride of the micro-texture
};

DatasetHandle make_synthetic(const SynthSpec& spec, uint64_t seed);

}  // namespace rlab
