#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "rlab/common.hpp"

namespace rlab {

/// Dense multi-dimensional array of doubles with an optional gradient slot.
/// Image batches use (N,C,H,W); single images use (C,H,W).
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty, or same length as values

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s);
    Tensor(std::initializer_list<int64_t> s)
        : Tensor(std::vector<int64_t>(s)) {}

    static int64_t numel_of(const std::vector<int64_t>& s);

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    void alloc_grad();
    void zero_grad();
    bool has_grad() const { return !grad.empty(); }

    double* data() { return values.data(); }
    const double* data() const { return values.data(); }

    // 4-D accessors (N,C,H,W).
    double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return values[static_cast<size_t>(((n * dim(1) + c) * dim(2) + h) * dim(3) + w)];
    }
    double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return values[static_cast<size_t>(((n * dim(1) + c) * dim(2) + h) * dim(3) + w)];
    }
    // 3-D accessors (C,H,W).
    double& at3(int64_t c, int64_t h, int64_t w) {
        return values[static_cast<size_t>((c * dim(1) + h) * dim(2) + w)];
    }
    double at3(int64_t c, int64_t h, int64_t w) const {
        return values[static_cast<size_t>((c * dim(1) + h) * dim(2) + w)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    /// Slice of a batch tensor: copies example n into a rank-3 tensor.
    Tensor example(int64_t n) const;
    /// Writes a rank-3 tensor into slot n of this rank-4 batch.
    void set_example(int64_t n, const Tensor& img);

    double l2_norm() const;        // 64-bit accumulation
    double sum() const;
    double max_abs_diff(const Tensor& o) const;
};

/// Stacks rank-3 images with identical shapes into a (N,C,H,W) batch.
Tensor stack_batch(const std::vector<Tensor>& images);

}  // namespace rlab
