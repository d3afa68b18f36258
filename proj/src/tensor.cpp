#include "rlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace rlab {

int64_t Tensor::numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t e : s) {
        if (e <= 0) throw ShapeError("tensor extent must be positive");
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    values.assign(static_cast<size_t>(numel_of(shape)), 0.0);
}

void Tensor::alloc_grad() {
    grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    if (grad.empty()) {
        alloc_grad();
    } else {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

Tensor Tensor::example(int64_t n) const {
    if (rank() != 4) throw ShapeError("example() requires a rank-4 batch");
    Tensor out({dim(1), dim(2), dim(3)});
    const int64_t sz = out.numel();
    std::memcpy(out.values.data(), values.data() + n * sz,
                static_cast<size_t>(sz) * sizeof(double));
    return out;
}

void Tensor::set_example(int64_t n, const Tensor& img) {
    if (rank() != 4 || img.rank() != 3) throw ShapeError("set_example shape mismatch");
    const int64_t sz = img.numel();
    if (sz != dim(1) * dim(2) * dim(3)) throw ShapeError("set_example extent mismatch");
    std::memcpy(values.data() + n * sz, img.values.data(),
                static_cast<size_t>(sz) * sizeof(double));
}

double Tensor::l2_norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

double Tensor::max_abs_diff(const Tensor& o) const {
    double m = 0.0;
    for (size_t i = 0; i < values.size(); ++i)
        m = std::max(m, std::fabs(values[i] - o.values[i]));
    return m;
}

Tensor stack_batch(const std::vector<Tensor>& images) {
    if (images.empty()) throw ShapeError("stack_batch: empty image list");
    const Tensor& first = images.front();
    if (first.rank() != 3) throw ShapeError("stack_batch: images must be rank 3");
    Tensor out({static_cast<int64_t>(images.size()), first.dim(0), first.dim(1), first.dim(2)});
    for (size_t n = 0; n < images.size(); ++n) {
        if (!images[n].same_shape(first))
            throw ShapeError("stack_batch: heterogeneous image shapes");
        out.set_example(static_cast<int64_t>(n), images[n]);
    }
    return out;
}

}  // namespace rlab
