#include "rlab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rlab {

namespace {

inline int this_thread_index() {
#ifdef _OPENMP
    return omp_get_thread_num();
#else
    return 0;
#endif
}

// C (MxN) += A (MxK) * B (KxN), row-major.
void gemm_nn(const double* A, const double* B, double* C, int M, int N, int K) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const double av = a[k];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C (MxN) += A (MxK) * B^T, with B stored (NxK).
void gemm_nt(const double* A, const double* B, double* C, int M, int N, int K) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<size_t>(j) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] += s;
        }
    }
}

// C (MxN) += A^T * B, with A stored (KxM), B stored (KxN).
void gemm_tn(const double* A, const double* B, double* C, int M, int N, int K) {
    for (int k = 0; k < K; ++k) {
        const double* a = A + static_cast<size_t>(k) * M;
        const double* b = B + static_cast<size_t>(k) * N;
        for (int i = 0; i < M; ++i) {
            const double av = a[i];
            double* c = C + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

struct ConvDims {
    int cin, h, w, cout, k, stride, pad, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding) {
    ConvDims d{};
    d.cin = static_cast<int>(x.dim(1));
    d.h = static_cast<int>(x.dim(2));
    d.w = static_cast<int>(x.dim(3));
    d.cout = static_cast<int>(w.dim(0));
    d.k = static_cast<int>(w.dim(2));
    d.stride = stride;
    d.pad = padding;
    if (w.dim(1) != d.cin)
        throw ShapeError("conv2d: weight input channels mismatch");
    const int eff_h = d.h + 2 * padding - d.k;
    const int eff_w = d.w + 2 * padding - d.k;
    if (eff_h < 0 || eff_w < 0) throw ShapeError("conv2d: kernel larger than padded input");
    d.ho = eff_h / stride + 1;
    d.wo = eff_w / stride + 1;
    return d;
}

void im2col(const double* x, const ConvDims& d, double* col) {
    // col is (cin*k*k) x (ho*wo)
    const int cols = d.ho * d.wo;
    for (int ic = 0; ic < d.cin; ++ic) {
        const double* xc = x + static_cast<size_t>(ic) * d.h * d.w;
        for (int kh = 0; kh < d.k; ++kh) {
            for (int kw = 0; kw < d.k; ++kw) {
                double* row = col + (static_cast<size_t>(ic) * d.k * d.k +
                                     static_cast<size_t>(kh) * d.k + kw) * cols;
                for (int oh = 0; oh < d.ho; ++oh) {
                    const int ih = oh * d.stride - d.pad + kh;
                    double* out = row + static_cast<size_t>(oh) * d.wo;
                    if (ih < 0 || ih >= d.h) {
                        std::fill(out, out + d.wo, 0.0);
                        continue;
                    }
                    const double* xr = xc + static_cast<size_t>(ih) * d.w;
                    for (int ow = 0; ow < d.wo; ++ow) {
                        const int iw = ow * d.stride - d.pad + kw;
                        out[ow] = (iw >= 0 && iw < d.w) ? xr[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvDims& d, double* x) {
    const int cols = d.ho * d.wo;
    for (int ic = 0; ic < d.cin; ++ic) {
        double* xc = x + static_cast<size_t>(ic) * d.h * d.w;
        for (int kh = 0; kh < d.k; ++kh) {
            for (int kw = 0; kw < d.k; ++kw) {
                const double* row = col + (static_cast<size_t>(ic) * d.k * d.k +
                                           static_cast<size_t>(kh) * d.k + kw) * cols;
                for (int oh = 0; oh < d.ho; ++oh) {
                    const int ih = oh * d.stride - d.pad + kh;
                    if (ih < 0 || ih >= d.h) continue;
                    double* xr = xc + static_cast<size_t>(ih) * d.w;
                    const double* in = row + static_cast<size_t>(oh) * d.wo;
                    for (int ow = 0; ow < d.wo; ++ow) {
                        const int iw = ow * d.stride - d.pad + kw;
                        if (iw >= 0 && iw < d.w) xr[iw] += in[ow];
                    }
                }
            }
        }
    }
}

}  // namespace

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::AvgPool: return "avgpool";
        case LayerKind::GlobalAvgPool: return "global-avg-pool";
        case LayerKind::GroupPool: return "group-pool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::ResidualBlock: return "residual-block";
        case LayerKind::P4Conv: return "p4conv";
        case LayerKind::P4MConv: return "p4mconv";
    }
    return "?";
}

void LayerSpec::validate() const {
    switch (kind) {
        case LayerKind::Conv2d:
        case LayerKind::P4Conv:
        case LayerKind::P4MConv:
        case LayerKind::ResidualBlock:
            if (kernel < 1 && kind != LayerKind::ResidualBlock)
                throw ShapeError("conv kernel size must be >= 1");
            if (stride < 1) throw ShapeError("stride must be >= 1");
            if (in_channels < 1 || out_channels < 1)
                throw ShapeError("channel counts must be >= 1");
            break;
        case LayerKind::Dense:
            if (in_features < 1 || out_features < 1)
                throw ShapeError("dense feature counts must be >= 1");
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            if (kernel < 1 || stride < 1) throw ShapeError("pool kernel/stride must be >= 1");
            break;
        default:
            break;
    }
}

LayerSpec dense_layer(const std::string& name, int in_features, int out_features) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.name = name;
    s.in_features = in_features;
    s.out_features = out_features;
    return s;
}

LayerSpec conv2d_layer(const std::string& name, int in_channels, int out_channels,
                       int kernel, int stride, int padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.name = name;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec relu_layer() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec maxpool_layer(int kernel, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec avgpool_layer(int kernel, int stride) {
    LayerSpec s;
    s.kind = LayerKind::AvgPool;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec global_avgpool_layer() {
    LayerSpec s;
    s.kind = LayerKind::GlobalAvgPool;
    return s;
}

LayerSpec group_pool_layer(int group) {
    LayerSpec s;
    s.kind = LayerKind::GroupPool;
    s.group_in = group;
    return s;
}

LayerSpec flatten_layer() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

LayerSpec residual_block_layer(const std::string& name, int in_channels, int out_channels,
                               int stride, int block_group) {
    LayerSpec s;
    s.kind = LayerKind::ResidualBlock;
    s.name = name;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel = 3;
    s.stride = stride;
    s.padding = 1;
    s.block_group = block_group;
    s.projection = (in_channels != out_channels) || stride != 1;
    return s;
}

LayerSpec p4conv_layer(const std::string& name, int in_channels, int out_channels,
                       int kernel, int padding, int group_in) {
    LayerSpec s;
    s.kind = LayerKind::P4Conv;
    s.name = name;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = 1;
    s.padding = padding;
    s.group_in = group_in;
    s.group_out = 4;
    return s;
}

LayerSpec p4mconv_layer(const std::string& name, int in_channels, int out_channels,
                        int kernel, int padding, int group_in) {
    LayerSpec s;
    s.kind = LayerKind::P4MConv;
    s.name = name;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = 1;
    s.padding = padding;
    s.group_in = group_in;
    s.group_out = 8;
    return s;
}

std::vector<int64_t> layer_output_shape(const LayerSpec& spec,
                                        const std::vector<int64_t>& in_shape,
                                        int layer_index) {
    auto conv_hw = [&](int64_t h, int64_t w, int k, int stride, int pad) {
        const int64_t eh = h + 2 * pad - k;
        const int64_t ew = w + 2 * pad - k;
        if (eh < 0 || ew < 0)
            throw ShapeError("layer " + std::to_string(layer_index) +
                                 " (" + layer_kind_name(spec.kind) + "): kernel exceeds input",
                             layer_index);
        return std::pair<int64_t, int64_t>{eh / stride + 1, ew / stride + 1};
    };
    auto need_rank3 = [&]() {
        if (in_shape.size() != 3)
            throw ShapeError("layer " + std::to_string(layer_index) + " (" +
                                 layer_kind_name(spec.kind) + "): expects C,H,W input",
                             layer_index);
    };
    auto check_channels = [&](int64_t want) {
        if (in_shape[0] != want)
            throw ShapeError("layer " + std::to_string(layer_index) + " (" +
                                 layer_kind_name(spec.kind) + "): expected " +
                                 std::to_string(want) + " input channels, got " +
                                 std::to_string(in_shape[0]),
                             layer_index);
    };

    switch (spec.kind) {
        case LayerKind::Dense: {
            if (in_shape.size() != 1 || in_shape[0] != spec.in_features)
                throw ShapeError("layer " + std::to_string(layer_index) +
                                     " (dense): expected flat input of " +
                                     std::to_string(spec.in_features) + " features",
                                 layer_index);
            return {spec.out_features};
        }
        case LayerKind::Conv2d: {
            need_rank3();
            check_channels(spec.in_channels);
            auto [ho, wo] = conv_hw(in_shape[1], in_shape[2], spec.kernel, spec.stride, spec.padding);
            return {spec.out_channels, ho, wo};
        }
        case LayerKind::P4Conv:
        case LayerKind::P4MConv: {
            need_rank3();
            check_channels(spec.in_channels);
            if (in_shape[1] != in_shape[2])
                throw ShapeError("layer " + std::to_string(layer_index) + " (" +
                                     layer_kind_name(spec.kind) + "): requires square input",
                                 layer_index);
            auto [ho, wo] = conv_hw(in_shape[1], in_shape[2], spec.kernel, spec.stride, spec.padding);
            return {static_cast<int64_t>(spec.out_channels) * spec.group_out, ho, wo};
        }
        case LayerKind::ResidualBlock: {
            need_rank3();
            check_channels(spec.in_channels);
            if (spec.block_group > 1 && spec.stride != 1)
                throw ShapeError("layer " + std::to_string(layer_index) +
                                     " (residual-block): group blocks require stride 1",
                                 layer_index);
            auto [ho, wo] = conv_hw(in_shape[1], in_shape[2], 3, spec.stride, 1);
            return {spec.out_channels, ho, wo};
        }
        case LayerKind::Relu:
            return in_shape;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            need_rank3();
            auto [ho, wo] = conv_hw(in_shape[1], in_shape[2], spec.kernel, spec.stride, 0);
            return {in_shape[0], ho, wo};
        }
        case LayerKind::GlobalAvgPool: {
            need_rank3();
            return {in_shape[0]};
        }
        case LayerKind::GroupPool: {
            need_rank3();
            if (in_shape[0] % spec.group_in != 0)
                throw ShapeError("layer " + std::to_string(layer_index) +
                                     " (group-pool): channels not divisible by group size",
                                 layer_index);
            return {in_shape[0] / spec.group_in, in_shape[1], in_shape[2]};
        }
        case LayerKind::Flatten: {
            int64_t n = 1;
            for (int64_t e : in_shape) n *= e;
            return {n};
        }
    }
    throw ShapeError("unknown layer kind", layer_index);
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    int stride, int padding, Tensor& y) {
    const ConvDims d = conv_dims(x, w, stride, padding);
    const int n_batch = static_cast<int>(x.dim(0));
    y = Tensor({n_batch, d.cout, d.ho, d.wo});
    const int cols = d.ho * d.wo;
    const int krows = d.cin * d.k * d.k;

#pragma omp parallel num_threads(thread_count())
    {
        std::vector<double> col(static_cast<size_t>(krows) * cols);
#pragma omp for schedule(static)
        for (int n = 0; n < n_batch; ++n) {
            const double* xn = x.data() + static_cast<size_t>(n) * d.cin * d.h * d.w;
            double* yn = y.data() + static_cast<size_t>(n) * d.cout * cols;
            im2col(xn, d, col.data());
            for (int oc = 0; oc < d.cout; ++oc) {
                const double bias = b.values[static_cast<size_t>(oc)];
                double* row = yn + static_cast<size_t>(oc) * cols;
                std::fill(row, row + cols, bias);
            }
            gemm_nn(w.data(), col.data(), yn, d.cout, cols, krows);
        }
    }
}

void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int padding,
                     const Tensor& dy, Tensor* dx, Tensor* dw, Tensor* db) {
    const ConvDims d = conv_dims(x, w, stride, padding);
    const int n_batch = static_cast<int>(x.dim(0));
    const int cols = d.ho * d.wo;
    const int krows = d.cin * d.k * d.k;

    if (dx) *dx = Tensor(x.shape);

    const int nthreads = thread_count();
    std::vector<std::vector<double>> dw_acc, db_acc;
    if (dw) dw_acc.assign(static_cast<size_t>(nthreads), std::vector<double>(w.values.size(), 0.0));
    if (db) db_acc.assign(static_cast<size_t>(nthreads), std::vector<double>(static_cast<size_t>(d.cout), 0.0));

#pragma omp parallel num_threads(nthreads)
    {
        const int tid = this_thread_index();
        std::vector<double> col(static_cast<size_t>(krows) * cols);
        std::vector<double> dcol(static_cast<size_t>(krows) * cols);
#pragma omp for schedule(static)
        for (int n = 0; n < n_batch; ++n) {
            const double* xn = x.data() + static_cast<size_t>(n) * d.cin * d.h * d.w;
            const double* dyn = dy.data() + static_cast<size_t>(n) * d.cout * cols;
            if (dw || dx) im2col(xn, d, col.data());
            if (dw) {
                gemm_nt(dyn, col.data(), dw_acc[static_cast<size_t>(tid)].data(),
                        d.cout, krows, cols);
            }
            if (db) {
                double* acc = db_acc[static_cast<size_t>(tid)].data();
                for (int oc = 0; oc < d.cout; ++oc) {
                    const double* row = dyn + static_cast<size_t>(oc) * cols;
                    double s = 0.0;
                    for (int j = 0; j < cols; ++j) s += row[j];
                    acc[oc] += s;
                }
            }
            if (dx) {
                std::fill(dcol.begin(), dcol.end(), 0.0);
                gemm_tn(w.data(), dyn, dcol.data(), krows, cols, d.cout);
                col2im_add(dcol.data(), d,
                           dx->data() + static_cast<size_t>(n) * d.cin * d.h * d.w);
            }
        }
    }

    // Reduce per-thread accumulators in thread order.
    if (dw) {
        for (int t = 0; t < nthreads; ++t)
            for (size_t i = 0; i < w.values.size(); ++i)
                dw->values[i] += dw_acc[static_cast<size_t>(t)][i];
    }
    if (db) {
        for (int t = 0; t < nthreads; ++t)
            for (int oc = 0; oc < d.cout; ++oc)
                db->values[static_cast<size_t>(oc)] += db_acc[static_cast<size_t>(t)][static_cast<size_t>(oc)];
    }
}

void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y) {
    const int n = static_cast<int>(x.dim(0));
    const int fin = static_cast<int>(x.dim(1));
    const int fout = static_cast<int>(w.dim(0));
    if (w.dim(1) != fin) throw ShapeError("dense: weight/input feature mismatch");
    y = Tensor({n, fout});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < fout; ++j)
            y.values[static_cast<size_t>(i) * fout + j] = b.values[static_cast<size_t>(j)];
    gemm_nt(x.data(), w.data(), y.data(), n, fout, fin);
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                    Tensor* dx, Tensor* dw, Tensor* db) {
    const int n = static_cast<int>(x.dim(0));
    const int fin = static_cast<int>(x.dim(1));
    const int fout = static_cast<int>(w.dim(0));
    if (dx) {
        *dx = Tensor(x.shape);
        gemm_nn(dy.data(), w.data(), dx->data(), n, fin, fout);
    }
    if (dw) gemm_tn(dy.data(), x.data(), dw->data(), fout, fin, n);
    if (db) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < fout; ++j)
                db->values[static_cast<size_t>(j)] += dy.values[static_cast<size_t>(i) * fout + j];
    }
}

// ---------------------------------------------------------------------------
// group-equivariant filter machinery
// ---------------------------------------------------------------------------

int group_size(LayerKind kind) {
    if (kind == LayerKind::P4Conv) return 4;
    if (kind == LayerKind::P4MConv) return 8;
    return 1;
}

int d4_compose(int a, int b) {
    const int ma = a >> 2, ra = a & 3;
    const int mb = b >> 2, rb = b & 3;
    const int m = ma ^ mb;
    const int r = mb ? ((rb - ra) & 3) : ((ra + rb) & 3);
    return (m << 2) | r;
}

int d4_inverse(int a) {
    const int m = a >> 2, r = a & 3;
    return (m << 2) | (m ? r : ((4 - r) & 3));
}

namespace {

// Destination (kh,kw) of a base entry (i,j) under mirror^m rot90^r for a kxk
// kernel; equivalently out[y][x] = in[source(y,x)] with source inverted here.
// rot90 (one CCW quarter turn): out[y][x] = in[x][k-1-y].
// mirror (horizontal):          out[y][x] = in[y][k-1-x].
inline void transform_kernel_index(int e, int k, int i, int j, int* oi, int* oj) {
    int y = i, x = j;
    const int r = e & 3;
    for (int t = 0; t < r; ++t) {  // forward rotation of the *position*
        const int ny = k - 1 - x;
        const int nx = y;
        y = ny;
        x = nx;
    }
    if (e >> 2) x = k - 1 - x;
    *oi = y;
    *oj = x;
}

}  // namespace

void expand_group_filters(const Tensor& base, int group, int group_in, Tensor& expanded) {
    const int cout = static_cast<int>(base.dim(0));
    const int cin = static_cast<int>(base.dim(1));
    const int k = static_cast<int>(base.dim(2));
    expanded = Tensor({static_cast<int64_t>(cout) * group, cin, k, k});

    for (int ob = 0; ob < cout; ++ob) {
        for (int e = 0; e < group; ++e) {
            const int einv = d4_inverse(e);
            for (int ic = 0; ic < cin; ++ic) {
                // Which base input channel feeds expanded channel ic under e.
                int src_ic = ic;
                if (group_in > 1) {
                    const int ib = ic / group_in;
                    const int g = ic % group_in;
                    src_ic = ib * group_in + d4_compose(einv, g);
                }
                for (int i = 0; i < k; ++i) {
                    for (int j = 0; j < k; ++j) {
                        int oi, oj;
                        transform_kernel_index(e, k, i, j, &oi, &oj);
                        expanded.at4(static_cast<int64_t>(ob) * group + e, ic, oi, oj) =
                            base.at4(ob, src_ic, i, j);
                    }
                }
            }
        }
    }
}

void reduce_group_filter_grads(const Tensor& d_expanded, int group, int group_in,
                               Tensor& d_base) {
    const int cout = static_cast<int>(d_base.dim(0));
    const int cin = static_cast<int>(d_base.dim(1));
    const int k = static_cast<int>(d_base.dim(2));
    for (int ob = 0; ob < cout; ++ob) {
        for (int e = 0; e < group; ++e) {
            const int einv = d4_inverse(e);
            for (int ic = 0; ic < cin; ++ic) {
                int src_ic = ic;
                if (group_in > 1) {
                    const int ib = ic / group_in;
                    const int g = ic % group_in;
                    src_ic = ib * group_in + d4_compose(einv, g);
                }
                for (int i = 0; i < k; ++i) {
                    for (int j = 0; j < k; ++j) {
                        int oi, oj;
                        transform_kernel_index(e, k, i, j, &oi, &oj);
                        d_base.at4(ob, src_ic, i, j) +=
                            d_expanded.at4(static_cast<int64_t>(ob) * group + e, ic, oi, oj);
                    }
                }
            }
        }
    }
}

Tensor rot90(const Tensor& t, int quarter_turns) {
    int q = ((quarter_turns % 4) + 4) % 4;
    Tensor cur = t;
    while (q-- > 0) {
        const int rank = cur.rank();
        const int64_t h = cur.dim(rank - 2);
        const int64_t w = cur.dim(rank - 1);
        int64_t planes = 1;
        for (int i = 0; i < rank - 2; ++i) planes *= cur.dim(i);
        std::vector<int64_t> shape = cur.shape;
        shape[static_cast<size_t>(rank - 2)] = w;
        shape[static_cast<size_t>(rank - 1)] = h;
        Tensor out(shape);
        for (int64_t p = 0; p < planes; ++p) {
            const double* in = cur.data() + p * h * w;
            double* o = out.data() + p * h * w;
            for (int64_t y = 0; y < w; ++y)
                for (int64_t x = 0; x < h; ++x)
                    o[y * h + x] = in[x * w + (w - 1 - y)];
        }
        cur = std::move(out);
    }
    return cur;
}

Tensor mirror_w(const Tensor& t) {
    const int rank = t.rank();
    const int64_t h = t.dim(rank - 2);
    const int64_t w = t.dim(rank - 1);
    int64_t planes = 1;
    for (int i = 0; i < rank - 2; ++i) planes *= t.dim(i);
    Tensor out(t.shape);
    for (int64_t p = 0; p < planes; ++p) {
        const double* in = t.data() + p * h * w;
        double* o = out.data() + p * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                o[y * w + x] = in[y * w + (w - 1 - x)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// pointwise / pooling
// ---------------------------------------------------------------------------

void relu_forward(const Tensor& x, Tensor& y) {
    y = Tensor(x.shape);
    for (size_t i = 0; i < x.values.size(); ++i)
        y.values[i] = x.values[i] > 0.0 ? x.values[i] : 0.0;
}

void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    dx = Tensor(x.shape);
    for (size_t i = 0; i < x.values.size(); ++i)
        dx.values[i] = x.values[i] > 0.0 ? dy.values[i] : 0.0;
}

void maxpool_forward(const Tensor& x, int kernel, int stride, Tensor& y,
                     std::vector<int32_t>& argmax) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t ho = (h - kernel) / stride + 1;
    const int64_t wo = (w - kernel) / stride + 1;
    y = Tensor({n, c, ho, wo});
    argmax.assign(static_cast<size_t>(n * c * ho * wo), 0);
    size_t oi = 0;
    for (int64_t in = 0; in < n; ++in) {
        for (int64_t ic = 0; ic < c; ++ic) {
            const double* plane = x.data() + (in * c + ic) * h * w;
            for (int64_t oh = 0; oh < ho; ++oh) {
                for (int64_t ow = 0; ow < wo; ++ow, ++oi) {
                    double best = -1e300;
                    int32_t best_idx = 0;
                    for (int kh = 0; kh < kernel; ++kh) {
                        const int64_t ih = oh * stride + kh;
                        for (int kw = 0; kw < kernel; ++kw) {
                            const int64_t iw = ow * stride + kw;
                            const double v = plane[ih * w + iw];
                            if (v > best) {
                                best = v;
                                best_idx = static_cast<int32_t>(ih * w + iw);
                            }
                        }
                    }
                    y.values[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
}

void maxpool_backward(const Tensor& x, int kernel, int stride, const Tensor& dy,
                      const std::vector<int32_t>& argmax, Tensor& dx) {
    (void)kernel;
    (void)stride;
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t planes = n * c;
    const int64_t out_plane = dy.dim(2) * dy.dim(3);
    dx = Tensor(x.shape);
    for (int64_t p = 0; p < planes; ++p) {
        double* dplane = dx.data() + p * h * w;
        const double* dyp = dy.data() + p * out_plane;
        const int32_t* am = argmax.data() + p * out_plane;
        for (int64_t i = 0; i < out_plane; ++i) dplane[am[i]] += dyp[i];
    }
}

void avgpool_forward(const Tensor& x, int kernel, int stride, Tensor& y) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t ho = (h - kernel) / stride + 1;
    const int64_t wo = (w - kernel) / stride + 1;
    const double inv = 1.0 / (kernel * kernel);
    y = Tensor({n, c, ho, wo});
    size_t oi = 0;
    for (int64_t p = 0; p < n * c; ++p) {
        const double* plane = x.data() + p * h * w;
        for (int64_t oh = 0; oh < ho; ++oh)
            for (int64_t ow = 0; ow < wo; ++ow, ++oi) {
                double s = 0.0;
                for (int kh = 0; kh < kernel; ++kh)
                    for (int kw = 0; kw < kernel; ++kw)
                        s += plane[(oh * stride + kh) * w + ow * stride + kw];
                y.values[oi] = s * inv;
            }
    }
}

void avgpool_backward(const Tensor& x, int kernel, int stride, const Tensor& dy, Tensor& dx) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t ho = dy.dim(2), wo = dy.dim(3);
    const double inv = 1.0 / (kernel * kernel);
    dx = Tensor(x.shape);
    size_t oi = 0;
    for (int64_t p = 0; p < n * c; ++p) {
        double* dplane = dx.data() + p * h * w;
        for (int64_t oh = 0; oh < ho; ++oh)
            for (int64_t ow = 0; ow < wo; ++ow, ++oi) {
                const double g = dy.values[oi] * inv;
                for (int kh = 0; kh < kernel; ++kh)
                    for (int kw = 0; kw < kernel; ++kw)
                        dplane[(oh * stride + kh) * w + ow * stride + kw] += g;
            }
    }
}

void global_avgpool_forward(const Tensor& x, Tensor& y) {
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    y = Tensor({n, c});
    const double inv = 1.0 / static_cast<double>(hw);
    for (int64_t p = 0; p < n * c; ++p) {
        const double* plane = x.data() + p * hw;
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += plane[i];
        y.values[static_cast<size_t>(p)] = s * inv;
    }
}

void global_avgpool_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    dx = Tensor(x.shape);
    const double inv = 1.0 / static_cast<double>(hw);
    for (int64_t p = 0; p < n * c; ++p) {
        const double g = dy.values[static_cast<size_t>(p)] * inv;
        double* dplane = dx.data() + p * hw;
        for (int64_t i = 0; i < hw; ++i) dplane[i] = g;
    }
}

void group_pool_forward(const Tensor& x, int group, Tensor& y) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t cb = c / group;
    const int64_t hw = h * w;
    y = Tensor({n, cb, h, w});
    const double inv = 1.0 / group;
    for (int64_t in = 0; in < n; ++in)
        for (int64_t b = 0; b < cb; ++b) {
            double* out = y.data() + (in * cb + b) * hw;
            for (int e = 0; e < group; ++e) {
                const double* src = x.data() + (in * c + b * group + e) * hw;
                if (e == 0)
                    for (int64_t i = 0; i < hw; ++i) out[i] = src[i];
                else
                    for (int64_t i = 0; i < hw; ++i) out[i] += src[i];
            }
            for (int64_t i = 0; i < hw; ++i) out[i] *= inv;
        }
}

void group_pool_backward(const Tensor& x, int group, const Tensor& dy, Tensor& dx) {
    const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const int64_t cb = c / group;
    dx = Tensor(x.shape);
    const double inv = 1.0 / group;
    for (int64_t in = 0; in < n; ++in)
        for (int64_t b = 0; b < cb; ++b) {
            const double* g = dy.data() + (in * cb + b) * hw;
            for (int e = 0; e < group; ++e) {
                double* dst = dx.data() + (in * c + b * group + e) * hw;
                for (int64_t i = 0; i < hw; ++i) dst[i] = g[i] * inv;
            }
        }
}

}  // namespace rlab
