#pragma once

#include <string>
#include <vector>

#include "rlab/tensor.hpp"

namespace rlab {

enum class LayerKind : uint16_t {
    Dense = 0,
    Conv2d = 1,
    Relu = 2,
    MaxPool = 3,
    AvgPool = 4,
    GlobalAvgPool = 5,
    GroupPool = 6,
    Flatten = 7,
    ResidualBlock = 8,
    P4Conv = 9,
    P4MConv = 10,
};

const char* layer_kind_name(LayerKind k);

/// Declarative description of one layer. Parameter tensors live in the
/// owning ModelGraph under names derived from `name` (e.g. "stem.w").
struct LayerSpec {
    LayerKind kind{};
    std::string name;

    // conv / pool
    int in_channels = 0;   // total input channels (group copies included)
    int out_channels = 0;  // base output channels (per group copy for p4/p4m)
    int kernel = 0;
    int stride = 1;
    int padding = 0;

    // dense
    int in_features = 0;
    int out_features = 0;

    // group structure: 1 for plain layers; p4 -> 4, p4m -> 8
    int group_in = 1;   // group copies already present in the input
    int group_out = 1;  // group copies produced (4 for p4, 8 for p4m)

    // residual block: conv kind inside the block (1 plain, 4 p4, 8 p4m) and
    // whether the skip path is a 1x1 projection.
    int block_group = 1;
    bool projection = false;

    void validate() const;
};

// Convenience constructors.
LayerSpec dense_layer(const std::string& name, int in_features, int out_features);
LayerSpec conv2d_layer(const std::string& name, int in_channels, int out_channels,
                       int kernel, int stride, int padding);
LayerSpec relu_layer();
LayerSpec maxpool_layer(int kernel, int stride);
LayerSpec avgpool_layer(int kernel, int stride);
LayerSpec global_avgpool_layer();
LayerSpec group_pool_layer(int group);
LayerSpec flatten_layer();
LayerSpec residual_block_layer(const std::string& name, int in_channels, int out_channels,
                               int stride, int block_group = 1);
LayerSpec p4conv_layer(const std::string& name, int in_channels, int out_channels,
                       int kernel, int padding, int group_in = 1);
LayerSpec p4mconv_layer(const std::string& name, int in_channels, int out_channels,
                        int kernel, int padding, int group_in = 1);

/// Output shape (C,H,W) of a layer applied to input shape (C,H,W).
/// Throws ShapeError naming `layer_index` on mismatch.
std::vector<int64_t> layer_output_shape(const LayerSpec& spec,
                                        const std::vector<int64_t>& in_shape,
                                        int layer_index);

// ---------------------------------------------------------------------------
// Plain conv2d kernels (batched, correlation convention).
//   x (N,Cin,H,W), w (Cout,Cin,k,k), b (Cout) -> y (N,Cout,Ho,Wo)
// ---------------------------------------------------------------------------

void conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    int stride, int padding, Tensor& y);
/// Any of dx/dw/db may be null. dw/db are accumulated into (caller zeroes).
void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int padding,
                     const Tensor& dy, Tensor* dx, Tensor* dw, Tensor* db);

void dense_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y);
void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                    Tensor* dx, Tensor* dw, Tensor* db);

// ---------------------------------------------------------------------------
// Group-equivariant convolution (p4: 90-degree rotations; p4m: + mirror).
// Base filters hold one copy per base output channel; copies for the other
// group elements are exact index permutations of the base filter, produced
// by expand_group_filters. Output channel layout: oc_base * G + element.
// ---------------------------------------------------------------------------

/// Number of group elements: 4 for p4, 8 for p4m.
int group_size(LayerKind kind);

/// Composition of dihedral-group elements (mirror^m rot^r encoded m*4+r).
/// p4 uses the rotation-only subgroup (elements 0..3).
int d4_compose(int a, int b);
int d4_inverse(int a);

/// base (Cout, Cin_total, k, k) -> expanded (Cout*G, Cin_total, k, k).
/// group_in == 1 lifts a plain image; group_in == G transforms a group
/// feature map (input channel layout ic_base * G + element).
void expand_group_filters(const Tensor& base, int group, int group_in, Tensor& expanded);

/// Transpose of expand_group_filters: accumulates expanded-filter gradients
/// back onto base-filter slots.
void reduce_group_filter_grads(const Tensor& d_expanded, int group, int group_in,
                               Tensor& d_base);

/// Exact 90-degree CCW rotation / horizontal mirror of the spatial dims of a
/// (C,H,W) or (N,C,H,W) tensor. Pure index permutations.
Tensor rot90(const Tensor& t, int quarter_turns);
Tensor mirror_w(const Tensor& t);

// ---------------------------------------------------------------------------
// Pointwise / pooling kernels.
// ---------------------------------------------------------------------------

void relu_forward(const Tensor& x, Tensor& y);
void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

void maxpool_forward(const Tensor& x, int kernel, int stride, Tensor& y,
                     std::vector<int32_t>& argmax);
void maxpool_backward(const Tensor& x, int kernel, int stride, const Tensor& dy,
                      const std::vector<int32_t>& argmax, Tensor& dx);

void avgpool_forward(const Tensor& x, int kernel, int stride, Tensor& y);
void avgpool_backward(const Tensor& x, int kernel, int stride, const Tensor& dy, Tensor& dx);

void global_avgpool_forward(const Tensor& x, Tensor& y);              // (N,C,H,W)->(N,C)
void global_avgpool_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

void group_pool_forward(const Tensor& x, int group, Tensor& y);       // mean over group slots
void group_pool_backward(const Tensor& x, int group, const Tensor& dy, Tensor& dx);

}  // namespace rlab
