#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rlab/layers.hpp"
#include "rlab/tensor.hpp"

namespace rlab {

/// Ordered layer composition with named parameters. Immutable during
/// inference: forward / input-gradient calls never mutate the graph, so a
/// read-only model may be shared across workers. Training mutates params
/// through sgd_step (single writer).
struct ModelGraph {
    std::vector<int64_t> input_shape;  // (C,H,W)
    int class_count = 0;
    std::vector<LayerSpec> layers;
    std::map<std::string, Tensor> params;

    /// Per-example shapes flowing through the chain; entry 0 is input_shape.
    std::vector<std::vector<int64_t>> shape_chain() const;
};

/// Validates the layer chain, allocates zeroed parameters.
ModelGraph build_model(std::vector<int64_t> input_shape, int class_count,
                       std::vector<LayerSpec> layers);

/// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases. Deterministic
/// in (architecture, seed).
void init_params(ModelGraph& model, uint64_t seed);

// Architecture presets. `arch` ids: "micro", "micro-w8", "micro-p4", "tiny",
// "linear". Input shape (C,H,W) and class count come from the dataset.
ModelGraph make_model(const std::string& arch, std::vector<int64_t> input_shape,
                      int class_count, uint64_t seed);
ModelGraph make_micro_resnet(std::vector<int64_t> input_shape, int class_count, int width);
ModelGraph make_micro_p4_resnet(std::vector<int64_t> input_shape, int class_count,
                                int base_width);
ModelGraph make_tiny_conv(std::vector<int64_t> input_shape, int class_count);

/// Trace of one forward pass, consumed by the backward pass.
struct LayerAux {
    std::vector<int32_t> argmax;  // maxpool
    Tensor t1, r1;                // residual block: conv1 output, relu(t1)
};
struct ForwardTrace {
    std::vector<Tensor> acts;  // acts[i] = input of layer i; back() = logits
    std::vector<LayerAux> aux;
};

/// Pure forward pass; logits (N, class_count). Throws ShapeError carrying the
/// offending layer index on mismatch.
Tensor forward(const ModelGraph& model, const Tensor& batch);
Tensor forward(const ModelGraph& model, const Tensor& batch, ForwardTrace& trace);

/// argmax predictions, lowest index wins ties.
std::vector<int> predict(const ModelGraph& model, const Tensor& batch);

enum class GradWant { Params, Input, Both };

struct Gradients {
    std::map<std::string, Tensor> params;
    Tensor input;
};

/// Mean softmax cross-entropy over the batch plus requested gradients.
/// Input gradients never touch parameters. Throws NumericError (with the
/// batch index) if any per-example loss is non-finite.
double loss_and_grads(const ModelGraph& model, const Tensor& batch,
                      const std::vector<int>& labels, GradWant want, Gradients& out);

/// Per-example cross-entropy losses and input gradient with sum semantics
/// (no 1/N); the workhorse of the attack loops.
std::vector<double> per_example_ce_input_grad(const ModelGraph& model, const Tensor& batch,
                                              const std::vector<int>& labels,
                                              Tensor& input_grad);

/// Penultimate representation g(x): the input of the final dense layer.
Tensor representation(const ModelGraph& model, const Tensor& batch);

/// Sum over the batch of ||g(x) - target||^2 and its input gradient.
double repr_match_loss_input_grad(const ModelGraph& model, const Tensor& batch,
                                  const Tensor& target_repr, Tensor& input_grad);

/// Softmax cross-entropy on explicit logits. Returns mean loss; optionally
/// writes mean-reduction dlogits and per-example losses.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits_mean, std::vector<double>* per_example);

}  // namespace rlab
