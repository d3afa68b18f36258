#pragma once

#include "rlab/model.hpp"

namespace rlab {

/// Momentum buffers, keyed like the model params. Zero-initialised lazily.
struct SgdState {
    std::map<std::string, Tensor> velocity;
};

/// Classic SGD with momentum and additive weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// Throws NumericError on a non-finite update.
void sgd_step(ModelGraph& model, const Gradients& grads, SgdState& state,
              double lr, double momentum, double weight_decay);

}  // namespace rlab
