#include "rlab/optim.hpp"

#include <cmath>

namespace rlab {

void sgd_step(ModelGraph& model, const Gradients& grads, SgdState& state,
              double lr, double momentum, double weight_decay) {
    for (auto& [name, param] : model.params) {
        auto git = grads.params.find(name);
        if (git == grads.params.end())
            throw ShapeError("sgd_step: missing gradient for " + name);
        const Tensor& g = git->second;
        if (!g.same_shape(param))
            throw ShapeError("sgd_step: gradient shape mismatch for " + name);

        auto [vit, inserted] = state.velocity.try_emplace(name, Tensor(param.shape));
        Tensor& v = vit->second;
        for (size_t i = 0; i < param.values.size(); ++i) {
            const double vi = momentum * v.values[i] + g.values[i] +
                              weight_decay * param.values[i];
            const double p = param.values[i] - lr * vi;
            if (!std::isfinite(p))
                throw NumericError("sgd_step: non-finite update in " + name);
            v.values[i] = vi;
            param.values[i] = p;
        }
    }
}

}  // namespace rlab
