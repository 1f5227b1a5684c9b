#include "zsr/optim.hpp"

#include "zsr/error.hpp"

namespace zsr {

void sgd_momentum_step(std::span<Tensor> params, std::span<Tensor> velocities, double lr,
                       double momentum) {
  if (params.size() != velocities.size()) {
    throw ValidationError("sgd_momentum_step: " + std::to_string(params.size()) +
                          " parameters but " + std::to_string(velocities.size()) + " velocities");
  }
  if (!(lr >= 0)) throw ValidationError("sgd_momentum_step: lr must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) {
    throw ValidationError("sgd_momentum_step: momentum must be in [0, 1)");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw ValidationError("sgd_momentum_step: parameter " + std::to_string(i) + " " +
                            shape_str(params[i].shape()) + " has no gradient");
    }
    if (velocities[i].shape() != params[i].shape()) {
      throw ShapeError("sgd_momentum_step: velocity " + shape_str(velocities[i].shape()) +
                       " vs parameter " + shape_str(params[i].shape()));
    }
  }
  const float m = static_cast<float>(momentum);
  const float l = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].data();
    auto g = params[i].grad();
    auto v = velocities[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = m * v[j] + g[j];
      theta[j] -= l * v[j];
    }
    params[i].zero_grad();
  }
}

}  // namespace zsr
