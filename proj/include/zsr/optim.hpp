#pragma once

#include <span>

#include "zsr/tensor.hpp"

namespace zsr {

/// One SGD-with-momentum update: v ← momentum·v + grad; θ ← θ − lr·v; the
/// gradient is zeroed afterwards. Velocities must match the parameters' shapes
/// and start at zero.
void sgd_momentum_step(std::span<Tensor> params, std::span<Tensor> velocities, double lr,
                       double momentum);

}  // namespace zsr
