#pragma once

#include <span>
#include <vector>

#include "modisc/model.hpp"

namespace modisc {

/// Reverse sweep through the forward-Euler recursion of `simulate`.
struct AdjointGradients {
  std::vector<double> theta;    ///< d/d theta
  std::vector<double> control;  ///< d/d u_m, one per grid point
};

/// Back-propagates an output cotangent `output_bar[m]` = dF/dy_m (for some scalar
/// F of the observation series) through the trajectory produced by `simulate`,
/// returning the exact gradient of F with respect to the parameters and the
/// control samples. `states` must come from simulate(model, control).
AdjointGradients backpropagate(const ModelInstance& model, const ControlSignal& control,
                               const Trajectory& states, std::span<const double> output_bar);

}  // namespace modisc
