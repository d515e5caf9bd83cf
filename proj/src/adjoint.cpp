#include "modisc/adjoint.hpp"

#include <numeric>

namespace modisc {

AdjointGradients backpropagate(const ModelInstance& model, const ControlSignal& control,
                               const Trajectory& states, std::span<const double> output_bar) {
  const ModelKind kind = model.kind;
  const std::size_t d = state_dim(kind);
  const std::size_t size = control.size();
  const double dt = control.grid().dt();
  const auto& theta = model.theta;
  const auto trans = transitions(kind);
  const auto terms = output_terms(kind);
  if (states.dim != d || states.size() != size || output_bar.size() != size) {
    throw ContractViolation("adjoint sweep: trajectory, control and cotangent sizes disagree");
  }

  AdjointGradients grad{std::vector<double>(theta.size(), 0.0), std::vector<double>(size, 0.0)};

  // lambda over free states, padded with a zero slot for the eliminated state
  std::vector<double> lambda(d + 1, 0.0);
  std::vector<double> next(d + 1, 0.0);

  auto add_output = [&](std::size_t m, std::vector<double>& lam) {
    const double bar = output_bar[m];
    if (bar == 0.0) return;
    const auto x = states.at(m);
    for (const auto& term : terms) {
      lam[term.state] += bar * theta[term.gain];
      grad.theta[term.gain] += bar * x[term.state];
    }
  };

  add_output(size - 1, lambda);
  for (std::size_t m = size - 1; m-- > 0;) {
    const auto x = states.at(m);
    const double u = control[m];
    const double eliminated = 1.0 - std::accumulate(x.begin(), x.end(), 0.0);
    next = lambda;  // identity part of d x_{m+1} / d x_m
    double shared = 0.0;
    for (const auto& tr : trans) {
      const double contrast = lambda[tr.target] - lambda[tr.source];
      if (contrast == 0.0) continue;
      const double occupancy = tr.source < d ? x[tr.source] : eliminated;
      const double drive = tr.light_driven ? u : 1.0;
      const double k = theta[tr.rate] * drive;
      grad.theta[tr.rate] += dt * drive * occupancy * contrast;
      if (tr.light_driven) grad.control[m] += dt * theta[tr.rate] * occupancy * contrast;
      if (tr.source < d) {
        next[tr.source] += dt * k * contrast;
      } else {
        shared -= dt * k * contrast;
      }
    }
    for (std::size_t i = 0; i < d; ++i) next[i] += shared;
    next[d] = 0.0;
    lambda.swap(next);
    add_output(m, lambda);
  }
  return grad;
}

}  // namespace modisc
