#include "modisc/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "modisc/adjoint.hpp"
#include "modisc/rng.hpp"

namespace modisc {

Dataset::Dataset(ControlSignal c, ObservationSeries z) : control(std::move(c)), measured(std::move(z)) {
  if (!(control.grid() == measured.grid)) {
    throw ContractViolation("dataset control and measurements use different grids");
  }
}

void FitConfig::validate() const {
  if (n_grad < 1) throw ContractViolation("n_grad must be >= 1");
  if (!(adam.step_size > 0.0)) throw ContractViolation("Adam step size must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ContractViolation("Adam betas must lie in [0, 1)");
  }
}

LossGradient loss_and_gradient(const ModelInstance& model, const Dataset& data) {
  const double dt = data.control.grid().dt();
  const std::size_t size = data.control.size();
  LossGradient out;
  std::optional<SimulationResult> sim;
  try {
    sim = simulate(model, data.control, {}, blowup_guard());
  } catch (const IntegrationDiverged&) {
    out.loss = kDivergedLoss;
    out.gradient.assign(model.theta.size(), 0.0);
    out.diverged = true;
    return out;
  }
  const auto weights = trapezoid_weights(size, dt);
  std::vector<double> bar(size);
  double total = 0.0;
  for (std::size_t m = 0; m < size; ++m) {
    const double r = sim->output.values[m] - data.measured.values[m];
    total += weights[m] * r * r;
    bar[m] = 2.0 * weights[m] * r;
  }
  out.loss = total;
  out.gradient = backpropagate(model, data.control, sim->states, bar).theta;
  return out;
}

double loss(const ModelInstance& model, const Dataset& data) {
  try {
    const auto sim = simulate(model, data.control, {}, blowup_guard());
    std::vector<double> sq(sim.output.values.size());
    for (std::size_t m = 0; m < sq.size(); ++m) {
      const double r = sim.output.values[m] - data.measured.values[m];
      sq[m] = r * r;
    }
    return trapezoid(sq, data.control.grid().dt());
  } catch (const IntegrationDiverged&) {
    return kDivergedLoss;
  }
}

std::vector<double> loss_gradient(const ModelInstance& model, const Dataset& data) {
  auto lg = loss_and_gradient(model, data);
  if (lg.diverged) throw IntegrationDiverged(0, "candidate trajectory diverged");
  return std::move(lg.gradient);
}

LossGradient history_loss_and_gradient(const ModelInstance& model,
                                       std::span<const Dataset> datasets, HistoryMode mode) {
  if (datasets.empty()) throw ContractViolation("fit needs at least one dataset");
  if (mode == HistoryMode::LatestOnly) return loss_and_gradient(model, datasets.back());
  LossGradient total{0.0, std::vector<double>(model.theta.size(), 0.0), false};
  for (const auto& data : datasets) {
    auto lg = loss_and_gradient(model, data);
    if (lg.diverged) return lg;
    total.loss += lg.loss;
    for (std::size_t i = 0; i < total.gradient.size(); ++i) total.gradient[i] += lg.gradient[i];
  }
  return total;
}

FitReport fit(const ModelInstance& start, std::span<const Dataset> datasets, const FitConfig& cfg) {
  cfg.validate();
  const std::size_t p = start.theta.size();
  std::vector<double> theta = start.theta;
  std::vector<double> best_theta = theta;
  double best_loss = std::numeric_limits<double>::infinity();
  Adam adam(p, cfg.adam);
  FitReport report;

  auto is_finite = [](const LossGradient& lg) {
    if (!std::isfinite(lg.loss)) return false;
    return std::all_of(lg.gradient.begin(), lg.gradient.end(),
                       [](double g) { return std::isfinite(g); });
  };

  for (std::size_t epoch = 0; epoch <= cfg.n_grad; ++epoch) {
    const ModelInstance current(start.kind, theta);
    const auto lg = history_loss_and_gradient(current, datasets, cfg.history);
    if (!is_finite(lg)) {
      report.aborted = true;
      break;
    }
    if (lg.diverged) {
      // Back off to the best iterate with a smaller step.
      ++report.diverged_epochs;
      theta = best_theta;
      adam.reset();
      adam.parameters().step_size *= 0.5;
      continue;
    }
    if (lg.loss < best_loss) {
      best_loss = lg.loss;
      best_theta = theta;
    }
    report.epochs = epoch;
    if (epoch == cfg.n_grad) break;
    adam.step(theta, lg.gradient);
    if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); })) {
      report.aborted = true;
      break;
    }
  }

  if (!std::isfinite(best_loss)) {
    best_loss = kDivergedLoss;
    best_theta = start.theta;
  }
  report.theta_after = best_theta;
  report.loss_after = best_loss;
  for (std::size_t i = 0; i < p; ++i) {
    report.max_param_increment =
        std::max(report.max_param_increment, std::abs(best_theta[i] - start.theta[i]));
  }
  return report;
}

ModelInstance random_model(ModelKind kind, std::uint64_t seed) {
  auto engine = stream_engine(seed, 0x7468657461ULL);
  const auto gains = gain_indices(kind);
  std::vector<double> theta(param_count(kind));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const bool is_gain = std::find(gains.begin(), gains.end(), i) != gains.end();
    theta[i] = is_gain ? uniform(engine, -1.0, -0.05) : uniform(engine, 0.01, 1.0);
  }
  return {kind, std::move(theta)};
}

}  // namespace modisc
