#pragma once

// Least-squares parameter fitting with Adam and discrete-adjoint gradients.

#include <cstdint>
#include <span>
#include <vector>

#include "modisc/adam.hpp"
#include "modisc/model.hpp"

namespace modisc {

/// Loss reported when a candidate trajectory blows up.
inline constexpr double kDivergedLoss = 1e12;

/// A control and the reference measurements it produced, on a shared grid.
struct Dataset {
  ControlSignal control;
  ObservationSeries measured;

  Dataset(ControlSignal c, ObservationSeries z);
};

enum class HistoryMode { LatestOnly, FullHistory };

struct FitConfig {
  std::size_t n_grad = 300;
  AdamParameters adam{};
  HistoryMode history = HistoryMode::LatestOnly;

  void validate() const;
};

struct FitReport {
  std::vector<double> theta_after;
  double loss_after = 0.0;
  double max_param_increment = 0.0;
  std::size_t epochs = 0;
  /// Epochs whose trajectory diverged; each one halves the step size.
  std::size_t diverged_epochs = 0;
  /// Set when a non-finite loss or gradient stopped the fit early.
  bool aborted = false;
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
  bool diverged = false;
};

/// I((Y - Z)^2) on the dataset grid. Returns kDivergedLoss when the model blows up.
double loss(const ModelInstance& model, const Dataset& data);

/// Exact gradient of `loss` with respect to theta; throws IntegrationDiverged.
std::vector<double> loss_gradient(const ModelInstance& model, const Dataset& data);

/// Loss and gradient from one forward and one reverse sweep.
LossGradient loss_and_gradient(const ModelInstance& model, const Dataset& data);

/// Sum over `datasets` (or only the last one in LatestOnly mode).
LossGradient history_loss_and_gradient(const ModelInstance& model,
                                       std::span<const Dataset> datasets, HistoryMode mode);

/// Runs cfg.n_grad Adam epochs from `start` and returns the best iterate seen.
FitReport fit(const ModelInstance& start, std::span<const Dataset> datasets, const FitConfig& cfg);

/// Fresh candidate: rates ~ U(0.01, 1), output gains ~ U(-1, -0.05).
ModelInstance random_model(ModelKind kind, std::uint64_t seed);

}  // namespace modisc
