#pragma once

// Opsin Markov rate models, forward simulation and trapezoidal quadrature.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace modisc {

/// Raised when an argument violates an operation's precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a deterministic trajectory leaves the probability simplex.
class IntegrationDiverged : public std::runtime_error {
 public:
  IntegrationDiverged(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Uniform grid t_m = m * dt, m = 0..n_steps.
class TimeGrid {
 public:
  TimeGrid(double dt, std::size_t n_steps);

  double dt() const noexcept { return dt_; }
  std::size_t n_steps() const noexcept { return n_steps_; }
  std::size_t size() const noexcept { return n_steps_ + 1; }
  double horizon() const noexcept { return dt_ * static_cast<double>(n_steps_); }
  double time(std::size_t m) const noexcept { return dt_ * static_cast<double>(m); }

  bool operator==(const TimeGrid&) const = default;

 private:
  double dt_;
  std::size_t n_steps_;
};

/// dt = 0.05, N = 1000.
TimeGrid default_grid();

struct ControlBounds {
  double lo = 0.0;
  double hi = 10.0;
  bool operator==(const ControlBounds&) const = default;
};

/// Piecewise-linear-in-index input sampled on the grid; bounds are checked on construction.
class ControlSignal {
 public:
  ControlSignal(TimeGrid grid, std::vector<double> values, ControlBounds bounds = {});

  static ControlSignal constant(TimeGrid grid, double level, ControlBounds bounds = {});
  /// `level` on [start, stop) (model time), zero elsewhere.
  static ControlSignal box(TimeGrid grid, double level, double start, double stop,
                           ControlBounds bounds = {});

  const TimeGrid& grid() const noexcept { return grid_; }
  const ControlBounds& bounds() const noexcept { return bounds_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t m) const { return values_[m]; }
  std::size_t size() const noexcept { return values_.size(); }

  bool operator==(const ControlSignal&) const = default;

 private:
  TimeGrid grid_;
  std::vector<double> values_;
  ControlBounds bounds_;
};

enum class ModelKind { ThreeState, FourState, SixState };

/// Total number of conformational states (3, 4, 6).
std::size_t total_states(ModelKind kind) noexcept;
/// Free states after eliminating the last-listed one.
std::size_t state_dim(ModelKind kind) noexcept;
std::size_t param_count(ModelKind kind) noexcept;
/// Occam ordering key; lower is simpler.
inline std::size_t complexity(ModelKind kind) noexcept { return param_count(kind); }

std::string_view to_string(ModelKind kind) noexcept;
/// Accepts "three"/"3"/"ThreeState" style spellings.
ModelKind parse_model_kind(std::string_view name);

/// A transition source -> target at rate theta[rate] (times u when light driven).
/// State indices are zero-based over the full state vector.
struct Transition {
  std::size_t source;
  std::size_t target;
  std::size_t rate;
  bool light_driven;
};

/// Contribution theta[gain] * x[state] to the photocurrent.
struct OutputTerm {
  std::size_t state;
  std::size_t gain;
};

std::span<const Transition> transitions(ModelKind kind) noexcept;
std::span<const OutputTerm> output_terms(ModelKind kind) noexcept;
/// Parameter indices that act as output gains rather than rates.
std::vector<std::size_t> gain_indices(ModelKind kind);

struct ModelInstance {
  ModelKind kind;
  std::vector<double> theta;

  ModelInstance(ModelKind k, std::vector<double> t);
  bool operator==(const ModelInstance&) const = default;
};

/// Fitted reference parameters shipped as presets table3/table4/table6.
ModelInstance table_model(ModelKind kind);

/// Free-state drift with the eliminated state substituted as 1 - sum(x).
std::vector<double> drift(ModelKind kind, std::span<const double> x, double u,
                          std::span<const double> theta);

/// Drift over the full n-state vector (used by the stochastic integrator).
void full_drift(ModelKind kind, std::span<const double> full_x, double u,
                std::span<const double> theta, std::span<double> out);

double observe(ModelKind kind, std::span<const double> x, std::span<const double> theta);

/// Row-major (size() x dim) free-state trajectory.
struct Trajectory {
  std::size_t dim = 0;
  std::vector<double> states;

  std::span<const double> at(std::size_t m) const { return {states.data() + m * dim, dim}; }
  std::size_t size() const noexcept { return dim == 0 ? 0 : states.size() / dim; }
};

struct ObservationSeries {
  TimeGrid grid;
  std::vector<double> values;

  ObservationSeries(TimeGrid g, std::vector<double> v);
  bool operator==(const ObservationSeries&) const = default;
};

struct SimulationResult {
  Trajectory states;
  ObservationSeries output;
};

struct SimulateOptions {
  /// Allowed excursion of any full-state component outside [0, 1].
  double state_tolerance = 1e-9;
};

/// Loose guard for fitting and design, where candidate parameters may leave the
/// physical range: only non-finite or exploding states count as divergence.
SimulateOptions blowup_guard();

/// All-closed rest state (zeros in free coordinates).
std::vector<double> rest_state(ModelKind kind);

/// Forward Euler with left-endpoint control.
SimulationResult simulate(const ModelInstance& model, const ControlSignal& control,
                          std::span<const double> initial = {}, SimulateOptions opts = {});

struct StochasticConfig {
  double alpha = 0.0;
  std::size_t n_paths = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StochasticResult {
  std::vector<ObservationSeries> paths;
  ObservationSeries mean;
  /// Fraction of (path, step) updates where a negative component was clamped.
  double clamp_fraction = 0.0;
  bool noise_overdrive = false;
};

/// Euler-Maruyama on the full simplex with G(X) = alpha (I - X 1^T) diag(sqrt X),
/// followed by clamp-and-renormalize. Path p draws from a stream keyed on (seed, p).
StochasticResult simulate_stochastic(const ModelInstance& model, const ControlSignal& control,
                                     const StochasticConfig& cfg);

/// Same integrator for a single path, returning the full-state trajectory
/// (row-major, total_states(kind) columns). Exposed for conservation checks.
std::vector<double> stochastic_full_path(const ModelInstance& model, const ControlSignal& control,
                                         double alpha, std::uint64_t seed, std::uint64_t path,
                                         std::size_t* clamp_count = nullptr);

/// [(f_0 + f_N)/2 + sum_{m=1}^{N-1} f_m] * dt
double trapezoid(std::span<const double> values, double dt);

/// Weights w_m such that trapezoid(f) = sum w_m f_m.
std::vector<double> trapezoid_weights(std::size_t size, double dt);

}  // namespace modisc
