#include "modisc/model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include "modisc/rng.hpp"

namespace modisc {

namespace {

// Full-state indices are zero-based; the last state of each model is the
// eliminated one (closed for 3/4-state, closed x6 for 6-state).
constexpr std::array<Transition, 3> kThreeTransitions{{
    {2, 0, 0, true},   // C -> O
    {0, 1, 1, false},  // O -> D
    {1, 2, 2, true},   // D -> C
}};
constexpr std::array<OutputTerm, 1> kThreeOutput{{{0, 3}}};

constexpr std::array<Transition, 7> kFourTransitions{{
    {3, 0, 0, true},   // C1 -> O1
    {1, 0, 1, true},   // O2 -> O1
    {0, 3, 2, false},  // O1 -> C1
    {0, 1, 3, true},   // O1 -> O2
    {2, 1, 4, true},   // C2 -> O2
    {1, 2, 5, false},  // O2 -> C2
    {2, 3, 6, false},  // C2 -> C1
}};
constexpr std::array<OutputTerm, 2> kFourOutput{{{0, 8}, {1, 7}}};

constexpr std::array<Transition, 9> kSixTransitions{{
    {5, 0, 0, true},   // C1 -> I1
    {0, 1, 1, false},  // I1 -> O1
    {2, 1, 2, true},   // O2 -> O1
    {1, 5, 3, false},  // O1 -> C1
    {1, 2, 4, true},   // O1 -> O2
    {3, 2, 5, false},  // I2 -> O2
    {2, 4, 6, false},  // O2 -> C2
    {4, 3, 7, true},   // C2 -> I2
    {4, 5, 8, false},  // C2 -> C1
}};
constexpr std::array<OutputTerm, 2> kSixOutput{{{1, 10}, {2, 9}}};

void check_dims(ModelKind kind, std::size_t x_size, std::size_t theta_size) {
  if (x_size != state_dim(kind)) {
    throw ContractViolation("state has " + std::to_string(x_size) + " components, " +
                            std::string(to_string(kind)) + " expects " +
                            std::to_string(state_dim(kind)));
  }
  if (theta_size != param_count(kind)) {
    throw ContractViolation("parameter vector has " + std::to_string(theta_size) +
                            " entries, " + std::string(to_string(kind)) + " expects " +
                            std::to_string(param_count(kind)));
  }
}

double eliminated(std::span<const double> x) {
  return 1.0 - std::accumulate(x.begin(), x.end(), 0.0);
}

}  // namespace

TimeGrid::TimeGrid(double dt, std::size_t n_steps) : dt_(dt), n_steps_(n_steps) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ContractViolation("time step must be positive");
  if (n_steps < 2) throw ContractViolation("grid needs at least 2 steps");
}

TimeGrid default_grid() { return TimeGrid(0.05, 1000); }

ControlSignal::ControlSignal(TimeGrid grid, std::vector<double> values, ControlBounds bounds)
    : grid_(grid), values_(std::move(values)), bounds_(bounds) {
  if (!(bounds_.lo <= bounds_.hi)) throw ContractViolation("control bounds are inverted");
  if (values_.size() != grid_.size()) {
    throw ContractViolation("control has " + std::to_string(values_.size()) +
                            " samples, grid needs " + std::to_string(grid_.size()));
  }
  for (std::size_t m = 0; m < values_.size(); ++m) {
    const double v = values_[m];
    if (!(v >= bounds_.lo && v <= bounds_.hi)) {
      throw ContractViolation("control sample " + std::to_string(m) + " = " +
                              std::to_string(v) + " outside bounds");
    }
  }
}

ControlSignal ControlSignal::constant(TimeGrid grid, double level, ControlBounds bounds) {
  return ControlSignal(grid, std::vector<double>(grid.size(), level), bounds);
}

ControlSignal ControlSignal::box(TimeGrid grid, double level, double start, double stop,
                                 ControlBounds bounds) {
  std::vector<double> v(grid.size(), 0.0);
  for (std::size_t m = 0; m < v.size(); ++m) {
    const double t = grid.time(m);
    if (t >= start - 1e-12 && t < stop - 1e-12) v[m] = level;
  }
  return ControlSignal(grid, std::move(v), bounds);
}

std::size_t total_states(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::ThreeState: return 3;
    case ModelKind::FourState: return 4;
    case ModelKind::SixState: return 6;
  }
  return 0;
}

std::size_t state_dim(ModelKind kind) noexcept { return total_states(kind) - 1; }

std::size_t param_count(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::ThreeState: return 4;
    case ModelKind::FourState: return 9;
    case ModelKind::SixState: return 11;
  }
  return 0;
}

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::ThreeState: return "ThreeState";
    case ModelKind::FourState: return "FourState";
    case ModelKind::SixState: return "SixState";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "three" || s == "3" || s == "threestate" || s == "3-state" || s == "table3")
    return ModelKind::ThreeState;
  if (s == "four" || s == "4" || s == "fourstate" || s == "4-state" || s == "table4")
    return ModelKind::FourState;
  if (s == "six" || s == "6" || s == "sixstate" || s == "6-state" || s == "table6")
    return ModelKind::SixState;
  throw ContractViolation("unknown model kind '" + std::string(name) + "'");
}

std::span<const Transition> transitions(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::ThreeState: return kThreeTransitions;
    case ModelKind::FourState: return kFourTransitions;
    case ModelKind::SixState: return kSixTransitions;
  }
  return {};
}

std::span<const OutputTerm> output_terms(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::ThreeState: return kThreeOutput;
    case ModelKind::FourState: return kFourOutput;
    case ModelKind::SixState: return kSixOutput;
  }
  return {};
}

std::vector<std::size_t> gain_indices(ModelKind kind) {
  std::vector<std::size_t> out;
  for (const auto& term : output_terms(kind)) out.push_back(term.gain);
  std::sort(out.begin(), out.end());
  return out;
}

ModelInstance::ModelInstance(ModelKind k, std::vector<double> t) : kind(k), theta(std::move(t)) {
  if (theta.size() != param_count(kind)) {
    throw ContractViolation(std::string(to_string(kind)) + " needs " +
                            std::to_string(param_count(kind)) + " parameters, got " +
                            std::to_string(theta.size()));
  }
  for (double v : theta) {
    if (!std::isfinite(v)) throw ContractViolation("parameter vector has non-finite entries");
  }
}

ModelInstance table_model(ModelKind kind) {
  switch (kind) {
    case ModelKind::ThreeState:
      return {kind, {0.24, 0.053, 0.02, -0.533}};
    case ModelKind::FourState:
      return {kind, {0.250, 0.134, 0.130, 0.116, 0.004, 0.089, 0.014, -0.235, -0.27}};
    case ModelKind::SixState:
      return {kind,
              {1.404, 0.883, 0.077, -0.001, 0.644, 0.804, 0.065, 0.003, 0.032, -0.825, -0.186}};
  }
  throw ContractViolation("unknown model kind");
}

void full_drift(ModelKind kind, std::span<const double> full_x, double u,
                std::span<const double> theta, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& tr : transitions(kind)) {
    const double rate = tr.light_driven ? theta[tr.rate] * u : theta[tr.rate];
    const double flow = rate * full_x[tr.source];
    out[tr.source] -= flow;
    out[tr.target] += flow;
  }
}

std::vector<double> drift(ModelKind kind, std::span<const double> x, double u,
                          std::span<const double> theta) {
  check_dims(kind, x.size(), theta.size());
  const std::size_t n = total_states(kind);
  std::vector<double> full(n);
  std::copy(x.begin(), x.end(), full.begin());
  full[n - 1] = eliminated(x);
  std::vector<double> rate(n);
  full_drift(kind, full, u, theta, rate);
  rate.pop_back();
  return rate;
}

double observe(ModelKind kind, std::span<const double> x, std::span<const double> theta) {
  check_dims(kind, x.size(), theta.size());
  double y = 0.0;
  for (const auto& term : output_terms(kind)) y += theta[term.gain] * x[term.state];
  return y;
}

ObservationSeries::ObservationSeries(TimeGrid g, std::vector<double> v)
    : grid(g), values(std::move(v)) {
  if (values.size() != grid.size()) {
    throw ContractViolation("observation series has " + std::to_string(values.size()) +
                            " samples, grid needs " + std::to_string(grid.size()));
  }
}

SimulateOptions blowup_guard() { return {1e6}; }

std::vector<double> rest_state(ModelKind kind) { return std::vector<double>(state_dim(kind), 0.0); }

SimulationResult simulate(const ModelInstance& model, const ControlSignal& control,
                          std::span<const double> initial, SimulateOptions opts) {
  const ModelKind kind = model.kind;
  const std::size_t d = state_dim(kind);
  const std::size_t n = d + 1;
  const TimeGrid& grid = control.grid();
  const double dt = grid.dt();
  const std::size_t size = grid.size();

  std::vector<double> full(n, 0.0);
  full[n - 1] = 1.0;
  if (!initial.empty()) {
    check_dims(kind, initial.size(), model.theta.size());
    std::copy(initial.begin(), initial.end(), full.begin());
    full[n - 1] = eliminated(initial);
  }

  Trajectory traj{d, std::vector<double>(size * d)};
  std::vector<double> y(size);
  std::vector<double> rate(n);
  const auto terms = output_terms(kind);
  const double lo = -opts.state_tolerance;
  const double hi = 1.0 + opts.state_tolerance;

  for (std::size_t m = 0;; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = full[i];
      if (!(v >= lo && v <= hi)) {
        throw IntegrationDiverged(m, "state component " + std::to_string(i) + " = " +
                                         std::to_string(v) + " left the simplex at step " +
                                         std::to_string(m));
      }
    }
    std::copy(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(d),
              traj.states.begin() + static_cast<std::ptrdiff_t>(m * d));
    double out = 0.0;
    for (const auto& term : terms) out += model.theta[term.gain] * full[term.state];
    y[m] = out;
    if (m + 1 == size) break;
    full_drift(kind, full, control[m], model.theta, rate);
    for (std::size_t i = 0; i < d; ++i) full[i] += dt * rate[i];
    // Recompute the dependent state from the free ones so the two stay consistent.
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) sum += full[i];
    full[n - 1] = 1.0 - sum;
  }
  return {std::move(traj), ObservationSeries(grid, std::move(y))};
}

void StochasticConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ContractViolation("alpha must be >= 0");
  if (n_paths < 1) throw ContractViolation("need at least one stochastic path");
}

std::vector<double> stochastic_full_path(const ModelInstance& model, const ControlSignal& control,
                                         double alpha, std::uint64_t seed, std::uint64_t path,
                                         std::size_t* clamp_count) {
  const ModelKind kind = model.kind;
  const std::size_t n = total_states(kind);
  const TimeGrid& grid = control.grid();
  const double dt = grid.dt();
  const double sqrt_dt = std::sqrt(dt);
  const std::size_t size = grid.size();

  std::vector<double> out(size * n);
  std::vector<double> x(n, 0.0);
  x[n - 1] = 1.0;
  std::vector<double> rate(n), root(n), dw(n);
  std::mt19937_64 engine = stream_engine(seed, path);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t clamps = 0;

  for (std::size_t m = 0;; ++m) {
    std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(m * n));
    if (m + 1 == size) break;
    full_drift(kind, x, control[m], model.theta, rate);
    bool needs_projection = false;
    if (alpha > 0.0) {
      // G(X) dW = alpha * (diag(sqrt X) dW - X * sum_j sqrt(x_j) dW_j)
      double weighted = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        root[i] = std::sqrt(std::max(x[i], 0.0));
        dw[i] = normal(engine) * sqrt_dt;
        weighted += root[i] * dw[i];
      }
      for (std::size_t i = 0; i < n; ++i) {
        x[i] += dt * rate[i] + alpha * (root[i] * dw[i] - x[i] * weighted);
      }
      needs_projection = true;
    } else {
      // Noise-free: same update as the deterministic integrator.
      double sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        x[i] += dt * rate[i];
        sum += x[i];
      }
      x[n - 1] = 1.0 - sum;
    }
    bool clamped = false;
    for (double& v : x) {
      if (v < 0.0) {
        v = 0.0;
        clamped = true;
      }
    }
    if (clamped) ++clamps;
    if (needs_projection || clamped) {
      const double sum = std::accumulate(x.begin(), x.end(), 0.0);
      for (double& v : x) v /= sum;
    }
  }
  if (clamp_count != nullptr) *clamp_count = clamps;
  return out;
}

StochasticResult simulate_stochastic(const ModelInstance& model, const ControlSignal& control,
                                     const StochasticConfig& cfg) {
  cfg.validate();
  const ModelKind kind = model.kind;
  const std::size_t n = total_states(kind);
  const TimeGrid& grid = control.grid();
  const std::size_t size = grid.size();
  const auto terms = output_terms(kind);

  std::vector<ObservationSeries> paths;
  paths.reserve(cfg.n_paths);
  if (cfg.alpha == 0.0) {
    // No noise: every path is the plain Euler run.
    auto det = simulate(model, control, {}, blowup_guard()).output;
    for (std::size_t p = 0; p < cfg.n_paths; ++p) paths.push_back(det);
    return {std::move(paths), std::move(det), 0.0, false};
  }
  std::vector<double> mean(size, 0.0);
  std::size_t clamps = 0;
  for (std::size_t p = 0; p < cfg.n_paths; ++p) {
    std::size_t path_clamps = 0;
    const auto full = stochastic_full_path(model, control, cfg.alpha, cfg.seed, p, &path_clamps);
    clamps += path_clamps;
    std::vector<double> y(size);
    for (std::size_t m = 0; m < size; ++m) {
      double out = 0.0;
      for (const auto& term : terms) out += model.theta[term.gain] * full[m * n + term.state];
      y[m] = out;
      mean[m] += out;
    }
    paths.emplace_back(grid, std::move(y));
  }
  for (double& v : mean) v /= static_cast<double>(cfg.n_paths);

  const double fraction =
      static_cast<double>(clamps) / static_cast<double>(cfg.n_paths * grid.n_steps());
  return {std::move(paths), ObservationSeries(grid, std::move(mean)), fraction, fraction > 0.5};
}

double trapezoid(std::span<const double> values, double dt) {
  if (values.size() < 2) throw ContractViolation("trapezoid needs at least two samples");
  // Neumaier summation: long affine sequences stay exact to a few ulps.
  double sum = (values.front() + values.back()) / 2.0;
  double carry = 0.0;
  for (std::size_t m = 1; m + 1 < values.size(); ++m) {
    const double v = values[m];
    const double t = sum + v;
    carry += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return (sum + carry) * dt;
}

std::vector<double> trapezoid_weights(std::size_t size, double dt) {
  if (size < 2) throw ContractViolation("trapezoid needs at least two samples");
  std::vector<double> w(size, dt);
  w.front() = w.back() = dt / 2.0;
  return w;
}

}  // namespace modisc
