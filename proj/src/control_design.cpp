#include "modisc/control_design.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "modisc/adjoint.hpp"
#include "modisc/rng.hpp"

namespace modisc {

namespace {

struct Evaluation {
  double value = kDivergedObjective;
  std::vector<double> gradient;
  bool diverged = false;
};

/// Objective (and optionally its gradient) for a raw sample vector already inside the box.
class ReducedObjective {
 public:
  ReducedObjective(const ModelInstance& first, const ModelInstance& second,
                   const ControlMemory& memory, const TimeGrid& grid,
                   const ControlDesignConfig& cfg)
      : first_(first), second_(second), grid_(grid), cfg_(cfg),
        weights_(trapezoid_weights(grid.size(), grid.dt())),
        memory_sum_(grid.size(), 0.0) {
    for (std::size_t j = 0; j < memory.size(); ++j) {
      const auto v = memory[j].values();
      if (!(memory[j].grid() == grid)) {
        throw ContractViolation("control memory entry uses a different grid");
      }
      for (std::size_t m = 0; m < v.size(); ++m) memory_sum_[m] += v[m];
    }
  }

  Evaluation operator()(const std::vector<double>& u, bool with_gradient) const {
    const ControlSignal signal(grid_, u, cfg_.bounds());
    Evaluation out;
    std::optional<SimulationResult> a, b;
    try {
      a = simulate(first_, signal, {}, blowup_guard());
      b = simulate(second_, signal, {}, blowup_guard());
    } catch (const IntegrationDiverged&) {
      out.diverged = true;
      if (with_gradient) out.gradient.assign(u.size(), 0.0);
      return out;
    }
    const std::size_t size = u.size();
    double gap = 0.0, energy = 0.0, overlap = 0.0;
    std::vector<double> bar(with_gradient ? size : 0);
    for (std::size_t m = 0; m < size; ++m) {
      const double diff = a->output.values[m] - b->output.values[m];
      gap += weights_[m] * diff * diff;
      energy += weights_[m] * u[m] * u[m];
      overlap += weights_[m] * u[m] * memory_sum_[m];
      if (with_gradient) bar[m] = 2.0 * weights_[m] * diff;
    }
    out.value = gap - cfg_.c1 * energy - cfg_.c2 * overlap;
    if (!with_gradient) return out;

    const auto ga = backpropagate(first_, signal, a->states, bar);
    for (double& v : bar) v = -v;
    const auto gb = backpropagate(second_, signal, b->states, bar);
    out.gradient.resize(size);
    for (std::size_t m = 0; m < size; ++m) {
      out.gradient[m] = ga.control[m] + gb.control[m] -
                        2.0 * cfg_.c1 * weights_[m] * u[m] - cfg_.c2 * weights_[m] * memory_sum_[m];
    }
    return out;
  }

 private:
  const ModelInstance& first_;
  const ModelInstance& second_;
  TimeGrid grid_;
  const ControlDesignConfig& cfg_;
  std::vector<double> weights_;
  std::vector<double> memory_sum_;
};

double energy_of(std::span<const double> u, double dt) {
  std::vector<double> sq(u.size());
  for (std::size_t m = 0; m < u.size(); ++m) sq[m] = u[m] * u[m];
  return trapezoid(sq, dt);
}

double norm2(std::span<const double> v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

struct RestartOutcome {
  std::vector<double> u;
  double initial_value = kDivergedObjective;
  double value = kDivergedObjective;
  double pg_norm = 0.0;
};

RestartOutcome ascend(const ReducedObjective& objective, std::vector<double> start,
                      const TimeGrid& grid, const ControlDesignConfig& cfg) {
  const auto bounds = cfg.bounds();
  const auto& solver = cfg.solver;
  std::vector<double> u = repair(std::move(start), grid.dt(), cfg);
  Evaluation current = objective(u, true);

  RestartOutcome best{u, current.value, current.value, 0.0};
  double move = solver.initial_move;
  std::vector<double> trial(u.size());

  for (std::size_t it = 0; it < solver.max_iterations; ++it) {
    const auto pg = projected_gradient(u, current.gradient, bounds);
    const double pg_norm = norm2(pg);
    if (current.value >= best.value) best.pg_norm = pg_norm;
    if (pg_norm < solver.tolerance) break;

    double gmax = 0.0;
    for (double g : current.gradient) gmax = std::max(gmax, std::abs(g));
    if (gmax == 0.0) break;
    double step = move / gmax;

    bool accepted = false;
    Evaluation candidate;
    for (std::size_t bt = 0; bt < solver.max_backtracks; ++bt) {
      double slope = 0.0;
      for (std::size_t m = 0; m < u.size(); ++m) {
        trial[m] = std::clamp(u[m] + step * current.gradient[m], bounds.lo, bounds.hi);
        slope += current.gradient[m] * (trial[m] - u[m]);
      }
      candidate = objective(trial, false);
      if (!candidate.diverged && candidate.value >= current.value + solver.armijo * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    double largest = 0.0;
    for (std::size_t m = 0; m < u.size(); ++m) largest = std::max(largest, std::abs(trial[m] - u[m]));
    u = repair(trial, grid.dt(), cfg);
    current = objective(u, true);
    if (!current.diverged && current.value > best.value) {
      best.u = u;
      best.value = current.value;
      best.pg_norm = norm2(projected_gradient(u, current.gradient, bounds));
    }
    move = std::clamp(2.0 * largest, 1e-6, cfg.u_hi);
  }
  return best;
}

}  // namespace

void ControlDesignConfig::validate(const TimeGrid& grid) const {
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ContractViolation("penalty weights must be positive");
  if (!(u_min_energy > 0.0)) throw ContractViolation("energy floor must be positive");
  if (!(u_hi > 0.0)) throw ContractViolation("upper control bound must be positive");
  if (!(u_min_energy < u_hi * u_hi * grid.horizon())) {
    throw ContractViolation("energy floor exceeds u_hi^2 * T; no feasible control exists");
  }
  if (memory_size < 1) throw ContractViolation("control memory size must be >= 1");
  if (solver.restarts < 1 || solver.max_backtracks < 1) {
    throw ContractViolation("solver needs at least one restart and one backtrack");
  }
}

ControlMemory::ControlMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw ContractViolation("control memory capacity must be >= 1");
}

void ControlMemory::push(ControlSignal signal) {
  if (!entries_.empty() && !(entries_.front().grid() == signal.grid())) {
    throw ContractViolation("control memory entries must share one grid");
  }
  entries_.push_front(std::move(signal));
  if (entries_.size() > capacity_) entries_.pop_back();
}

double objective(const ControlSignal& u, const ModelInstance& first, const ModelInstance& second,
                 const ControlMemory& memory, const ControlDesignConfig& cfg) {
  const ReducedObjective f(first, second, memory, u.grid(), cfg);
  return f({u.values().begin(), u.values().end()}, false).value;
}

std::vector<double> objective_gradient(const ControlSignal& u, const ModelInstance& first,
                                       const ModelInstance& second, const ControlMemory& memory,
                                       const ControlDesignConfig& cfg) {
  const ReducedObjective f(first, second, memory, u.grid(), cfg);
  auto eval = f({u.values().begin(), u.values().end()}, true);
  if (eval.diverged) throw IntegrationDiverged(0, "candidate trajectory diverged");
  return std::move(eval.gradient);
}

std::vector<double> projected_gradient(std::span<const double> u, std::span<const double> grad,
                                       ControlBounds bounds) {
  std::vector<double> pg(grad.begin(), grad.end());
  for (std::size_t m = 0; m < u.size(); ++m) {
    if ((u[m] <= bounds.lo && pg[m] < 0.0) || (u[m] >= bounds.hi && pg[m] > 0.0)) pg[m] = 0.0;
  }
  return pg;
}

std::vector<double> repair(std::vector<double> u, double dt, const ControlDesignConfig& cfg) {
  const auto bounds = cfg.bounds();
  for (double& v : u) v = std::clamp(v, bounds.lo, bounds.hi);
  const double horizon = dt * static_cast<double>(u.size() - 1);
  for (int pass = 0; pass < 64; ++pass) {
    const double energy = energy_of(u, dt);
    if (energy >= cfg.u_min_energy) return u;
    if (energy <= 0.0) {
      std::fill(u.begin(), u.end(), std::min(std::sqrt(cfg.u_min_energy / horizon), bounds.hi));
      continue;
    }
    // Slight overshoot keeps rounding from leaving I(u^2) a hair under the floor.
    const double scale = std::sqrt(cfg.u_min_energy / energy) * (1.0 + 1e-12);
    for (double& v : u) v = std::clamp(v * scale, bounds.lo, bounds.hi);
  }
  if (energy_of(u, dt) < cfg.u_min_energy) {
    throw ContractViolation("energy floor unreachable under the control bounds");
  }
  return u;
}

ControlSignal initial_control(const TimeGrid& grid, double u_hi) {
  return ControlSignal::box(grid, std::min(5.0, u_hi), 0.0, 0.2 * grid.horizon(), {0.0, u_hi});
}

ControlSignal random_piecewise_constant(const TimeGrid& grid, double u_hi, std::size_t segments,
                                        std::uint64_t seed) {
  if (segments < 1) throw ContractViolation("need at least one segment");
  auto engine = stream_engine(seed, 0x7077636fULL);
  std::vector<double> levels(segments);
  for (double& l : levels) l = uniform(engine, 0.0, u_hi);
  std::vector<double> v(grid.size());
  for (std::size_t m = 0; m < v.size(); ++m) {
    const std::size_t seg = std::min(segments - 1, m * segments / grid.n_steps());
    v[m] = levels[seg];
  }
  return ControlSignal(grid, std::move(v), {0.0, u_hi});
}

DesignResult design_control(const ModelInstance& first, const ModelInstance& second,
                            const ControlMemory& memory, const TimeGrid& grid,
                            const ControlDesignConfig& cfg, std::uint64_t seed) {
  cfg.validate(grid);
  const ReducedObjective objective(first, second, memory, grid, cfg);

  // Random piecewise-constant starts, then the previous optimum and the
  // half-amplitude box pulse.
  std::vector<std::vector<double>> starts;
  const std::size_t restarts = cfg.solver.restarts;
  const std::size_t fixed = std::min<std::size_t>(2, restarts);
  for (std::size_t r = 0; r + fixed < restarts; ++r) {
    const auto s = random_piecewise_constant(grid, cfg.u_hi, 8, derive_seed(seed, r));
    starts.emplace_back(s.values().begin(), s.values().end());
  }
  if (fixed >= 1) {
    // Without history the previous-optimum slot gets another random start.
    const auto prev = memory.empty()
                          ? random_piecewise_constant(grid, cfg.u_hi, 8, derive_seed(seed, restarts))
                          : memory.newest();
    starts.emplace_back(prev.values().begin(), prev.values().end());
  }
  if (fixed >= 2) {
    const auto box = ControlSignal::box(grid, cfg.u_hi / 2.0, 0.0, 0.2 * grid.horizon(), cfg.bounds());
    starts.emplace_back(box.values().begin(), box.values().end());
  }

  std::vector<std::future<RestartOutcome>> jobs;
  jobs.reserve(starts.size());
  for (auto& s : starts) {
    jobs.push_back(std::async(std::launch::async, [&, start = std::move(s)]() mutable {
      return ascend(objective, std::move(start), grid, cfg);
    }));
  }

  std::vector<RestartOutcome> outcomes;
  for (auto& job : jobs) outcomes.push_back(job.get());

  std::size_t best = 0;
  for (std::size_t r = 1; r < outcomes.size(); ++r) {
    if (outcomes[r].value > outcomes[best].value) best = r;
  }
  DesignResult result{ControlSignal(grid, outcomes[best].u, cfg.bounds()), outcomes[best].value,
                      outcomes[best].pg_norm, best, {}, {}};
  for (const auto& o : outcomes) {
    result.restart_initial_objectives.push_back(o.initial_value);
    result.restart_final_objectives.push_back(o.value);
  }
  return result;
}

}  // namespace modisc
