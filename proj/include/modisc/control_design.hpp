#pragma once

// Discriminating input design: maximize the squared output gap between two
// candidates, penalizing amplitude and similarity to recently used inputs.
// Dynamics are eliminated by single shooting; the reduced problem is solved by
// projected gradient ascent with Armijo backtracking and an energy-floor repair.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "modisc/model.hpp"

namespace modisc {

inline constexpr double kDivergedObjective = -1e12;

struct SolverConfig {
  std::size_t max_iterations = 120;
  /// Largest per-sample move (control units) tried at the start of a line search.
  double initial_move = 2.0;
  std::size_t restarts = 8;
  /// Stop when the projected-gradient 2-norm drops below this.
  double tolerance = 1e-7;
  double armijo = 1e-4;
  std::size_t max_backtracks = 30;
};

struct ControlDesignConfig {
  double c1 = 1e-5;
  double c2 = 5e-6;
  /// Floor on I(u^2).
  double u_min_energy = 1.0;
  double u_hi = 10.0;
  std::size_t memory_size = 5;
  SolverConfig solver{};

  /// Throws ContractViolation unless every weight is positive and the energy floor is
  /// reachable on `grid` under the upper bound.
  void validate(const TimeGrid& grid) const;
  ControlBounds bounds() const { return {0.0, u_hi}; }
};

/// Last J applied controls, newest first.
class ControlMemory {
 public:
  explicit ControlMemory(std::size_t capacity = 5);

  void push(ControlSignal signal);
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return entries_.empty(); }
  const ControlSignal& operator[](std::size_t j) const { return entries_[j]; }
  const ControlSignal& newest() const { return entries_.front(); }

 private:
  std::size_t capacity_;
  std::deque<ControlSignal> entries_;
};

double objective(const ControlSignal& u, const ModelInstance& first, const ModelInstance& second,
                 const ControlMemory& memory, const ControlDesignConfig& cfg);

/// d objective / d u_m for every grid sample.
std::vector<double> objective_gradient(const ControlSignal& u, const ModelInstance& first,
                                       const ModelInstance& second, const ControlMemory& memory,
                                       const ControlDesignConfig& cfg);

/// Component-wise projected gradient for the box [lo, hi].
std::vector<double> projected_gradient(std::span<const double> u, std::span<const double> grad,
                                       ControlBounds bounds);

struct DesignResult {
  ControlSignal control;
  double objective = 0.0;
  double projected_gradient_norm = 0.0;
  std::size_t best_restart = 0;
  /// Objective at each restart's starting point after projection and repair.
  std::vector<double> restart_initial_objectives;
  std::vector<double> restart_final_objectives;
};

DesignResult design_control(const ModelInstance& first, const ModelInstance& second,
                            const ControlMemory& memory, const TimeGrid& grid,
                            const ControlDesignConfig& cfg, std::uint64_t seed);

/// Starting input before any design: amplitude 5 (capped at u_hi) over the first
/// 20% of the horizon.
ControlSignal initial_control(const TimeGrid& grid, double u_hi);

/// Equal-length piecewise-constant segments with levels ~ U[0, u_hi].
ControlSignal random_piecewise_constant(const TimeGrid& grid, double u_hi, std::size_t segments,
                                        std::uint64_t seed);

/// Clip to the box, then rescale toward the energy floor and re-clip until the
/// floor holds. Throws ContractViolation if the floor cannot be met.
std::vector<double> repair(std::vector<double> u, double dt, const ControlDesignConfig& cfg);

}  // namespace modisc
