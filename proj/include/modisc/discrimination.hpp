#pragma once

// Closed-loop discrimination: actuate, fit both candidates, test the stopping
// rule, design the next input; plus sequential pairwise tournaments.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "modisc/control_design.hpp"
#include "modisc/estimation.hpp"
#include "modisc/model.hpp"
#include "modisc/reference.hpp"

namespace modisc {

struct StoppingThresholds {
  std::size_t i_max = 40;
  /// Fitting threshold. With `relative_loss` it is scaled by I(Z^2) of the
  /// current dataset before being compared with a loss.
  double loss_max = 1e-2;
  double delta_max = 1e-3;
  bool relative_loss = true;

  void validate() const;
};

enum class StopReason { SoleFit, Occam };

struct Verdict {
  enum class State { Ongoing, Inconclusive, Conclusive };

  State state = State::Ongoing;
  std::size_t winner = 0;  ///< candidate index (0 or 1) when Conclusive
  StopReason reason = StopReason::SoleFit;

  static Verdict ongoing() { return {}; }
  static Verdict inconclusive() { return {State::Inconclusive, 0, StopReason::SoleFit}; }
  static Verdict conclusive(std::size_t winner, StopReason reason) {
    return {State::Conclusive, winner, reason};
  }
  bool is_conclusive() const noexcept { return state == State::Conclusive; }
  bool operator==(const Verdict&) const = default;
};

std::string to_string(const Verdict& v);

/// The stopping rule, with `loss_max` already absolute:
///   i > i_max                                  -> Inconclusive
///   exactly one loss < loss_max                -> that model if its increment < delta_max
///   both losses < loss_max, k* = argmin loss   -> the simpler model if k*'s increment < delta_max
///   otherwise                                  -> Ongoing
Verdict stopping_verdict(std::size_t i, std::array<double, 2> losses,
                         std::array<double, 2> increments, std::array<ModelKind, 2> kinds,
                         std::size_t i_max, double loss_max, double delta_max);

struct CandidateStep {
  /// Loss of the previous iteration's parameters on this iteration's data.
  double loss_prefit = 0.0;
  double loss_postfit = 0.0;
  double max_param_increment = 0.0;
  std::vector<double> theta;
  bool fit_aborted = false;
};

struct IterationRecord {
  std::size_t index = 0;
  ControlSignal control;
  std::array<CandidateStep, 2> candidates;
  /// Absolute loss threshold used for this iteration.
  double loss_threshold = 0.0;
  /// Objective value of the designed input (0 for the initial pulse).
  double design_objective = 0.0;
  /// Controls held in memory after this iteration.
  std::size_t memory_depth = 0;
  Verdict verdict;
};

struct DiscriminationConfig {
  StoppingThresholds thresholds{};
  FitConfig fit{};
  ControlDesignConfig control{};
  /// When false the loop runs all i_max iterations and the final verdict is the
  /// last iteration's (Inconclusive if still Ongoing).
  bool stop_on_verdict = true;

  void validate(const TimeGrid& grid) const;
};

struct DiscriminationReport {
  std::array<ModelKind, 2> kinds{};
  std::vector<IterationRecord> records;
  Verdict final_verdict;
  std::array<std::vector<double>, 2> final_theta;
  /// The reference failed mid-run; records hold everything gathered before.
  bool truncated = false;
  std::string failure;
  /// i_max reached while exactly one candidate fitted but had not settled.
  bool unsettled_sole_fit = false;
  double wall_seconds = 0.0;
};

using IterationObserver = std::function<void(const IterationRecord&)>;

/// Runs the loop until a verdict. `observer` sees each record as soon as it is complete.
DiscriminationReport run_discrimination(ReferenceSystem& reference,
                                        const std::array<ModelInstance, 2>& candidates,
                                        const DiscriminationConfig& cfg, std::uint64_t seed,
                                        const IterationObserver& observer = {});

struct TournamentMatch {
  std::size_t incumbent = 0;   ///< index into the candidate list
  std::size_t challenger = 0;
  std::size_t winner = 0;
  bool inconclusive = false;
  DiscriminationReport report;
};

struct TournamentResult {
  std::size_t winner = 0;
  bool inconclusive = false;  ///< every match was inconclusive
  std::vector<TournamentMatch> matches;
};

/// Winner of each match meets the next candidate, carrying its fitted
/// parameters forward. Match j runs with seed derive_seed(seed, j). An
/// inconclusive match keeps the incumbent and is flagged.
TournamentResult tournament(ReferenceSystem& reference, const std::vector<ModelInstance>& candidates,
                            const DiscriminationConfig& cfg, std::uint64_t seed,
                            const std::function<void(std::size_t, const IterationRecord&)>& observer = {});

}  // namespace modisc
