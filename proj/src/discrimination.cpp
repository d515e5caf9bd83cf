#include "modisc/discrimination.hpp"

#include <chrono>
#include <future>

#include "modisc/rng.hpp"

namespace modisc {

void StoppingThresholds::validate() const {
  if (i_max < 1) throw ContractViolation("i_max must be >= 1");
  if (!(loss_max > 0.0)) throw ContractViolation("loss_max must be positive");
  if (!(delta_max > 0.0)) throw ContractViolation("delta_max must be positive");
}

void DiscriminationConfig::validate(const TimeGrid& grid) const {
  thresholds.validate();
  fit.validate();
  control.validate(grid);
}

std::string to_string(const Verdict& v) {
  switch (v.state) {
    case Verdict::State::Ongoing: return "ongoing";
    case Verdict::State::Inconclusive: return "inconclusive";
    case Verdict::State::Conclusive:
      return std::string("conclusive(") + std::to_string(v.winner) + ", " +
             (v.reason == StopReason::SoleFit ? "sole_fit" : "occam") + ")";
  }
  return "?";
}

Verdict stopping_verdict(std::size_t i, std::array<double, 2> losses,
                         std::array<double, 2> increments, std::array<ModelKind, 2> kinds,
                         std::size_t i_max, double loss_max, double delta_max) {
  if (i > i_max) return Verdict::inconclusive();
  const bool fits0 = losses[0] < loss_max;
  const bool fits1 = losses[1] < loss_max;
  if (fits0 != fits1) {
    const std::size_t k = fits0 ? 0 : 1;
    if (increments[k] < delta_max) return Verdict::conclusive(k, StopReason::SoleFit);
    return Verdict::ongoing();
  }
  if (fits0 && fits1) {
    const std::size_t best = losses[1] < losses[0] ? 1 : 0;
    if (increments[best] < delta_max) {
      const auto c0 = complexity(kinds[0]);
      const auto c1 = complexity(kinds[1]);
      const std::size_t simplest = c0 == c1 ? best : (c1 < c0 ? 1 : 0);
      return Verdict::conclusive(simplest, StopReason::Occam);
    }
    return Verdict::ongoing();
  }
  return Verdict::ongoing();
}

namespace {

double energy(const ObservationSeries& z) {
  std::vector<double> sq(z.values.size());
  for (std::size_t m = 0; m < sq.size(); ++m) sq[m] = z.values[m] * z.values[m];
  return trapezoid(sq, z.grid.dt());
}

}  // namespace

DiscriminationReport run_discrimination(ReferenceSystem& reference,
                                        const std::array<ModelInstance, 2>& candidates,
                                        const DiscriminationConfig& cfg, std::uint64_t seed,
                                        const IterationObserver& observer) {
  const auto started = std::chrono::steady_clock::now();
  const auto& desc = reference.descriptor();
  const TimeGrid grid = desc.grid;
  cfg.validate(grid);
  if (cfg.control.u_hi > desc.u_hi) {
    throw ContractViolation("design bound u_hi exceeds what the reference accepts");
  }
  const auto& th = cfg.thresholds;

  DiscriminationReport report;
  report.kinds = {candidates[0].kind, candidates[1].kind};
  std::array<ModelInstance, 2> models = candidates;
  std::vector<Dataset> datasets;
  ControlMemory memory(cfg.control.memory_size);
  ControlSignal control = initial_control(grid, cfg.control.u_hi);
  double design_value = 0.0;

  for (std::size_t i = 1;; ++i) {
    std::optional<ObservationSeries> measured;
    try {
      measured = reference.apply(control);
    } catch (const ReferenceFailure& e) {
      report.truncated = true;
      report.failure = e.what();
      report.final_verdict = Verdict::inconclusive();
      break;
    }
    if (!(measured->grid == grid)) {
      report.truncated = true;
      report.failure = "reference returned a series on a different grid";
      report.final_verdict = Verdict::inconclusive();
      break;
    }
    datasets.emplace_back(control, std::move(*measured));
    memory.push(control);
    const Dataset& latest = datasets.back();

    IterationRecord record{.index = i, .control = control, .candidates = {}, .loss_threshold = 0.0,
                           .design_objective = 0.0, .memory_depth = 0, .verdict = {}};
    record.design_objective = design_value;
    record.memory_depth = memory.size();

    std::array<std::future<FitReport>, 2> fits;
    for (std::size_t k = 0; k < 2; ++k) {
      record.candidates[k].loss_prefit = loss(models[k], latest);
      fits[k] = std::async(std::launch::async, [&, k] { return fit(models[k], datasets, cfg.fit); });
    }
    std::array<double, 2> losses{}, increments{};
    for (std::size_t k = 0; k < 2; ++k) {
      FitReport fr = fits[k].get();
      auto& step = record.candidates[k];
      step.loss_postfit = fr.loss_after;
      step.max_param_increment = fr.max_param_increment;
      step.fit_aborted = fr.aborted;
      step.theta = fr.theta_after;
      models[k] = ModelInstance(models[k].kind, std::move(fr.theta_after));
      // Full-history fits report summed losses; the rule compares on the latest data.
      losses[k] = cfg.fit.history == HistoryMode::LatestOnly ? step.loss_postfit
                                                             : loss(models[k], latest);
      increments[k] = step.max_param_increment;
    }

    record.loss_threshold = th.relative_loss ? th.loss_max * energy(latest.measured) : th.loss_max;
    record.verdict = stopping_verdict(i, losses, increments, report.kinds, th.i_max,
                                      record.loss_threshold, th.delta_max);
    const Verdict verdict = record.verdict;
    report.records.push_back(std::move(record));
    if (observer) observer(report.records.back());

    if (verdict.state != Verdict::State::Ongoing && cfg.stop_on_verdict) {
      report.final_verdict = verdict;
      break;
    }
    if (i >= th.i_max) {
      if (verdict.state != Verdict::State::Ongoing) {
        report.final_verdict = verdict;
      } else {
        report.final_verdict = stopping_verdict(i + 1, losses, increments, report.kinds, th.i_max,
                                                report.records.back().loss_threshold,
                                                th.delta_max);
        const double thr = report.records.back().loss_threshold;
        report.unsettled_sole_fit = (losses[0] < thr) != (losses[1] < thr);
      }
      break;
    }

    const auto design =
        design_control(models[0], models[1], memory, grid, cfg.control, derive_seed(seed, i));
    control = design.control;
    design_value = design.objective;
  }

  report.final_theta = {models[0].theta, models[1].theta};
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

TournamentResult tournament(ReferenceSystem& reference, const std::vector<ModelInstance>& candidates,
                            const DiscriminationConfig& cfg, std::uint64_t seed,
                            const std::function<void(std::size_t, const IterationRecord&)>& observer) {
  if (candidates.size() < 2) throw ContractViolation("a tournament needs at least two candidates");
  TournamentResult result;
  std::size_t incumbent = 0;
  ModelInstance incumbent_model = candidates[0];
  bool any_conclusive = false;

  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const std::size_t j = c - 1;
    IterationObserver forward;
    if (observer) forward = [&, j](const IterationRecord& r) { observer(j, r); };
    TournamentMatch match;
    match.incumbent = incumbent;
    match.challenger = c;
    match.report = run_discrimination(reference, {incumbent_model, candidates[c]}, cfg,
                                      derive_seed(seed, j), forward);
    const auto& v = match.report.final_verdict;
    if (v.is_conclusive()) {
      any_conclusive = true;
      match.winner = v.winner == 0 ? incumbent : c;
      incumbent = match.winner;
      incumbent_model = ModelInstance(candidates[incumbent].kind, match.report.final_theta[v.winner]);
    } else {
      match.inconclusive = true;
      match.winner = incumbent;
      incumbent_model = ModelInstance(incumbent_model.kind, match.report.final_theta[0]);
    }
    result.matches.push_back(std::move(match));
  }
  result.winner = incumbent;
  result.inconclusive = !any_conclusive;
  return result;
}

}  // namespace modisc
