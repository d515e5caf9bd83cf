#include <stdexcept>

#include "doctest.h"
#include "modisc/discrimination.hpp"
#include "modisc/rng.hpp"

using namespace modisc;

namespace {

constexpr std::array<ModelKind, 2> k34{ModelKind::ThreeState, ModelKind::FourState};

// Serves the inner reference for `good` stimuli, then fails.
class FailingReference final : public ReferenceSystem {
 public:
  FailingReference(ReferenceSystem& inner, std::size_t good) : inner_(inner), good_(good) {}
  const ReferenceDescriptor& descriptor() const override { return inner_.descriptor(); }
  ObservationSeries apply(const ControlSignal& control) override {
    if (served_++ >= good_) throw ReferenceFailure("lost the cell");
    return inner_.apply(control);
  }

 private:
  ReferenceSystem& inner_;
  std::size_t good_;
  std::size_t served_ = 0;
};

DiscriminationConfig fast_config() {
  DiscriminationConfig cfg;
  cfg.fit.n_grad = 20;
  cfg.control.solver.max_iterations = 10;
  cfg.control.solver.restarts = 2;
  return cfg;
}

}  // namespace

TEST_CASE("stopping_verdict examples") {
  CHECK(stopping_verdict(41, {0.5, 0.5}, {1.0, 1.0}, k34, 40, 1e-3, 1e-4) == Verdict::inconclusive());
  CHECK(stopping_verdict(3, {1e-4, 0.5}, {1e-5, 1.0}, k34, 40, 1e-3, 1e-4) ==
        Verdict::conclusive(0, StopReason::SoleFit));
  CHECK(stopping_verdict(3, {0.5, 1e-4}, {1.0, 1e-5}, k34, 40, 1e-3, 1e-4) ==
        Verdict::conclusive(1, StopReason::SoleFit));
  CHECK(stopping_verdict(3, {2e-4, 1e-4}, {1.0, 1e-6}, k34, 40, 1e-3, 1e-4) ==
        Verdict::conclusive(0, StopReason::Occam));
  CHECK(stopping_verdict(3, {0.5, 0.5}, {0.0, 0.0}, k34, 40, 1e-3, 1e-4) == Verdict::ongoing());
}

TEST_CASE("stopping_verdict exhaustive branches") {
  const double lmax = 1e-3, dmax = 1e-4;
  const double fit = 1e-4, miss = 1.0, settled = 1e-6, moving = 1.0;
  for (bool late : {false, true}) {
    for (bool fit0 : {false, true}) {
      for (bool fit1 : {false, true}) {
        for (bool set0 : {false, true}) {
          for (bool set1 : {false, true}) {
            for (bool swap_order : {false, true}) {
              const std::size_t i = late ? 41 : 40;
              // Candidate 0 has the lower loss unless swap_order.
              std::array<double, 2> losses{fit0 ? fit : miss, fit1 ? fit : miss};
              if (fit0 && fit1) losses = swap_order ? std::array{2 * fit, fit} : std::array{fit, 2 * fit};
              const std::array<double, 2> inc{set0 ? settled : moving, set1 ? settled : moving};
              for (auto kinds : {k34, std::array{ModelKind::FourState, ModelKind::ThreeState},
                                 std::array{ModelKind::FourState, ModelKind::FourState}}) {
                const auto v = stopping_verdict(i, losses, inc, kinds, 40, lmax, dmax);
                INFO(late, fit0, fit1, set0, set1, swap_order);
                Verdict expect = Verdict::ongoing();
                if (late) {
                  expect = Verdict::inconclusive();
                } else if (fit0 != fit1) {
                  const std::size_t k = fit0 ? 0 : 1;
                  if (k == 0 ? set0 : set1) expect = Verdict::conclusive(k, StopReason::SoleFit);
                } else if (fit0 && fit1) {
                  const std::size_t best = swap_order ? 1 : 0;
                  if (best == 0 ? set0 : set1) {
                    const auto p0 = param_count(kinds[0]), p1 = param_count(kinds[1]);
                    const std::size_t simple = p0 == p1 ? best : (p0 < p1 ? 0 : 1);
                    expect = Verdict::conclusive(simple, StopReason::Occam);
                  }
                }
                CHECK(v == expect);
              }
            }
          }
        }
      }
    }
  }
}

TEST_CASE("stopping_verdict boundaries are strict") {
  // Equal to the threshold does not count as below it.
  CHECK(stopping_verdict(1, {1e-3, 0.5}, {0.0, 0.0}, k34, 40, 1e-3, 1e-4) == Verdict::ongoing());
  CHECK(stopping_verdict(1, {1e-4, 0.5}, {1e-4, 0.0}, k34, 40, 1e-3, 1e-4) == Verdict::ongoing());
  CHECK(stopping_verdict(40, {1e-4, 0.5}, {0.0, 0.0}, k34, 40, 1e-3, 1e-4).is_conclusive());
}

TEST_CASE("verdict strings") {
  CHECK(to_string(Verdict::ongoing()) == "ongoing");
  CHECK(to_string(Verdict::inconclusive()) == "inconclusive");
  CHECK(to_string(Verdict::conclusive(1, StopReason::Occam)) == "conclusive(1, occam)");
}

TEST_CASE("run_discrimination bookkeeping") {
  const auto grid = TimeGrid(0.05, 300);
  SimulatedReference ref(table_model(ModelKind::ThreeState), grid);
  const std::array cands{random_model(ModelKind::ThreeState, 1), random_model(ModelKind::FourState, 2)};
  auto cfg = fast_config();
  cfg.thresholds.i_max = 4;
  cfg.stop_on_verdict = false;

  std::vector<std::size_t> seen;
  const auto rep = run_discrimination(ref, cands, cfg, 7, [&](const IterationRecord& r) { seen.push_back(r.index); });
  REQUIRE(rep.records.size() == 4);
  CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK(rep.kinds == k34);
  CHECK(rep.records[0].control == initial_control(grid, cfg.control.u_hi));
  CHECK(rep.records[0].design_objective == 0.0);
  for (std::size_t i = 0; i < rep.records.size(); ++i) {
    const auto& r = rep.records[i];
    CHECK(r.index == i + 1);
    CHECK(r.memory_depth == std::min<std::size_t>(i + 1, cfg.control.memory_size));
    for (const auto& c : r.candidates) {
      CHECK(c.loss_prefit >= 0.0);
      CHECK(c.loss_postfit >= 0.0);
    }
    if (i > 0) {
      CHECK(r.candidates[0].loss_prefit ==
            loss(ModelInstance(ModelKind::ThreeState, rep.records[i - 1].candidates[0].theta),
                 Dataset(r.control, ref.apply(r.control))));
      CHECK(r.design_objective != 0.0);
    }
  }
  CHECK(rep.final_theta[0] == rep.records.back().candidates[0].theta);
  CHECK(ref.stimuli_served() == 4 + 3);

  SUBCASE("deterministic given the seed") {
    SimulatedReference again(table_model(ModelKind::ThreeState), grid);
    const auto rep2 = run_discrimination(again, cands, cfg, 7);
    REQUIRE(rep2.records.size() == rep.records.size());
    for (std::size_t i = 0; i < rep.records.size(); ++i) {
      CHECK(rep2.records[i].control == rep.records[i].control);
      CHECK(rep2.records[i].candidates[1].theta == rep.records[i].candidates[1].theta);
    }
  }
}

TEST_CASE("reference failure truncates the run") {
  const auto grid = TimeGrid(0.05, 300);
  SimulatedReference inner(table_model(ModelKind::FourState), grid);
  FailingReference ref(inner, 3);
  auto cfg = fast_config();
  cfg.stop_on_verdict = false;
  const auto rep = run_discrimination(
      ref, {table_model(ModelKind::ThreeState), table_model(ModelKind::FourState)}, cfg, 1);
  CHECK(rep.records.size() == 3);
  CHECK(rep.truncated);
  CHECK(rep.failure == "lost the cell");
  CHECK(rep.final_verdict == Verdict::inconclusive());
}

TEST_CASE("i_max reached while still ongoing") {
  const auto grid = TimeGrid(0.05, 300);
  SimulatedReference ref(table_model(ModelKind::FourState), grid);
  auto cfg = fast_config();
  cfg.thresholds.i_max = 1;
  cfg.thresholds.delta_max = 1e-12;
  const auto rep =
      run_discrimination(ref, {random_model(ModelKind::ThreeState, 4), random_model(ModelKind::FourState, 5)}, cfg, 1);
  CHECK(rep.records.size() == 1);
  CHECK(rep.records[0].verdict == Verdict::ongoing());
  CHECK(rep.final_verdict == Verdict::inconclusive());
}

TEST_CASE("generating model is kept when it is a candidate") {
  // The 3-state candidate starts at the reference parameters: it fits exactly and
  // does not move, the 4-state preset does not fit, so the first iteration decides.
  const auto grid = TimeGrid(0.05, 300);
  SimulatedReference ref(table_model(ModelKind::ThreeState), grid);
  const auto rep = run_discrimination(
      ref, {table_model(ModelKind::FourState), table_model(ModelKind::ThreeState)}, fast_config(), 3);
  CHECK(rep.final_verdict == Verdict::conclusive(1, StopReason::SoleFit));
  CHECK(rep.records.size() == 1);
  CHECK(rep.records[0].candidates[1].loss_postfit < 1e-12);
}

TEST_CASE("closed loop on table references") {
  const auto grid = default_grid();
  DiscriminationConfig cfg;
  cfg.thresholds.i_max = 10;
  cfg.stop_on_verdict = false;

  SUBCASE("3-state reference") {
    SimulatedReference ref(table_model(ModelKind::ThreeState), grid);
    const auto rep =
        run_discrimination(ref, {random_model(ModelKind::ThreeState, 11), random_model(ModelKind::FourState, 12)}, cfg, 5);
    const auto& last = rep.records.back();
    const bool ok = (rep.final_verdict.is_conclusive() && rep.final_verdict.winner == 0) ||
                    last.candidates[0].loss_postfit < last.candidates[1].loss_postfit;
    CHECK(ok);
  }
  SUBCASE("4-state reference") {
    SimulatedReference ref(table_model(ModelKind::FourState), grid);
    const auto rep =
        run_discrimination(ref, {random_model(ModelKind::ThreeState, 11), random_model(ModelKind::FourState, 12)}, cfg, 5);
    const auto& last = rep.records.back();
    CHECK(last.candidates[1].loss_prefit < last.candidates[0].loss_prefit);
  }
}

TEST_CASE("tournament") {
  const auto grid = TimeGrid(0.05, 300);
  auto cfg = fast_config();
  cfg.thresholds.i_max = 3;

  SUBCASE("a single pair equals run_discrimination with the match seed") {
    const std::vector cands{random_model(ModelKind::ThreeState, 1), random_model(ModelKind::FourState, 2)};
    SimulatedReference a(table_model(ModelKind::FourState), grid);
    SimulatedReference b(table_model(ModelKind::FourState), grid);
    const auto t = tournament(a, cands, cfg, 9);
    const auto r = run_discrimination(b, {cands[0], cands[1]}, cfg, derive_seed(9, 0));
    REQUIRE(t.matches.size() == 1);
    const auto& m = t.matches[0].report;
    CHECK(m.final_verdict == r.final_verdict);
    CHECK(m.final_theta == r.final_theta);
    REQUIRE(m.records.size() == r.records.size());
    for (std::size_t i = 0; i < r.records.size(); ++i) CHECK(m.records[i].control == r.records[i].control);
    CHECK(t.inconclusive == !r.final_verdict.is_conclusive());
  }

  SUBCASE("duplicate candidates tie without error and keep the incumbent") {
    const auto m = table_model(ModelKind::ThreeState);
    SimulatedReference ref(m, grid);
    const auto t = tournament(ref, {m, m, m}, cfg, 1);
    CHECK(t.winner == 0);
    REQUIRE(t.matches.size() == 2);
    CHECK(t.matches[1].incumbent == 0);
    CHECK(t.matches[1].challenger == 2);
  }

  SUBCASE("needs two candidates") {
    SimulatedReference ref(table_model(ModelKind::ThreeState), grid);
    CHECK_THROWS_AS(tournament(ref, {table_model(ModelKind::ThreeState)}, cfg, 1), ContractViolation);
  }
}
