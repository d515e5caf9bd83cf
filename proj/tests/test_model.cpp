#include <cmath>
#include <numeric>

#include "doctest.h"
#include "modisc/control_design.hpp"
#include "modisc/model.hpp"

using namespace modisc;

namespace {

const ModelKind kAllKinds[] = {ModelKind::ThreeState, ModelKind::FourState, ModelKind::SixState};

}  // namespace

TEST_CASE("model metadata") {
  CHECK(state_dim(ModelKind::ThreeState) == 2);
  CHECK(state_dim(ModelKind::FourState) == 3);
  CHECK(state_dim(ModelKind::SixState) == 5);
  CHECK(param_count(ModelKind::ThreeState) == 4);
  CHECK(param_count(ModelKind::FourState) == 9);
  CHECK(param_count(ModelKind::SixState) == 11);
  for (auto k : kAllKinds) {
    CHECK(state_dim(k) == total_states(k) - 1);
    CHECK(complexity(k) == param_count(k));
    CHECK(parse_model_kind(to_string(k)) == k);
  }
  CHECK(parse_model_kind("three") == ModelKind::ThreeState);
  CHECK(parse_model_kind("4") == ModelKind::FourState);
  CHECK(parse_model_kind("six") == ModelKind::SixState);
  CHECK_THROWS_AS(parse_model_kind("five"), ContractViolation);
}

TEST_CASE("table presets") {
  CHECK(table_model(ModelKind::ThreeState).theta == std::vector<double>{0.24, 0.053, 0.02, -0.533});
  CHECK(table_model(ModelKind::FourState).theta ==
        std::vector<double>{0.250, 0.134, 0.130, 0.116, 0.004, 0.089, 0.014, -0.235, -0.27});
  CHECK(table_model(ModelKind::SixState).theta ==
        std::vector<double>{1.404, 0.883, 0.077, -0.001, 0.644, 0.804, 0.065, 0.003, 0.032, -0.825,
                            -0.186});
}

TEST_CASE("time grid and control validation") {
  CHECK_THROWS_AS(TimeGrid(0.0, 10), ContractViolation);
  CHECK_THROWS_AS(TimeGrid(-0.1, 10), ContractViolation);
  CHECK_THROWS_AS(TimeGrid(0.1, 1), ContractViolation);
  const TimeGrid grid(0.5, 4);
  CHECK(grid.size() == 5);
  CHECK(grid.horizon() == doctest::Approx(2.0));
  CHECK(grid.time(3) == doctest::Approx(1.5));
  CHECK(default_grid() == TimeGrid(0.05, 1000));

  CHECK_THROWS_AS(ControlSignal(grid, {0, 1, 2}), ContractViolation);
  CHECK_THROWS_AS(ControlSignal(grid, {0, 1, 2, 11, 0}), ContractViolation);
  CHECK_THROWS_AS(ControlSignal(grid, {0, 1, -0.1, 1, 0}), ContractViolation);
  CHECK_NOTHROW(ControlSignal(grid, {0, 1, 2, 10, 0}));

  const auto box = ControlSignal::box(grid, 3.0, 0.5, 1.5);
  CHECK(std::vector<double>(box.values().begin(), box.values().end()) ==
        std::vector<double>{0, 3, 3, 0, 0});
}

TEST_CASE("drift examples") {
  const auto th3 = table_model(ModelKind::ThreeState).theta;
  const double zero2[] = {0.0, 0.0};
  auto d = drift(ModelKind::ThreeState, zero2, 1.0, th3);
  CHECK(d[0] == doctest::Approx(0.24).epsilon(1e-15));
  CHECK(d[1] == 0.0);

  const std::vector<double> any3{0.7, 0.2, 0.9, -1.0};
  d = drift(ModelKind::ThreeState, zero2, 0.0, any3);
  CHECK(d == std::vector<double>{0.0, 0.0});

  const double zero3[] = {0.0, 0.0, 0.0};
  d = drift(ModelKind::FourState, zero3, 0.0, table_model(ModelKind::FourState).theta);
  CHECK(d == std::vector<double>{0.0, 0.0, 0.0});

  for (auto k : kAllKinds) {
    std::vector<double> rest(state_dim(k), 0.0);
    const auto dd = drift(k, rest, 0.0, table_model(k).theta);
    for (double v : dd) CHECK(v == 0.0);
  }

  CHECK_THROWS_AS(drift(ModelKind::ThreeState, zero3, 1.0, th3), ContractViolation);
  CHECK_THROWS_AS(drift(ModelKind::ThreeState, zero2, 1.0, std::vector<double>{1, 2, 3}),
                  ContractViolation);
}

TEST_CASE("drift conserves the full state") {
  // Rebuilding the eliminated component, the full drift sums to zero.
  for (auto k : kAllKinds) {
    const auto th = table_model(k).theta;
    std::vector<double> x(state_dim(k));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 + 0.03 * static_cast<double>(i);
    std::vector<double> full(x);
    full.push_back(1.0 - std::accumulate(x.begin(), x.end(), 0.0));
    std::vector<double> fd(full.size());
    full_drift(k, full, 3.0, th, fd);
    CHECK(std::abs(std::accumulate(fd.begin(), fd.end(), 0.0)) < 1e-15);
    const auto d = drift(k, x, 3.0, th);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] == doctest::Approx(fd[i]).epsilon(1e-14));
  }
}

TEST_CASE("observe examples") {
  const auto th3 = table_model(ModelKind::ThreeState).theta;
  const double x3[] = {0.5, 0.0};
  CHECK(observe(ModelKind::ThreeState, x3, th3) == doctest::Approx(-0.2665).epsilon(1e-14));

  for (auto k : kAllKinds) {
    std::vector<double> zero(state_dim(k), 0.0);
    CHECK(observe(k, zero, table_model(k).theta) == 0.0);
  }

  const double x6[] = {0.0, 0.1, 0.2, 0.0, 0.0};
  CHECK(observe(ModelKind::SixState, x6, table_model(ModelKind::SixState).theta) ==
        doctest::Approx(-0.1836).epsilon(1e-14));

  // 4-state: y = theta9 x1 + theta8 x2
  const double x4[] = {0.3, 0.1, 0.0};
  CHECK(observe(ModelKind::FourState, x4, table_model(ModelKind::FourState).theta) ==
        doctest::Approx(-0.27 * 0.3 - 0.235 * 0.1).epsilon(1e-14));
}

TEST_CASE("simulate examples") {
  const auto m3 = table_model(ModelKind::ThreeState);
  const auto grid = default_grid();

  SUBCASE("unforced rest state gives a zero series for every kind") {
    for (auto k : kAllKinds) {
      const auto r = simulate(table_model(k), ControlSignal::constant(grid, 0.0));
      for (double y : r.output.values) CHECK(y == 0.0);
    }
  }

  SUBCASE("one hand-evaluated Euler step") {
    const TimeGrid g(0.1, 2);
    const auto r = simulate(m3, ControlSignal::constant(g, 1.0));
    CHECK(r.states.at(1)[0] == doctest::Approx(0.024).epsilon(1e-15));
    CHECK(r.states.at(1)[1] == 0.0);
    CHECK(r.output.values[1] == doctest::Approx(-0.533 * 0.024).epsilon(1e-14));
  }

  SUBCASE("left endpoint control") {
    // u_0 = 0 keeps the first step at rest even though u_1 > 0.
    const TimeGrid g(0.1, 3);
    const auto r = simulate(m3, ControlSignal(g, {0.0, 5.0, 5.0, 0.0}));
    CHECK(r.states.at(1)[0] == 0.0);
    CHECK(r.states.at(2)[0] > 0.0);
  }

  SUBCASE("first-order convergence in dt") {
    for (auto k : kAllKinds) {
      const auto m = table_model(k);
      auto final_y = [&](double dt, std::size_t n) {
        const TimeGrid g(dt, n);
        // Smooth input: u(t) = 2 + sin(t).
        std::vector<double> u(g.size());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = 2.0 + std::sin(g.time(i));
        return simulate(m, ControlSignal(g, u), {}, blowup_guard()).output.values.back();
      };
      const double ref = final_y(0.005 / 10, 20000);
      const double e1 = std::abs(final_y(0.02, 500) - ref);
      const double e2 = std::abs(final_y(0.01, 1000) - ref);
      CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.15));
    }
  }

  SUBCASE("divergence names the step") {
    // A large negative rate drives a state out of the simplex.
    const ModelInstance bad(ModelKind::ThreeState, {0.24, 0.053, -5.0, -0.533});
    try {
      simulate(bad, ControlSignal::constant(grid, 10.0));
      FAIL("expected IntegrationDiverged");
    } catch (const IntegrationDiverged& e) {
      CHECK(e.step() > 0);
    }
  }

  SUBCASE("initial state and grid mismatch checks") {
    CHECK_THROWS_AS(simulate(m3, ControlSignal::constant(grid, 1.0), std::vector<double>{0.1}),
                    ContractViolation);
    const std::vector<double> x0{0.2, 0.3};
    const auto r = simulate(m3, ControlSignal::constant(grid, 0.0), x0);
    CHECK(r.states.at(0)[0] == 0.2);
    CHECK(r.output.values[0] == doctest::Approx(-0.533 * 0.2));
  }
}

TEST_CASE("positivity of the 3- and 4-state presets under admissible controls") {
  const auto grid = default_grid();
  std::vector<ControlSignal> controls{ControlSignal::constant(grid, 10.0),
                                      ControlSignal::constant(grid, 0.5),
                                      ControlSignal::box(grid, 10.0, 0.0, 10.0),
                                      initial_control(grid, 10.0)};
  for (std::uint64_t s = 0; s < 20; ++s) controls.push_back(random_piecewise_constant(grid, 10.0, 8, s));
  for (auto k : {ModelKind::ThreeState, ModelKind::FourState}) {
    for (const auto& u : controls) CHECK_NOTHROW(simulate(table_model(k), u));
  }
}

// The published 6-state parameters carry a negative rate (theta4 = -0.001), so
// strong light pushes a state slightly below zero and the 1e-9 guard trips.
TEST_CASE("positivity of the 6-state preset under admissible controls" * doctest::should_fail()) {
  const auto grid = default_grid();
  std::vector<ControlSignal> controls{ControlSignal::constant(grid, 10.0),
                                      ControlSignal::box(grid, 5.0, 0.0, 10.0)};
  for (std::uint64_t s = 0; s < 20; ++s) controls.push_back(random_piecewise_constant(grid, 10.0, 8, s));
  for (const auto& u : controls) CHECK_NOTHROW(simulate(table_model(ModelKind::SixState), u));
}

TEST_CASE("trapezoid") {
  CHECK(trapezoid(std::vector<double>{0, 1, 2, 3, 4}, 1.0) == 8.0);
  CHECK(trapezoid(std::vector<double>{1, 0, 1}, 0.5) == 0.5);
  std::vector<double> c(1001, 2.5);
  CHECK(trapezoid(c, 0.05) == doctest::Approx(2.5 * 50.0).epsilon(1e-14));
  CHECK_THROWS_AS(trapezoid(std::vector<double>{1.0}, 0.1), ContractViolation);

  const auto w = trapezoid_weights(5, 0.5);
  CHECK(w == std::vector<double>{0.25, 0.5, 0.5, 0.5, 0.25});
  const std::vector<double> f{3, 1, 4, 1, 5};
  CHECK(std::inner_product(w.begin(), w.end(), f.begin(), 0.0) ==
        doctest::Approx(trapezoid(f, 0.5)).epsilon(1e-15));
}

TEST_CASE("stochastic simulation") {
  const auto grid = TimeGrid(0.05, 400);
  const auto u = initial_control(grid, 10.0);

  SUBCASE("alpha = 0 reproduces the deterministic run") {
    for (auto k : kAllKinds) {
      const auto m = table_model(k);
      const auto det = simulate(m, u, {}, blowup_guard()).output;
      const auto st = simulate_stochastic(m, u, {0.0, 3, 11});
      for (const auto& p : st.paths) CHECK(p.values == det.values);
      CHECK(st.mean.values == det.values);
    }
  }

  SUBCASE("simplex conservation and bounds on every step") {
    for (auto k : kAllKinds) {
      const auto full = stochastic_full_path(table_model(k), u, 0.05, 3, 0);
      const std::size_t n = total_states(k);
      for (std::size_t m = 0; m < grid.size(); ++m) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double v = full[m * n + i];
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
  }

  SUBCASE("fixed seed is bit-identical; mean is the path average") {
    const auto m = table_model(ModelKind::FourState);
    const auto a = simulate_stochastic(m, u, {0.02, 4, 99});
    const auto b = simulate_stochastic(m, u, {0.02, 4, 99});
    const auto c = simulate_stochastic(m, u, {0.02, 4, 100});
    for (std::size_t p = 0; p < 4; ++p) CHECK(a.paths[p].values == b.paths[p].values);
    CHECK(a.paths[0].values != c.paths[0].values);
    for (std::size_t i = 0; i < grid.size(); i += 37) {
      double mean = 0.0;
      for (const auto& p : a.paths) mean += p.values[i];
      CHECK(a.mean.values[i] == doctest::Approx(mean / 4.0).epsilon(1e-14));
    }
    // A path is the same whatever ensemble it is drawn in.
    const auto single = simulate_stochastic(m, u, {0.02, 1, 99});
    CHECK(single.paths[0].values == a.paths[0].values);
  }

  SUBCASE("noise overdrive is reported") {
    const auto heavy = simulate_stochastic(table_model(ModelKind::ThreeState), ControlSignal::constant(grid, 10.0),
                                           {5.0, 2, 1});
    CHECK(heavy.clamp_fraction > 0.5);
    CHECK(heavy.noise_overdrive);
    const auto light = simulate_stochastic(table_model(ModelKind::ThreeState), u, {0.01, 2, 1});
    CHECK_FALSE(light.noise_overdrive);
  }

  SUBCASE("config validation") {
    CHECK_THROWS_AS(simulate_stochastic(table_model(ModelKind::ThreeState), u, {-0.1, 1, 0}),
                    ContractViolation);
    CHECK_THROWS_AS(simulate_stochastic(table_model(ModelKind::ThreeState), u, {0.1, 0, 0}),
                    ContractViolation);
  }
}

TEST_CASE("model instance validation") {
  CHECK_THROWS_AS(ModelInstance(ModelKind::ThreeState, {1, 2, 3}), ContractViolation);
  CHECK_THROWS_AS(ModelInstance(ModelKind::ThreeState, {1, 2, 3, NAN}), ContractViolation);
  CHECK_NOTHROW(ModelInstance(ModelKind::ThreeState, {1, -2, 3, -4}));
}
