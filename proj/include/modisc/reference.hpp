#pragma once

// Reference systems: the controllable, observable process the candidates are
// judged against. In-process simulated cells, recorded sessions, and (see
// wire.hpp / remote.hpp) a reference reached over a stream socket.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "modisc/model.hpp"

namespace modisc {

/// The reference could not deliver a measurement (lost connection, rejected
/// stimulus, diverged simulation). The orchestrator truncates the run.
class ReferenceFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReferenceDescriptor {
  TimeGrid grid;
  double u_hi = 10.0;
  std::size_t repeats = 1;

  bool operator==(const ReferenceDescriptor&) const = default;
};

class ReferenceSystem {
 public:
  virtual ~ReferenceSystem() = default;
  virtual const ReferenceDescriptor& descriptor() const = 0;
  /// One stimulus; the returned series lives on descriptor().grid.
  virtual ObservationSeries apply(const ControlSignal& control) = 0;
};

/// Throws ContractViolation unless `control` is on the reference grid and inside [0, u_hi].
void check_stimulus(const ReferenceDescriptor& desc, const ControlSignal& control);

/// A simulated cell. Each stimulus starts from the rest state; stochastic cells
/// average `repeats` Euler-Maruyama paths drawn from stimulus_seed(k) for the
/// k-th stimulus (k from 0).
class SimulatedReference final : public ReferenceSystem {
 public:
  /// Simplex excursion tolerated before a stimulus is reported as diverged. The
  /// 6-state preset has a negative rate and dips slightly below zero under strong light.
  static constexpr double kStateTolerance = 1e-2;

  SimulatedReference(ModelInstance model, TimeGrid grid, double u_hi = 10.0, double alpha = 0.0,
                     std::size_t repeats = 1, std::uint64_t seed = 0);

  const ReferenceDescriptor& descriptor() const override { return desc_; }
  ObservationSeries apply(const ControlSignal& control) override;

  std::uint64_t stimulus_seed(std::uint64_t k) const;
  std::uint64_t stimuli_served() const noexcept { return served_; }
  double alpha() const noexcept { return alpha_; }
  /// Clamp fraction of the most recent stochastic stimulus.
  double last_clamp_fraction() const noexcept { return last_clamp_fraction_; }

 private:
  ModelInstance model_;
  ReferenceDescriptor desc_;
  double alpha_;
  std::uint64_t seed_;
  std::uint64_t served_ = 0;
  double last_clamp_fraction_ = 0.0;
};

/// Appends each (stimulus, response) pair as a JSON line; the first line holds the
/// descriptor. Failures pass through unrecorded.
class RecordingReference final : public ReferenceSystem {
 public:
  RecordingReference(ReferenceSystem& inner, const std::filesystem::path& path);

  const ReferenceDescriptor& descriptor() const override { return inner_.descriptor(); }
  ObservationSeries apply(const ControlSignal& control) override;

 private:
  ReferenceSystem& inner_;
  std::ofstream out_;
  std::uint64_t next_id_ = 1;
};

/// Serves a recording back. Each stimulus must equal the recorded one exactly.
class ReplayReference final : public ReferenceSystem {
 public:
  explicit ReplayReference(const std::filesystem::path& path);

  const ReferenceDescriptor& descriptor() const override { return desc_; }
  ObservationSeries apply(const ControlSignal& control) override;
  std::size_t remaining() const noexcept { return pairs_.size() - next_; }

 private:
  struct Pair {
    std::vector<double> u;
    std::vector<double> z;
  };
  ReferenceDescriptor desc_{TimeGrid(1.0, 2)};
  std::vector<Pair> pairs_;
  std::size_t next_ = 0;
};

}  // namespace modisc
