#pragma once

// Experiment configuration: a TOML-style key/value file, overridable from the
// command line, validated before anything runs.
//
//   seed = 3
//   out = "runs/three_vs_four"
//
//   [grid]        dt, n_steps
//   [reference]   model, params (table | list), alpha, repeats, endpoint
//   [candidates]  models = "three, four", init = random | table, theta_0, theta_1, ...
//   [stopping]    i_max, loss_max, delta_max, relative_loss, stop_on_verdict
//   [fit]         n_grad, learning_rate, beta1, beta2, epsilon, history (latest | full)
//   [control]     c1, c2, u_min_energy, u_hi, memory_size, max_iterations, restarts,
//                 initial_move, tolerance

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "modisc/discrimination.hpp"
#include "modisc/remote.hpp"

namespace modisc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CandidateSpec {
  ModelKind kind = ModelKind::ThreeState;
  /// Unset: drawn with random_model from the run seed.
  std::optional<std::vector<double>> theta;
};

struct ReferenceSpec {
  ModelKind kind = ModelKind::ThreeState;
  std::vector<double> theta;  ///< empty: table preset
  double alpha = 0.0;
  std::size_t repeats = 1;
  /// Set: the reference is reached over a socket instead of simulated here.
  std::optional<Endpoint> endpoint;
};

struct ExperimentConfig {
  TimeGrid grid = default_grid();
  ReferenceSpec reference{};
  std::vector<CandidateSpec> candidates{{ModelKind::ThreeState, {}}, {ModelKind::FourState, {}}};
  DiscriminationConfig loop{};
  std::uint64_t seed = 0;
  std::filesystem::path out = "modisc-out";

  /// Throws ConfigError describing the first violated precondition.
  void validate() const;
  /// Concrete starting candidates; random ones come from derive_seed(seed, 1000 + k).
  std::vector<ModelInstance> candidate_instances() const;
  ModelInstance reference_instance() const;
  /// Noise seed of the simulated reference.
  std::uint64_t reference_seed() const;
};

/// Parses a config file on top of `base`.
ExperimentConfig load_experiment(const std::filesystem::path& path, ExperimentConfig base = {});

/// "table" for the preset, otherwise a comma-separated list, optionally bracketed.
std::vector<double> parse_params(ModelKind kind, std::string_view text);
/// Comma-separated model names.
std::vector<ModelKind> parse_model_list(std::string_view text);

/// Settings that determine the result. The reference appears only through
/// what the loop can observe (grid, bound, repeat count), so a run against a
/// local or a served reference echoes the same document.
nlohmann::json config_echo(const ExperimentConfig& cfg);

}  // namespace modisc
