// modisc: simulate opsin models, fit them, design discriminating inputs and run
// the closed discrimination loop against a simulated or remote reference.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "modisc/control_design.hpp"
#include "modisc/discrimination.hpp"
#include "modisc/estimation.hpp"
#include "modisc/experiment.hpp"
#include "modisc/io.hpp"
#include "modisc/reference.hpp"
#include "modisc/remote.hpp"
#include "modisc/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace modisc;

namespace {

enum Exit { kOk = 0, kInconclusive = 1, kConfig = 2, kReference = 3 };

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  std::string record;
  bool verbose = false;
  bool seed_given = false;
};

// Flag overrides shared by the experiment commands. Each applies only when given.
struct ExperimentFlags {
  std::size_t iterations = 0;
  std::string candidates;
  std::vector<std::string> theta;
  std::string init;
  std::string reference_model;
  std::string reference_params;
  double alpha = 0.0;
  std::size_t repeats = 1;
  std::string endpoint;
  double loss_max = 0.0;
  double delta_max = 0.0;
  std::string history;
  std::size_t n_grad = 0;
  double c1 = 0.0;
  double c2 = 0.0;
  std::size_t restarts = 0;
  bool run_all = false;
  bool wall_time = false;

  CLI::Option* o_iterations = nullptr;
  CLI::Option* o_candidates = nullptr;
  CLI::Option* o_theta = nullptr;
  CLI::Option* o_init = nullptr;
  CLI::Option* o_ref_model = nullptr;
  CLI::Option* o_ref_params = nullptr;
  CLI::Option* o_alpha = nullptr;
  CLI::Option* o_repeats = nullptr;
  CLI::Option* o_endpoint = nullptr;
  CLI::Option* o_loss_max = nullptr;
  CLI::Option* o_delta_max = nullptr;
  CLI::Option* o_history = nullptr;
  CLI::Option* o_n_grad = nullptr;
  CLI::Option* o_c1 = nullptr;
  CLI::Option* o_c2 = nullptr;
  CLI::Option* o_restarts = nullptr;

  void attach(CLI::App* cmd, bool with_endpoint) {
    o_iterations = cmd->add_option("--iterations", iterations, "Maximum loop iterations (i_max)");
    o_candidates = cmd->add_option("--candidates", candidates, "Comma-separated candidate models");
    o_theta = cmd->add_option("--theta", theta,
                              "Starting parameters, one per candidate in order (table | list)");
    o_init = cmd->add_option("--init", init, "Candidate initialization: random | table");
    o_ref_model = cmd->add_option("--reference-model", reference_model, "Simulated reference model");
    o_ref_params = cmd->add_option("--reference-params", reference_params,
                                   "Reference parameters (table | list)");
    o_alpha = cmd->add_option("--alpha", alpha, "Reference noise amplitude");
    o_repeats = cmd->add_option("--repeats", repeats, "Stimulus repeats averaged by the reference");
    if (with_endpoint) {
      o_endpoint = cmd->add_option("--endpoint", endpoint, "Remote reference host:port");
    }
    o_loss_max = cmd->add_option("--loss-max", loss_max, "Fitting threshold");
    o_delta_max = cmd->add_option("--delta-max", delta_max, "Parameter increment threshold");
    o_history = cmd->add_option("--history", history, "Fit on latest | full history");
    o_n_grad = cmd->add_option("--n-grad", n_grad, "Adam epochs per fit");
    o_c1 = cmd->add_option("--c1", c1, "Amplitude penalty weight");
    o_c2 = cmd->add_option("--c2", c2, "Similarity penalty weight");
    o_restarts = cmd->add_option("--restarts", restarts, "Control design restarts");
    cmd->add_flag("--run-all", run_all, "Keep iterating to i_max after a verdict");
    cmd->add_flag("--wall-time", wall_time, "Include wall time in the report");
  }

  static bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

  void apply(ExperimentConfig& cfg) const {
    if (given(o_iterations)) cfg.loop.thresholds.i_max = iterations;
    if (given(o_candidates)) {
      cfg.candidates.clear();
      for (auto k : parse_model_list(candidates)) cfg.candidates.push_back({k, {}});
    }
    if (given(o_init)) {
      if (init == "table") {
        for (auto& c : cfg.candidates) c.theta = table_model(c.kind).theta;
      } else if (init == "random") {
        for (auto& c : cfg.candidates) c.theta.reset();
      } else {
        throw ConfigError("--init: expected random or table, got '" + init + "'");
      }
    }
    if (given(o_theta)) {
      if (theta.size() > cfg.candidates.size()) throw ConfigError("--theta given more times than candidates");
      for (std::size_t k = 0; k < theta.size(); ++k) {
        cfg.candidates[k].theta = parse_params(cfg.candidates[k].kind, theta[k]);
      }
    }
    if (given(o_ref_model)) {
      cfg.reference.kind = parse_model_kind(reference_model);
      cfg.reference.theta.clear();
    }
    if (given(o_ref_params)) cfg.reference.theta = parse_params(cfg.reference.kind, reference_params);
    if (given(o_alpha)) cfg.reference.alpha = alpha;
    if (given(o_repeats)) cfg.reference.repeats = repeats;
    if (given(o_endpoint)) cfg.reference.endpoint = Endpoint::parse(endpoint);
    if (given(o_loss_max)) cfg.loop.thresholds.loss_max = loss_max;
    if (given(o_delta_max)) cfg.loop.thresholds.delta_max = delta_max;
    if (given(o_history)) {
      if (history == "latest") {
        cfg.loop.fit.history = HistoryMode::LatestOnly;
      } else if (history == "full") {
        cfg.loop.fit.history = HistoryMode::FullHistory;
      } else {
        throw ConfigError("--history: expected latest or full, got '" + history + "'");
      }
    }
    if (given(o_n_grad)) cfg.loop.fit.n_grad = n_grad;
    if (given(o_c1)) cfg.loop.control.c1 = c1;
    if (given(o_c2)) cfg.loop.control.c2 = c2;
    if (given(o_restarts)) cfg.loop.control.solver.restarts = restarts;
    if (run_all) cfg.loop.stop_on_verdict = false;
  }
};

struct GridFlags {
  double dt = 0.0;
  std::size_t steps = 0;
  CLI::Option* o_dt = nullptr;
  CLI::Option* o_steps = nullptr;

  void attach(CLI::App* cmd) {
    o_dt = cmd->add_option("--dt", dt, "Time step");
    o_steps = cmd->add_option("--steps", steps, "Number of steps N");
  }
  void apply(ExperimentConfig& cfg) const {
    if (o_dt->count() || o_steps->count()) {
      cfg.grid = TimeGrid(o_dt->count() ? dt : cfg.grid.dt(), o_steps->count() ? steps : cfg.grid.n_steps());
    }
  }
};

ExperimentConfig base_config(const Globals& g) {
  ExperimentConfig cfg;
  if (!g.config.empty()) cfg = load_experiment(g.config);
  if (g.seed_given) cfg.seed = g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  return cfg;
}

void make_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

ControlSignal control_from_spec(const std::string& spec, const TimeGrid& grid, double level,
                                double start, std::optional<double> stop, double u_hi) {
  const ControlBounds bounds{0.0, u_hi};
  if (spec == "box") return ControlSignal::box(grid, level, start, stop.value_or(0.2 * grid.horizon()), bounds);
  if (spec == "constant") return ControlSignal::constant(grid, level, bounds);
  if (spec == "initial") return initial_control(grid, u_hi);
  const auto series = read_series_csv(spec);
  if (!(series.grid == grid)) {
    throw ConfigError(spec + " is sampled on dt=" + format_double(series.grid.dt()) + ", N=" +
                      std::to_string(series.grid.n_steps()) + "; expected dt=" +
                      format_double(grid.dt()) + ", N=" + std::to_string(grid.n_steps()));
  }
  return ControlSignal(grid, series.u, bounds);
}

int exit_for(const Verdict& v, bool truncated) {
  if (truncated) return kReference;
  return v.is_conclusive() ? kOk : kInconclusive;
}

// Opens the reference an experiment runs against. Connecting happens before any
// output is written, so an unreachable endpoint leaves nothing behind.
std::unique_ptr<ReferenceSystem> open_reference(ExperimentConfig& cfg, bool verbose) {
  const ReferenceDescriptor expected{cfg.grid, cfg.loop.control.u_hi, cfg.reference.repeats};
  std::optional<Endpoint> endpoint = cfg.reference.endpoint;
  if (const char* env = std::getenv(kEndpointEnv); env != nullptr && *env != '\0') {
    endpoint = resolve_endpoint(endpoint.value_or(Endpoint{}));
  }
  if (endpoint) {
    if (verbose) std::cerr << "connecting to reference at " << endpoint->str() << "\n";
    return RemoteReference::connect(*endpoint, expected);
  }
  if (verbose) {
    std::cerr << "simulated " << to_string(cfg.reference.kind) << " reference, alpha "
              << cfg.reference.alpha << ", repeats " << cfg.reference.repeats << "\n";
  }
  return std::make_unique<SimulatedReference>(cfg.reference_instance(), cfg.grid,
                                              cfg.loop.control.u_hi, cfg.reference.alpha,
                                              cfg.reference.repeats, cfg.reference_seed());
}

std::string iteration_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%03zu.csv", index);
  return buf;
}

void print_progress(const IterationRecord& r) {
  std::cerr << "iter " << r.index << "  prefit " << r.candidates[0].loss_prefit << " "
            << r.candidates[1].loss_prefit << "  postfit " << r.candidates[0].loss_postfit << " "
            << r.candidates[1].loss_postfit << "  dtheta " << r.candidates[0].max_param_increment
            << " " << r.candidates[1].max_param_increment << "  " << to_string(r.verdict) << "\n";
}

// --- commands ----------------------------------------------------------------

int cmd_simulate(const Globals& g, const GridFlags& gf, const std::string& model,
                 const std::string& params, const std::string& control_spec, double level,
                 double start, std::optional<double> stop, double u_hi, double alpha,
                 std::size_t paths) {
  ExperimentConfig cfg = base_config(g);
  gf.apply(cfg);
  const auto kind = parse_model_kind(model);
  const ModelInstance instance(kind, parse_params(kind, params));
  const auto control = control_from_spec(control_spec, cfg.grid, level, start, stop, u_hi);
  const StochasticConfig sc{alpha, paths, cfg.seed};
  sc.validate();

  std::string csv;
  if (alpha > 0.0) {
    const auto result = simulate_stochastic(instance, control, sc);
    if (result.noise_overdrive) {
      std::cerr << "warning: clamping in " << result.clamp_fraction * 100.0
                << "% of updates; alpha is too large for this grid\n";
    }
    csv = stochastic_csv(control, result);
  } else {
    csv = trajectory_csv(control, simulate(instance, control).output);
  }
  make_out_dir(cfg.out);
  write_text(cfg.out / "simulation.csv", csv);
  if (g.verbose) std::cerr << "wrote " << (cfg.out / "simulation.csv").string() << "\n";
  return kOk;
}

int cmd_fit(const Globals& g, const std::string& model, const std::string& init,
            const std::vector<std::string>& data, std::size_t n_grad, double step,
            const std::string& history) {
  ExperimentConfig cfg = base_config(g);
  const auto kind = parse_model_kind(model);
  const ModelInstance start = init == "random" ? random_model(kind, derive_seed(cfg.seed, 1000))
                                               : ModelInstance(kind, parse_params(kind, init));
  std::vector<Dataset> datasets;
  for (const auto& path : data) {
    const auto s = read_series_csv(path);
    if (s.y.empty()) throw ConfigError(path + " has no measurement column");
    ControlSignal u(s.grid, s.u, {0.0, std::numeric_limits<double>::max()});
    datasets.emplace_back(std::move(u), ObservationSeries(s.grid, s.y));
  }
  FitConfig fc = cfg.loop.fit;
  if (n_grad > 0) fc.n_grad = n_grad;
  if (step > 0.0) fc.adam.step_size = step;
  if (history == "full") {
    fc.history = HistoryMode::FullHistory;
  } else if (history != "latest") {
    throw ConfigError("--history: expected latest or full, got '" + history + "'");
  }
  fc.validate();

  const double loss_start = history_loss_and_gradient(start, datasets, fc.history).loss;
  const auto report = fit(start, datasets, fc);
  const ModelInstance fitted(kind, report.theta_after);
  const json out{{"version", version_string()},
                 {"model", std::string(to_string(kind))},
                 {"seed", cfg.seed},
                 {"n_grad", fc.n_grad},
                 {"step_size", fc.adam.step_size},
                 {"history", history},
                 {"datasets", data.size()},
                 {"theta_start", start.theta},
                 {"loss_start", loss_start},
                 {"theta", report.theta_after},
                 {"loss", report.loss_after},
                 {"max_param_increment", report.max_param_increment},
                 {"diverged_epochs", report.diverged_epochs},
                 {"aborted", report.aborted}};
  make_out_dir(cfg.out);
  write_text(cfg.out / "fit.json", out.dump(2) + "\n");
  const auto& last = datasets.back();
  write_text(cfg.out / "fit_trajectory.csv",
             trajectory_csv(last.control, simulate(fitted, last.control, {}, blowup_guard()).output));
  if (g.verbose) std::cerr << "loss " << loss_start << " -> " << report.loss_after << "\n";
  return report.aborted ? kInconclusive : kOk;
}

int cmd_design(const Globals& g, const GridFlags& gf, const std::string& first_model,
               const std::string& first_params, const std::string& second_model,
               const std::string& second_params, const std::vector<std::string>& memory_files,
               const ExperimentFlags& ef) {
  ExperimentConfig cfg = base_config(g);
  gf.apply(cfg);
  ef.apply(cfg);
  const auto k1 = parse_model_kind(first_model);
  const auto k2 = parse_model_kind(second_model);
  const ModelInstance first(k1, parse_params(k1, first_params));
  const ModelInstance second(k2, parse_params(k2, second_params));
  cfg.loop.control.validate(cfg.grid);

  ControlMemory memory(cfg.loop.control.memory_size);
  // Files are listed oldest first; memory holds newest first.
  for (const auto& path : memory_files) {
    memory.push(control_from_spec(path, cfg.grid, 0, 0, {}, cfg.loop.control.u_hi));
  }
  const auto result = design_control(first, second, memory, cfg.grid, cfg.loop.control, cfg.seed);
  const json out{{"version", version_string()},
                 {"models", {std::string(to_string(k1)), std::string(to_string(k2))}},
                 {"seed", cfg.seed},
                 {"objective", result.objective},
                 {"projected_gradient_norm", result.projected_gradient_norm},
                 {"best_restart", result.best_restart},
                 {"restart_initial_objectives", result.restart_initial_objectives},
                 {"restart_final_objectives", result.restart_final_objectives},
                 {"config", config_echo(cfg)["control"]}};
  make_out_dir(cfg.out);
  write_text(cfg.out / "control.csv", control_csv(result.control));
  write_text(cfg.out / "design.json", out.dump(2) + "\n");
  if (g.verbose) std::cerr << "objective " << result.objective << "\n";
  return kOk;
}

// Shared by discriminate and replay.
int run_loop(const Globals& g, ExperimentConfig& cfg, ReferenceSystem& reference, bool wall_time) {
  if (cfg.candidates.size() != 2) {
    throw ConfigError("discriminate takes exactly two candidates; use tournament for more");
  }
  const auto instances = cfg.candidate_instances();
  const auto echo = config_echo(cfg);

  make_out_dir(cfg.out / "controls");
  std::ofstream log(cfg.out / "iterations.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + (cfg.out / "iterations.jsonl").string());

  const std::array<ModelKind, 2> kinds{instances[0].kind, instances[1].kind};
  const auto report = run_discrimination(
      reference, {instances[0], instances[1]}, cfg.loop, cfg.seed, [&](const IterationRecord& r) {
        const auto name = "controls/" + iteration_name(r.index);
        write_text(cfg.out / name, control_csv(r.control));
        log << iteration_log_entry(r, kinds, name).dump() << "\n";
        log.flush();
        if (g.verbose) print_progress(r);
      });
  write_text(cfg.out / "report.json",
             report_json(report, echo, {.include_wall_time = wall_time}).dump(2) + "\n");
  std::cout << "verdict: " << to_string(report.final_verdict);
  if (report.final_verdict.is_conclusive()) {
    std::cout << " -> " << to_string(kinds[report.final_verdict.winner]);
  }
  std::cout << "\n";
  if (report.truncated) std::cerr << "reference failure: " << report.failure << "\n";
  return exit_for(report.final_verdict, report.truncated);
}

int cmd_discriminate(const Globals& g, const ExperimentFlags& ef, const GridFlags& gf) {
  ExperimentConfig cfg = base_config(g);
  gf.apply(cfg);
  ef.apply(cfg);
  cfg.validate();
  auto reference = open_reference(cfg, g.verbose);
  std::unique_ptr<RecordingReference> recorder;
  if (!g.record.empty()) recorder = std::make_unique<RecordingReference>(*reference, g.record);
  return run_loop(g, cfg, recorder ? *recorder : *reference, ef.wall_time);
}

int cmd_replay(const Globals& g, const ExperimentFlags& ef, const GridFlags& gf,
               const std::string& recording) {
  ExperimentConfig cfg = base_config(g);
  gf.apply(cfg);
  ef.apply(cfg);
  ReplayReference replay(recording);
  cfg.grid = replay.descriptor().grid;
  cfg.reference.repeats = replay.descriptor().repeats;
  cfg.reference.endpoint.reset();
  cfg.validate();
  const int code = run_loop(g, cfg, replay, ef.wall_time);
  if (g.verbose) std::cerr << replay.remaining() << " recorded pairs left unused\n";
  return code;
}

int cmd_tournament(const Globals& g, const ExperimentFlags& ef, const GridFlags& gf) {
  ExperimentConfig cfg = base_config(g);
  gf.apply(cfg);
  ef.apply(cfg);
  cfg.validate();
  auto reference = open_reference(cfg, g.verbose);
  std::unique_ptr<RecordingReference> recorder;
  if (!g.record.empty()) recorder = std::make_unique<RecordingReference>(*reference, g.record);
  ReferenceSystem& ref = recorder ? *recorder : *reference;

  const auto instances = cfg.candidate_instances();
  std::vector<ModelKind> kinds;
  for (const auto& m : instances) kinds.push_back(m.kind);
  const auto echo = config_echo(cfg);

  make_out_dir(cfg.out / "controls");
  std::ofstream log(cfg.out / "iterations.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + (cfg.out / "iterations.jsonl").string());

  const auto result = tournament(ref, instances, cfg.loop, cfg.seed,
                                 [&](std::size_t match, const IterationRecord& r) {
                                   if (!g.verbose) return;
                                   std::cerr << "match " << match + 1 << " ";
                                   print_progress(r);
                                 });
  for (std::size_t j = 0; j < result.matches.size(); ++j) {
    const auto& m = result.matches[j];
    const std::array<ModelKind, 2> pair{kinds[m.incumbent], kinds[m.challenger]};
    for (const auto& r : m.report.records) {
      const auto name = "controls/match_" + std::to_string(j + 1) + "_" + iteration_name(r.index);
      write_text(cfg.out / name, control_csv(r.control));
      json entry = iteration_log_entry(r, pair, name);
      entry["match"] = j + 1;
      log << entry.dump() << "\n";
    }
  }
  write_text(cfg.out / "tournament.json",
             tournament_json(result, kinds, echo, {.include_wall_time = ef.wall_time}).dump(2) + "\n");
  bool truncated = false;
  for (const auto& m : result.matches) truncated = truncated || m.report.truncated;
  std::cout << "winner: " << to_string(kinds[result.winner])
            << (result.inconclusive ? " (no match was conclusive)" : "") << "\n";
  if (truncated) return kReference;
  return result.inconclusive ? kInconclusive : kOk;
}

std::atomic<ReferenceServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const Globals& g, const ExperimentFlags& ef, const GridFlags& gf, const std::string& bind,
              std::size_t max_sessions) {
  ExperimentConfig cfg = base_config(g);
  gf.apply(cfg);
  ef.apply(cfg);
  cfg.reference.endpoint.reset();
  cfg.validate();
  SimulatedReference reference(cfg.reference_instance(), cfg.grid, cfg.loop.control.u_hi,
                               cfg.reference.alpha, cfg.reference.repeats, cfg.reference_seed());
  ServerOptions options;
  if (!g.record.empty()) options.record = g.record;
  options.max_sessions = max_sessions;
  options.log = &std::cout;
  ReferenceServer server(reference, Endpoint::parse(bind), options);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.serve();
  g_server = nullptr;
  std::cout << "served " << server.sessions_served() << " session(s), "
            << reference.stimuli_served() << " stimuli" << std::endl;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop model discrimination for opsin kinetics"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Run seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config, "Experiment config file")->check(CLI::ExistingFile);
  app.add_option("--record", g.record, "Record every stimulus/response pair to this file");
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate one model under one input");
  GridFlags sim_grid;
  sim_grid.attach(sim);
  std::string sim_model = "three", sim_params = "table", sim_control = "box";
  double level = 5.0, start = 0.0, u_hi = 10.0, alpha = 0.0;
  std::optional<double> stop;
  std::size_t paths = 1;
  sim->add_option("--model", sim_model, "three | four | six")->capture_default_str();
  sim->add_option("--params", sim_params, "table or a comma-separated list")->capture_default_str();
  sim->add_option("--control", sim_control, "box | constant | initial | path to a t,u CSV")
      ->capture_default_str();
  sim->add_option("--level", level, "Box or constant amplitude")->capture_default_str();
  sim->add_option("--start", start, "Box onset")->capture_default_str();
  sim->add_option("--stop", stop, "Box offset (default: 20% of the horizon)");
  sim->add_option("--u-hi", u_hi, "Input upper bound")->capture_default_str();
  sim->add_option("--alpha", alpha, "Noise amplitude; > 0 simulates stochastically")->capture_default_str();
  sim->add_option("--paths", paths, "Stochastic paths")->capture_default_str();

  // fit
  auto* fitc = app.add_subcommand("fit", "Fit a model to measured t,u,y data");
  std::string fit_model = "three", fit_init = "random", fit_history = "latest";
  std::vector<std::string> fit_data;
  std::size_t fit_epochs = 0;
  double fit_step = 0.0;
  fitc->add_option("--model", fit_model, "three | four | six")->capture_default_str();
  fitc->add_option("--init", fit_init, "random | table | comma-separated list")->capture_default_str();
  fitc->add_option("--data", fit_data, "t,u,y CSV file(s), oldest first")->required();
  fitc->add_option("--epochs", fit_epochs, "Adam epochs (default 300)");
  fitc->add_option("--step-size", fit_step, "Adam step size (default 5e-3)");
  fitc->add_option("--history", fit_history, "latest | full")->capture_default_str();

  // design-control
  auto* des = app.add_subcommand("design-control", "Design an input that separates two models");
  GridFlags des_grid;
  des_grid.attach(des);
  ExperimentFlags des_flags;
  std::string first_model = "three", first_params = "table", second_model = "four",
              second_params = "table";
  std::vector<std::string> memory_files;
  des->add_option("--first", first_model, "First model")->capture_default_str();
  des->add_option("--first-params", first_params, "table or list")->capture_default_str();
  des->add_option("--second", second_model, "Second model")->capture_default_str();
  des->add_option("--second-params", second_params, "table or list")->capture_default_str();
  des->add_option("--memory", memory_files, "Previously applied t,u CSV files, oldest first");
  des_flags.o_c1 = des->add_option("--c1", des_flags.c1, "Amplitude penalty weight");
  des_flags.o_c2 = des->add_option("--c2", des_flags.c2, "Similarity penalty weight");
  des_flags.o_restarts = des->add_option("--restarts", des_flags.restarts, "Solver restarts");

  // discriminate / replay / tournament / serve-reference
  auto* disc = app.add_subcommand("discriminate", "Run the closed loop on two candidates");
  ExperimentFlags disc_flags;
  GridFlags disc_grid;
  disc_flags.attach(disc, true);
  disc_grid.attach(disc);

  auto* rep = app.add_subcommand("replay", "Rerun a discrimination against a recorded session");
  ExperimentFlags rep_flags;
  GridFlags rep_grid;
  std::string recording;
  rep_flags.attach(rep, false);
  rep_grid.attach(rep);
  rep->add_option("--recording", recording, "File written by --record")->required()->check(CLI::ExistingFile);

  auto* tour = app.add_subcommand("tournament", "Sequential pairwise matches over several candidates");
  ExperimentFlags tour_flags;
  GridFlags tour_grid;
  tour_flags.attach(tour, true);
  tour_grid.attach(tour);

  auto* serve = app.add_subcommand("serve-reference", "Serve a simulated reference over TCP");
  ExperimentFlags serve_flags;
  GridFlags serve_grid;
  std::string bind = "127.0.0.1:7878";
  std::size_t max_sessions = 0;
  serve_flags.attach(serve, false);
  serve_grid.attach(serve);
  serve->add_option("--bind", bind, "host:port to listen on (port 0 picks one)")->capture_default_str();
  serve->add_option("--max-sessions", max_sessions, "Exit after this many sessions (0: run until signalled)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*sim) {
      return cmd_simulate(g, sim_grid, sim_model, sim_params, sim_control, level, start, stop, u_hi,
                          alpha, paths);
    }
    if (*fitc) return cmd_fit(g, fit_model, fit_init, fit_data, fit_epochs, fit_step, fit_history);
    if (*des) {
      return cmd_design(g, des_grid, first_model, first_params, second_model, second_params,
                        memory_files, des_flags);
    }
    if (*disc) return cmd_discriminate(g, disc_flags, disc_grid);
    if (*rep) return cmd_replay(g, rep_flags, rep_grid, recording);
    if (*tour) return cmd_tournament(g, tour_flags, tour_grid);
    if (*serve) return cmd_serve(g, serve_flags, serve_grid, bind, max_sessions);
  } catch (const ConnectError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const ReferenceFailure& e) {
    std::cerr << "reference failure: " << e.what() << "\n";
    return kReference;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kConfig;
}
