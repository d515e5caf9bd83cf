#include "modisc/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <set>

#include "modisc/rng.hpp"

namespace modisc {

namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last + 1 - first);
}

// Drops a trailing "# comment" outside quotes and one level of surrounding quotes.
std::string clean_value(std::string_view raw) {
  bool quoted = false;
  std::size_t end = raw.size();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '"') quoted = !quoted;
    if (raw[i] == '#' && !quoted) {
      end = i;
      break;
    }
  }
  auto v = trim(raw.substr(0, end));
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    v = v.substr(1, v.size() - 2);
  }
  return std::string(v);
}

double to_double(const std::string& key, std::string_view text) {
  double v = 0.0;
  const auto t = trim(text);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError(key + ": '" + std::string(text) + "' is not a number");
  }
  return v;
}

std::uint64_t to_unsigned(const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  const auto t = trim(text);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError(key + ": '" + std::string(text) + "' is not a non-negative integer");
  }
  return v;
}

bool to_bool(const std::string& key, std::string_view text) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": '" + std::string(text) + "' is not a boolean");
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> get(const std::string& key) {
    seen_.insert(key);
    const auto node = tree_.get_child_optional(pt::ptree::path_type(key, '.'));
    if (!node || node->data().empty()) return std::nullopt;
    return clean_value(node->data());
  }
  void num(const std::string& key, double& out) {
    if (auto v = get(key)) out = to_double(key, *v);
  }
  void count(const std::string& key, std::size_t& out) {
    if (auto v = get(key)) out = to_unsigned(key, *v);
  }
  void flag(const std::string& key, bool& out) {
    if (auto v = get(key)) out = to_bool(key, *v);
  }

  /// Keys present in the file that nothing asked for.
  std::vector<std::string> unknown(const std::string& prefix = "", const pt::ptree* node = nullptr) {
    std::vector<std::string> out;
    for (const auto& [name, child] : node ? *node : tree_) {
      const auto key = prefix.empty() ? name : prefix + "." + name;
      if (!child.empty()) {
        for (auto& k : unknown(key, &child)) out.push_back(std::move(k));
      } else if (!seen_.contains(key)) {
        out.push_back(key);
      }
    }
    return out;
  }

 private:
  const pt::ptree& tree_;
  std::set<std::string> seen_;
};

json params_echo(const std::optional<std::vector<double>>& theta) {
  if (!theta) return "random";
  return *theta;
}

}  // namespace

std::vector<double> parse_params(ModelKind kind, std::string_view text) {
  auto t = trim(text);
  if (t == "table" || t == "table3" || t == "table4" || t == "table6") {
    if (t.size() == 6 && std::string_view("346").find(t[5]) != std::string_view::npos) {
      const auto preset = parse_model_kind(t.substr(5));
      if (preset != kind) {
        throw ConfigError("preset '" + std::string(t) + "' does not belong to a " +
                          std::string(to_string(kind)) + " model");
      }
    }
    return table_model(kind).theta;
  }
  if (!t.empty() && t.front() == '[' && t.back() == ']') t = trim(t.substr(1, t.size() - 2));
  std::vector<double> out;
  while (!t.empty()) {
    const auto comma = t.find(',');
    out.push_back(to_double("params", t.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    t = trim(t.substr(comma + 1));
  }
  if (out.size() != param_count(kind)) {
    throw ConfigError(std::string(to_string(kind)) + " model takes " +
                      std::to_string(param_count(kind)) + " parameters, got " +
                      std::to_string(out.size()));
  }
  return out;
}

std::vector<ModelKind> parse_model_list(std::string_view text) {
  std::vector<ModelKind> out;
  auto t = trim(text);
  while (!t.empty()) {
    const auto comma = t.find(',');
    const auto name = trim(t.substr(0, comma));
    try {
      out.push_back(parse_model_kind(name));
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (comma == std::string_view::npos) break;
    t = trim(t.substr(comma + 1));
  }
  return out;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, ExperimentConfig cfg) {
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  Reader r(tree);

  if (auto v = r.get("seed")) cfg.seed = to_unsigned("seed", *v);
  if (auto v = r.get("out")) cfg.out = *v;

  double dt = cfg.grid.dt();
  std::size_t n_steps = cfg.grid.n_steps();
  r.num("grid.dt", dt);
  r.count("grid.n_steps", n_steps);
  try {
    cfg.grid = TimeGrid(dt, n_steps);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }

  auto& ref = cfg.reference;
  if (auto v = r.get("reference.model")) {
    try {
      ref.kind = parse_model_kind(*v);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("reference.model: ") + e.what());
    }
  }
  if (auto v = r.get("reference.params")) ref.theta = parse_params(ref.kind, *v);
  r.num("reference.alpha", ref.alpha);
  r.count("reference.repeats", ref.repeats);
  if (auto v = r.get("reference.endpoint")) {
    try {
      ref.endpoint = Endpoint::parse(*v);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("reference.endpoint: ") + e.what());
    }
  }

  if (auto v = r.get("candidates.models")) {
    cfg.candidates.clear();
    for (auto k : parse_model_list(*v)) cfg.candidates.push_back({k, {}});
  }
  if (auto v = r.get("candidates.init")) {
    if (*v == "table") {
      for (auto& c : cfg.candidates) c.theta = table_model(c.kind).theta;
    } else if (*v != "random") {
      throw ConfigError("candidates.init: expected random or table, got '" + *v + "'");
    }
  }
  for (std::size_t k = 0; k < cfg.candidates.size(); ++k) {
    const auto key = "candidates.theta_" + std::to_string(k);
    if (auto v = r.get(key)) cfg.candidates[k].theta = parse_params(cfg.candidates[k].kind, *v);
  }

  auto& th = cfg.loop.thresholds;
  r.count("stopping.i_max", th.i_max);
  r.num("stopping.loss_max", th.loss_max);
  r.num("stopping.delta_max", th.delta_max);
  r.flag("stopping.relative_loss", th.relative_loss);
  r.flag("stopping.stop_on_verdict", cfg.loop.stop_on_verdict);

  auto& fit = cfg.loop.fit;
  r.count("fit.n_grad", fit.n_grad);
  r.num("fit.learning_rate", fit.adam.step_size);
  r.num("fit.beta1", fit.adam.beta1);
  r.num("fit.beta2", fit.adam.beta2);
  r.num("fit.epsilon", fit.adam.epsilon);
  if (auto v = r.get("fit.history")) {
    if (*v == "latest") {
      fit.history = HistoryMode::LatestOnly;
    } else if (*v == "full") {
      fit.history = HistoryMode::FullHistory;
    } else {
      throw ConfigError("fit.history: expected latest or full, got '" + *v + "'");
    }
  }

  auto& ctl = cfg.loop.control;
  r.num("control.c1", ctl.c1);
  r.num("control.c2", ctl.c2);
  r.num("control.u_min_energy", ctl.u_min_energy);
  r.num("control.u_hi", ctl.u_hi);
  r.count("control.memory_size", ctl.memory_size);
  r.count("control.max_iterations", ctl.solver.max_iterations);
  r.count("control.restarts", ctl.solver.restarts);
  r.num("control.initial_move", ctl.solver.initial_move);
  r.num("control.tolerance", ctl.solver.tolerance);

  if (const auto extra = r.unknown(); !extra.empty()) {
    throw ConfigError(path.string() + ": unknown key '" + extra.front() + "'");
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  auto wrap = [](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string(what) + ": " + e.what());
    }
  };
  if (candidates.size() < 2) throw ConfigError("candidates: need at least two models");
  wrap("candidates", [&] {
    for (const auto& m : candidate_instances()) (void)m;
  });
  if (!reference.endpoint) {
    wrap("reference", [&] {
      (void)reference_instance();
      StochasticConfig{reference.alpha, reference.repeats, 0}.validate();
    });
  }
  if (reference.repeats < 1) throw ConfigError("reference.repeats must be >= 1");
  wrap("loop", [&] { loop.validate(grid); });
}

std::vector<ModelInstance> ExperimentConfig::candidate_instances() const {
  std::vector<ModelInstance> out;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    out.push_back(c.theta ? ModelInstance(c.kind, *c.theta)
                          : random_model(c.kind, derive_seed(seed, 1000 + k)));
  }
  return out;
}

ModelInstance ExperimentConfig::reference_instance() const {
  return reference.theta.empty() ? table_model(reference.kind)
                                 : ModelInstance(reference.kind, reference.theta);
}

std::uint64_t ExperimentConfig::reference_seed() const { return derive_seed(seed, 2000); }

json config_echo(const ExperimentConfig& cfg) {
  json candidates = json::array();
  for (const auto& c : cfg.candidates) {
    candidates.push_back({{"model", std::string(to_string(c.kind))}, {"params", params_echo(c.theta)}});
  }
  const auto& th = cfg.loop.thresholds;
  const auto& fit = cfg.loop.fit;
  const auto& ctl = cfg.loop.control;
  return {
      {"seed", cfg.seed},
      {"grid", {{"dt", cfg.grid.dt()}, {"n_steps", cfg.grid.n_steps()}}},
      {"reference", {{"u_hi", ctl.u_hi}, {"repeats", cfg.reference.repeats}}},
      {"candidates", candidates},
      {"stopping",
       {{"i_max", th.i_max},
        {"loss_max", th.loss_max},
        {"delta_max", th.delta_max},
        {"relative_loss", th.relative_loss},
        {"stop_on_verdict", cfg.loop.stop_on_verdict}}},
      {"fit",
       {{"n_grad", fit.n_grad},
        {"learning_rate", fit.adam.step_size},
        {"beta1", fit.adam.beta1},
        {"beta2", fit.adam.beta2},
        {"epsilon", fit.adam.epsilon},
        {"history", fit.history == HistoryMode::LatestOnly ? "latest" : "full"}}},
      {"control",
       {{"c1", ctl.c1},
        {"c2", ctl.c2},
        {"u_min_energy", ctl.u_min_energy},
        {"u_hi", ctl.u_hi},
        {"memory_size", ctl.memory_size},
        {"max_iterations", ctl.solver.max_iterations},
        {"restarts", ctl.solver.restarts},
        {"initial_move", ctl.solver.initial_move},
        {"tolerance", ctl.solver.tolerance}}},
  };
}

}  // namespace modisc
