#include "modisc/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#ifndef MODISC_VERSION
#define MODISC_VERSION "0.1.0"
#endif

namespace modisc {

using nlohmann::json;

std::string version_string() { return MODISC_VERSION; }

std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

double quantile(std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> split_numbers(const std::string& line, std::size_t line_no) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    if (first == std::string::npos) throw IoError("empty cell on line " + std::to_string(line_no));
    double v = 0.0;
    const char* b = cell.data() + first;
    const char* e = cell.data() + last + 1;
    const auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e) {
      throw IoError("not a number on line " + std::to_string(line_no) + ": '" +
                    cell.substr(first, last + 1 - first) + "'");
    }
    out.push_back(v);
  }
  return out;
}

json verdict_name(const Verdict& v) {
  switch (v.state) {
    case Verdict::State::Ongoing: return "ongoing";
    case Verdict::State::Inconclusive: return "inconclusive";
    case Verdict::State::Conclusive: return "conclusive";
  }
  return "ongoing";
}

json kinds_json(std::span<const ModelKind> kinds) {
  json out = json::array();
  for (auto k : kinds) out.push_back(std::string(to_string(k)));
  return out;
}

}  // namespace

std::string control_csv(const ControlSignal& control) {
  std::string out = "t,u\n";
  for (std::size_t m = 0; m < control.size(); ++m) {
    out += format_double(control.grid().time(m)) + "," + format_double(control[m]) + "\n";
  }
  return out;
}

std::string trajectory_csv(const ControlSignal& control, const ObservationSeries& y) {
  if (y.values.size() != control.size()) throw ContractViolation("output and control lengths differ");
  std::string out = "t,u,y\n";
  for (std::size_t m = 0; m < control.size(); ++m) {
    out += format_double(control.grid().time(m)) + "," + format_double(control[m]) + "," +
           format_double(y.values[m]) + "\n";
  }
  return out;
}

std::string stochastic_csv(const ControlSignal& control, const StochasticResult& result) {
  if (result.paths.empty()) throw ContractViolation("no stochastic paths");
  std::string out = "t,u,y_mean,y_q01,y_q25,y_q75,y_q99\n";
  std::vector<double> column(result.paths.size());
  for (std::size_t m = 0; m < control.size(); ++m) {
    for (std::size_t p = 0; p < column.size(); ++p) column[p] = result.paths[p].values[m];
    std::sort(column.begin(), column.end());
    out += format_double(control.grid().time(m)) + "," + format_double(control[m]) + "," +
           format_double(result.mean.values[m]);
    for (double q : {0.01, 0.25, 0.75, 0.99}) out += "," + format_double(quantile(column, q));
    out += "\n";
  }
  return out;
}

CsvSeries read_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> t, u, y;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (line_no == 1 && !line.empty() && (std::isalpha(static_cast<unsigned char>(line[0])) != 0)) {
      continue;  // header
    }
    const auto cells = split_numbers(line, line_no);
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns || columns < 2) {
      throw IoError(path.string() + ": inconsistent column count on line " + std::to_string(line_no));
    }
    t.push_back(cells[0]);
    u.push_back(cells[1]);
    if (columns >= 3) y.push_back(cells[2]);
  }
  if (t.size() < 2) throw IoError(path.string() + ": need at least two samples");
  const double dt = t[1] - t[0];
  if (!(dt > 0.0)) throw IoError(path.string() + ": time column must increase");
  for (std::size_t m = 0; m < t.size(); ++m) {
    if (std::abs(t[m] - dt * static_cast<double>(m)) > 1e-9 * std::max(1.0, t.back())) {
      throw IoError(path.string() + ": time column is not a uniform grid from 0 (line " +
                    std::to_string(m + 2) + ")");
    }
  }
  return {TimeGrid(dt, t.size() - 1), std::move(u), std::move(y)};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("short write to " + path.string());
}

json to_json(const Verdict& v, const std::array<ModelKind, 2>& kinds) {
  json out{{"state", verdict_name(v)}};
  if (v.is_conclusive()) {
    out["winner"] = v.winner;
    out["winner_kind"] = std::string(to_string(kinds[v.winner]));
    out["reason"] = v.reason == StopReason::SoleFit ? "sole_fit" : "occam";
  }
  return out;
}

json iteration_log_entry(const IterationRecord& r, const std::array<ModelKind, 2>& kinds,
                         const std::string& control_csv_path) {
  json pre = json::array(), post = json::array(), dtheta = json::array(), theta = json::array();
  for (const auto& c : r.candidates) {
    pre.push_back(c.loss_prefit);
    post.push_back(c.loss_postfit);
    dtheta.push_back(c.max_param_increment);
    theta.push_back(c.theta);
  }
  return {{"iter", r.index},
          {"control_csv_path", control_csv_path},
          {"loss_prefit", pre},
          {"loss_postfit", post},
          {"dtheta", dtheta},
          {"theta", theta},
          {"loss_threshold", r.loss_threshold},
          {"design_objective", r.design_objective},
          {"verdict", to_json(r.verdict, kinds)}};
}

json report_json(const DiscriminationReport& report, const json& config_echo,
                 const ReportOptions& options) {
  json iterations = json::array();
  for (const auto& r : report.records) {
    json entry = iteration_log_entry(r, report.kinds, "");
    entry.erase("control_csv_path");
    json fit_aborted = json::array();
    for (const auto& c : r.candidates) fit_aborted.push_back(c.fit_aborted);
    entry["fit_aborted"] = fit_aborted;
    entry["memory_depth"] = r.memory_depth;
    iterations.push_back(std::move(entry));
  }
  json out{{"version", version_string()},
           {"config", config_echo},
           {"candidates", kinds_json(report.kinds)},
           {"verdict", to_json(report.final_verdict, report.kinds)},
           {"iterations_run", report.records.size()},
           {"truncated", report.truncated},
           {"failure", report.failure},
           {"unsettled_sole_fit", report.unsettled_sole_fit},
           {"final_theta", report.final_theta},
           {"iterations", iterations}};
  if (options.include_wall_time) out["wall_seconds"] = report.wall_seconds;
  return out;
}

json tournament_json(const TournamentResult& result, const std::vector<ModelKind>& candidate_kinds,
                     const json& config_echo, const ReportOptions& options) {
  json matches = json::array();
  for (const auto& m : result.matches) {
    json entry = report_json(m.report, json::object(), options);
    entry.erase("version");
    entry.erase("config");
    entry["incumbent"] = m.incumbent;
    entry["challenger"] = m.challenger;
    entry["match_winner"] = m.winner;
    entry["match_inconclusive"] = m.inconclusive;
    matches.push_back(std::move(entry));
  }
  return {{"version", version_string()},
          {"config", config_echo},
          {"candidates", kinds_json(candidate_kinds)},
          {"winner", result.winner},
          {"winner_kind", std::string(to_string(candidate_kinds.at(result.winner)))},
          {"inconclusive", result.inconclusive},
          {"matches", matches}};
}

}  // namespace modisc
