#pragma once

// Plot-ready CSV files and the JSON documents written by discrimination runs.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "modisc/discrimination.hpp"
#include "modisc/model.hpp"

namespace modisc {

/// Output file could not be created or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "major.minor.patch-g<commit>[-dirty]" when built from a checkout.
std::string version_string();

/// Shortest representation that reads back to the same double.
std::string format_double(double x);

/// Header `t,u`.
std::string control_csv(const ControlSignal& control);
/// Header `t,u,y`.
std::string trajectory_csv(const ControlSignal& control, const ObservationSeries& y);
/// Header `t,u,y_mean,y_q01,y_q25,y_q75,y_q99`; quantiles across paths, linear interpolation.
std::string stochastic_csv(const ControlSignal& control, const StochasticResult& result);

/// Reads a `t,u[,...]` or `t,u,y` file. The grid is inferred from the t column.
struct CsvSeries {
  TimeGrid grid;
  std::vector<double> u;
  std::vector<double> y;  ///< empty when the file has no third column
};
CsvSeries read_series_csv(const std::filesystem::path& path);

/// Writes the whole file or throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);

nlohmann::json to_json(const Verdict& v, const std::array<ModelKind, 2>& kinds);
/// One line of the iteration log.
nlohmann::json iteration_log_entry(const IterationRecord& record, const std::array<ModelKind, 2>& kinds,
                                   const std::string& control_csv_path);

struct ReportOptions {
  /// Wall time varies between identical runs, so it is left out unless asked for.
  bool include_wall_time = false;
};

nlohmann::json report_json(const DiscriminationReport& report, const nlohmann::json& config_echo,
                           const ReportOptions& options = {});
nlohmann::json tournament_json(const TournamentResult& result,
                               const std::vector<ModelKind>& candidate_kinds,
                               const nlohmann::json& config_echo, const ReportOptions& options = {});

}  // namespace modisc
