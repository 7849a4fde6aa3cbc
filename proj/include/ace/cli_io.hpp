#pragma once

#include "ace/acquisition.hpp"
#include "ace/kernel_gp.hpp"
#include "ace/propensity.hpp"
#include "ace/simulation.hpp"
#include "ace/surrogate.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ace::cli {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Everything one `simulate` invocation needs.  `scenario.method` and
/// `scenario.weight` are overwritten per (estimand, method) cell.
struct RunConfig {
  sim::ScenarioConfig scenario;
  std::vector<sim::Method> methods;
  std::vector<WeightSpec> estimands;
  int replications = 50;
  int threads = 1;
  std::filesystem::path output_dir = "results";

  /// seed, seed + 1, ..., seed + replications - 1.
  [[nodiscard]] std::vector<std::uint64_t> seeds() const;
  /// Throws InvalidArgument with a "config.<field>: ..." message.
  void validate() const;
};

/// Defaults for a scenario: every method defined for it, ATE only.
RunConfig default_run_config(sim::Scenario scenario);

/// Strict parse: unknown keys and wrong types are errors naming the field.
/// A manifest written by `simulate` is accepted too (its "config" member is
/// used).  Keys missing from the document keep the defaults of `base`.
RunConfig run_config_from_json(const nlohmann::json& doc, const RunConfig& base);
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
/// Hex FNV-1a of the canonical config, excluding output_dir and threads
/// (neither changes the results).
std::string config_hash(const RunConfig& config);

/// Shortest text that reads back to the same double; NaN as "NA".
std::string format_double(double v);

struct CellResult {
  sim::Method method = sim::Method::Random;
  WeightSpec estimand;
  std::vector<sim::ReplicationResult> results;
  sim::Metrics metrics;
  double wall_seconds = 0.0;
};

std::vector<CellResult> run_simulation(const RunConfig& config);

/// replications.csv, selections.csv, aggregate.csv and manifest.json in
/// config.output_dir.  Only the manifest carries timings.
void write_outputs(const RunConfig& config, const std::vector<CellResult>& cells);

inline constexpr const char* kReplicationsFile = "replications.csv";
inline constexpr const char* kSelectionsFile = "selections.csv";
inline constexpr const char* kAggregateFile = "aggregate.csv";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBoxplotFile = "s3_boxplot.csv";
inline constexpr const char* kTablesFile = "tables.txt";

struct AggregateRow {
  std::string scenario;
  std::string estimand;
  std::string method;
  std::size_t replications = 0;
  std::size_t excluded = 0;
  double bias_x1e3 = 0.0;
  double rmse_x1e3 = 0.0;
  std::optional<sim::Quantiles> cumulative_ite;
};

std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path);

struct Report {
  std::string text;
  /// "scenario/estimand/method" cells absent from a table that has others.
  std::vector<std::string> missing;
  std::vector<AggregateRow> s3_rows;
};

Report build_report(const std::vector<AggregateRow>& rows);

/// Collects aggregate.csv from dir and its immediate subdirectories, prints
/// the tables, writes tables.txt and s3_boxplot.csv into dir.  Throws
/// InvalidArgument listing the expected files when nothing is found.
Report run_report(const std::filesystem::path& dir, std::ostream& out);

/// Serialized advisory state.  Paths are stored as given; relative paths
/// resolve against the session file's directory.
struct SessionState {
  sim::Scenario scenario = sim::Scenario::S2A;
  WeightSpec estimand;
  sim::PropensityMode propensity_mode = sim::PropensityMode::Known;
  std::optional<propensity::PropensityModel> known_propensity;
  std::string pool_path;
  std::string test_path;
  std::uint64_t seed = 1;
  int fit_restarts = 10;
  bool noise_adjusted = false;
  acq::UcbConfig ucb;
  std::int64_t step = 0;
  Eigen::Index dim = 2;
  std::vector<Observation> observations;
  std::vector<Eigen::Index> unit_indices;  // -1 when the unit is not from the pool
  std::optional<std::array<gp::GPHyperParams, 2>> hyperparameters;
};

nlohmann::json to_json(const SessionState& state);
SessionState session_from_json(const nlohmann::json& doc);
SessionState load_session(const std::filesystem::path& path);
/// Writes to a temporary file in the same directory, then renames.
void save_session(const SessionState& state, const std::filesystem::path& path);

nlohmann::json hyperparams_to_json(const gp::GPHyperParams& p);
gp::GPHyperParams hyperparams_from_json(const nlohmann::json& j);

/// Turn-based advisor over one session file.  handle() never throws: bad
/// requests produce {"error": ...} and leave the state untouched.
class AdvisorySession {
 public:
  AdvisorySession(SessionState state, std::filesystem::path session_path);

  nlohmann::json handle(const nlohmann::json& request);
  nlohmann::json handle_line(const std::string& line);

  [[nodiscard]] const SessionState& state() const { return state_; }

 private:
  nlohmann::json recommend(const nlohmann::json& request) const;
  nlohmann::json observe(const nlohmann::json& request);
  [[nodiscard]] TwoArmModel model() const;
  [[nodiscard]] propensity::PropensityModel propensity_model() const;
  [[nodiscard]] acq::Pool pool() const;

  SessionState state_;
  std::filesystem::path path_;
  std::optional<Eigen::MatrixXd> pool_points_;
  TestSet test_;
};

/// Reads requests line by line until EOF, writing one response per line.
void run_advise_loop(AdvisorySession& session, std::istream& in, std::ostream& out);

struct TruthOptions {
  WeightSpec estimand;
  std::size_t points = 1'000'000;
  std::uint64_t seed = 1;
  int n_test = 1000;
  std::uint64_t test_seed = 20230601;
  std::optional<std::filesystem::path> test_file;
};

/// Monte-Carlo truth against the test-set plug-in of the exact surfaces:
/// {"estimand", "tau_mc", "se_mc", "n_points", "tau_test", "se_test",
///  "n_test", "z_mc", "z"}, where z uses both standard errors.
nlohmann::json truth_report(const TruthOptions& options);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace ace::cli
