#pragma once

#include "ace/acquisition.hpp"
#include "ace/kernel_gp.hpp"
#include "ace/propensity.hpp"
#include "ace/surrogate.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ace::sim {

/// Two-dimensional Franke-type surfaces:
///   mu_a(x) = 0.75 exp(-(9x1-2)^2/4 - (9x2-2)^2/4)
///           + 0.75 exp(-(9x1+1)^2/49 - (9x2+1)^2/10)
///           + 0.5 a exp(-(9x1-7)^2/4 - (9x2-3)^2/4)
///           - 0.2 a exp(-(9x1-4)^2 - (9x2-7)^2)
double franke_mu(const gp::PointRef& x, Arm a);

/// sigmoid(-2 + 2 x1 x2).
double true_propensity(const gp::PointRef& x);

struct GroundTruth {
  double noise_sd = 0.05;

  [[nodiscard]] double mu(const gp::PointRef& x, Arm a) const { return franke_mu(x, a); }
  [[nodiscard]] double ite(const gp::PointRef& x) const {
    return franke_mu(x, Arm::Treated) - franke_mu(x, Arm::Control);
  }
  [[nodiscard]] double propensity(const gp::PointRef& x) const { return true_propensity(x); }
};

/// mu_a(x) + N(0, noise_sd^2).
double sample_outcome(const GroundTruth& truth, const gp::PointRef& x, Arm a, std::mt19937_64& rng);

enum class Scenario { S1, S2A, S2B, S3 };
enum class Method { Random, Alc, AlcE, Ace, AceE, AceUcb, Greedy };
enum class PropensityMode { Known, Estimated };

std::string to_string(Scenario s);
std::string to_string(Method m);
std::string to_string(PropensityMode m);
Scenario parse_scenario(std::string_view text);
Method parse_method(std::string_view text);
PropensityMode parse_propensity_mode(std::string_view text);

/// Whether a method is defined for a scenario (S1/S2A: random, alc, ace;
/// S2B: random, alc_e, ace_e; S3: random, greedy, ace_ucb).
bool method_allowed(Scenario s, Method m);

struct ScenarioConfig {
  Scenario scenario = Scenario::S2A;
  Method method = Method::Ace;
  int n = 100;
  int n_pool = 500;
  int n_test = 1000;
  int n_init = 5;
  WeightSpec weight;
  double noise_sd = 0.05;
  std::uint64_t seed = 1;
  std::uint64_t test_seed = 20230601;
  double ucb_c = 0.01;
  /// Hyperparameters are re-optimized every refit_interval steps, warm
  /// started from the previous fit.  Every restart_interval-th refit (and the
  /// first and final fits) uses all fit_restarts starts; the rest use the
  /// warm start alone.
  int refit_interval = 1;
  int restart_interval = 1;
  int fit_restarts = 10;
  /// An arm keeps the default hyperparameters until it holds this many
  /// observations.
  int min_fit_points = 10;
  PropensityMode propensity_mode = PropensityMode::Known;
  bool noise_adjusted = false;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

struct ReplicationResult {
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::S2A;
  Method method = Method::Ace;
  std::string estimand;
  double tau_hat = 0.0;  // NaN for S3
  double tau = 0.0;      // NaN for S3
  double cumulative_ite = 0.0;
  std::vector<Eigen::Index> selected;
  std::vector<Arm> arms;
  int n_treated = 0;
  double wall_seconds = 0.0;
  bool excluded = false;
  std::string failure;
  int fallback_fits = 0;
  int prior_fallback_steps = 0;

  [[nodiscard]] double error() const { return tau_hat - tau; }
};

/// Uniform points on [0, 1]^dim from a dedicated seed.
TestSet make_test_set(int n_test, int dim, std::uint64_t seed);

/// Finite-sample estimand over a test set using the closed-form surfaces and
/// the true propensity.
double true_estimand(const TestSet& test, const WeightSpec& spec);

struct MonteCarloEstimate {
  double tau = 0.0;
  double std_error = 0.0;
  std::size_t n_points = 0;
};

/// Ratio estimate sum w(x) ite(x) / sum w(x) over iid uniform points (or the
/// given points), with a delta-method standard error.
MonteCarloEstimate monte_carlo_truth(const WeightSpec& spec, std::size_t n_points, std::uint64_t seed);
MonteCarloEstimate weighted_ite_mean(const WeightSpec& spec, const gp::PointsRef& points);

ReplicationResult run_replication(const ScenarioConfig& config, std::uint64_t seed);

/// The candidate pool run_replication draws for this seed; selected indices
/// in a ReplicationResult refer to its rows.
Eigen::MatrixXd replication_pool(const ScenarioConfig& config, std::uint64_t seed);

/// Runs one replication per seed on up to `threads` worker threads; result
/// order follows the seed order.
std::vector<ReplicationResult> run_replications(const ScenarioConfig& config,
                                                std::span<const std::uint64_t> seeds, int threads = 1);

struct Quantiles {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Linear-interpolation quantiles of a nonempty sample.
Quantiles quantiles(std::vector<double> values);

struct Metrics {
  std::size_t replications = 0;
  std::size_t excluded = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double bias_x1e3 = 0.0;
  double rmse_x1e3 = 0.0;
  std::optional<Quantiles> cumulative_ite;  // S3 only
};

Metrics aggregate(std::span<const ReplicationResult> results);

}  // namespace ace::sim
