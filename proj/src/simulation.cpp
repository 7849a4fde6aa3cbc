#include "ace/simulation.hpp"

#include "ace/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace ace::sim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// The shipped ground truth is two-dimensional.
constexpr Eigen::Index kDim = 2;

// Independent generator per (seed, stream) pair.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
  return std::mt19937_64(seq);
}

enum Stream : std::uint32_t {
  kPoolStream = 1,
  kNoiseStream = 2,
  kAssignmentStream = 3,
  kArrivalStream = 4,
  kInitStream = 5,
  kMethodStream = 6,
};

Eigen::MatrixXd uniform_points(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) X(i, k) = unit(rng);
  }
  return X;
}

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw InvalidArgument(std::string(field) + ": " + message);
}

WeightSpec effective_weight(const ScenarioConfig& c) {
  if (c.scenario == Scenario::S1 || c.scenario == Scenario::S2A) return WeightSpec{};
  return c.weight;
}

std::string estimand_label(const ScenarioConfig& c) {
  return c.scenario == Scenario::S3 ? "ite" : effective_weight(c).name();
}

std::uint64_t fit_seed(std::uint64_t rep_seed, std::uint64_t step) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = rep_seed * 0x9E3779B97F4A7C15ULL + step + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

double franke_mu(const gp::PointRef& x, Arm a) {
  if (x.size() != 2) throw InvalidArgument("franke_mu: x must be two-dimensional");
  const double u = 9.0 * x(0);
  const double v = 9.0 * x(1);
  const double arm = static_cast<double>(to_index(a));
  return 0.75 * std::exp(-0.25 * (u - 2.0) * (u - 2.0) - 0.25 * (v - 2.0) * (v - 2.0)) +
         0.75 * std::exp(-(u + 1.0) * (u + 1.0) / 49.0 - (v + 1.0) * (v + 1.0) / 10.0) +
         0.5 * arm * std::exp(-0.25 * (u - 7.0) * (u - 7.0) - 0.25 * (v - 3.0) * (v - 3.0)) -
         0.2 * arm * std::exp(-(u - 4.0) * (u - 4.0) - (v - 7.0) * (v - 7.0));
}

double true_propensity(const gp::PointRef& x) {
  if (x.size() != 2) throw InvalidArgument("true_propensity: x must be two-dimensional");
  return propensity::PropensityModel::simulation_truth().evaluate(x);
}

double sample_outcome(const GroundTruth& truth, const gp::PointRef& x, Arm a, std::mt19937_64& rng) {
  const double mu = truth.mu(x, a);
  if (truth.noise_sd == 0.0) return mu;
  std::normal_distribution<double> noise(0.0, truth.noise_sd);
  return mu + noise(rng);
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::S1: return "s1";
    case Scenario::S2A: return "s2a";
    case Scenario::S2B: return "s2b";
    case Scenario::S3: return "s3";
  }
  return "?";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Random: return "random";
    case Method::Alc: return "alc";
    case Method::AlcE: return "alc_e";
    case Method::Ace: return "ace";
    case Method::AceE: return "ace_e";
    case Method::AceUcb: return "ace_ucb";
    case Method::Greedy: return "greedy";
  }
  return "?";
}

std::string to_string(PropensityMode m) { return m == PropensityMode::Known ? "known" : "estimated"; }

Scenario parse_scenario(std::string_view t) {
  if (t == "s1") return Scenario::S1;
  if (t == "s2a") return Scenario::S2A;
  if (t == "s2b") return Scenario::S2B;
  if (t == "s3") return Scenario::S3;
  throw InvalidArgument("unknown scenario '" + std::string(t) + "' (expected s1, s2a, s2b, s3)");
}

Method parse_method(std::string_view t) {
  for (Method m : {Method::Random, Method::Alc, Method::AlcE, Method::Ace, Method::AceE,
                   Method::AceUcb, Method::Greedy}) {
    if (t == to_string(m)) return m;
  }
  throw InvalidArgument("unknown method '" + std::string(t) +
                        "' (expected random, alc, alc_e, ace, ace_e, ace_ucb, greedy)");
}

PropensityMode parse_propensity_mode(std::string_view t) {
  if (t == "known") return PropensityMode::Known;
  if (t == "estimated") return PropensityMode::Estimated;
  throw InvalidArgument("unknown propensity mode '" + std::string(t) + "' (expected known, estimated)");
}

bool method_allowed(Scenario s, Method m) {
  switch (s) {
    case Scenario::S1:
    case Scenario::S2A: return m == Method::Random || m == Method::Alc || m == Method::Ace;
    case Scenario::S2B: return m == Method::Random || m == Method::AlcE || m == Method::AceE;
    case Scenario::S3: return m == Method::Random || m == Method::Greedy || m == Method::AceUcb;
  }
  return false;
}

void ScenarioConfig::validate() const {
  require(method_allowed(scenario, method), "method",
          to_string(method) + " is not defined for scenario " + to_string(scenario));
  require(n >= 1, "n", "must be positive");
  require(n_init >= 0, "n_init", "must be nonnegative");
  require(2 * n_init <= n, "n_init", "2 * n_init must not exceed n");
  require(n_pool >= n, "n_pool", "must be at least n");
  require(n_test >= 1, "n_test", "must be positive");
  require(noise_sd >= 0.0 && std::isfinite(noise_sd), "noise_sd", "must be nonnegative");
  require(ucb_c >= 0.0 && std::isfinite(ucb_c), "ucb.c", "must be nonnegative");
  require(refit_interval >= 1, "refit_interval", "must be >= 1");
  require(fit_restarts >= 1, "fit_restarts", "must be >= 1");
  require(restart_interval >= 1, "restart_interval", "must be >= 1");
  require(min_fit_points >= 3, "min_fit_points", "must be >= 3");
  if (scenario == Scenario::S1 || scenario == Scenario::S2A) {
    require(weight.kind == WeightKind::ATE, "estimand", "scenarios s1 and s2a target the ATE only");
  }
  weight.validate();
}

TestSet make_test_set(int n_test, int dim, std::uint64_t seed) {
  if (n_test < 1 || dim < 1) throw InvalidArgument("make_test_set: sizes must be positive");
  auto rng = stream(seed, 0);
  return TestSet{uniform_points(n_test, dim, rng)};
}

double true_estimand(const TestSet& test, const WeightSpec& spec) {
  test.validate();
  Eigen::VectorXd e(test.size());
  Eigen::VectorXd gap(test.size());
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    e(i) = true_propensity(test.points.row(i));
    gap(i) = franke_mu(test.points.row(i), Arm::Treated) - franke_mu(test.points.row(i), Arm::Control);
  }
  const Eigen::VectorXd w = weights(spec, e);
  return w.dot(gap) / w.sum();
}

namespace {

struct RatioSums {
  long double sw = 0, swd = 0, sw2 = 0, sw2d = 0, sw2d2 = 0;
  std::size_t n = 0;

  void add(double w, double d) {
    sw += w;
    swd += w * d;
    sw2 += w * w;
    sw2d += w * w * d;
    sw2d2 += w * w * d * d;
    ++n;
  }

  [[nodiscard]] MonteCarloEstimate finish() const {
    if (n < 2 || !(sw > 0)) throw EmptyTarget("weighted ITE mean: weights sum to zero");
    const long double r = swd / sw;
    const long double zz = std::max<long double>(sw2d2 - 2 * r * sw2d + r * r * sw2, 0);
    const long double nn = static_cast<long double>(n);
    const long double mean_w = sw / nn;
    const long double se = std::sqrt(zz / (nn * (nn - 1))) / mean_w;
    return {static_cast<double>(r), static_cast<double>(se), n};
  }
};

}  // namespace

MonteCarloEstimate monte_carlo_truth(const WeightSpec& spec, std::size_t n_points, std::uint64_t seed) {
  spec.validate();
  auto rng = stream(seed, 7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RatioSums sums;
  Eigen::RowVector2d x;
  for (std::size_t i = 0; i < n_points; ++i) {
    x << unit(rng), unit(rng);
    sums.add(weight_value(spec, true_propensity(x)),
             franke_mu(x, Arm::Treated) - franke_mu(x, Arm::Control));
  }
  return sums.finish();
}

MonteCarloEstimate weighted_ite_mean(const WeightSpec& spec, const gp::PointsRef& points) {
  spec.validate();
  RatioSums sums;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto x = points.row(i);
    sums.add(weight_value(spec, true_propensity(x)),
             franke_mu(x, Arm::Treated) - franke_mu(x, Arm::Control));
  }
  return sums.finish();
}

Eigen::MatrixXd replication_pool(const ScenarioConfig& config, std::uint64_t seed) {
  auto rng = stream(seed, kPoolStream);
  return uniform_points(config.n_pool, kDim, rng);
}

ReplicationResult run_replication(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  ReplicationResult result;
  result.seed = seed;
  result.scenario = config.scenario;
  result.method = config.method;
  result.estimand = estimand_label(config);

  const GroundTruth truth{config.noise_sd};
  const TestSet test = make_test_set(config.n_test, kDim, config.test_seed);
  const WeightSpec spec = effective_weight(config);
  const bool population_target = config.scenario != Scenario::S3;

  auto pool_rng = stream(seed, kPoolStream);
  auto noise_rng = stream(seed, kNoiseStream);
  auto assign_rng = stream(seed, kAssignmentStream);
  auto arrival_rng = stream(seed, kArrivalStream);
  auto init_rng = stream(seed, kInitStream);
  auto method_rng = stream(seed, kMethodStream);

  // Pool, per-arm noise and assignment uniforms are drawn up front so every
  // method sees the same units and the same outcome for a given (unit, arm).
  acq::Pool pool(uniform_points(config.n_pool, kDim, pool_rng));
  Eigen::MatrixXd noise(config.n_pool, 2);
  {
    std::normal_distribution<double> z(0.0, 1.0);
    for (Eigen::Index i = 0; i < noise.rows(); ++i) {
      noise(i, 0) = z(noise_rng);
      noise(i, 1) = z(noise_rng);
    }
  }
  Eigen::VectorXd assign_u(config.n_pool);
  {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index i = 0; i < assign_u.size(); ++i) assign_u(i) = unit(assign_rng);
  }
  std::vector<Eigen::Index> arrivals(static_cast<std::size_t>(config.n_pool));
  std::iota(arrivals.begin(), arrivals.end(), Eigen::Index{0});
  std::shuffle(arrivals.begin(), arrivals.end(), arrival_rng);

  std::vector<Observation> obs;
  obs.reserve(static_cast<std::size_t>(config.n));
  std::array<int, 2> counts{0, 0};
  auto observe = [&](Eigen::Index idx, Arm arm) {
    pool.mark_selected(idx);
    const auto x = pool.row(idx);
    const double y = truth.mu(x, arm) + config.noise_sd * noise(idx, to_index(arm));
    obs.push_back(Observation{x, arm, y});
    result.selected.push_back(idx);
    result.arms.push_back(arm);
    ++counts[to_index(arm)];
  };
  auto realized_arm = [&](Eigen::Index idx) {
    return assign_u(idx) < truth.propensity(pool.row(idx)) ? Arm::Treated : Arm::Control;
  };

  try {
    // Initial design.
    switch (config.scenario) {
      case Scenario::S1:
        for (int k = 0; k < 2 * config.n_init; ++k) {
          observe(arrivals[static_cast<std::size_t>(k)], k % 2 == 0 ? Arm::Control : Arm::Treated);
        }
        break;
      case Scenario::S2A:
        for (int k = 0; k < 2 * config.n_init; ++k) {
          observe(acq::select_random(pool, init_rng), k % 2 == 0 ? Arm::Control : Arm::Treated);
        }
        break;
      case Scenario::S2B:
      case Scenario::S3: {
        int draws = 0;
        while ((counts[0] < config.n_init || counts[1] < config.n_init) && draws < 4 * config.n_init &&
               static_cast<int>(obs.size()) < config.n) {
          const Eigen::Index idx = acq::select_random(pool, init_rng);
          observe(idx, realized_arm(idx));
          ++draws;
        }
        break;
      }
    }

    const bool uses_model = config.method != Method::Random;
    const acq::Options acq_options{config.noise_adjusted};
    const Eigen::VectorXd ate_weights = Eigen::VectorXd::Ones(test.size());
    std::optional<std::array<gp::GPHyperParams, 2>> params;
    int steps_since_refit = 0;
    std::uint64_t refits = 0;
    acq::UcbConfig ucb{config.ucb_c, 1};

    gp::FitConfig fit_config;
    fit_config.restarts = config.fit_restarts;
    fit_config.min_points = config.min_fit_points;

    // Full refits use every restart; the others only polish the warm start.
    auto refit = [&](bool full) {
      TwoArmModel::FitReport report;
      fit_config.restarts = (full || !params) ? config.fit_restarts : 1;
      fit_config.seed = fit_seed(seed, refits++);
      TwoArmModel m = TwoArmModel::fit(obs, kDim, fit_config, params ? &*params : nullptr, &report);
      for (const auto& r : report.arms) result.fallback_fits += r.fell_back ? 1 : 0;
      params = m.params();
      return m;
    };

    auto current_propensity = [&]() {
      return config.propensity_mode == PropensityMode::Known
                 ? propensity::PropensityModel::simulation_truth()
                 : propensity::fit_or_marginal(obs, kDim);
    };

    while (static_cast<int>(obs.size()) < config.n) {
      std::optional<TwoArmModel> model;
      if (uses_model) {
        if (!params || steps_since_refit >= config.refit_interval) {
          model = refit(refits % static_cast<std::uint64_t>(config.restart_interval) == 0);
          steps_since_refit = 0;
        } else {
          model = TwoArmModel(obs, kDim, *params);
        }
        ++steps_since_refit;
        if (!model->fitted(Arm::Control) || !model->fitted(Arm::Treated)) ++result.prior_fallback_steps;
      }

      switch (config.scenario) {
        case Scenario::S1: {
          const Eigen::Index idx = arrivals[obs.size()];
          const auto x = pool.row(idx);
          Arm arm = Arm::Control;
          if (config.method == Method::Random) {
            arm = acq::random_arm(method_rng);
          } else if (config.method == Method::Alc) {
            arm = acq::select_alc(*model, x);
          } else {
            arm = acq::select_scenario1(*model, x, test, ate_weights, acq_options);
          }
          observe(idx, arm);
          break;
        }
        case Scenario::S2A: {
          acq::UnitArm pick;
          if (config.method == Method::Random) {
            pick.unit_index = acq::select_random(pool, method_rng);
            pick.arm = acq::random_arm(method_rng);
          } else if (config.method == Method::Alc) {
            pick = acq::select_alc(*model, pool);
          } else {
            pick = acq::select_scenario2a(*model, pool, test, ate_weights, acq_options);
          }
          observe(pick.unit_index, pick.arm);
          break;
        }
        case Scenario::S2B: {
          Eigen::Index idx = 0;
          if (config.method == Method::Random) {
            idx = acq::select_random(pool, method_rng);
          } else {
            const auto prop = current_propensity();
            idx = config.method == Method::AlcE
                      ? acq::select_alc_e(*model, pool, prop)
                      : acq::select_scenario2b(*model, pool, prop, spec, test, acq_options);
          }
          observe(idx, realized_arm(idx));
          break;
        }
        case Scenario::S3: {
          Eigen::Index idx = 0;
          if (config.method == Method::Random) {
            idx = acq::select_random(pool, method_rng);
          } else {
            const auto prop = current_propensity();
            idx = config.method == Method::Greedy ? acq::select_greedy(*model, pool, prop)
                                                  : acq::select_scenario3(*model, pool, prop, ucb);
          }
          observe(idx, realized_arm(idx));
          break;
        }
      }
    }

    result.n_treated = counts[1];
    if (population_target) {
      result.tau = true_estimand(test, spec);
      const TwoArmModel final_model = refit(true);
      const Eigen::VectorXd e_test = config.propensity_mode == PropensityMode::Known
                                         ? propensity::PropensityModel::simulation_truth().evaluate_all(test.points)
                                         : propensity::fit_or_marginal(obs, kDim).evaluate_all(test.points);
      result.tau_hat = estimate_qoi(final_model, test, weights(spec, e_test));
      result.cumulative_ite = kNaN;
    } else {
      result.tau = kNaN;
      result.tau_hat = kNaN;
      double total = 0.0;
      for (const auto& o : obs) {
        if (o.arm == Arm::Treated) total += truth.ite(o.x);
      }
      result.cumulative_ite = total;
    }
  } catch (const NumericalFailure& e) {
    result.excluded = true;
    result.failure = e.what();
  } catch (const StateError& e) {
    result.excluded = true;
    result.failure = e.what();
  } catch (const EmptyTarget& e) {
    result.excluded = true;
    result.failure = e.what();
  }
  result.n_treated = counts[1];
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<ReplicationResult> run_replications(const ScenarioConfig& config,
                                                std::span<const std::uint64_t> seeds, int threads) {
  config.validate();
  std::vector<ReplicationResult> results(seeds.size());
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(seeds.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) results[i] = run_replication(config, seeds[i]);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < seeds.size(); i = next++) results[i] = run_replication(config, seeds[i]);
    });
  }
  for (auto& th : pool) th.join();
  return results;
}

Quantiles quantiles(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("quantiles: empty sample");
  std::sort(values.begin(), values.end());
  const auto at = [&](double p) {
    const double h = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

Metrics aggregate(std::span<const ReplicationResult> results) {
  Metrics m;
  m.replications = results.size();
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t used = 0;
  std::vector<double> ite;
  bool any_s3 = false;
  for (const auto& r : results) {
    if (r.excluded) {
      ++m.excluded;
      continue;
    }
    if (r.scenario == Scenario::S3) {
      any_s3 = true;
      ite.push_back(r.cumulative_ite);
      continue;
    }
    const double err = r.error();
    sum += err;
    sum_sq += err * err;
    ++used;
  }
  m.bias = used ? sum / static_cast<double>(used) : kNaN;
  m.rmse = used ? std::sqrt(sum_sq / static_cast<double>(used)) : kNaN;
  m.bias_x1e3 = m.bias * 1e3;
  m.rmse_x1e3 = m.rmse * 1e3;
  if (any_s3 && !ite.empty()) m.cumulative_ite = quantiles(std::move(ite));
  return m;
}

}  // namespace ace::sim
