#pragma once

#include "ace/kernel_gp.hpp"
#include "ace/surrogate.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <memory>
#include <span>

namespace ace::propensity {

/// Every evaluated propensity lies in [kClamp, 1 - kClamp].
inline constexpr double kClamp = 1e-6;

/// logit e(x) = intercept + coefficients . x + sum_{i<j} interactions_ij x_i x_j
/// with the pairwise terms ordered (0,1), (0,2), ..., (1,2), ...  An empty
/// interactions vector means no pairwise terms.
struct LogisticParams {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd interactions;

  [[nodiscard]] Eigen::Index dim() const { return coefficients.size(); }
  [[nodiscard]] double logit(const gp::PointRef& x) const;
};

enum class Source { Known, Estimated };

class PropensityModel {
 public:
  PropensityModel(Source source, LogisticParams params, bool penalized = false);

  /// Closed-form assignment used by the simulation study:
  /// logit e(x) = -2 + 2 x1 x2.
  static PropensityModel simulation_truth();

  [[nodiscard]] double evaluate(const gp::PointRef& x) const;
  [[nodiscard]] Eigen::VectorXd evaluate_all(const gp::PointsRef& X) const;

  [[nodiscard]] Source source() const { return source_; }
  [[nodiscard]] const LogisticParams& params() const { return params_; }
  /// Set when the fit hit separation and fell back to a ridge penalty.
  [[nodiscard]] bool penalized() const { return penalized_; }
  [[nodiscard]] Eigen::Index dim() const { return params_.dim(); }

 private:
  Source source_;
  LogisticParams params_;
  bool penalized_;
};

struct LogisticFitOptions {
  bool interactions = true;
  int max_iterations = 100;
  double tolerance = 1e-10;
  double fallback_penalty = 1e-4;
};

/// Maximum-likelihood logistic regression of arm on x (plus pairwise
/// products when requested).  Needs both arms present.  On separation the
/// fit is redone with a ridge penalty on the non-intercept terms and the
/// returned model is flagged penalized().
PropensityModel fit_logistic(std::span<const Observation> observations,
                             const LogisticFitOptions& options = {});

/// fit_logistic when both arms are present; otherwise an intercept-only
/// model at the smoothed treated fraction (n1 + 0.5) / (n + 1), flagged
/// penalized().
PropensityModel fit_or_marginal(std::span<const Observation> observations, Eigen::Index dim,
                                const LogisticFitOptions& options = {});

/// Pluggable estimator of e(x) from observed (x, arm) pairs.
class Estimator {
 public:
  virtual ~Estimator() = default;
  [[nodiscard]] virtual PropensityModel fit(std::span<const Observation> observations) const = 0;
};

class LogisticEstimator final : public Estimator {
 public:
  explicit LogisticEstimator(LogisticFitOptions options = {}) : options_(options) {}
  [[nodiscard]] PropensityModel fit(std::span<const Observation> observations) const override {
    return fit_logistic(observations, options_);
  }

 private:
  LogisticFitOptions options_;
};

/// {"kind": "known"|"logistic_fit", "intercept": .., "coefficients": [..],
///  "interactions": [..], "penalized": bool}
nlohmann::json to_json(const PropensityModel& model);
PropensityModel propensity_from_json(const nlohmann::json& j);

}  // namespace ace::propensity
