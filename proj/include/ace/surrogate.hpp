#pragma once

#include "ace/kernel_gp.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ace {

enum class Arm : int { Control = 0, Treated = 1 };

constexpr int to_index(Arm a) { return static_cast<int>(a); }
Arm arm_from_int(int value);

struct Observation {
  Eigen::RowVectorXd x;
  Arm arm = Arm::Control;
  double y = 0.0;
};

/// Fixed sample of the target population (one row per point).
struct TestSet {
  Eigen::MatrixXd points;

  [[nodiscard]] Eigen::Index size() const { return points.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return points.cols(); }
  void validate() const;
};

/// CSV with header x1,...,xd and one point per row.
TestSet load_test_set_csv(const std::filesystem::path& path);
void save_test_set_csv(const TestSet& test, const std::filesystem::path& path);
Eigen::MatrixXd read_points_csv(const std::filesystem::path& path);
void write_points_csv(const Eigen::MatrixXd& points, const std::filesystem::path& path);

enum class WeightKind { ATE, ATTE, ATO, TruncatedCombined, Matching };

struct WeightSpec {
  WeightKind kind = WeightKind::ATE;
  double alpha = 0.1;  // TruncatedCombined only, in (0, 0.5)

  [[nodiscard]] bool uses_propensity() const { return kind != WeightKind::ATE; }
  [[nodiscard]] std::string name() const;
  void validate() const;
  /// Accepts ate, atte, ato, matching, truncated (alpha from the argument)
  /// and truncated:<alpha>.
  static WeightSpec parse(std::string_view text, double default_alpha = 0.1);
};

/// Weight of a single unit with propensity e (no emptiness check).
double weight_value(const WeightSpec& spec, double e);

/// Target-population weights from propensity values:
///   ATE 1, ATTE e, ATO e(1-e), truncated 1{alpha < e < 1-alpha}, matching min(e, 1-e).
/// Throws EmptyTarget when every weight is zero.
Eigen::VectorXd weights(const WeightSpec& spec, const Eigen::VectorXd& propensities);

/// Two independent GP posteriors, one per arm.  Arms without data fall back
/// to the prior of their hyperparameters.  Immutable; appending returns a new
/// model.
class TwoArmModel {
 public:
  explicit TwoArmModel(Eigen::Index dim);
  TwoArmModel(std::span<const Observation> observations, Eigen::Index dim,
              const std::array<gp::GPHyperParams, 2>& params);

  struct FitReport {
    std::array<gp::FitResult, 2> arms;
  };

  /// Fits each arm's hyperparameters by maximum likelihood, then conditions.
  /// Arm a uses seed config.seed + a and, when warm_starts is given, starts
  /// from warm_starts[a].
  static TwoArmModel fit(std::span<const Observation> observations, Eigen::Index dim,
                         const gp::FitConfig& config,
                         const std::array<gp::GPHyperParams, 2>* warm_starts = nullptr,
                         FitReport* report = nullptr);

  [[nodiscard]] const gp::GaussianProcess& arm(Arm a) const { return arms_[to_index(a)]; }
  [[nodiscard]] Eigen::Index count(Arm a) const { return arms_[to_index(a)].size(); }
  /// True when the arm conditions on at least one observation.
  [[nodiscard]] bool fitted(Arm a) const { return count(a) > 0; }
  [[nodiscard]] Eigen::Index dim() const { return dim_; }
  [[nodiscard]] std::array<gp::GPHyperParams, 2> params() const;

  [[nodiscard]] TwoArmModel with_observation(const Observation& obs) const;

 private:
  TwoArmModel(Eigen::Index dim, std::array<gp::GaussianProcess, 2> arms);

  Eigen::Index dim_;
  std::array<gp::GaussianProcess, 2> arms_;
};

/// Splits observations by arm into training sets.
std::array<gp::TrainingSet, 2> split_by_arm(std::span<const Observation> observations,
                                            Eigen::Index dim);

/// Plug-in estimate sum_k w_k (m1(x_k) - m0(x_k)) / sum_k w_k.
double estimate_qoi(const TwoArmModel& model, const TestSet& test, const Eigen::VectorXd& w);

/// w^T (Sigma1 + Sigma0) w / (sum w)^2 with the arms independent.
double qoi_posterior_variance(const TwoArmModel& model, const TestSet& test,
                              const Eigen::VectorXd& w);

}  // namespace ace
