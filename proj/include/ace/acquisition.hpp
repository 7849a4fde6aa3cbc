#pragma once

#include "ace/kernel_gp.hpp"
#include "ace/propensity.hpp"
#include "ace/surrogate.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace ace::acq {

/// Floor applied to sigma_n^2(x) in the variance-reduction denominator.
inline constexpr double kVarianceFloor = 1e-10;

/// Candidate units plus an availability mask; selection is without
/// replacement.
class Pool {
 public:
  Pool() = default;
  explicit Pool(Eigen::MatrixXd candidates);

  [[nodiscard]] const Eigen::MatrixXd& candidates() const { return candidates_; }
  [[nodiscard]] Eigen::Index size() const { return candidates_.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return candidates_.cols(); }
  [[nodiscard]] bool available(Eigen::Index i) const { return available_.at(static_cast<std::size_t>(i)); }
  [[nodiscard]] Eigen::Index n_available() const { return n_available_; }
  [[nodiscard]] std::vector<Eigen::Index> available_indices() const;
  [[nodiscard]] auto row(Eigen::Index i) const { return candidates_.row(i); }

  /// Throws InvalidArgument when i is out of range or already taken.
  void mark_selected(Eigen::Index i);

 private:
  Eigen::MatrixXd candidates_;
  std::vector<bool> available_;
  Eigen::Index n_available_ = 0;
};

struct Options {
  /// Add the arm's noise variance to the denominator of r(x, a; w), i.e.
  /// fantasize a noisy rather than an exact observation of mu(x).
  bool noise_adjusted = false;
};

struct ReductionScores {
  Eigen::VectorXd values;
  /// Candidates whose sigma_n^2 hit kVarianceFloor.
  Eigen::Index guarded = 0;
};

/// r(x, a; w) = (w^T Sigma_n(X_test, x))^2 / sigma_n^2(x) for every row of
/// candidates, using one arm's posterior.
ReductionScores variance_reductions(const gp::GaussianProcess& arm_gp, const gp::PointsRef& candidates,
                                    const TestSet& test, const Eigen::VectorXd& w,
                                    const Options& options = {});

double variance_reduction(const TwoArmModel& model, Arm arm, const gp::PointRef& x,
                          const TestSet& test, const Eigen::VectorXd& w, const Options& options = {});

/// Scenario 1: the arriving unit x_new is assigned the arm with the larger
/// reduction; ties go to the arm with fewer observations, then control.
Arm select_scenario1(const TwoArmModel& model, const gp::PointRef& x_new, const TestSet& test,
                     const Eigen::VectorXd& w, const Options& options = {});

struct UnitArm {
  Eigen::Index unit_index = 0;
  Arm arm = Arm::Control;
  /// Number of (x, a) criterion evaluations, 2 x available candidates.
  Eigen::Index evaluations = 0;
};

/// Scenario 2A: argmax over available x and a of r(x, a; w); ties go to the
/// lowest index, then control.
UnitArm select_scenario2a(const TwoArmModel& model, const Pool& pool, const TestSet& test,
                          const Eigen::VectorXd& w, const Options& options = {});

/// e_x r(x, 1; w) + (1 - e_x) r(x, 0; w).
double expected_variance_reduction(const TwoArmModel& model, const gp::PointRef& x, double e_x,
                                   const TestSet& test, const Eigen::VectorXd& w,
                                   const Options& options = {});

/// Scenario 2B: argmax over available x of the expected reduction, with the
/// target weights rebuilt from the given propensity model on the test set.
Eigen::Index select_scenario2b(const TwoArmModel& model, const Pool& pool,
                               const propensity::PropensityModel& propensity, const WeightSpec& spec,
                               const TestSet& test, const Options& options = {});

/// Standard deviation of 1(A = 1)(mu1(x) - mu0(x)) with A ~ Bernoulli(e_x)
/// and the two GP posteriors independent.
double sigma_te(const TwoArmModel& model, const gp::PointRef& x, double e_x);

/// e_x (m1(x) - m0(x)) + sqrt(beta) sigma_te(x).
double ucb_score(const TwoArmModel& model, const gp::PointRef& x, double e_x, double beta);

struct UcbConfig {
  double c = 0.01;
  std::int64_t t = 1;

  /// beta_t = c^2 log t.
  [[nodiscard]] double beta() const;
};

/// Scenario 3: argmax of ucb_score with beta_t; increments ucb.t.
Eigen::Index select_scenario3(const TwoArmModel& model, const Pool& pool,
                              const propensity::PropensityModel& propensity, UcbConfig& ucb);

/// Vectorized scores over the available candidates (others are -inf).
Eigen::VectorXd ucb_scores(const TwoArmModel& model, const Pool& pool,
                           const propensity::PropensityModel& propensity, double beta);

Eigen::Index select_random(const Pool& pool, std::mt19937_64& rng);
Arm random_arm(std::mt19937_64& rng);

/// ALC for an arriving unit: the arm with the larger posterior variance at
/// x (control on ties).
Arm select_alc(const TwoArmModel& model, const gp::PointRef& x);
/// ALC over pool x arms.
UnitArm select_alc(const TwoArmModel& model, const Pool& pool);

/// argmax e(x) sigma1^2(x) + (1 - e(x)) sigma0^2(x).
Eigen::Index select_alc_e(const TwoArmModel& model, const Pool& pool,
                          const propensity::PropensityModel& propensity);

/// argmax e(x) (m1(x) - m0(x)).
Eigen::Index select_greedy(const TwoArmModel& model, const Pool& pool,
                           const propensity::PropensityModel& propensity);

}  // namespace ace::acq
