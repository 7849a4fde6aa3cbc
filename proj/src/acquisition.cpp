#include "ace/acquisition.hpp"

#include "ace/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ace::acq {

namespace {

constexpr double kMinusInf = -std::numeric_limits<double>::infinity();

struct AvailableBlock {
  std::vector<Eigen::Index> indices;
  Eigen::MatrixXd points;
};

AvailableBlock available_block(const Pool& pool) {
  if (pool.n_available() == 0) throw PoolExhausted("pool has no available candidates");
  AvailableBlock b;
  b.indices = pool.available_indices();
  b.points.resize(static_cast<Eigen::Index>(b.indices.size()), pool.dim());
  for (std::size_t k = 0; k < b.indices.size(); ++k) {
    b.points.row(static_cast<Eigen::Index>(k)) = pool.row(b.indices[k]);
  }
  return b;
}

// Lowest-index argmax: a later candidate must be strictly better.
Eigen::Index argmax_first(const std::vector<Eigen::Index>& indices, const Eigen::VectorXd& scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < indices.size(); ++k) {
    if (scores(static_cast<Eigen::Index>(k)) > scores(static_cast<Eigen::Index>(best))) best = k;
  }
  return indices[best];
}

void check_probability(double e, const char* what) {
  if (!(e >= 0.0 && e <= 1.0)) {
    std::ostringstream os;
    os << what << ": propensity " << e << " outside [0, 1]";
    throw InvalidArgument(os.str());
  }
}

void check_model_dims(const TwoArmModel& model, Eigen::Index d, const char* what) {
  if (model.dim() != d) {
    throw InvalidArgument(std::string(what) + ": point dimension differs from model dimension");
  }
}

struct ArmMoments {
  Eigen::VectorXd mean_gap;  // m1 - m0
  Eigen::VectorXd var1;
  Eigen::VectorXd var0;
};

ArmMoments arm_moments(const TwoArmModel& model, const gp::PointsRef& X, bool with_means = true) {
  ArmMoments m;
  if (with_means) m.mean_gap = model.arm(Arm::Treated).mean(X) - model.arm(Arm::Control).mean(X);
  m.var1 = model.arm(Arm::Treated).variance(X);
  m.var0 = model.arm(Arm::Control).variance(X);
  return m;
}

Eigen::VectorXd sigma_te_vec(const Eigen::VectorXd& e, const ArmMoments& m) {
  const Eigen::ArrayXd v = e.array() * (m.var1 + m.var0).array() +
                           e.array() * (1.0 - e.array()) * m.mean_gap.array().square();
  return v.max(0.0).sqrt().matrix();
}

}  // namespace

Pool::Pool(Eigen::MatrixXd candidates)
    : candidates_(std::move(candidates)),
      available_(static_cast<std::size_t>(candidates_.rows()), true),
      n_available_(candidates_.rows()) {}

std::vector<Eigen::Index> Pool::available_indices() const {
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(n_available_));
  for (Eigen::Index i = 0; i < size(); ++i) {
    if (available_[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

void Pool::mark_selected(Eigen::Index i) {
  if (i < 0 || i >= size()) throw InvalidArgument("pool index out of range: " + std::to_string(i));
  if (!available_[static_cast<std::size_t>(i)]) {
    throw InvalidArgument("pool index already selected: " + std::to_string(i));
  }
  available_[static_cast<std::size_t>(i)] = false;
  --n_available_;
}

ReductionScores variance_reductions(const gp::GaussianProcess& arm_gp, const gp::PointsRef& candidates,
                                    const TestSet& test, const Eigen::VectorXd& w,
                                    const Options& options) {
  if (w.size() != test.size()) throw InvalidArgument("variance_reductions: weight length mismatch");
  if (candidates.cols() != arm_gp.dim() || test.dim() != arm_gp.dim()) {
    throw InvalidArgument("variance_reductions: dimension mismatch");
  }
  const auto& kernel = arm_gp.params().kernel;

  // w^T Sigma_n(X_test, x) = K(x, X_test) w - (L^{-1} k(X_n, x))^T L^{-1} K(X_n, X_test) w
  Eigen::VectorXd cross = gp::kernel_matvec(kernel, candidates, test.points, w);
  Eigen::VectorXd var = Eigen::VectorXd::Constant(candidates.rows(), kernel.signal_variance);
  if (arm_gp.size() > 0) {
    const Eigen::VectorXd g = gp::kernel_matvec(kernel, arm_gp.data().inputs, test.points, w);
    const Eigen::VectorXd u = arm_gp.lower_solve(g);
    const Eigen::MatrixXd V = arm_gp.whiten(candidates);
    cross.noalias() -= V.transpose() * u;
    var -= V.colwise().squaredNorm().transpose();
  }
  if (options.noise_adjusted) var.array() += arm_gp.params().noise_variance;

  ReductionScores out;
  out.values.resize(candidates.rows());
  for (Eigen::Index j = 0; j < candidates.rows(); ++j) {
    double denom = var(j);
    if (!(denom > kVarianceFloor)) {
      denom = kVarianceFloor;
      ++out.guarded;
    }
    out.values(j) = cross(j) * cross(j) / denom;
  }
  return out;
}

double variance_reduction(const TwoArmModel& model, Arm arm, const gp::PointRef& x,
                          const TestSet& test, const Eigen::VectorXd& w, const Options& options) {
  check_model_dims(model, x.size(), "variance_reduction");
  const Eigen::MatrixXd xm = x;
  return variance_reductions(model.arm(arm), xm, test, w, options).values(0);
}

Arm select_scenario1(const TwoArmModel& model, const gp::PointRef& x_new, const TestSet& test,
                     const Eigen::VectorXd& w, const Options& options) {
  const double r0 = variance_reduction(model, Arm::Control, x_new, test, w, options);
  const double r1 = variance_reduction(model, Arm::Treated, x_new, test, w, options);
  if (r1 > r0) return Arm::Treated;
  if (r0 > r1) return Arm::Control;
  return model.count(Arm::Treated) < model.count(Arm::Control) ? Arm::Treated : Arm::Control;
}

UnitArm select_scenario2a(const TwoArmModel& model, const Pool& pool, const TestSet& test,
                          const Eigen::VectorXd& w, const Options& options) {
  check_model_dims(model, pool.dim(), "select_scenario2a");
  const AvailableBlock block = available_block(pool);
  const auto r0 = variance_reductions(model.arm(Arm::Control), block.points, test, w, options);
  const auto r1 = variance_reductions(model.arm(Arm::Treated), block.points, test, w, options);

  UnitArm best{block.indices[0], Arm::Control, 2 * static_cast<Eigen::Index>(block.indices.size())};
  double best_score = kMinusInf;
  for (std::size_t k = 0; k < block.indices.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (r0.values(row) > best_score) {
      best_score = r0.values(row);
      best.unit_index = block.indices[k];
      best.arm = Arm::Control;
    }
    if (r1.values(row) > best_score) {
      best_score = r1.values(row);
      best.unit_index = block.indices[k];
      best.arm = Arm::Treated;
    }
  }
  return best;
}

double expected_variance_reduction(const TwoArmModel& model, const gp::PointRef& x, double e_x,
                                   const TestSet& test, const Eigen::VectorXd& w,
                                   const Options& options) {
  check_probability(e_x, "expected_variance_reduction");
  return e_x * variance_reduction(model, Arm::Treated, x, test, w, options) +
         (1.0 - e_x) * variance_reduction(model, Arm::Control, x, test, w, options);
}

Eigen::Index select_scenario2b(const TwoArmModel& model, const Pool& pool,
                               const propensity::PropensityModel& propensity, const WeightSpec& spec,
                               const TestSet& test, const Options& options) {
  check_model_dims(model, pool.dim(), "select_scenario2b");
  const AvailableBlock block = available_block(pool);
  const Eigen::VectorXd w_hat = weights(spec, propensity.evaluate_all(test.points));
  const Eigen::VectorXd e = propensity.evaluate_all(block.points);
  const auto r0 = variance_reductions(model.arm(Arm::Control), block.points, test, w_hat, options);
  const auto r1 = variance_reductions(model.arm(Arm::Treated), block.points, test, w_hat, options);
  const Eigen::VectorXd score =
      (e.array() * r1.values.array() + (1.0 - e.array()) * r0.values.array()).matrix();
  return argmax_first(block.indices, score);
}

double sigma_te(const TwoArmModel& model, const gp::PointRef& x, double e_x) {
  check_probability(e_x, "sigma_te");
  check_model_dims(model, x.size(), "sigma_te");
  const Eigen::MatrixXd xm = x;
  const ArmMoments m = arm_moments(model, xm);
  return sigma_te_vec(Eigen::VectorXd::Constant(1, e_x), m)(0);
}

double ucb_score(const TwoArmModel& model, const gp::PointRef& x, double e_x, double beta) {
  if (!(beta >= 0.0)) throw InvalidArgument("ucb_score: beta must be nonnegative");
  check_probability(e_x, "ucb_score");
  check_model_dims(model, x.size(), "ucb_score");
  const Eigen::MatrixXd xm = x;
  const ArmMoments m = arm_moments(model, xm);
  const double sd = sigma_te_vec(Eigen::VectorXd::Constant(1, e_x), m)(0);
  return e_x * m.mean_gap(0) + std::sqrt(beta) * sd;
}

double UcbConfig::beta() const {
  if (t < 1) throw InvalidArgument("UcbConfig: t must start at 1");
  if (!(c >= 0.0)) throw InvalidArgument("UcbConfig: c must be nonnegative");
  return c * c * std::log(static_cast<double>(t));
}

Eigen::VectorXd ucb_scores(const TwoArmModel& model, const Pool& pool,
                           const propensity::PropensityModel& propensity, double beta) {
  if (!(beta >= 0.0)) throw InvalidArgument("ucb_scores: beta must be nonnegative");
  check_model_dims(model, pool.dim(), "ucb_scores");
  const AvailableBlock block = available_block(pool);
  const Eigen::VectorXd e = propensity.evaluate_all(block.points);
  const ArmMoments m = arm_moments(model, block.points);
  const Eigen::VectorXd sd = sigma_te_vec(e, m);
  Eigen::VectorXd out = Eigen::VectorXd::Constant(pool.size(), kMinusInf);
  for (std::size_t k = 0; k < block.indices.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    out(block.indices[k]) = e(row) * m.mean_gap(row) + std::sqrt(beta) * sd(row);
  }
  return out;
}

Eigen::Index select_scenario3(const TwoArmModel& model, const Pool& pool,
                              const propensity::PropensityModel& propensity, UcbConfig& ucb) {
  const Eigen::VectorXd scores = ucb_scores(model, pool, propensity, ucb.beta());
  const std::vector<Eigen::Index> idx = pool.available_indices();
  Eigen::VectorXd sub(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) sub(static_cast<Eigen::Index>(k)) = scores(idx[k]);
  const Eigen::Index chosen = argmax_first(idx, sub);
  ++ucb.t;
  return chosen;
}

Eigen::Index select_random(const Pool& pool, std::mt19937_64& rng) {
  if (pool.n_available() == 0) throw PoolExhausted("pool has no available candidates");
  std::uniform_int_distribution<Eigen::Index> pick(0, pool.n_available() - 1);
  Eigen::Index k = pick(rng);
  for (Eigen::Index i = 0; i < pool.size(); ++i) {
    if (pool.available(i) && k-- == 0) return i;
  }
  throw PoolExhausted("pool availability count out of sync");
}

Arm random_arm(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  return arm_from_int(coin(rng));
}

Arm select_alc(const TwoArmModel& model, const gp::PointRef& x) {
  check_model_dims(model, x.size(), "select_alc");
  const Eigen::MatrixXd xm = x;
  const double v0 = model.arm(Arm::Control).variance(xm)(0);
  const double v1 = model.arm(Arm::Treated).variance(xm)(0);
  return v1 > v0 ? Arm::Treated : Arm::Control;
}

UnitArm select_alc(const TwoArmModel& model, const Pool& pool) {
  check_model_dims(model, pool.dim(), "select_alc");
  const AvailableBlock block = available_block(pool);
  const ArmMoments m = arm_moments(model, block.points, false);
  UnitArm best{block.indices[0], Arm::Control, 2 * static_cast<Eigen::Index>(block.indices.size())};
  double best_score = kMinusInf;
  for (std::size_t k = 0; k < block.indices.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (m.var0(row) > best_score) {
      best_score = m.var0(row);
      best.unit_index = block.indices[k];
      best.arm = Arm::Control;
    }
    if (m.var1(row) > best_score) {
      best_score = m.var1(row);
      best.unit_index = block.indices[k];
      best.arm = Arm::Treated;
    }
  }
  return best;
}

Eigen::Index select_alc_e(const TwoArmModel& model, const Pool& pool,
                          const propensity::PropensityModel& propensity) {
  check_model_dims(model, pool.dim(), "select_alc_e");
  const AvailableBlock block = available_block(pool);
  const Eigen::VectorXd e = propensity.evaluate_all(block.points);
  const ArmMoments m = arm_moments(model, block.points, false);
  const Eigen::VectorXd score = (e.array() * m.var1.array() + (1.0 - e.array()) * m.var0.array()).matrix();
  return argmax_first(block.indices, score);
}

Eigen::Index select_greedy(const TwoArmModel& model, const Pool& pool,
                           const propensity::PropensityModel& propensity) {
  check_model_dims(model, pool.dim(), "select_greedy");
  const AvailableBlock block = available_block(pool);
  const Eigen::VectorXd e = propensity.evaluate_all(block.points);
  const Eigen::VectorXd gap = model.arm(Arm::Treated).mean(block.points) -
                              model.arm(Arm::Control).mean(block.points);
  return argmax_first(block.indices, (e.array() * gap.array()).matrix());
}

}  // namespace ace::acq
