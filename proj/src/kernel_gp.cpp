#include "ace/kernel_gp.hpp"

#include "ace/errors.hpp"

#include <ceres/ceres.h>
#include <glog/logging.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

namespace ace::gp {

namespace {

constexpr double kJitterStart = 1e-10;
constexpr double kJitterMax = 1e-4;

void check_dims(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got) {
    std::ostringstream os;
    os << what << ": dimension mismatch (expected " << expected << ", got " << got << ")";
    throw InvalidArgument(os.str());
  }
}

struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

// Factor K + (noise + jitter) I.  The first attempt uses no jitter; on
// failure it escalates by 10x from 1e-10 * signal_variance up to
// 1e-4 * signal_variance.
Factorization factorize(const Eigen::MatrixXd& K, double noise, double signal_variance) {
  const Eigen::Index n = K.rows();
  Factorization f;
  for (double rel = 0.0; rel <= kJitterMax * (1.0 + 1e-9); rel = rel == 0.0 ? kJitterStart : rel * 10.0) {
    const double jitter = rel * signal_variance;
    Eigen::MatrixXd C = K;
    C.diagonal().array() += noise + jitter;
    f.llt.compute(C);
    if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().allFinite() &&
        (f.llt.matrixLLT().diagonal().array() > 0.0).all()) {
      f.jitter = jitter;
      return f;
    }
  }
  std::ostringstream os;
  os << "covariance of " << n << " training points not positive definite after jitter "
     << kJitterMax * signal_variance;
  throw NumericalFailure(os.str());
}

struct LikelihoodParts {
  double value = 0.0;
  double mean = 0.0;
  Eigen::VectorXd gradient;
  double jitter = 0.0;
};

LikelihoodParts evaluate_likelihood(const GPHyperParams& params, const TrainingSet& data,
                                    bool profile_mean, bool want_gradient) {
  params.validate();
  data.validate();
  check_dims(params.dim(), data.dim(), "log_marginal_likelihood");
  if (data.empty()) throw InvalidArgument("log_marginal_likelihood: empty training set");

  const Eigen::Index n = data.size();
  const Eigen::Index d = data.dim();
  const Eigen::MatrixXd K = kernel_matrix(params.kernel, data.inputs, data.inputs);
  const Factorization f = factorize(K, params.noise_variance, params.kernel.signal_variance);

  LikelihoodParts out;
  out.jitter = f.jitter;
  out.mean = params.constant_mean;
  if (profile_mean) {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd cinv_one = f.llt.solve(ones);
    out.mean = cinv_one.dot(data.outputs) / cinv_one.sum();
  }
  const Eigen::VectorXd resid = data.outputs.array() - out.mean;
  const Eigen::VectorXd alpha = f.llt.solve(resid);
  const double log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
  out.value = -0.5 * resid.dot(alpha) - 0.5 * log_det -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(out.value)) throw NumericalFailure("log_marginal_likelihood: non-finite value");

  if (want_gradient) {
    // dL/dtheta = 1/2 tr((alpha alpha^T - C^{-1}) dC/dtheta)
    const Eigen::MatrixXd cinv = f.llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd inner = alpha * alpha.transpose() - cinv;
    out.gradient.resize(d + 2);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double l2 = params.kernel.lengthscales(k) * params.kernel.lengthscales(k);
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double diff = data.inputs(i, k) - data.inputs(j, k);
          acc += inner(i, j) * K(i, j) * diff * diff / l2;
        }
      }
      out.gradient(k) = 0.5 * acc;
    }
    out.gradient(d) = 0.5 * (inner.array() * K.array()).sum();
    out.gradient(d + 1) = 0.5 * params.noise_variance * inner.trace();
  }
  return out;
}

GPHyperParams from_log(const Eigen::VectorXd& theta, Eigen::Index d) {
  GPHyperParams p;
  p.kernel.lengthscales = theta.head(d).array().exp();
  p.kernel.signal_variance = std::exp(theta(d));
  p.noise_variance = std::exp(theta(d + 1));
  return p;
}

Eigen::VectorXd to_log(const GPHyperParams& p) {
  const Eigen::Index d = p.dim();
  Eigen::VectorXd theta(d + 2);
  theta.head(d) = p.kernel.lengthscales.array().log();
  theta(d) = std::log(p.kernel.signal_variance);
  theta(d + 1) = std::log(std::max(p.noise_variance, std::numeric_limits<double>::min()));
  return theta;
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Box-constrained log parameters are optimized through
//   log theta_i = lo_i + (hi_i - lo_i) * sigmoid(u_i)
// so the solver works on an unconstrained u.
class BoxTransform {
 public:
  BoxTransform(const ParamBounds& b, Eigen::Index d) : lo_(d + 2), hi_(d + 2) {
    for (Eigen::Index k = 0; k < d; ++k) {
      lo_(k) = std::log(b.lengthscale.lo);
      hi_(k) = std::log(b.lengthscale.hi);
    }
    lo_(d) = std::log(b.signal_variance.lo);
    hi_(d) = std::log(b.signal_variance.hi);
    lo_(d + 1) = std::log(b.noise_variance.lo);
    hi_(d + 1) = std::log(b.noise_variance.hi);
  }

  [[nodiscard]] Eigen::Index size() const { return lo_.size(); }
  [[nodiscard]] double lo(Eigen::Index i) const { return lo_(i); }
  [[nodiscard]] double hi(Eigen::Index i) const { return hi_(i); }

  [[nodiscard]] Eigen::VectorXd to_theta(const double* u) const {
    Eigen::VectorXd theta(size());
    for (Eigen::Index i = 0; i < size(); ++i) theta(i) = lo_(i) + (hi_(i) - lo_(i)) * sigmoid(u[i]);
    return theta;
  }

  [[nodiscard]] double dtheta_du(const double* u, Eigen::Index i) const {
    const double s = sigmoid(u[i]);
    return (hi_(i) - lo_(i)) * s * (1.0 - s);
  }

  [[nodiscard]] Eigen::VectorXd to_u(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd u(size());
    for (Eigen::Index i = 0; i < size(); ++i) {
      double frac = (theta(i) - lo_(i)) / (hi_(i) - lo_(i));
      frac = std::clamp(frac, 1e-6, 1.0 - 1e-6);
      u(i) = std::log(frac / (1.0 - frac));
    }
    return u;
  }

  [[nodiscard]] Eigen::VectorXd clip(Eigen::VectorXd theta) const {
    for (Eigen::Index i = 0; i < size(); ++i) theta(i) = std::clamp(theta(i), lo_(i), hi_(i));
    return theta;
  }

 private:
  Eigen::VectorXd lo_;
  Eigen::VectorXd hi_;
};

class NegativeProfileLikelihood final : public ceres::FirstOrderFunction {
 public:
  NegativeProfileLikelihood(const TrainingSet& data, const BoxTransform& box)
      : data_(data), box_(box) {}

  bool Evaluate(const double* u, double* cost, double* gradient) const override {
    const Eigen::Index d = data_.dim();
    const GPHyperParams p = from_log(box_.to_theta(u), d);
    LikelihoodParts parts;
    try {
      parts = evaluate_likelihood(p, data_, /*profile_mean=*/true, gradient != nullptr);
    } catch (const NumericalFailure&) {
      return false;
    }
    *cost = -parts.value;
    if (gradient != nullptr) {
      for (Eigen::Index i = 0; i < box_.size(); ++i) {
        gradient[i] = -parts.gradient(i) * box_.dtheta_du(u, i);
        if (!std::isfinite(gradient[i])) return false;
      }
    }
    return std::isfinite(*cost);
  }

  int NumParameters() const override { return static_cast<int>(box_.size()); }

 private:
  const TrainingSet& data_;
  const BoxTransform& box_;
};

double profiled_likelihood_or_nan(const GPHyperParams& p, const TrainingSet& data) {
  try {
    return evaluate_likelihood(p, data, true, false).value;
  } catch (const NumericalFailure&) {
    return -std::numeric_limits<double>::infinity();
  }
}

}  // namespace

double KernelSpec::operator()(const PointRef& x, const PointRef& y) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < lengthscales.size(); ++k) {
    const double diff = (x(k) - y(k)) / lengthscales(k);
    s += diff * diff;
  }
  return signal_variance * std::exp(-0.5 * s);
}

void KernelSpec::validate() const {
  if (!(signal_variance > 0.0) || !std::isfinite(signal_variance)) {
    throw InvalidArgument("KernelSpec: signal_variance must be positive and finite");
  }
  if (lengthscales.size() < 1) throw InvalidArgument("KernelSpec: need at least one lengthscale");
  if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite()) {
    throw InvalidArgument("KernelSpec: lengthscales must be positive and finite");
  }
}

void GPHyperParams::validate() const {
  kernel.validate();
  if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance)) {
    throw InvalidArgument("GPHyperParams: noise_variance must be nonnegative");
  }
  if (!std::isfinite(constant_mean)) throw InvalidArgument("GPHyperParams: constant_mean not finite");
}

GPHyperParams default_hyperparams(Eigen::Index dim) {
  GPHyperParams p;
  p.kernel.signal_variance = 1.0;
  p.kernel.lengthscales = Eigen::VectorXd::Constant(dim, 0.25);
  p.noise_variance = 1e-4;
  p.constant_mean = 0.0;
  return p;
}

TrainingSet::TrainingSet(Eigen::MatrixXd x, Eigen::VectorXd y)
    : inputs(std::move(x)), outputs(std::move(y)) {
  validate();
}

TrainingSet TrainingSet::appended(const PointRef& x, double y) const {
  check_dims(dim(), x.size(), "TrainingSet::appended");
  TrainingSet out;
  out.inputs.resize(size() + 1, dim());
  out.outputs.resize(size() + 1);
  out.inputs.topRows(size()) = inputs;
  out.outputs.head(size()) = outputs;
  out.inputs.row(size()) = x;
  out.outputs(size()) = y;
  return out;
}

void TrainingSet::validate() const {
  if (inputs.rows() != outputs.size()) {
    throw InvalidArgument("TrainingSet: inputs row count differs from outputs length");
  }
  if (inputs.cols() < 1) throw InvalidArgument("TrainingSet: input dimension must be >= 1");
}

namespace {

// Coordinates divided by the lengthscales, one point per column so each
// point is contiguous.
Eigen::MatrixXd scaled_columns(const KernelSpec& spec, const PointsRef& X) {
  return (X.array().rowwise() / spec.lengthscales.transpose().array()).matrix().transpose();
}

inline double scaled_sq_dist(const double* a, const double* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

}  // namespace

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const PointsRef& X, const PointsRef& X2) {
  spec.validate();
  check_dims(spec.dim(), X.cols(), "kernel_matrix");
  check_dims(spec.dim(), X2.cols(), "kernel_matrix");
  const Eigen::Index d = spec.dim();
  const Eigen::MatrixXd A = scaled_columns(spec, X);
  const Eigen::MatrixXd B = scaled_columns(spec, X2);
  Eigen::MatrixXd K(X.rows(), X2.rows());
  for (Eigen::Index j = 0; j < B.cols(); ++j) {
    const double* b = B.col(j).data();
    for (Eigen::Index i = 0; i < A.cols(); ++i) {
      K(i, j) = spec.signal_variance * std::exp(-0.5 * scaled_sq_dist(A.col(i).data(), b, d));
    }
  }
  return K;
}

Eigen::VectorXd kernel_matvec(const KernelSpec& spec, const PointsRef& X, const PointsRef& X2,
                              const Eigen::VectorXd& v) {
  spec.validate();
  check_dims(spec.dim(), X.cols(), "kernel_matvec");
  check_dims(spec.dim(), X2.cols(), "kernel_matvec");
  if (v.size() != X2.rows()) throw InvalidArgument("kernel_matvec: vector length mismatch");
  const Eigen::Index d = spec.dim();
  const Eigen::MatrixXd A = scaled_columns(spec, X);
  std::vector<Eigen::Index> nonzero;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (v(j) != 0.0) nonzero.push_back(j);
  }
  const Eigen::MatrixXd B = scaled_columns(spec, X2);
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < A.cols(); ++i) {
    const double* a = A.col(i).data();
    double acc = 0.0;
    for (const Eigen::Index j : nonzero) acc += v(j) * std::exp(-0.5 * scaled_sq_dist(a, B.col(j).data(), d));
    out(i) = spec.signal_variance * acc;
  }
  return out;
}

double log_marginal_likelihood(const GPHyperParams& params, const TrainingSet& data) {
  return evaluate_likelihood(params, data, false, false).value;
}

LikelihoodEvaluation log_marginal_likelihood_with_gradient(const GPHyperParams& params,
                                                           const TrainingSet& data) {
  auto parts = evaluate_likelihood(params, data, false, true);
  return {parts.value, std::move(parts.gradient), parts.jitter};
}

double profile_constant_mean(const GPHyperParams& params, const TrainingSet& data) {
  return evaluate_likelihood(params, data, true, false).mean;
}

FitResult fit_mle(const TrainingSet& data, const FitConfig& config) {
  data.validate();
  const Eigen::Index d = data.dim();
  FitResult result;
  result.params = config.defaults.value_or(default_hyperparams(d));
  check_dims(d, result.params.dim(), "fit_mle defaults");
  if (data.size() < std::max(config.min_points, 3)) return result;

  const BoxTransform box(config.bounds, d);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Eigen::VectorXd> starts;
  if (config.warm_start) {
    check_dims(d, config.warm_start->dim(), "fit_mle warm start");
    starts.push_back(box.clip(to_log(*config.warm_start)));
  } else {
    // Data-scaled start: signal variance from the output spread, a third of
    // each input's range as lengthscale, noise at 1% of the signal.
    const double var_y = std::max((data.outputs.array() - data.outputs.mean()).square().mean(), 1e-6);
    Eigen::VectorXd theta(d + 2);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double range = data.inputs.col(k).maxCoeff() - data.inputs.col(k).minCoeff();
      theta(k) = std::log(range > 0.0 ? range / 3.0 : 1.0);
    }
    theta(d) = std::log(var_y);
    theta(d + 1) = std::log(1e-2 * var_y);
    starts.push_back(box.clip(theta));
  }
  while (static_cast<int>(starts.size()) < std::max(config.restarts, 1)) {
    Eigen::VectorXd theta(d + 2);
    for (Eigen::Index i = 0; i < d + 2; ++i) theta(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * unit(rng);
    starts.push_back(theta);
  }

  // Line-search diagnostics from the solver go through glog; keep stderr clean.
  static std::once_flag quiet_solver;
  std::call_once(quiet_solver, [] { FLAGS_minloglevel = google::GLOG_ERROR; });

  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = config.max_iterations;
  options.logging_type = ceres::SILENT;
  options.minimizer_progress_to_stdout = false;
  options.function_tolerance = 1e-9;
  options.gradient_tolerance = 1e-8;

  double best = -std::numeric_limits<double>::infinity();
  std::optional<GPHyperParams> best_params;
  for (const auto& theta0 : starts) {
    GPHyperParams p0 = from_log(box.to_theta(box.to_u(theta0).data()), d);
    result.start_log_likelihoods.push_back(profiled_likelihood_or_nan(p0, data));
    if (!std::isfinite(result.start_log_likelihoods.back())) {
      ++result.failed_starts;
      continue;
    }
    Eigen::VectorXd u = box.to_u(theta0);
    ceres::GradientProblem problem(new NegativeProfileLikelihood(data, box));
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(options, problem, u.data(), &summary);

    GPHyperParams p = from_log(box.to_theta(u.data()), d);
    const double ll = profiled_likelihood_or_nan(p, data);
    if (!std::isfinite(ll)) {
      ++result.failed_starts;
      continue;
    }
    if (ll > best) {
      best = ll;
      best_params = p;
    }
  }

  if (!best_params) {
    result.fell_back = true;
    return result;
  }
  best_params->constant_mean = profile_constant_mean(*best_params, data);
  result.params = *best_params;
  result.log_likelihood = log_marginal_likelihood(result.params, data);
  result.optimized = true;
  return result;
}

GaussianProcess::GaussianProcess(GPHyperParams params, TrainingSet data) {
  params.validate();
  data.validate();
  check_dims(params.dim(), data.dim(), "GaussianProcess");
  auto state = std::make_shared<State>();
  state->params = std::move(params);
  state->data = std::move(data);
  if (!state->data.empty()) {
    const Eigen::MatrixXd K =
        kernel_matrix(state->params.kernel, state->data.inputs, state->data.inputs);
    Factorization f =
        factorize(K, state->params.noise_variance, state->params.kernel.signal_variance);
    state->llt = std::move(f.llt);
    state->jitter = f.jitter;
    state->alpha = state->llt.solve(
        (state->data.outputs.array() - state->params.constant_mean).matrix());
  }
  state_ = std::move(state);
}

Eigen::MatrixXd GaussianProcess::whiten(const PointsRef& X) const {
  check_dims(dim(), X.cols(), "GaussianProcess::whiten");
  if (size() == 0) return Eigen::MatrixXd(0, X.rows());
  return lower_solve(kernel_matrix(params().kernel, data().inputs, X));
}

Eigen::MatrixXd GaussianProcess::lower_solve(const Eigen::MatrixXd& B) const {
  if (B.rows() != size()) throw InvalidArgument("GaussianProcess::lower_solve: row mismatch");
  if (size() == 0) return Eigen::MatrixXd(0, B.cols());
  return state_->llt.matrixL().solve(B);
}

Eigen::VectorXd GaussianProcess::solve(const Eigen::VectorXd& b) const {
  if (b.size() != size()) throw InvalidArgument("GaussianProcess::solve: length mismatch");
  if (size() == 0) return Eigen::VectorXd(0);
  return state_->llt.solve(b);
}

Eigen::VectorXd GaussianProcess::mean(const PointsRef& Xq) const {
  check_dims(dim(), Xq.cols(), "GaussianProcess::mean");
  Eigen::VectorXd m = Eigen::VectorXd::Constant(Xq.rows(), params().constant_mean);
  if (size() > 0) m += kernel_matrix(params().kernel, Xq, data().inputs) * state_->alpha;
  return m;
}

Eigen::VectorXd GaussianProcess::variance(const PointsRef& Xq) const {
  check_dims(dim(), Xq.cols(), "GaussianProcess::variance");
  Eigen::VectorXd v = Eigen::VectorXd::Constant(Xq.rows(), prior_variance());
  if (size() > 0) v -= whiten(Xq).colwise().squaredNorm().transpose();
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::max(v(i), 0.0);
  return v;
}

Eigen::MatrixXd GaussianProcess::cross_covariance(const PointsRef& Xa, const PointsRef& Xb) const {
  check_dims(dim(), Xa.cols(), "GaussianProcess::cross_covariance");
  check_dims(dim(), Xb.cols(), "GaussianProcess::cross_covariance");
  Eigen::MatrixXd C = kernel_matrix(params().kernel, Xa, Xb);
  if (size() > 0) C.noalias() -= whiten(Xa).transpose() * whiten(Xb);
  return C;
}

PosteriorSummary GaussianProcess::posterior(const PointsRef& Xq) const {
  check_dims(dim(), Xq.cols(), "GaussianProcess::posterior");
  if (Xq.rows() == 0) throw InvalidArgument("GaussianProcess::posterior: no query points");
  PosteriorSummary out;
  out.mean = mean(Xq);
  out.covariance = kernel_matrix(params().kernel, Xq, Xq);
  if (size() > 0) {
    const Eigen::MatrixXd V = whiten(Xq);
    out.covariance.noalias() -= V.transpose() * V;
  }
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  for (Eigen::Index i = 0; i < out.covariance.rows(); ++i) {
    out.covariance(i, i) = std::max(out.covariance(i, i), 0.0);
  }
  return out;
}

GaussianProcess GaussianProcess::with_observation(const PointRef& x, double y) const {
  return GaussianProcess(params(), data().appended(x, y));
}

PosteriorSummary posterior_at(const GPHyperParams& params, const TrainingSet& data,
                              const PointsRef& Xq) {
  return GaussianProcess(params, data).posterior(Xq);
}

Eigen::VectorXd posterior_cross_cov(const GPHyperParams& params, const TrainingSet& data,
                                    const PointsRef& Xa, const PointRef& xb) {
  const Eigen::MatrixXd xb_mat = xb;
  return GaussianProcess(params, data).cross_covariance(Xa, xb_mat).col(0);
}

}  // namespace ace::gp
