#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace ace::gp {

using PointsRef = Eigen::Ref<const Eigen::MatrixXd>;
using PointRef = Eigen::Ref<const Eigen::RowVectorXd>;

enum class KernelFamily { SquaredExponential };

/// Stationary covariance kernel. Only the anisotropic squared-exponential
/// family is provided:
///   k(x, x') = signal_variance * exp(-sum_k (x_k - x'_k)^2 / (2 l_k^2))
struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponential;
  double signal_variance = 1.0;
  Eigen::VectorXd lengthscales;

  [[nodiscard]] Eigen::Index dim() const { return lengthscales.size(); }
  [[nodiscard]] double operator()(const PointRef& x, const PointRef& y) const;
  void validate() const;
};

struct GPHyperParams {
  KernelSpec kernel;
  double noise_variance = 0.0;
  double constant_mean = 0.0;

  [[nodiscard]] Eigen::Index dim() const { return kernel.dim(); }
  void validate() const;
};

/// Hyperparameters used when there is too little data to fit: unit signal
/// variance, lengthscale 0.25 in every coordinate, noise 1e-4, zero mean.
GPHyperParams default_hyperparams(Eigen::Index dim);

/// n x d inputs with their n outputs. n = 0 is allowed; the column count
/// still fixes the input dimension.
struct TrainingSet {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd outputs;

  TrainingSet() = default;
  explicit TrainingSet(Eigen::Index dim) : inputs(0, dim), outputs(0) {}
  TrainingSet(Eigen::MatrixXd x, Eigen::VectorXd y);

  [[nodiscard]] Eigen::Index size() const { return inputs.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return inputs.cols(); }
  [[nodiscard]] bool empty() const { return inputs.rows() == 0; }
  [[nodiscard]] TrainingSet appended(const PointRef& x, double y) const;
  void validate() const;
};

struct PosteriorSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Entry (i, j) = k(X.row(i), X2.row(j)).
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const PointsRef& X, const PointsRef& X2);

/// K(X, X2) v without materializing K; zero entries of v are skipped.
Eigen::VectorXd kernel_matvec(const KernelSpec& spec, const PointsRef& X, const PointsRef& X2,
                              const Eigen::VectorXd& v);

struct LikelihoodEvaluation {
  double value = 0.0;
  /// d/d(log l_1 .. log l_d, log signal_variance, log noise_variance), with
  /// constant_mean held fixed.
  Eigen::VectorXd gradient;
  double jitter = 0.0;
};

double log_marginal_likelihood(const GPHyperParams& params, const TrainingSet& data);
LikelihoodEvaluation log_marginal_likelihood_with_gradient(const GPHyperParams& params,
                                                           const TrainingSet& data);

/// Generalized least squares estimate of the constant mean for the given
/// covariance parameters (the profile MLE of constant_mean).
double profile_constant_mean(const GPHyperParams& params, const TrainingSet& data);

struct Interval {
  double lo;
  double hi;
};

struct ParamBounds {
  Interval lengthscale{1e-3, 10.0};
  Interval signal_variance{1e-6, 1e3};
  Interval noise_variance{1e-8, 1.0};
};

struct FitConfig {
  int restarts = 10;
  std::uint64_t seed = 0;
  int max_iterations = 200;
  ParamBounds bounds;
  /// Returned unchanged when n < max(min_points, 3) or when every restart
  /// fails.
  std::optional<GPHyperParams> defaults;
  int min_points = 3;
  /// Used as the first start point when present (its values are clipped
  /// into the bounds).
  std::optional<GPHyperParams> warm_start;
};

struct FitResult {
  GPHyperParams params;
  double log_likelihood = 0.0;
  bool optimized = false;    // false when defaults were returned
  bool fell_back = false;    // every restart failed numerically
  int failed_starts = 0;
  std::vector<double> start_log_likelihoods;
};

/// Maximum marginal likelihood over (lengthscales, signal variance, noise
/// variance) by multi-start L-BFGS in log-parameter space; the constant mean
/// is profiled out at every evaluation.
FitResult fit_mle(const TrainingSet& data, const FitConfig& config);

/// Conditioned GP: hyperparameters plus factored training covariance.
/// Immutable; copies share the factorization.
class GaussianProcess {
 public:
  /// Throws NumericalFailure when the covariance cannot be factored even at
  /// the largest jitter.
  GaussianProcess(GPHyperParams params, TrainingSet data);

  [[nodiscard]] const GPHyperParams& params() const { return state_->params; }
  [[nodiscard]] const TrainingSet& data() const { return state_->data; }
  [[nodiscard]] Eigen::Index size() const { return state_->data.size(); }
  [[nodiscard]] Eigen::Index dim() const { return state_->params.dim(); }
  /// Diagonal jitter actually added on top of noise_variance.
  [[nodiscard]] double jitter() const { return state_->jitter; }
  [[nodiscard]] double prior_variance() const { return state_->params.kernel.signal_variance; }

  [[nodiscard]] Eigen::VectorXd mean(const PointsRef& Xq) const;
  [[nodiscard]] Eigen::VectorXd variance(const PointsRef& Xq) const;
  [[nodiscard]] PosteriorSummary posterior(const PointsRef& Xq) const;
  [[nodiscard]] Eigen::MatrixXd cross_covariance(const PointsRef& Xa, const PointsRef& Xb) const;

  /// L^{-1} K(X_n, X) where L L^T is the factored training covariance.
  [[nodiscard]] Eigen::MatrixXd whiten(const PointsRef& X) const;
  /// L^{-1} B for B with n rows.
  [[nodiscard]] Eigen::MatrixXd lower_solve(const Eigen::MatrixXd& B) const;
  /// (K + (noise + jitter) I)^{-1} b.
  [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

  [[nodiscard]] GaussianProcess with_observation(const PointRef& x, double y) const;

 private:
  struct State {
    GPHyperParams params;
    TrainingSet data;
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd alpha;
    double jitter = 0.0;
  };
  std::shared_ptr<const State> state_;
};

PosteriorSummary posterior_at(const GPHyperParams& params, const TrainingSet& data,
                              const PointsRef& Xq);

/// Sigma_n(Xa, xb) of the joint posterior over (mu(Xa), mu(xb)).
Eigen::VectorXd posterior_cross_cov(const GPHyperParams& params, const TrainingSet& data,
                                    const PointsRef& Xa, const PointRef& xb);

}  // namespace ace::gp
