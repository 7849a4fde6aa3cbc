#pragma once

// Independent reference computations for tests: dense inverses, explicit
// loops, sampling.  Nothing here calls the factorized code paths under test.

#include "ace/kernel_gp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace oracle {

inline double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
}

inline Eigen::MatrixXd uniform(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) X(i, k) = u(rng);
  }
  return X;
}

/// tau2 in [0.5, 2], lengthscales in [0.1, 0.6], noise in [1e-4, 1e-1],
/// mean in [-1, 1]; all log-uniform except the mean.
inline ace::gp::GPHyperParams random_params(std::mt19937_64& rng, Eigen::Index d) {
  ace::gp::GPHyperParams p;
  p.kernel.signal_variance = log_uniform(rng, 0.5, 2.0);
  p.kernel.lengthscales.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) p.kernel.lengthscales(k) = log_uniform(rng, 0.1, 0.6);
  p.noise_variance = log_uniform(rng, 1e-4, 1e-1);
  p.constant_mean = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  return p;
}

inline Eigen::MatrixXd kernel(const ace::gp::GPHyperParams& p, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < A.cols(); ++k) {
        const double diff = (A(i, k) - B(j, k)) / p.kernel.lengthscales(k);
        s += diff * diff;
      }
      K(i, j) = p.kernel.signal_variance * std::exp(-0.5 * s);
    }
  }
  return K;
}

/// K(X, X) + (noise + jitter) I.
inline Eigen::MatrixXd covariance(const ace::gp::GPHyperParams& p, const Eigen::MatrixXd& X, double jitter = 0.0) {
  Eigen::MatrixXd C = kernel(p, X, X);
  C.diagonal().array() += p.noise_variance + jitter;
  return C;
}

struct DensePosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Posterior mean and covariance assembled from an explicit inverse.
inline DensePosterior dense_posterior(const ace::gp::GPHyperParams& p, const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y, const Eigen::MatrixXd& Xq, double jitter = 0.0) {
  const Eigen::MatrixXd Cinv = covariance(p, X, jitter).fullPivLu().inverse();
  const Eigen::MatrixXd Kq = kernel(p, Xq, X);
  DensePosterior out;
  out.mean = Eigen::VectorXd::Constant(Xq.rows(), p.constant_mean) +
             Kq * Cinv * (y.array() - p.constant_mean).matrix();
  out.covariance = kernel(p, Xq, Xq) - Kq * Cinv * Kq.transpose();
  return out;
}

inline double gaussian_logpdf(const ace::gp::GPHyperParams& p, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              double jitter = 0.0) {
  const Eigen::MatrixXd C = covariance(p, X, jitter);
  const Eigen::VectorXd r = (y.array() - p.constant_mean).matrix();
  const double logdet = std::log(C.determinant());
  const double quad = r.dot(C.fullPivLu().solve(r));
  return -0.5 * quad - 0.5 * logdet - 0.5 * static_cast<double>(X.rows()) * std::log(2.0 * std::numbers::pi);
}

/// w^T Sigma_n w - w^T Sigma_{n+1} w where Sigma_{n+1} conditions on an
/// extra exact observation of mu(x), assembled from explicit inverses.
inline double fantasized_reduction(const ace::gp::GPHyperParams& p, const Eigen::MatrixXd& X,
                                   const Eigen::RowVectorXd& x, const Eigen::MatrixXd& T,
                                   const Eigen::VectorXd& w) {
  auto quad = [&](const Eigen::MatrixXd& Z, const Eigen::VectorXd& noise) {
    Eigen::MatrixXd C = kernel(p, Z, Z);
    C.diagonal() += noise;
    const Eigen::MatrixXd Kt = kernel(p, T, Z);
    const Eigen::MatrixXd S = kernel(p, T, T) - Kt * C.fullPivLu().inverse() * Kt.transpose();
    return w.dot(S * w);
  };
  Eigen::MatrixXd Z(X.rows() + 1, X.cols());
  Z << X, x;
  Eigen::VectorXd noise_n = Eigen::VectorXd::Constant(X.rows(), p.noise_variance);
  Eigen::VectorXd noise_z = Eigen::VectorXd::Constant(Z.rows(), p.noise_variance);
  noise_z(X.rows()) = 0.0;
  const double before = X.rows() > 0 ? quad(X, noise_n) : w.dot(kernel(p, T, T) * w);
  return before - quad(Z, noise_z);
}

/// (w^T Sigma_n(T, x))^2 / sigma_n^2(x) for every row of the candidates,
/// from the dense joint posterior over [T; candidate].
inline Eigen::VectorXd scan_reductions(const ace::gp::GPHyperParams& p, const Eigen::MatrixXd& X,
                                       const Eigen::VectorXd& y, const Eigen::MatrixXd& candidates,
                                       const Eigen::MatrixXd& T, const Eigen::VectorXd& w) {
  Eigen::VectorXd out(candidates.rows());
  for (Eigen::Index j = 0; j < candidates.rows(); ++j) {
    Eigen::MatrixXd Q(T.rows() + 1, T.cols());
    Q << T, candidates.row(j);
    Eigen::MatrixXd S;
    if (X.rows() > 0) {
      S = dense_posterior(p, X, y, Q).covariance;
    } else {
      S = kernel(p, Q, Q);
    }
    const double cross = w.dot(S.col(T.rows()).head(T.rows()));
    out(j) = cross * cross / std::max(S(T.rows(), T.rows()), 1e-10);
  }
  return out;
}

/// Index of the first maximum.
inline Eigen::Index first_argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

/// One draw of f(X) + noise from the GP prior.
inline Eigen::VectorXd sample_gp(std::mt19937_64& rng, const ace::gp::GPHyperParams& p, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd C = covariance(p, X, 1e-10);
  const Eigen::MatrixXd L = C.llt().matrixL();
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd e(X.rows());
  for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = z(rng);
  return (L * e).array() + p.constant_mean;
}

}  // namespace oracle
