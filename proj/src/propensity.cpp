#include "ace/propensity.hpp"

#include "ace/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ace::propensity {

namespace {

double log1pexp(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

double stable_sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double z = std::exp(t);
  return z / (1.0 + z);
}

Eigen::Index pair_count(Eigen::Index d) { return d * (d - 1) / 2; }

Eigen::MatrixXd design_matrix(std::span<const Observation> obs, Eigen::Index d, bool interactions) {
  const Eigen::Index p = 1 + d + (interactions ? pair_count(d) : 0);
  Eigen::MatrixXd F(static_cast<Eigen::Index>(obs.size()), p);
  for (Eigen::Index i = 0; i < F.rows(); ++i) {
    const auto& x = obs[static_cast<std::size_t>(i)].x;
    F(i, 0) = 1.0;
    F.row(i).segment(1, d) = x;
    if (interactions) {
      Eigen::Index col = 1 + d;
      for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a + 1; b < d; ++b) F(i, col++) = x(a) * x(b);
      }
    }
  }
  return F;
}

struct NewtonOutcome {
  Eigen::VectorXd beta;
  bool converged = false;
};

// Penalized Newton-Raphson with step halving on
//   sum_i [a_i eta_i - log(1 + exp(eta_i))] - penalty/2 * |beta_{1:}|^2.
NewtonOutcome newton(const Eigen::MatrixXd& F, const Eigen::VectorXd& a, double penalty,
                     const LogisticFitOptions& opt) {
  const Eigen::Index p = F.cols();
  Eigen::VectorXd pen = Eigen::VectorXd::Constant(p, penalty);
  pen(0) = 0.0;

  const auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = F * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += a(i) * eta(i) - log1pexp(eta(i));
    return ll - 0.5 * (pen.array() * beta.array().square()).sum();
  };

  NewtonOutcome out;
  out.beta = Eigen::VectorXd::Zero(p);
  double current = objective(out.beta);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Eigen::VectorXd eta = F * out.beta;
    Eigen::VectorXd prob(eta.size());
    Eigen::VectorXd wts(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      prob(i) = stable_sigmoid(eta(i));
      wts(i) = prob(i) * (1.0 - prob(i));
    }
    const Eigen::VectorXd grad = F.transpose() * (a - prob) - (pen.array() * out.beta.array()).matrix();
    Eigen::MatrixXd H = F.transpose() * wts.asDiagonal() * F;
    H.diagonal() += pen;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return out;
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) return out;

    double scale = 1.0;
    Eigen::VectorXd next = out.beta + step;
    double value = objective(next);
    while (value < current - 1e-12 * std::abs(current) && scale > 1e-8) {
      scale *= 0.5;
      next = out.beta + scale * step;
      value = objective(next);
    }
    out.beta = next;
    current = value;
    if ((scale * step).lpNorm<Eigen::Infinity>() < opt.tolerance * (1.0 + out.beta.lpNorm<Eigen::Infinity>()) ||
        grad.lpNorm<Eigen::Infinity>() < 1e-12) {
      out.converged = true;
      return out;
    }
  }
  return out;
}

}  // namespace

double LogisticParams::logit(const gp::PointRef& x) const {
  if (x.size() != coefficients.size()) throw InvalidArgument("propensity: dimension mismatch");
  double t = intercept + coefficients.dot(x.transpose());
  if (interactions.size() > 0) {
    const Eigen::Index d = x.size();
    Eigen::Index col = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = i + 1; j < d; ++j) t += interactions(col++) * x(i) * x(j);
    }
  }
  return t;
}

PropensityModel::PropensityModel(Source source, LogisticParams params, bool penalized)
    : source_(source), params_(std::move(params)), penalized_(penalized) {
  const Eigen::Index d = params_.dim();
  if (d < 1) throw InvalidArgument("propensity: at least one covariate required");
  if (params_.interactions.size() != 0 && params_.interactions.size() != pair_count(d)) {
    throw InvalidArgument("propensity: interactions must be empty or hold d(d-1)/2 terms");
  }
}

PropensityModel PropensityModel::simulation_truth() {
  LogisticParams p;
  p.intercept = -2.0;
  p.coefficients = Eigen::VectorXd::Zero(2);
  p.interactions = Eigen::VectorXd::Constant(1, 2.0);
  return PropensityModel(Source::Known, std::move(p));
}

double PropensityModel::evaluate(const gp::PointRef& x) const {
  return std::clamp(stable_sigmoid(params_.logit(x)), kClamp, 1.0 - kClamp);
}

Eigen::VectorXd PropensityModel::evaluate_all(const gp::PointsRef& X) const {
  Eigen::VectorXd e(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) e(i) = evaluate(X.row(i));
  return e;
}

PropensityModel fit_logistic(std::span<const Observation> observations,
                             const LogisticFitOptions& options) {
  if (observations.empty()) throw InvalidArgument("fit_logistic: no observations");
  const Eigen::Index d = observations.front().x.size();
  std::array<int, 2> counts{0, 0};
  for (const auto& o : observations) {
    if (o.x.size() != d) throw InvalidArgument("fit_logistic: inconsistent covariate dimension");
    ++counts[to_index(o.arm)];
  }
  if (counts[0] == 0 || counts[1] == 0) {
    throw InvalidArgument("fit_logistic: both arms must be observed");
  }
  const bool use_pairs = options.interactions && d >= 2;
  const Eigen::MatrixXd F = design_matrix(observations, d, use_pairs);
  Eigen::VectorXd a(F.rows());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a(i) = static_cast<double>(to_index(observations[static_cast<std::size_t>(i)].arm));
  }

  constexpr double kSeparationBound = 1e3;
  NewtonOutcome fit = newton(F, a, 0.0, options);
  bool penalized = false;
  if (!fit.converged || !fit.beta.allFinite() ||
      fit.beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
    fit = newton(F, a, options.fallback_penalty, options);
    penalized = true;
    if (!fit.beta.allFinite()) throw NumericalFailure("fit_logistic: penalized fit diverged");
  }

  LogisticParams params;
  params.intercept = fit.beta(0);
  params.coefficients = fit.beta.segment(1, d);
  params.interactions = use_pairs ? Eigen::VectorXd(fit.beta.tail(pair_count(d))) : Eigen::VectorXd();
  return PropensityModel(Source::Estimated, std::move(params), penalized);
}

nlohmann::json to_json(const PropensityModel& model) {
  const auto& p = model.params();
  return {
      {"kind", model.source() == Source::Known ? "known" : "logistic_fit"},
      {"intercept", p.intercept},
      {"coefficients", std::vector<double>(p.coefficients.data(), p.coefficients.data() + p.coefficients.size())},
      {"interactions", std::vector<double>(p.interactions.data(), p.interactions.data() + p.interactions.size())},
      {"penalized", model.penalized()},
  };
}

PropensityModel propensity_from_json(const nlohmann::json& j) {
  try {
    LogisticParams p;
    p.intercept = j.at("intercept").get<double>();
    const auto coef = j.at("coefficients").get<std::vector<double>>();
    p.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
    const auto inter = j.value("interactions", std::vector<double>{});
    p.interactions = Eigen::Map<const Eigen::VectorXd>(inter.data(), static_cast<Eigen::Index>(inter.size()));
    const std::string kind = j.value("kind", "logistic_fit");
    if (kind != "known" && kind != "logistic_fit") {
      throw InvalidArgument("propensity kind must be 'known' or 'logistic_fit'");
    }
    return PropensityModel(kind == "known" ? Source::Known : Source::Estimated, std::move(p),
                           j.value("penalized", false));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("propensity json: ") + e.what());
  }
}

PropensityModel fit_or_marginal(std::span<const Observation> observations, Eigen::Index dim,
                                const LogisticFitOptions& options) {
  std::array<int, 2> counts{0, 0};
  for (const auto& o : observations) ++counts[to_index(o.arm)];
  if (counts[0] > 0 && counts[1] > 0) return fit_logistic(observations, options);
  const double frac = (counts[1] + 0.5) / (counts[0] + counts[1] + 1.0);
  LogisticParams p;
  p.intercept = std::log(frac / (1.0 - frac));
  p.coefficients = Eigen::VectorXd::Zero(dim);
  return PropensityModel(Source::Estimated, std::move(p), true);
}

}  // namespace ace::propensity
