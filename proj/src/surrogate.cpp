#include "ace/surrogate.hpp"

#include "ace/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ace {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

void require_both_arms(const TwoArmModel& model, const char* what) {
  for (Arm a : {Arm::Control, Arm::Treated}) {
    if (!model.fitted(a)) {
      throw StateError(std::string(what) + ": arm " + std::to_string(to_index(a)) +
                       " has no observations");
    }
  }
}

void check_weights(const TestSet& test, const Eigen::VectorXd& w, const char* what) {
  if (w.size() != test.size()) {
    throw InvalidArgument(std::string(what) + ": weight vector length differs from test set size");
  }
  if (!(w.array() >= 0.0).all() || !(w.sum() > 0.0)) {
    throw EmptyTarget(std::string(what) + ": weights must be nonnegative with positive sum");
  }
}

}  // namespace

Arm arm_from_int(int value) {
  if (value != 0 && value != 1) {
    throw InvalidArgument("arm must be 0 or 1, got " + std::to_string(value));
  }
  return static_cast<Arm>(value);
}

void TestSet::validate() const {
  if (points.rows() < 1) throw InvalidArgument("TestSet: at least one point required");
  if (points.cols() < 1) throw InvalidArgument("TestSet: dimension must be >= 1");
  if (!points.allFinite()) throw InvalidArgument("TestSet: non-finite coordinate");
}

Eigen::MatrixXd read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(path.string() + ": empty file");
  const auto header = split_csv_line(line);
  const auto d = static_cast<Eigen::Index>(header.size());
  for (Eigen::Index k = 0; k < d; ++k) {
    if (trim(header[k]) != "x" + std::to_string(k + 1)) {
      throw InvalidArgument(path.string() + ": header must be x1..xd, got '" + header[k] + "'");
    }
  }
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<Eigen::Index>(fields.size()) != d) {
      throw InvalidArgument(path.string() + ": row " + std::to_string(rows + 1) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(d));
    }
    for (const auto& f : fields) {
      try {
        values.push_back(std::stod(f));
      } catch (const std::exception&) {
        throw InvalidArgument(path.string() + ": bad number '" + f + "'");
      }
    }
    ++rows;
  }
  Eigen::MatrixXd points(rows, d);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) points(i, k) = values[static_cast<std::size_t>(i * d + k)];
  }
  return points;
}

void write_points_csv(const Eigen::MatrixXd& points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  for (Eigen::Index k = 0; k < points.cols(); ++k) out << (k ? "," : "") << 'x' << (k + 1);
  out << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index k = 0; k < points.cols(); ++k) out << (k ? "," : "") << points(i, k);
    out << '\n';
  }
}

TestSet load_test_set_csv(const std::filesystem::path& path) {
  TestSet t{read_points_csv(path)};
  t.validate();
  return t;
}

void save_test_set_csv(const TestSet& test, const std::filesystem::path& path) {
  test.validate();
  write_points_csv(test.points, path);
}

std::string WeightSpec::name() const {
  switch (kind) {
    case WeightKind::ATE: return "ate";
    case WeightKind::ATTE: return "atte";
    case WeightKind::ATO: return "ato";
    case WeightKind::Matching: return "matching";
    case WeightKind::TruncatedCombined: {
      std::ostringstream os;
      os << "truncated:" << alpha;
      return os.str();
    }
  }
  return "?";
}

void WeightSpec::validate() const {
  if (kind == WeightKind::TruncatedCombined && !(alpha > 0.0 && alpha < 0.5)) {
    throw InvalidArgument("truncation alpha must lie in (0, 0.5)");
  }
}

WeightSpec WeightSpec::parse(std::string_view text, double default_alpha) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  WeightSpec spec;
  if (s == "ate") {
    spec.kind = WeightKind::ATE;
  } else if (s == "atte" || s == "att") {
    spec.kind = WeightKind::ATTE;
  } else if (s == "ato") {
    spec.kind = WeightKind::ATO;
  } else if (s == "matching") {
    spec.kind = WeightKind::Matching;
  } else if (s == "truncated" || s.starts_with("truncated:")) {
    spec.kind = WeightKind::TruncatedCombined;
    spec.alpha = default_alpha;
    if (s.size() > 10) {
      try {
        spec.alpha = std::stod(s.substr(10));
      } catch (const std::exception&) {
        throw InvalidArgument("bad truncation alpha in '" + std::string(text) + "'");
      }
    }
  } else {
    throw InvalidArgument("unknown estimand '" + std::string(text) +
                          "' (expected ate, atte, ato, matching, truncated[:alpha])");
  }
  spec.validate();
  return spec;
}

double weight_value(const WeightSpec& spec, double e) {
  switch (spec.kind) {
    case WeightKind::ATE: return 1.0;
    case WeightKind::ATTE: return e;
    case WeightKind::ATO: return e * (1.0 - e);
    case WeightKind::TruncatedCombined: return (spec.alpha < e && e < 1.0 - spec.alpha) ? 1.0 : 0.0;
    case WeightKind::Matching: return std::min(e, 1.0 - e);
  }
  return 0.0;
}

Eigen::VectorXd weights(const WeightSpec& spec, const Eigen::VectorXd& e) {
  spec.validate();
  if (spec.uses_propensity() && !((e.array() > 0.0).all() && (e.array() < 1.0).all())) {
    throw InvalidArgument("weights: propensity values must lie in (0, 1)");
  }
  Eigen::VectorXd w(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) w(i) = weight_value(spec, e(i));
  if (!(w.sum() > 0.0)) throw EmptyTarget("weights: every weight is zero for " + spec.name());
  return w;
}

std::array<gp::TrainingSet, 2> split_by_arm(std::span<const Observation> observations,
                                            Eigen::Index dim) {
  std::array<Eigen::Index, 2> counts{0, 0};
  for (const auto& o : observations) {
    if (o.x.size() != dim) throw InvalidArgument("observation dimension mismatch");
    ++counts[to_index(o.arm)];
  }
  std::array<gp::TrainingSet, 2> sets;
  for (int a = 0; a < 2; ++a) {
    sets[a].inputs.resize(counts[a], dim);
    sets[a].outputs.resize(counts[a]);
  }
  std::array<Eigen::Index, 2> fill{0, 0};
  for (const auto& o : observations) {
    const int a = to_index(o.arm);
    sets[a].inputs.row(fill[a]) = o.x;
    sets[a].outputs(fill[a]) = o.y;
    ++fill[a];
  }
  return sets;
}

TwoArmModel::TwoArmModel(Eigen::Index dim)
    : TwoArmModel(dim, {gp::GaussianProcess(gp::default_hyperparams(dim), gp::TrainingSet(dim)),
                        gp::GaussianProcess(gp::default_hyperparams(dim), gp::TrainingSet(dim))}) {}

TwoArmModel::TwoArmModel(Eigen::Index dim, std::array<gp::GaussianProcess, 2> arms)
    : dim_(dim), arms_(std::move(arms)) {}

TwoArmModel::TwoArmModel(std::span<const Observation> observations, Eigen::Index dim,
                         const std::array<gp::GPHyperParams, 2>& params)
    : TwoArmModel(dim, [&] {
        auto sets = split_by_arm(observations, dim);
        return std::array<gp::GaussianProcess, 2>{gp::GaussianProcess(params[0], std::move(sets[0])),
                                                  gp::GaussianProcess(params[1], std::move(sets[1]))};
      }()) {}

TwoArmModel TwoArmModel::fit(std::span<const Observation> observations, Eigen::Index dim,
                             const gp::FitConfig& config,
                             const std::array<gp::GPHyperParams, 2>* warm_starts,
                             FitReport* report) {
  auto sets = split_by_arm(observations, dim);
  std::array<gp::GPHyperParams, 2> params;
  for (int a = 0; a < 2; ++a) {
    gp::FitConfig arm_config = config;
    arm_config.seed = config.seed + static_cast<std::uint64_t>(a);
    if (warm_starts != nullptr) arm_config.warm_start = (*warm_starts)[a];
    gp::FitResult r = gp::fit_mle(sets[a], arm_config);
    params[a] = r.params;
    if (report != nullptr) report->arms[a] = std::move(r);
  }
  return TwoArmModel(dim, {gp::GaussianProcess(params[0], std::move(sets[0])),
                           gp::GaussianProcess(params[1], std::move(sets[1]))});
}

std::array<gp::GPHyperParams, 2> TwoArmModel::params() const {
  return {arms_[0].params(), arms_[1].params()};
}

TwoArmModel TwoArmModel::with_observation(const Observation& obs) const {
  if (obs.x.size() != dim_) throw InvalidArgument("with_observation: dimension mismatch");
  auto arms = arms_;
  arms[to_index(obs.arm)] = arms_[to_index(obs.arm)].with_observation(obs.x, obs.y);
  return TwoArmModel(dim_, std::move(arms));
}

double estimate_qoi(const TwoArmModel& model, const TestSet& test, const Eigen::VectorXd& w) {
  require_both_arms(model, "estimate_qoi");
  check_weights(test, w, "estimate_qoi");
  const Eigen::VectorXd gap = model.arm(Arm::Treated).mean(test.points) -
                              model.arm(Arm::Control).mean(test.points);
  return w.dot(gap) / w.sum();
}

double qoi_posterior_variance(const TwoArmModel& model, const TestSet& test,
                              const Eigen::VectorXd& w) {
  require_both_arms(model, "qoi_posterior_variance");
  check_weights(test, w, "qoi_posterior_variance");
  double total = 0.0;
  for (Arm a : {Arm::Control, Arm::Treated}) {
    const auto post = model.arm(a).posterior(test.points);
    total += w.dot(post.covariance * w);
  }
  const double s = w.sum();
  return total / (s * s);
}

}  // namespace ace
