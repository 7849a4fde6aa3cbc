#include "ace/cli_io.hpp"

#include "ace/errors.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace ace::cli {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void field_error(const std::string& field, const std::string& message) {
  throw InvalidArgument("config." + field + ": " + message);
}

template <typename T>
T get_field(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) field_error(key, "expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) field_error(key, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_unsigned() == false && v.get<std::int64_t>() < 0) field_error(key, "must be nonnegative");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) field_error(key, "expected a number");
  } else {
    if (!v.is_string()) field_error(key, "expected a string");
  }
  return v.get<T>();
}

std::vector<std::string> string_list(const json& v, const std::string& key) {
  std::vector<std::string> out;
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
  } else if (v.is_array()) {
    for (const auto& item : v) {
      if (!item.is_string()) field_error(key, "expected strings");
      out.push_back(item.get<std::string>());
    }
  } else {
    field_error(key, "expected a string or a list of strings");
  }
  if (out.empty()) field_error(key, "must not be empty");
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Minimal CSV reader: no quoting, header row required.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name, const std::filesystem::path& path) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidArgument(path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::string cell;
    std::istringstream is(s);
    while (std::getline(is, cell, ',')) f.push_back(cell);
    if (!s.empty() && s.back() == ',') f.emplace_back();
    return f;
  };
  if (!std::getline(in, line)) throw InvalidArgument(path.string() + ": empty file");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != t.header.size()) {
      throw InvalidArgument(path.string() + ": row with " + std::to_string(f.size()) + " fields, expected " +
                            std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(f));
  }
  return t;
}

double parse_double(const std::string& s) {
  if (s == "NA") return kNaN;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw InvalidArgument("bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw InvalidArgument("bad number '" + s + "'");
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  return out;
}

std::string arm_label(Arm a) { return std::to_string(to_index(a)); }

}  // namespace

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out;
  out.reserve(static_cast<std::size_t>(std::max(replications, 0)));
  for (int r = 0; r < replications; ++r) out.push_back(scenario.seed + static_cast<std::uint64_t>(r));
  return out;
}

void RunConfig::validate() const {
  if (replications < 1) field_error("replications", "must be >= 1");
  if (threads < 1) field_error("threads", "must be >= 1");
  if (methods.empty()) field_error("methods", "must not be empty");
  if (estimands.empty()) field_error("estimands", "must not be empty");
  if (output_dir.empty()) field_error("output_dir", "must not be empty");
  for (const auto m : methods) {
    if (!sim::method_allowed(scenario.scenario, m)) {
      field_error("methods", sim::to_string(m) + " is not defined for scenario " +
                                 sim::to_string(scenario.scenario));
    }
  }
  for (const auto& e : estimands) {
    sim::ScenarioConfig c = scenario;
    c.method = methods.front();
    c.weight = e;
    try {
      c.validate();
    } catch (const InvalidArgument& ex) {
      throw InvalidArgument(std::string("config.") + ex.what());
    }
  }
}

RunConfig default_run_config(sim::Scenario scenario) {
  RunConfig c;
  c.scenario.scenario = scenario;
  for (sim::Method m : {sim::Method::Random, sim::Method::Alc, sim::Method::AlcE, sim::Method::Ace,
                        sim::Method::AceE, sim::Method::Greedy, sim::Method::AceUcb}) {
    if (sim::method_allowed(scenario, m)) c.methods.push_back(m);
  }
  c.estimands = {WeightSpec{}};
  if (scenario == sim::Scenario::S3) {
    c.scenario.n = 50;
    c.scenario.n_pool = 1000;
  }
  return c;
}

RunConfig run_config_from_json(const json& input, const RunConfig& base) {
  if (!input.is_object()) throw InvalidArgument("config: expected a JSON object");
  const json& doc = (input.contains("config") && input.contains("config_hash")) ? input.at("config") : input;
  if (!doc.is_object()) throw InvalidArgument("config: expected a JSON object");

  static const std::set<std::string> known = {
      "scenario",     "methods",        "estimands",        "n",            "n_pool",
      "n_test",       "n_init",         "noise_sd",         "seed",         "test_seed",
      "replications", "threads",        "refit_interval",   "restart_interval", "fit_restarts",
      "min_fit_points", "propensity",   "noise_adjusted",   "ucb",              "truncation_alpha",
      "output_dir"};
  for (const auto& [key, _] : doc.items()) {
    if (!known.contains(key)) field_error(key, "unknown key");
  }

  RunConfig c = base;
  if (doc.contains("scenario")) {
    try {
      const auto s = sim::parse_scenario(get_field<std::string>(doc, "scenario"));
      if (s != c.scenario.scenario) {
        const RunConfig d = default_run_config(s);
        c.scenario.scenario = s;
        c.methods = d.methods;
        c.scenario.n = d.scenario.n;
        c.scenario.n_pool = d.scenario.n_pool;
      }
    } catch (const InvalidArgument& e) {
      if (std::string(e.what()).starts_with("config.")) throw;
      field_error("scenario", e.what());
    }
  }
  auto set_int = [&](const char* key, int& target) {
    if (doc.contains(key)) target = get_field<int>(doc, key);
  };
  auto set_u64 = [&](const char* key, std::uint64_t& target) {
    if (doc.contains(key)) {
      if (!doc.at(key).is_number_integer() || doc.at(key).get<std::int64_t>() < 0) {
        field_error(key, "expected a nonnegative integer");
      }
      target = doc.at(key).get<std::uint64_t>();
    }
  };
  auto set_double = [&](const char* key, double& target) {
    if (doc.contains(key)) target = get_field<double>(doc, key);
  };
  set_int("n", c.scenario.n);
  set_int("n_pool", c.scenario.n_pool);
  set_int("n_test", c.scenario.n_test);
  set_int("n_init", c.scenario.n_init);
  set_double("noise_sd", c.scenario.noise_sd);
  set_u64("seed", c.scenario.seed);
  set_u64("test_seed", c.scenario.test_seed);
  set_int("replications", c.replications);
  set_int("threads", c.threads);
  set_int("refit_interval", c.scenario.refit_interval);
  set_int("restart_interval", c.scenario.restart_interval);
  set_int("fit_restarts", c.scenario.fit_restarts);
  set_int("min_fit_points", c.scenario.min_fit_points);
  if (doc.contains("noise_adjusted")) c.scenario.noise_adjusted = get_field<bool>(doc, "noise_adjusted");
  if (doc.contains("output_dir")) c.output_dir = get_field<std::string>(doc, "output_dir");
  if (doc.contains("propensity")) {
    try {
      c.scenario.propensity_mode = sim::parse_propensity_mode(get_field<std::string>(doc, "propensity"));
    } catch (const InvalidArgument& e) {
      if (std::string(e.what()).starts_with("config.")) throw;
      field_error("propensity", e.what());
    }
  }
  if (doc.contains("ucb")) {
    const json& u = doc.at("ucb");
    if (!u.is_object()) field_error("ucb", "expected an object");
    for (const auto& [key, _] : u.items()) {
      if (key != "c") field_error("ucb." + key, "unknown key");
    }
    if (u.contains("c")) {
      if (!u.at("c").is_number()) field_error("ucb.c", "expected a number");
      c.scenario.ucb_c = u.at("c").get<double>();
    }
  }
  double alpha = 0.1;
  set_double("truncation_alpha", alpha);
  if (doc.contains("methods")) {
    c.methods.clear();
    for (const auto& name : string_list(doc.at("methods"), "methods")) {
      try {
        c.methods.push_back(sim::parse_method(name));
      } catch (const InvalidArgument& e) {
        field_error("methods", e.what());
      }
    }
  }
  if (doc.contains("estimands")) {
    c.estimands.clear();
    for (const auto& name : string_list(doc.at("estimands"), "estimands")) {
      try {
        c.estimands.push_back(WeightSpec::parse(name, alpha));
      } catch (const InvalidArgument& e) {
        field_error("estimands", e.what());
      }
    }
  }
  c.validate();
  return c;
}

RunConfig run_config_from_json(const json& doc) {
  sim::Scenario s = sim::Scenario::S2A;
  if (doc.is_object()) {
    const json& d = (doc.contains("config") && doc.contains("config_hash")) ? doc.at("config") : doc;
    if (d.is_object() && d.contains("scenario") && d.at("scenario").is_string()) {
      try {
        s = sim::parse_scenario(d.at("scenario").get<std::string>());
      } catch (const InvalidArgument& e) {
        field_error("scenario", e.what());
      }
    }
  }
  return run_config_from_json(doc, default_run_config(s));
}

json to_json(const RunConfig& c) {
  json methods = json::array();
  for (const auto m : c.methods) methods.push_back(sim::to_string(m));
  json estimands = json::array();
  for (const auto& e : c.estimands) estimands.push_back(e.name());
  const auto& s = c.scenario;
  return json{{"scenario", sim::to_string(s.scenario)},
              {"methods", methods},
              {"estimands", estimands},
              {"n", s.n},
              {"n_pool", s.n_pool},
              {"n_test", s.n_test},
              {"n_init", s.n_init},
              {"noise_sd", s.noise_sd},
              {"seed", s.seed},
              {"test_seed", s.test_seed},
              {"replications", c.replications},
              {"threads", c.threads},
              {"refit_interval", s.refit_interval},
              {"restart_interval", s.restart_interval},
              {"fit_restarts", s.fit_restarts},
              {"min_fit_points", s.min_fit_points},
              {"propensity", sim::to_string(s.propensity_mode)},
              {"noise_adjusted", s.noise_adjusted},
              {"ucb", {{"c", s.ucb_c}}},
              {"output_dir", c.output_dir.string()}};
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  j.erase("threads");
  return hex64(fnv1a64(j.dump()));
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<CellResult> run_simulation(const RunConfig& config) {
  config.validate();
  const auto seeds = config.seeds();
  std::vector<WeightSpec> estimands = config.estimands;
  // The cumulative-ITE objective has no estimand; run each method once.
  if (config.scenario.scenario == sim::Scenario::S3) estimands.resize(1);
  std::vector<CellResult> cells;
  for (const auto& estimand : estimands) {
    for (const auto method : config.methods) {
      sim::ScenarioConfig sc = config.scenario;
      sc.method = method;
      sc.weight = estimand;
      const auto start = std::chrono::steady_clock::now();
      CellResult cell;
      cell.method = method;
      cell.estimand = estimand;
      cell.results = sim::run_replications(sc, seeds, config.threads);
      cell.metrics = sim::aggregate(cell.results);
      cell.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

void write_outputs(const RunConfig& config, const std::vector<CellResult>& cells) {
  std::filesystem::create_directories(config.output_dir);
  const auto scenario = sim::to_string(config.scenario.scenario);

  {
    auto out = open_output(config.output_dir / kReplicationsFile);
    out << "seed,scenario,method,estimand,tau_hat,tau,bias,cumulative_ite,n_treated,fallback_fits,"
           "prior_fallback_steps,excluded\n";
    for (const auto& cell : cells) {
      for (const auto& r : cell.results) {
        out << r.seed << ',' << scenario << ',' << sim::to_string(r.method) << ',' << r.estimand << ','
            << format_double(r.excluded ? kNaN : r.tau_hat) << ',' << format_double(r.tau) << ','
            << format_double(r.excluded ? kNaN : r.error()) << ','
            << format_double(r.excluded ? kNaN : r.cumulative_ite) << ',' << r.n_treated << ','
            << r.fallback_fits << ',' << r.prior_fallback_steps << ',' << (r.excluded ? 1 : 0) << '\n';
      }
    }
  }
  {
    auto out = open_output(config.output_dir / kSelectionsFile);
    out << "seed,method,estimand,step,unit_index,arm\n";
    for (const auto& cell : cells) {
      for (const auto& r : cell.results) {
        for (std::size_t k = 0; k < r.selected.size(); ++k) {
          out << r.seed << ',' << sim::to_string(r.method) << ',' << r.estimand << ',' << (k + 1) << ','
              << r.selected[k] << ',' << arm_label(r.arms[k]) << '\n';
        }
      }
    }
  }
  {
    auto out = open_output(config.output_dir / kAggregateFile);
    out << "scenario,estimand,method,replications,excluded,bias_x1e3,rmse_x1e3,ite_min,ite_q1,ite_median,"
           "ite_q3,ite_max\n";
    for (const auto& cell : cells) {
      const auto& m = cell.metrics;
      const std::string estimand = cell.results.empty() ? cell.estimand.name() : cell.results.front().estimand;
      out << scenario << ',' << estimand << ',' << sim::to_string(cell.method) << ',' << m.replications << ','
          << m.excluded << ',' << format_double(m.bias_x1e3) << ',' << format_double(m.rmse_x1e3);
      if (m.cumulative_ite) {
        const auto& q = *m.cumulative_ite;
        for (double v : {q.min, q.q1, q.median, q.q3, q.max}) out << ',' << format_double(v);
      } else {
        out << ",NA,NA,NA,NA,NA";
      }
      out << '\n';
    }
  }
  {
    json manifest;
    manifest["config"] = to_json(config);
    manifest["config_hash"] = config_hash(config);
    manifest["seeds"] = config.seeds();
    std::size_t excluded = 0;
    json cell_list = json::array();
    for (const auto& cell : cells) {
      json failures = json::array();
      for (const auto& r : cell.results) {
        if (r.excluded) failures.push_back({{"seed", r.seed}, {"message", r.failure}});
      }
      excluded += cell.metrics.excluded;
      cell_list.push_back({{"method", sim::to_string(cell.method)},
                           {"estimand", cell.results.empty() ? cell.estimand.name() : cell.results.front().estimand},
                           {"excluded", cell.metrics.excluded},
                           {"failures", failures},
                           {"wall_seconds", cell.wall_seconds}});
    }
    manifest["cells"] = cell_list;
    manifest["excluded"] = excluded;
    manifest["files"] = {kReplicationsFile, kSelectionsFile, kAggregateFile};
    auto out = open_output(config.output_dir / kManifestFile);
    out << manifest.dump(2) << '\n';
  }
}

std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const auto c_scen = t.column("scenario", path);
  const auto c_est = t.column("estimand", path);
  const auto c_meth = t.column("method", path);
  const auto c_reps = t.column("replications", path);
  const auto c_excl = t.column("excluded", path);
  const auto c_bias = t.column("bias_x1e3", path);
  const auto c_rmse = t.column("rmse_x1e3", path);
  const std::array<std::size_t, 5> c_q{t.column("ite_min", path), t.column("ite_q1", path),
                                       t.column("ite_median", path), t.column("ite_q3", path),
                                       t.column("ite_max", path)};
  std::vector<AggregateRow> rows;
  for (const auto& f : t.rows) {
    AggregateRow r;
    r.scenario = f[c_scen];
    r.estimand = f[c_est];
    r.method = f[c_meth];
    r.replications = static_cast<std::size_t>(std::stoull(f[c_reps]));
    r.excluded = static_cast<std::size_t>(std::stoull(f[c_excl]));
    r.bias_x1e3 = parse_double(f[c_bias]);
    r.rmse_x1e3 = parse_double(f[c_rmse]);
    if (f[c_q[2]] != "NA") {
      r.cumulative_ite = sim::Quantiles{parse_double(f[c_q[0]]), parse_double(f[c_q[1]]),
                                        parse_double(f[c_q[2]]), parse_double(f[c_q[3]]),
                                        parse_double(f[c_q[4]])};
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::string display_method(const std::string& m) {
  static const std::map<std::string, std::string> names = {
      {"random", "Random"}, {"alc", "ALC"},         {"ace", "ACE"},        {"alc_e", "ALC-E"},
      {"ace_e", "ACE-E"},   {"greedy", "Greedy"},   {"ace_ucb", "ACE-UCB"}};
  const auto it = names.find(m);
  return it == names.end() ? m : it->second;
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  return s;
}

std::string cell_text(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

struct Column {
  std::string scenario;
  std::string estimand;
  std::string title;
};

void render_table(std::ostringstream& os, const std::string& title, const std::vector<std::string>& methods,
                  const std::vector<Column>& columns,
                  const std::map<std::string, const AggregateRow*>& index, std::vector<std::string>& missing) {
  os << title << '\n';
  os << std::left << std::setw(10) << "";
  for (const auto& c : columns) os << std::right << std::setw(22) << c.title;
  os << '\n' << std::left << std::setw(10) << "";
  for (std::size_t k = 0; k < columns.size(); ++k) os << std::right << std::setw(11) << "Bias" << std::setw(11) << "RMSE";
  os << '\n';
  for (const auto& m : methods) {
    os << std::left << std::setw(10) << display_method(m);
    for (const auto& c : columns) {
      const std::string key = c.scenario + "/" + c.estimand + "/" + m;
      const auto it = index.find(key);
      if (it == index.end()) {
        missing.push_back(key);
        os << std::right << std::setw(11) << "-" << std::setw(11) << "-";
      } else {
        os << std::right << std::setw(11) << cell_text(it->second->bias_x1e3) << std::setw(11)
           << cell_text(it->second->rmse_x1e3);
      }
    }
    os << '\n';
  }
  os << '\n';
}

}  // namespace

Report build_report(const std::vector<AggregateRow>& rows) {
  Report report;
  std::map<std::string, const AggregateRow*> index;
  std::set<std::string> s2b_estimands;
  bool has_s1_s2a = false;
  for (const auto& r : rows) {
    const std::string key = r.scenario + "/" + r.estimand + "/" + r.method;
    if (!index.emplace(key, &r).second) throw InvalidArgument("duplicate result cell " + key);
    if (r.scenario == "s1" || r.scenario == "s2a") has_s1_s2a = true;
    if (r.scenario == "s2b") s2b_estimands.insert(r.estimand);
    if (r.scenario == "s3") report.s3_rows.push_back(r);
  }
  std::ostringstream os;
  if (has_s1_s2a) {
    render_table(os, "Scenarios 1 and 2A, ATE (x1e3)", {"random", "alc", "ace"},
                 {{"s1", "ate", "Scenario 1"}, {"s2a", "ate", "Scenario 2A"}}, index, report.missing);
  }
  if (!s2b_estimands.empty()) {
    std::vector<Column> cols;
    for (const char* e : {"ate", "atte", "ato"}) cols.push_back({"s2b", e, upper(e)});
    for (const auto& e : s2b_estimands) {
      if (e != "ate" && e != "atte" && e != "ato") cols.push_back({"s2b", e, e});
    }
    render_table(os, "Scenario 2B (x1e3)", {"random", "alc_e", "ace_e"}, cols, index, report.missing);
  }
  if (!report.s3_rows.empty()) {
    os << "Scenario 3, cumulative ITE\n";
    os << std::left << std::setw(10) << "" << std::right;
    for (const char* h : {"min", "q1", "median", "q3", "max"}) os << std::setw(11) << h;
    os << '\n';
    for (const char* m : {"random", "greedy", "ace_ucb"}) {
      const auto it = index.find(std::string("s3/ite/") + m);
      os << std::left << std::setw(10) << display_method(m) << std::right;
      if (it == index.end() || !it->second->cumulative_ite) {
        report.missing.push_back(std::string("s3/ite/") + m);
        for (int k = 0; k < 5; ++k) os << std::setw(11) << "-";
      } else {
        const auto& q = *it->second->cumulative_ite;
        for (double v : {q.min, q.q1, q.median, q.q3, q.max}) {
          std::ostringstream cell;
          cell << std::fixed << std::setprecision(4) << v;
          os << std::setw(11) << cell.str();
        }
      }
      os << '\n';
    }
    os << '\n';
  }
  if (!report.missing.empty()) {
    os << "missing cells:";
    for (const auto& m : report.missing) os << ' ' << m;
    os << '\n';
  }
  report.text = os.str();
  return report;
}

Report run_report(const std::filesystem::path& dir, std::ostream& out) {
  const std::string expected =
      "expected " + std::string(kAggregateFile) + " (with " + kReplicationsFile + " and " + kManifestFile +
      ") written by `ace simulate`, in " + dir.string() + " or its immediate subdirectories";
  if (!std::filesystem::is_directory(dir)) throw InvalidArgument(dir.string() + " is not a directory; " + expected);
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(dir / kAggregateFile)) files.push_back(dir / kAggregateFile);
  std::vector<std::filesystem::path> subdirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory()) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& s : subdirs) {
    if (std::filesystem::exists(s / kAggregateFile)) files.push_back(s / kAggregateFile);
  }
  if (files.empty()) throw InvalidArgument("no results found: " + expected);

  std::vector<AggregateRow> rows;
  for (const auto& f : files) {
    auto part = read_aggregate_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  Report report = build_report(rows);
  out << report.text;
  {
    auto f = open_output(dir / kTablesFile);
    f << report.text;
  }
  if (!report.s3_rows.empty()) {
    auto f = open_output(dir / kBoxplotFile);
    f << "method,min,q1,median,q3,max\n";
    for (const auto& r : report.s3_rows) {
      if (!r.cumulative_ite) continue;
      const auto& q = *r.cumulative_ite;
      f << r.method << ',' << format_double(q.min) << ',' << format_double(q.q1) << ','
        << format_double(q.median) << ',' << format_double(q.q3) << ',' << format_double(q.max) << '\n';
    }
  }
  return report;
}

json hyperparams_to_json(const gp::GPHyperParams& p) {
  return json{{"lengthscales", std::vector<double>(p.kernel.lengthscales.data(),
                                                   p.kernel.lengthscales.data() + p.kernel.lengthscales.size())},
              {"signal_variance", p.kernel.signal_variance},
              {"noise_variance", p.noise_variance},
              {"constant_mean", p.constant_mean}};
}

gp::GPHyperParams hyperparams_from_json(const json& j) {
  gp::GPHyperParams p;
  const auto ls = j.at("lengthscales").get<std::vector<double>>();
  p.kernel.lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  p.kernel.signal_variance = j.at("signal_variance").get<double>();
  p.noise_variance = j.at("noise_variance").get<double>();
  p.constant_mean = j.at("constant_mean").get<double>();
  p.validate();
  return p;
}

json to_json(const SessionState& s) {
  json obs = json::array();
  for (std::size_t k = 0; k < s.observations.size(); ++k) {
    const auto& o = s.observations[k];
    json item{{"x", std::vector<double>(o.x.data(), o.x.data() + o.x.size())},
              {"a", to_index(o.arm)},
              {"y", o.y}};
    if (s.unit_indices[k] >= 0) item["unit_index"] = s.unit_indices[k];
    obs.push_back(std::move(item));
  }
  json j{{"scenario", sim::to_string(s.scenario)},
         {"estimand", s.estimand.name()},
         {"propensity_mode", sim::to_string(s.propensity_mode)},
         {"pool", s.pool_path},
         {"test_set", s.test_path},
         {"seed", s.seed},
         {"fit_restarts", s.fit_restarts},
         {"noise_adjusted", s.noise_adjusted},
         {"ucb", {{"c", s.ucb.c}, {"t", s.ucb.t}}},
         {"step", s.step},
         {"dim", s.dim},
         {"observations", obs}};
  j["propensity"] = s.known_propensity ? propensity::to_json(*s.known_propensity) : json(nullptr);
  if (s.hyperparameters) {
    j["hyperparameters"] = json::array({hyperparams_to_json((*s.hyperparameters)[0]),
                                        hyperparams_to_json((*s.hyperparameters)[1])});
  } else {
    j["hyperparameters"] = nullptr;
  }
  return j;
}

SessionState session_from_json(const json& j) {
  try {
    SessionState s;
    s.scenario = sim::parse_scenario(j.at("scenario").get<std::string>());
    s.estimand = WeightSpec::parse(j.at("estimand").get<std::string>());
    s.propensity_mode = sim::parse_propensity_mode(j.at("propensity_mode").get<std::string>());
    s.pool_path = j.at("pool").get<std::string>();
    s.test_path = j.at("test_set").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.fit_restarts = j.at("fit_restarts").get<int>();
    s.noise_adjusted = j.at("noise_adjusted").get<bool>();
    s.ucb.c = j.at("ucb").at("c").get<double>();
    s.ucb.t = j.at("ucb").at("t").get<std::int64_t>();
    s.step = j.at("step").get<std::int64_t>();
    s.dim = j.at("dim").get<Eigen::Index>();
    if (!j.at("propensity").is_null()) s.known_propensity = propensity::propensity_from_json(j.at("propensity"));
    for (const auto& o : j.at("observations")) {
      const auto x = o.at("x").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(x.size()) != s.dim) throw InvalidArgument("observation dimension mismatch");
      Observation obs{Eigen::Map<const Eigen::RowVectorXd>(x.data(), s.dim), arm_from_int(o.at("a").get<int>()),
                      o.at("y").get<double>()};
      s.observations.push_back(std::move(obs));
      s.unit_indices.push_back(o.contains("unit_index") ? o.at("unit_index").get<Eigen::Index>() : -1);
    }
    if (!j.at("hyperparameters").is_null()) {
      const auto& h = j.at("hyperparameters");
      if (!h.is_array() || h.size() != 2) throw InvalidArgument("hyperparameters must hold two entries");
      s.hyperparameters = std::array<gp::GPHyperParams, 2>{hyperparams_from_json(h[0]), hyperparams_from_json(h[1])};
    }
    if (s.propensity_mode == sim::PropensityMode::Known && !s.known_propensity &&
        (s.scenario == sim::Scenario::S2B || s.scenario == sim::Scenario::S3 || s.estimand.uses_propensity())) {
      throw InvalidArgument("known propensity mode needs a propensity model");
    }
    return s;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("session: ") + e.what());
  }
}

SessionState load_session(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open session " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("session " + path.string() + ": " + e.what());
  }
  return session_from_json(j);
}

void save_session(const SessionState& state, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    auto out = open_output(tmp);
    out << to_json(state).dump(2) << '\n';
    if (!out) throw InvalidArgument("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& session, const std::string& p) {
  const std::filesystem::path q(p);
  return q.is_absolute() ? q : session.parent_path() / q;
}

bool uses_pool(sim::Scenario s) { return s != sim::Scenario::S1; }

}  // namespace

AdvisorySession::AdvisorySession(SessionState state, std::filesystem::path session_path)
    : state_(std::move(state)), path_(std::move(session_path)) {
  test_ = load_test_set_csv(resolve(path_, state_.test_path));
  if (test_.dim() != state_.dim) throw InvalidArgument("test set dimension differs from session dimension");
  if (uses_pool(state_.scenario)) {
    if (state_.pool_path.empty()) throw InvalidArgument("scenario " + sim::to_string(state_.scenario) + " needs a pool");
    pool_points_ = read_points_csv(resolve(path_, state_.pool_path));
    if (pool_points_->cols() != state_.dim) throw InvalidArgument("pool dimension differs from session dimension");
  }
}

TwoArmModel AdvisorySession::model() const {
  const auto params = state_.hyperparameters.value_or(
      std::array<gp::GPHyperParams, 2>{gp::default_hyperparams(state_.dim), gp::default_hyperparams(state_.dim)});
  return TwoArmModel(state_.observations, state_.dim, params);
}

propensity::PropensityModel AdvisorySession::propensity_model() const {
  if (state_.propensity_mode == sim::PropensityMode::Known) {
    if (!state_.known_propensity) throw StateError("no propensity model in the session");
    return *state_.known_propensity;
  }
  return propensity::fit_or_marginal(state_.observations, state_.dim);
}

acq::Pool AdvisorySession::pool() const {
  acq::Pool p(*pool_points_);
  for (const auto idx : state_.unit_indices) {
    if (idx >= 0) p.mark_selected(idx);
  }
  return p;
}

json AdvisorySession::recommend(const json& request) const {
  const TwoArmModel m = model();
  json response;
  std::vector<std::string> warnings;
  for (Arm a : {Arm::Control, Arm::Treated}) {
    if (!m.fitted(a)) warnings.push_back("arm " + arm_label(a) + " has no observations; its prior is used");
  }
  auto target_weights = [&] {
    if (!state_.estimand.uses_propensity()) return Eigen::VectorXd::Ones(test_.size()).eval();
    return weights(state_.estimand, propensity_model().evaluate_all(test_.points));
  };
  const acq::Options options{state_.noise_adjusted};
  // Pool rows are strided in column-major storage.
  auto point_json = [](const auto& row) {
    std::vector<double> out(static_cast<std::size_t>(row.size()));
    for (Eigen::Index j = 0; j < row.size(); ++j) out[static_cast<std::size_t>(j)] = row(j);
    return out;
  };
  switch (state_.scenario) {
    case sim::Scenario::S1: {
      if (!request.contains("x")) throw InvalidArgument("recommend in s1 needs \"x\"");
      const auto xv = request.at("x").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(xv.size()) != state_.dim) throw InvalidArgument("x has the wrong dimension");
      const Eigen::RowVectorXd x = Eigen::Map<const Eigen::RowVectorXd>(xv.data(), state_.dim);
      response["arm"] = to_index(acq::select_scenario1(m, x, test_, target_weights(), options));
      break;
    }
    case sim::Scenario::S2A: {
      const acq::Pool p = pool();
      const auto pick = acq::select_scenario2a(m, p, test_, target_weights(), options);
      response["unit_index"] = pick.unit_index;
      response["arm"] = to_index(pick.arm);
      response["x"] = point_json(p.row(pick.unit_index));
      break;
    }
    case sim::Scenario::S2B: {
      const acq::Pool p = pool();
      const auto idx = acq::select_scenario2b(m, p, propensity_model(), state_.estimand, test_, options);
      response["unit_index"] = idx;
      response["x"] = point_json(p.row(idx));
      break;
    }
    case sim::Scenario::S3: {
      const acq::Pool p = pool();
      acq::UcbConfig ucb = state_.ucb;
      const auto idx = acq::select_scenario3(m, p, propensity_model(), ucb);
      response["unit_index"] = idx;
      response["x"] = point_json(p.row(idx));
      break;
    }
  }
  response["step"] = state_.step;
  if (!warnings.empty()) response["warning"] = warnings;
  return response;
}

json AdvisorySession::observe(const json& request) {
  for (const char* key : {"x", "a", "y"}) {
    if (!request.contains(key)) throw InvalidArgument(std::string("observe needs \"") + key + "\"");
  }
  const auto xv = request.at("x").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(xv.size()) != state_.dim) throw InvalidArgument("x has the wrong dimension");
  const Eigen::RowVectorXd x = Eigen::Map<const Eigen::RowVectorXd>(xv.data(), state_.dim);
  if (!request.at("a").is_number_integer()) throw InvalidArgument("a must be 0 or 1");
  const Arm arm = arm_from_int(request.at("a").get<int>());
  if (!request.at("y").is_number()) throw InvalidArgument("y must be a number");
  const double y = request.at("y").get<double>();
  if (!std::isfinite(y) || !x.allFinite()) throw InvalidArgument("x and y must be finite");

  Eigen::Index unit = -1;
  if (uses_pool(state_.scenario)) {
    const acq::Pool p = pool();
    if (request.contains("unit_index")) {
      unit = request.at("unit_index").get<Eigen::Index>();
      if (unit < 0 || unit >= p.size()) throw InvalidArgument("unit_index out of range");
      if (!p.available(unit)) throw InvalidArgument("unit_index already observed");
      if ((p.row(unit) - x).cwiseAbs().maxCoeff() > 1e-12) throw InvalidArgument("x differs from the pool row");
    } else {
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p.available(i) && (p.row(i) - x).cwiseAbs().maxCoeff() <= 1e-12) {
          unit = i;
          break;
        }
      }
    }
  }

  SessionState next = state_;
  next.observations.push_back(Observation{x, arm, y});
  next.unit_indices.push_back(unit);
  gp::FitConfig fc;
  fc.restarts = next.fit_restarts;
  fc.min_points = sim::ScenarioConfig{}.min_fit_points;
  fc.seed = next.seed + static_cast<std::uint64_t>(2 * next.step);
  const auto* warm = next.hyperparameters ? &*next.hyperparameters : nullptr;
  next.hyperparameters = TwoArmModel::fit(next.observations, next.dim, fc, warm).params();
  next.step += 1;
  if (next.scenario == sim::Scenario::S3) next.ucb.t += 1;
  save_session(next, path_);
  state_ = std::move(next);
  json ack{{"ok", true}, {"step", state_.step}, {"n", state_.observations.size()}};
  if (unit >= 0) ack["unit_index"] = unit;
  return ack;
}

json AdvisorySession::handle(const json& request) {
  try {
    if (!request.is_object() || !request.contains("op") || !request.at("op").is_string()) {
      throw InvalidArgument("request must be an object with a string \"op\"");
    }
    const auto op = request.at("op").get<std::string>();
    if (op == "recommend") return recommend(request);
    if (op == "observe") return observe(request);
    throw InvalidArgument("unknown op '" + op + "' (expected recommend, observe)");
  } catch (const std::exception& e) {
    return json{{"error", e.what()}};
  }
}

json AdvisorySession::handle_line(const std::string& line) {
  json request;
  try {
    request = json::parse(line);
  } catch (const json::exception& e) {
    return json{{"error", std::string("malformed JSON: ") + e.what()}};
  }
  return handle(request);
}

void run_advise_loop(AdvisorySession& session, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out << session.handle_line(line).dump() << '\n' << std::flush;
  }
}

json truth_report(const TruthOptions& o) {
  const auto mc = sim::monte_carlo_truth(o.estimand, o.points, o.seed);
  const TestSet test = o.test_file ? load_test_set_csv(*o.test_file) : sim::make_test_set(o.n_test, 2, o.test_seed);
  const auto plug = sim::weighted_ite_mean(o.estimand, test.points);
  const double diff = mc.tau - plug.tau;
  return json{{"estimand", o.estimand.name()},
              {"tau_mc", mc.tau},
              {"se_mc", mc.std_error},
              {"n_points", mc.n_points},
              {"tau_test", plug.tau},
              {"se_test", plug.std_error},
              {"n_test", plug.n_points},
              {"z_mc", diff / mc.std_error},
              {"z", diff / std::hypot(mc.std_error, plug.std_error)}};
}

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("ACE_SEED")) {
    std::uint64_t v = 0;
    const std::string s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw InvalidArgument("ACE_SEED: expected a nonnegative integer, got '" + s + "'");
    }
    return v;
  }
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Active learning designs for causal effect estimation"};
  app.require_subcommand(1);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run simulation replications and write result files");
  std::string config_path, scenario_flag, methods_flag, estimands_flag, propensity_flag, out_dir;
  std::optional<int> reps, n, n_pool, n_test, n_init, threads, refit_interval, restart_interval, restarts,
      min_fit_points;
  std::optional<std::uint64_t> seed, test_seed;
  std::optional<double> noise_sd, ucb_c, alpha;
  bool noise_adjusted = false;
  simulate->add_option("--config", config_path, "JSON config file (a manifest also works)");
  simulate->add_option("--scenario", scenario_flag, "s1, s2a, s2b or s3");
  simulate->add_option("--method", methods_flag, "Comma-separated methods");
  simulate->add_option("--estimand", estimands_flag, "Comma-separated estimands");
  simulate->add_option("--reps", reps, "Replications");
  simulate->add_option("--seed", seed, "Base seed");
  simulate->add_option("--test-seed", test_seed, "Test-set seed");
  simulate->add_option("--n", n, "Budget");
  simulate->add_option("--n-pool", n_pool, "Pool size");
  simulate->add_option("--n-test", n_test, "Test-set size");
  simulate->add_option("--n-init", n_init, "Initial units per arm");
  simulate->add_option("--noise-sd", noise_sd, "Observation noise sd");
  simulate->add_option("--threads", threads, "Parallel replications");
  simulate->add_option("--refit-interval", refit_interval, "Steps between hyperparameter refits");
  simulate->add_option("--restart-interval", restart_interval, "Refits between full multi-start fits");
  simulate->add_option("--min-fit-points", min_fit_points, "Observations an arm needs before its hyperparameters are fitted");
  simulate->add_option("--restarts", restarts, "Likelihood restarts per fit");
  simulate->add_option("--propensity", propensity_flag, "known or estimated");
  simulate->add_option("--ucb-c", ucb_c, "UCB constant c");
  simulate->add_option("--alpha", alpha, "Truncation alpha for the truncated estimand");
  simulate->add_flag("--noise-adjusted", noise_adjusted, "Add the noise variance to the reduction denominator");
  simulate->add_option("--out", out_dir, "Output directory");

  // report
  auto* report = app.add_subcommand("report", "Render tables from simulate outputs");
  std::string report_dir;
  report->add_option("dir", report_dir, "Results directory")->required();

  // advise
  auto* advise = app.add_subcommand("advise", "Turn-based advisory session over stdin/stdout");
  std::string session_path, a_scenario = "s2a", a_estimand = "ate", a_pool, a_test, a_prop = "known", a_model;
  bool init = false;
  std::optional<std::uint64_t> a_seed;
  int a_restarts = 10;
  double a_ucb = 0.01;
  int a_dim = 2;
  bool a_noise_adjusted = false;
  advise->add_option("--session", session_path, "Session state file")->required();
  advise->add_flag("--init", init, "Create the session file and exit");
  advise->add_option("--scenario", a_scenario, "s1, s2a, s2b or s3 (with --init)");
  advise->add_option("--estimand", a_estimand, "Estimand (with --init)");
  advise->add_option("--pool", a_pool, "Pool CSV (with --init)");
  advise->add_option("--test", a_test, "Test-set CSV (with --init)");
  advise->add_option("--propensity", a_prop, "known or estimated (with --init)");
  advise->add_option("--propensity-model", a_model,
                     "Known propensity as JSON, or 'simulation' for the simulation truth (with --init)");
  advise->add_option("--seed", a_seed, "Seed for likelihood restarts (with --init)");
  advise->add_option("--restarts", a_restarts, "Likelihood restarts (with --init)");
  advise->add_option("--ucb-c", a_ucb, "UCB constant c (with --init)");
  advise->add_option("--dim", a_dim, "Covariate dimension (with --init)");
  advise->add_flag("--noise-adjusted", a_noise_adjusted, "Noise-adjusted reductions (with --init)");

  // truth
  auto* truth = app.add_subcommand("truth", "Monte-Carlo ground truth for an estimand");
  std::string t_estimand = "ate", t_test;
  std::size_t t_points = 1'000'000;
  std::optional<std::uint64_t> t_seed;
  int t_n_test = 1000;
  std::uint64_t t_test_seed = 20230601;
  double t_alpha = 0.1;
  truth->add_option("--estimand", t_estimand, "ate, atte, ato, matching, truncated[:alpha]");
  truth->add_option("--points", t_points, "Monte-Carlo points");
  truth->add_option("--seed", t_seed, "Monte-Carlo seed");
  truth->add_option("--n-test", t_n_test, "Generated test-set size");
  truth->add_option("--test-seed", t_test_seed, "Generated test-set seed");
  truth->add_option("--test", t_test, "Test-set CSV instead of a generated one");
  truth->add_option("--alpha", t_alpha, "Default truncation alpha");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  // Usage-level validation (bad flags, bad config) exits 2; everything after
  // that is a runtime failure.
  try {
    if (simulate->parsed()) {
      RunConfig config;
      std::uint64_t base_seed = default_seed();
      if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw InvalidArgument("--config: cannot open " + config_path);
        json doc;
        try {
          f >> doc;
        } catch (const json::exception& e) {
          throw InvalidArgument("--config: " + std::string(e.what()));
        }
        const bool has_seed = doc.is_object() &&
                              ((doc.contains("config") && doc.at("config").is_object() && doc.at("config").contains("seed")) ||
                               doc.contains("seed"));
        config = run_config_from_json(doc);
        if (!has_seed) config.scenario.seed = base_seed;
      } else {
        sim::Scenario s = sim::Scenario::S2A;
        if (!scenario_flag.empty()) {
          try {
            s = sim::parse_scenario(scenario_flag);
          } catch (const InvalidArgument& e) {
            throw InvalidArgument(std::string("--scenario: ") + e.what());
          }
        }
        config = default_run_config(s);
        config.scenario.seed = base_seed;
      }
      if (!scenario_flag.empty()) {
        try {
          const auto s = sim::parse_scenario(scenario_flag);
          if (s != config.scenario.scenario) {
            const RunConfig d = default_run_config(s);
            config.scenario.scenario = s;
            config.methods = d.methods;
          }
        } catch (const InvalidArgument& e) {
          throw InvalidArgument(std::string("--scenario: ") + e.what());
        }
      }
      if (!methods_flag.empty()) {
        config.methods.clear();
        for (const auto& m : split_list(methods_flag)) {
          try {
            config.methods.push_back(sim::parse_method(m));
          } catch (const InvalidArgument& e) {
            throw InvalidArgument(std::string("--method: ") + e.what());
          }
        }
      }
      if (!estimands_flag.empty()) {
        config.estimands.clear();
        for (const auto& e : split_list(estimands_flag)) {
          try {
            config.estimands.push_back(WeightSpec::parse(e, alpha.value_or(0.1)));
          } catch (const InvalidArgument& ex) {
            throw InvalidArgument(std::string("--estimand: ") + ex.what());
          }
        }
      }
      if (!propensity_flag.empty()) {
        try {
          config.scenario.propensity_mode = sim::parse_propensity_mode(propensity_flag);
        } catch (const InvalidArgument& e) {
          throw InvalidArgument(std::string("--propensity: ") + e.what());
        }
      }
      if (reps) config.replications = *reps;
      if (seed) config.scenario.seed = *seed;
      if (test_seed) config.scenario.test_seed = *test_seed;
      if (n) config.scenario.n = *n;
      if (n_pool) config.scenario.n_pool = *n_pool;
      if (n_test) config.scenario.n_test = *n_test;
      if (n_init) config.scenario.n_init = *n_init;
      if (noise_sd) config.scenario.noise_sd = *noise_sd;
      if (threads) config.threads = *threads;
      if (refit_interval) config.scenario.refit_interval = *refit_interval;
      if (restart_interval) config.scenario.restart_interval = *restart_interval;
      if (restarts) config.scenario.fit_restarts = *restarts;
      if (min_fit_points) config.scenario.min_fit_points = *min_fit_points;
      if (ucb_c) config.scenario.ucb_c = *ucb_c;
      if (noise_adjusted) config.scenario.noise_adjusted = true;
      if (!out_dir.empty()) config.output_dir = out_dir;
      config.validate();

      try {
        const auto cells = run_simulation(config);
        write_outputs(config, cells);
        std::size_t excluded = 0;
        for (const auto& c : cells) {
          excluded += c.metrics.excluded;
          out << sim::to_string(config.scenario.scenario) << ' '
              << (c.results.empty() ? c.estimand.name() : c.results.front().estimand) << ' '
              << sim::to_string(c.method) << ": bias_x1e3=" << format_double(c.metrics.bias_x1e3)
              << " rmse_x1e3=" << format_double(c.metrics.rmse_x1e3);
          if (c.metrics.cumulative_ite) out << " median_ite=" << format_double(c.metrics.cumulative_ite->median);
          out << " excluded=" << c.metrics.excluded << '\n';
        }
        out << "wrote " << config.output_dir.string() << " (excluded " << excluded << ")\n";
      } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
      }
      return kOk;
    }

    if (report->parsed()) {
      try {
        run_report(report_dir, out);
      } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
      }
      return kOk;
    }

    if (advise->parsed()) {
      if (init) {
        SessionState s;
        try {
          s.scenario = sim::parse_scenario(a_scenario);
        } catch (const InvalidArgument& e) {
          throw InvalidArgument(std::string("--scenario: ") + e.what());
        }
        try {
          s.estimand = WeightSpec::parse(a_estimand);
        } catch (const InvalidArgument& e) {
          throw InvalidArgument(std::string("--estimand: ") + e.what());
        }
        try {
          s.propensity_mode = sim::parse_propensity_mode(a_prop);
        } catch (const InvalidArgument& e) {
          throw InvalidArgument(std::string("--propensity: ") + e.what());
        }
        if (a_test.empty()) throw InvalidArgument("--test: required with --init");
        if (s.scenario != sim::Scenario::S1 && a_pool.empty()) throw InvalidArgument("--pool: required for this scenario");
        if (a_dim < 1) throw InvalidArgument("--dim: must be >= 1");
        if (a_restarts < 1) throw InvalidArgument("--restarts: must be >= 1");
        if (!(a_ucb >= 0.0)) throw InvalidArgument("--ucb-c: must be nonnegative");
        s.pool_path = a_pool;
        s.test_path = a_test;
        s.seed = a_seed.value_or(default_seed());
        s.fit_restarts = a_restarts;
        s.ucb.c = a_ucb;
        s.dim = a_dim;
        s.noise_adjusted = a_noise_adjusted;
        if (a_model == "simulation") {
          s.known_propensity = propensity::PropensityModel::simulation_truth();
        } else if (!a_model.empty()) {
          std::ifstream f(a_model);
          if (!f) throw InvalidArgument("--propensity-model: cannot open " + a_model);
          try {
            json j;
            f >> j;
            s.known_propensity = propensity::propensity_from_json(j);
          } catch (const json::exception& e) {
            throw InvalidArgument("--propensity-model: " + std::string(e.what()));
          }
        }
        // Round-trip through JSON so init applies the same checks as load.
        s = session_from_json(to_json(s));
        try {
          AdvisorySession probe(s, session_path);
          save_session(s, session_path);
        } catch (const std::exception& e) {
          err << "error: " << e.what() << '\n';
          return kRuntimeFailure;
        }
        out << json{{"ok", true}, {"session", session_path}}.dump() << '\n';
        return kOk;
      }
      try {
        AdvisorySession session(load_session(session_path), session_path);
        run_advise_loop(session, in, out);
      } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
      }
      return kOk;
    }

    if (truth->parsed()) {
      TruthOptions o;
      try {
        o.estimand = WeightSpec::parse(t_estimand, t_alpha);
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(std::string("--estimand: ") + e.what());
      }
      if (t_points < 2) throw InvalidArgument("--points: must be >= 2");
      o.points = t_points;
      o.seed = t_seed.value_or(default_seed());
      o.n_test = t_n_test;
      o.test_seed = t_test_seed;
      if (!t_test.empty()) o.test_file = t_test;
      try {
        out << truth_report(o).dump(2) << '\n';
      } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
      }
      return kOk;
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace ace::cli
