// rldp: simulate reinforced chains, compute exact count laws and rate
// functions, build lower-bound plans and run the acceptance suite.
//
// Settings come from built-in defaults, then the --config JSON document, then
// command-line flags (highest precedence).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rldp/rldp.hpp"

namespace fs = std::filesystem;
using rldp::Json;

namespace {

enum ExitCode : int { kOk = 0, kFailed = 1, kConfig = 2, kPrecondition = 3, kResource = 4, kNumerical = 5 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every key a config document may carry, per subcommand.
const std::set<std::string> kGlobalKeys{"kernel", "seed", "out", "threads"};
const std::map<std::string, std::set<std::string>> kCommandKeys{
    {"simulate", {"n", "seeds", "x0"}},
    {"exact", {"n", "x0", "target", "radius", "n_list"}},
    {"rate", {"m", "mesh", "T", "J", "tol", "max_iters", "dv"}},
    {"lowerbound",
     {"m", "T", "solver_T", "solver_J", "eps", "eps0", "kappa1", "kappa2", "kappa3", "n_list", "seeds", "x0",
      "estimate_n0", "n0_samples"}},
    {"validate", {"scale", "criteria"}},
};

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

class Settings {
 public:
  Settings(std::string command, Json doc) : command_(std::move(command)), doc_(std::move(doc)) {}

  void check_keys() const {
    const auto& allowed = kCommandKeys.at(command_);
    for (const auto& [key, value] : doc_.items()) {
      if (kGlobalKeys.count(key) || allowed.count(key)) continue;
      bool elsewhere = false;
      for (const auto& [cmd, keys] : kCommandKeys) elsewhere = elsewhere || keys.count(key);
      if (!elsewhere) throw ConfigError("unknown config key \"" + key + "\"");
    }
  }

  bool has(const std::string& k) const { return doc_.contains(k) && !doc_.at(k).is_null(); }
  void set(const std::string& k, Json v) { doc_[k] = std::move(v); }
  const Json& raw(const std::string& k) const { return doc_.at(k); }

  double number(const std::string& k, double fallback) const {
    if (!has(k)) return fallback;
    if (!doc_.at(k).is_number()) throw ConfigError("\"" + k + "\" must be a number");
    return doc_.at(k).get<double>();
  }
  double positive(const std::string& k, double fallback) const {
    const double v = number(k, fallback);
    if (!(v > 0.0)) throw ConfigError("\"" + k + "\" must be > 0");
    return v;
  }
  std::size_t count(const std::string& k, std::size_t fallback, std::size_t min = 1) const {
    if (!has(k)) return fallback;
    const Json& v = doc_.at(k);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min))
      throw ConfigError("\"" + k + "\" must be an integer >= " + std::to_string(min));
    return v.get<std::size_t>();
  }
  bool flag(const std::string& k, bool fallback) const {
    if (!has(k)) return fallback;
    if (!doc_.at(k).is_boolean()) throw ConfigError("\"" + k + "\" must be true or false");
    return doc_.at(k).get<bool>();
  }
  std::vector<std::size_t> counts(const std::string& k, std::vector<std::size_t> fallback) const {
    if (!has(k)) return fallback;
    const Json& v = doc_.at(k);
    if (!v.is_array() || v.empty()) throw ConfigError("\"" + k + "\" must be a nonempty array of integers");
    std::vector<std::size_t> out;
    for (const auto& x : v) {
      if (!x.is_number_integer() || x.get<long long>() < 1) throw ConfigError("\"" + k + "\" entries must be integers >= 1");
      out.push_back(x.get<std::size_t>());
    }
    return out;
  }
  rldp::ProbVec probvec(const std::string& k, std::size_t d) const {
    if (!has(k)) throw ConfigError("missing \"" + k + "\"");
    try {
      rldp::ProbVec p = rldp::probvec_from_json(doc_.at(k));
      if (p.size() != d) throw ConfigError("\"" + k + "\" must have " + std::to_string(d) + " entries");
      return p;
    } catch (const rldp::PreconditionError& e) {
      throw ConfigError("\"" + k + "\": " + e.what());
    }
  }
  rldp::Kernel kernel() const {
    if (!has("kernel")) throw ConfigError("missing \"kernel\"");
    try {
      return rldp::kernel_from_spec(doc_.at("kernel"));
    } catch (const rldp::PreconditionError& e) {
      throw ConfigError(std::string("kernel: ") + e.what());
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("kernel: ") + e.what());
    }
  }
  std::size_t state(const std::string& k, std::size_t d) const {
    const std::size_t x = count(k, 1);
    if (x > d) throw ConfigError("\"" + k + "\" must be a state in 1.." + std::to_string(d));
    return x - 1;
  }

  std::uint64_t seed() const {
    if (!has("seed")) return 1;
    if (!doc_.at("seed").is_number_unsigned()) throw ConfigError("\"seed\" must be a nonnegative integer");
    return doc_.at("seed").get<std::uint64_t>();
  }
  unsigned threads() const { return static_cast<unsigned>(count("threads", rldp::default_threads())); }
  fs::path out() const {
    if (!has("out")) return fs::path(".");
    if (!doc_.at("out").is_string()) throw ConfigError("\"out\" must be a string");
    return fs::path(doc_.at("out").get<std::string>());
  }

  // Hash of everything that can change results; out and threads cannot.
  std::string hash() const {
    Json h = doc_;
    h.erase("out");
    h.erase("threads");
    h["command"] = command_;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(h.dump())));
    return buf;
  }
  std::string header() const { return "# config_hash=" + hash() + " seed=" + std::to_string(seed()) + "\n"; }

 private:
  std::string command_;
  Json doc_;
};

class Output {
 public:
  explicit Output(const Settings& s) : dir_(s.out()), header_(s.header()) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }
  // Opens a file in the output directory with the provenance header written.
  std::ofstream csv(const std::string& name) {
    std::ofstream os(dir_ / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
    os << header_;
    written_.push_back((dir_ / name).string());
    return os;
  }
  void json(const std::string& name, const Json& doc) {
    std::ofstream os(dir_ / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
    os << doc.dump(1) << '\n';
    written_.push_back((dir_ / name).string());
  }
  const std::vector<std::string>& written() const { return written_; }

 private:
  fs::path dir_;
  std::string header_;
  std::vector<std::string> written_;
};

int cmd_simulate(const Settings& s) {
  const rldp::Kernel a = s.kernel();
  const std::size_t n = s.count("n", 100);
  const std::size_t seeds = s.count("seeds", 1);
  const std::size_t x0 = s.state("x0", a.dim());
  const std::uint64_t seed = s.seed();
  Output out(s);
  std::vector<rldp::ChainPath> paths(seeds);
  rldp::parallel_for(seeds, s.threads(), [&](std::size_t k) { paths[k] = rldp::simulate_chain(a, x0, n, seed, k); });
  for (std::size_t k = 0; k < seeds; ++k) {
    auto os = out.csv("path_" + std::to_string(k) + ".csv");
    rldp::write_path_csv(os, paths[k]);
  }
  auto os = out.csv("summary.csv");
  auto head = std::vector<std::string>{"stream", "n"};
  for (auto& h : rldp::csv::indexed_header("L_", a.dim())) head.push_back(h);
  rldp::csv::write_row(os, head);
  for (std::size_t k = 0; k < seeds; ++k) {
    std::vector<std::string> row{std::to_string(k), std::to_string(n)};
    rldp::csv::append(row, paths[k].empirical(n));
    rldp::csv::write_row(os, row);
  }
  return kOk;
}

int cmd_exact(const Settings& s) {
  const rldp::Kernel a = s.kernel();
  const std::size_t n = s.count("n", 20);
  const std::size_t x0 = s.state("x0", a.dim());
  const auto opts = rldp::exact_law_options_from_env();
  std::optional<rldp::ProbVec> target;
  double radius = 0.0;
  std::vector<std::size_t> n_list;
  if (s.has("target")) {
    target = s.probvec("target", a.dim());
    radius = s.positive("radius", 0.05);
    n_list = s.counts("n_list", {n});
  }
  Output out(s);
  {
    const rldp::CountLaw law = rldp::exact_law(a, x0, n, opts);
    auto os = out.csv("law.csv");
    rldp::write_law_csv(os, law);
  }
  if (target) {
    const auto rows = rldp::finite_n_rate(a, x0, *target, radius, n_list, opts);
    auto os = out.csv("rate_trend.csv");
    rldp::write_rate_trend_csv(os, rows);
  }
  return kOk;
}

int cmd_rate(const Settings& s) {
  const rldp::Kernel a = s.kernel();
  const double horizon = s.positive("T", 14.0);
  const std::size_t intervals = s.count("J", 280);
  rldp::SolverOptions opts;
  opts.tol = s.positive("tol", opts.tol);
  opts.max_iters = s.count("max_iters", opts.max_iters, 0);
  const bool dv = s.flag("dv", false);
  std::vector<rldp::ProbVec> points;
  if (s.has("m") == s.has("mesh")) throw ConfigError("give exactly one of \"m\" and \"mesh\"");
  if (s.has("m")) {
    points.push_back(s.probvec("m", a.dim()));
  } else {
    const Json& mesh = s.raw("mesh");
    if (!mesh.is_object() || !mesh.contains("step") || !mesh.at("step").is_number())
      throw ConfigError("\"mesh\" must be an object with a numeric \"step\"");
    const double step = mesh.at("step").get<double>();
    if (!(step > 0.0 && step <= 1.0)) throw ConfigError("mesh.step must lie in (0, 1]");
    bool interior_only = false;
    if (mesh.contains("interior_only")) {
      if (!mesh.at("interior_only").is_boolean()) throw ConfigError("mesh.interior_only must be true or false");
      interior_only = mesh.at("interior_only").get<bool>();
    }
    for (auto& p : rldp::simplex_mesh(a.dim(), step))
      if (!interior_only || p.min() > 0.0) points.push_back(p);
    if (points.empty()) throw ConfigError("mesh has no points");
  }
  Output out(s);
  const auto rows = rldp::rate_profile(a, points, horizon, intervals, opts, dv, s.threads());
  auto os = out.csv("rate.csv");
  rldp::write_rate_csv(os, rows, dv);
  return kOk;
}

int cmd_lowerbound(const Settings& s) {
  const rldp::Kernel a = s.kernel();
  const rldp::ProbVec m = s.probvec("m", a.dim());
  const double horizon = s.positive("T", 3.0);
  const double solver_horizon = s.positive("solver_T", std::max(8.0, horizon));
  const std::size_t solver_intervals = s.count("solver_J", 160);
  rldp::PlanOptions po;
  po.eps = s.positive("eps", po.eps);
  po.kappa1 = s.number("kappa1", -1.0);
  po.kappa2 = s.number("kappa2", -1.0);
  po.kappa3 = s.number("kappa3", -1.0);
  if (s.has("kappa1") && !(po.kappa1 >= 0.0 && po.kappa1 <= 1.0)) throw ConfigError("\"kappa1\" must lie in [0, 1]");
  if (s.has("kappa2") && !(po.kappa2 > 0.0)) throw ConfigError("\"kappa2\" must be > 0");
  if (s.has("kappa3") && !(po.kappa3 > 0.0)) throw ConfigError("\"kappa3\" must be > 0");
  const double eps0 = s.positive("eps0", 0.3);
  const auto n_list = s.counts("n_list", {1000, 2000, 4000, 8000});
  const std::size_t seeds = s.count("seeds", 50);
  const std::size_t x0 = s.state("x0", a.dim());
  const bool want_n0 = s.flag("estimate_n0", false);
  const std::size_t n0_samples = s.count("n0_samples", 2000);
  if (solver_horizon < horizon) throw ConfigError("\"solver_T\" must be >= \"T\"");

  Output out(s);
  const rldp::RateBracket solved = rldp::solve_rate(m, a, solver_horizon, solver_intervals);
  const rldp::ReversedPlan plan = rldp::build_plan(solved.m, a, horizon, po, solved);
  const rldp::CostCheckReport rep = rldp::cost_convergence_check(plan, a, x0, n_list, seeds, eps0, s.seed(), s.threads());

  Json doc = rldp::plan_to_json(plan);
  doc["provenance"] = {{"config_hash", s.hash()}, {"seed", s.seed()}};
  doc["solver"] = {{"T", solver_horizon},
                   {"J", solver_intervals},
                   {"lower", solved.lower},
                   {"upper", solved.upper},
                   {"iterations", solved.iterations},
                   {"converged", solved.converged}};
  doc["eps0"] = eps0;
  if (want_n0) {
    const auto est = rldp::estimate_n0(plan.q, x0, eps0, po.eps, n0_samples, s.seed());
    doc["iid_phase"] = {{"n0", est.n0}, {"tail_probability", est.probability}, {"samples", n0_samples}};
  }
  out.json("plan.json", doc);
  {
    auto os = out.csv("construction.csv");
    rldp::write_construction_csv(os, rep.runs);
  }
  {
    auto os = out.csv("cost_check.csv");
    rldp::csv::write_row(os, {"n", "seeds", "mean_cost", "stderr_cost", "quadrature", "allowance", "limit", "gap",
                              "An_frequency", "mean_terminal_error", "max_identity_gap"});
    for (const auto& r : rep.rows)
      rldp::csv::write_row(os, {std::to_string(r.n), std::to_string(r.seeds), rldp::csv::num(r.mean_cost),
                                rldp::csv::num(r.stderr_cost), rldp::csv::num(r.quadrature),
                                rldp::csv::num(r.allowance), rldp::csv::num(r.limit), rldp::csv::num(r.gap),
                                rldp::csv::num(r.An_frequency), rldp::csv::num(r.mean_terminal_error),
                                rldp::csv::num(r.max_identity_gap)});
  }
  return kOk;
}

int cmd_validate(const Settings& s) {
  rldp::ValidationOptions vo;
  vo.scale = s.number("scale", 1.0);
  if (!(vo.scale > 0.0 && vo.scale <= 1.0)) throw ConfigError("\"scale\" must lie in (0, 1]");
  vo.seed = s.seed();
  vo.threads = s.threads();
  for (std::size_t id : s.counts("criteria", {})) {
    if (id > 12) throw ConfigError("\"criteria\" entries must lie in 1..12");
    vo.only.push_back(static_cast<int>(id));
  }
  Output out(s);
  const auto rows = rldp::run_validation(vo);
  bool all = true;
  for (const auto& r : rows) {
    all = all && r.passed;
    std::printf("[%s] %2d %-32s value=%-12.6g threshold=%-10.3g %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.id,
                r.name.c_str(), r.value, r.threshold, r.seconds, r.detail.c_str());
  }
  auto os = out.csv("validation.csv");
  rldp::write_validation_csv(os, rows);
  return all ? kOk : kFailed;
}

Json load_config(const std::string& path) {
  if (path.empty()) return Json::object();
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  try {
    Json doc = Json::parse(is);
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    return doc;
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

// Parses a JSON literal given on the command line.
Json parse_flag_json(const std::string& name, const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error&) {
    throw ConfigError("--" + name + " is not valid JSON");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforced chains: simulation, exact laws, rate functions and lower-bound constructions"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> kernel;
  app.add_option("--config", config_path, "JSON config document")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "base seed");
  app.add_option("--threads", threads, "worker threads (default: available parallelism)")->check(CLI::PositiveNumber);
  app.add_option("--kernel", kernel, "kernel spec as JSON, e.g. '{\"rows\":[[0.9,0.1],[0.2,0.8]]}'");

  // Subcommand flags; each one overrides the config key of the same name.
  std::map<std::string, std::optional<std::string>> json_flags;  // parsed as JSON literals
  std::map<std::string, std::optional<double>> num_flags;
  std::map<std::string, std::optional<long long>> int_flags;
  std::map<std::string, bool> bool_flags;
  auto add_num = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_option("--" + key, num_flags[sub->get_name() + "." + key], help);
  };
  auto add_int = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_option("--" + key, int_flags[sub->get_name() + "." + key], help);
  };
  auto add_json = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_option("--" + key, json_flags[sub->get_name() + "." + key], help + " (JSON)");
  };
  auto add_bool = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_flag("--" + key, bool_flags[sub->get_name() + "." + key], help);
  };

  auto* simulate = app.add_subcommand("simulate", "simulate paths of the reinforced chain");
  add_int(simulate, "n", "steps per path");
  add_int(simulate, "seeds", "number of independent paths");
  add_int(simulate, "x0", "initial state (1-based)");

  auto* exact = app.add_subcommand("exact", "exact law of the counts and finite-n rates");
  add_int(exact, "n", "path length");
  add_int(exact, "x0", "initial state (1-based)");
  add_json(exact, "target", "target point for finite-n rates");
  add_num(exact, "radius", "l1 radius of the target ball");
  add_json(exact, "n_list", "path lengths for the rate trend");

  auto* rate = app.add_subcommand("rate", "rate function bracket at a point or on a mesh");
  add_json(rate, "m", "point of the simplex");
  add_json(rate, "mesh", "mesh spec, e.g. '{\"step\":0.1}'");
  add_num(rate, "T", "truncation horizon");
  add_int(rate, "J", "intervals");
  add_num(rate, "tol", "projected-gradient tolerance");
  add_int(rate, "max_iters", "iteration cap");
  add_bool(rate, "dv", "add the Donsker-Varadhan rate column");

  auto* lower = app.add_subcommand("lowerbound", "build a reversed plan and run the controlled construction");
  add_json(lower, "m", "target point");
  add_num(lower, "T", "plan horizon");
  add_num(lower, "solver_T", "solver horizon");
  add_int(lower, "solver_J", "solver intervals");
  add_num(lower, "eps", "tolerance for the mixing step");
  add_num(lower, "eps0", "tolerance of the iid-phase event");
  add_num(lower, "kappa1", "mixing weight");
  add_num(lower, "kappa2", "mollification window");
  add_num(lower, "kappa3", "resampling interval");
  add_json(lower, "n_list", "chain lengths");
  add_int(lower, "seeds", "runs per chain length");
  add_int(lower, "x0", "initial state (1-based)");
  add_bool(lower, "estimate_n0", "estimate n0 for the iid phase");

  auto* validate = app.add_subcommand("validate", "run the acceptance suite");
  add_num(validate, "scale", "sample-count scale in (0, 1]");
  add_json(validate, "criteria", "subset of criteria, e.g. '[1,5]'");

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    Json doc = load_config(config_path);
    if (out_dir) doc["out"] = *out_dir;
    if (seed) doc["seed"] = *seed;
    if (threads) doc["threads"] = *threads;
    if (kernel) doc["kernel"] = parse_flag_json("kernel", *kernel);
    const std::string prefix = command + ".";
    for (auto& [k, v] : json_flags)
      if (v && k.rfind(prefix, 0) == 0) doc[k.substr(prefix.size())] = parse_flag_json(k.substr(prefix.size()), *v);
    for (auto& [k, v] : num_flags)
      if (v && k.rfind(prefix, 0) == 0) doc[k.substr(prefix.size())] = *v;
    for (auto& [k, v] : int_flags)
      if (v && k.rfind(prefix, 0) == 0) doc[k.substr(prefix.size())] = *v;
    for (auto& [k, v] : bool_flags)
      if (v && k.rfind(prefix, 0) == 0) doc[k.substr(prefix.size())] = true;

    const Settings settings(command, std::move(doc));
    settings.check_keys();
    if (command == "simulate") return cmd_simulate(settings);
    if (command == "exact") return cmd_exact(settings);
    if (command == "rate") return cmd_rate(settings);
    if (command == "lowerbound") return cmd_lowerbound(settings);
    return cmd_validate(settings);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const rldp::PreconditionError& e) {
    std::cerr << "precondition violated: " << e.what() << '\n';
    return kPrecondition;
  } catch (const rldp::ResourceLimitError& e) {
    std::cerr << "resource limit: " << e.what() << '\n';
    return kResource;
  } catch (const rldp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
}
