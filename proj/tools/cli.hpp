#pragma once

// `ace` command-line front end: fit | impute | simulate | power | power-curve.
// Commands are plain functions over streams so tests can drive them directly.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ace/ace.hpp"

#ifndef ACE_VERSION
#define ACE_VERSION "0.0.0"
#endif

namespace ace::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kEstimation = 2, kNotConverged = 3 };

// ---------------------------------------------------------------------------
// Run manifest

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  bool seed_from_entropy = false;
  std::string started_at = utc_now();
  std::string finished_at;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const {
    nlohmann::json digests = nlohmann::json::array();
    for (const auto& p : inputs) digests.push_back({{"path", p}, {"fnv1a64", hex64(fnv1a64(read_file(p)))}});
    return {{"command", command},
            {"config", config},
            {"config_hash", hex64(fnv1a64(config.dump()))},
            {"seed", seed ? nlohmann::json(*seed) : nlohmann::json(nullptr)},
            {"seed_source", seed_from_entropy ? "entropy" : "user"},
            {"version", ACE_VERSION},
            {"started_at", started_at},
            {"finished_at", finished_at.empty() ? utc_now() : finished_at},
            {"inputs", digests},
            {"outputs", outputs}};
  }
};

// ---------------------------------------------------------------------------
// Shared helpers

struct IoContext {
  std::ostream& out;
  std::ostream& err;
};

inline void write_text(const std::string& path, const std::string& text, IoContext& io) {
  if (path.empty() || path == "-") {
    io.out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
  f << text;
}

inline void write_manifest(RunManifest& m, const std::string& explicit_path, const std::string& primary_out) {
  std::string path = explicit_path;
  if (path.empty() && !primary_out.empty() && primary_out != "-") path = primary_out + ".manifest.json";
  if (path.empty()) return;
  m.finished_at = utc_now();
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::IoError, "cannot write manifest '" + path + "'");
  f << m.to_json().dump(2) << '\n';
}

struct SchemaArgs {
  std::string path;
  std::string id, time, outcome, w, delta, delimiter;
  std::vector<std::string> za, zb, v;
  std::vector<CLI::Option*> opts;

  void add(CLI::App* app) {
    app->add_option("--schema", path, "JSON schema sidecar {id,time,outcome,w,delta,za,zb,v,delimiter}");
    opts = {app->add_option("--id", id, "subject id column"),
            app->add_option("--time", time, "visit time column"),
            app->add_option("--outcome", outcome, "outcome column"),
            app->add_option("--w", w, "observed time W = min(X, C) column"),
            app->add_option("--delta", delta, "event indicator column"),
            app->add_option("--delimiter", delimiter, "CSV delimiter (single character)"),
            app->add_option("--za", za, "fixed-effect covariate columns")->delimiter(','),
            app->add_option("--zb", zb, "random-effect covariate columns ('1' = intercept)")->delimiter(','),
            app->add_option("--v", v, "imputation-model covariate columns")->delimiter(',')};
  }

  CsvSchema resolve() const {
    CsvSchema s = path.empty() ? CsvSchema{} : CsvSchema::load(path);
    auto set = [](const CLI::Option* o) { return o->count() > 0; };
    if (set(opts[0])) s.id = id;
    if (set(opts[1])) s.time = time;
    if (set(opts[2])) s.outcome = outcome;
    if (set(opts[3])) s.w = w;
    if (set(opts[4])) s.delta = delta;
    if (set(opts[5])) {
      if (delimiter.size() != 1) throw Error(ErrorKind::InvalidArgument, "--delimiter must be one character");
      s.delimiter = delimiter[0];
    }
    if (set(opts[6])) s.za = za;
    if (set(opts[7])) s.zb = zb;
    if (set(opts[8])) s.v = v;
    return s;
  }
};

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string data;
  SchemaArgs schema;
  std::string method = "ace";
  std::string out;
  std::string imputed_out;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  int m_imputations = 15;
  unsigned threads = 0;
  std::vector<std::string> outcomes;
};

inline FitReport fit_one(const std::string& method, const LongitudinalDataset& ds, std::uint64_t seed, int m_imp,
                         unsigned threads, std::optional<ImputedDataset>* imputed_sink) {
  if (method == "oracle") {
    if (ds.events() != ds.size()) throw Error(ErrorKind::InvalidArgument, "oracle requires uncensored X (found " +
                                                                            std::to_string(ds.size() - ds.events()) +
                                                                            " censored subjects)");
    const Eigen::VectorXd w = ds.w();
    return make_report("oracle", ds, fit_reml(ds, std::span<const double>(w.data(), static_cast<std::size_t>(w.size()))));
  }
  if (method == "cca") return make_report("cca", ds, complete_case(ds));

  const CoxFit cox = fit_cox(ds.w(), ds.delta(), ds.v());
  if (method == "ace") {
    ImputedDataset imp = conditional_mean_impute(ds, cox);
    FitReport r = make_report("ace", ds, fit_ace(imp));
    r.warnings.insert(r.warnings.end(), imp.warnings.begin(), imp.warnings.end());
    if (imputed_sink) *imputed_sink = std::move(imp);
    return r;
  }
  if (method == "mcmi") {
    const auto draws = draw_multiple_imputations(ds, cox, m_imp, seed);
    std::vector<RemlFit> fits(draws.size());
    parallel_for(draws.size(), threads, [&](std::size_t k) { fits[k] = fit_reml(draws[k]); });
    FitReport r = make_report("mcmi", ds, pool_rubin(std::span<const RemlFit>(fits)), fits);
    r.extra["seed"] = seed;
    if (imputed_sink) *imputed_sink = conditional_mean_impute(ds, cox);
    return r;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown method '" + method + "' (expected ace|mcmi|cca|oracle)");
}

inline int cmd_fit(FitArgs& a, IoContext& io) {
  RunManifest man;
  man.command = "fit";
  man.seed = a.seed ? *a.seed : entropy_seed();
  man.seed_from_entropy = !a.seed;
  man.inputs.push_back(a.data);
  if (!a.schema.path.empty()) man.inputs.push_back(a.schema.path);

  CsvSchema schema = a.schema.resolve();
  const CsvTable table = read_csv_table(a.data, schema.delimiter);
  std::vector<std::string> outcomes = a.outcomes.empty() ? std::vector<std::string>{schema.outcome} : a.outcomes;
  man.config = {{"method", a.method}, {"schema", schema.to_json()}, {"outcomes", outcomes},
                {"m_imputations", a.m_imputations}, {"seed", *man.seed}};

  std::vector<FitReport> reports;
  std::optional<ImputedDataset> imputed;
  for (const auto& name : outcomes) {
    schema.outcome = name;
    const LongitudinalDataset ds = dataset_from_table(table, schema);
    FitReport r = fit_one(a.method, ds, *man.seed, a.m_imputations, a.threads,
                          (!a.imputed_out.empty() && !imputed) ? &imputed : nullptr);
    r.outcome = name;
    reports.push_back(std::move(r));
  }

  nlohmann::json j;
  if (a.outcomes.empty()) {
    j = to_json(reports.front());
  } else {
    j = {{"method", a.method}, {"fits", nlohmann::json::array()}};
    for (const auto& r : reports) j["fits"].push_back(to_json(r));
    const auto ranks = rank_outcomes(reports);
    j["ranking"] = to_json(ranks);
    if (!a.out.empty() && a.out != "-") {
      io.out << "rank,outcome,alpha,se,scaled_slope\n";
      for (const auto& r : ranks)
        io.out << r.rank << ',' << r.outcome << ',' << detail::format_double(r.alpha) << ','
               << detail::format_double(r.se) << ',' << detail::format_double(r.scaled_slope) << '\n';
    }
  }
  write_text(a.out, j.dump(2) + "\n", io);
  man.outputs.push_back(a.out.empty() ? "-" : a.out);

  if (!a.imputed_out.empty()) {
    if (!imputed) throw Error(ErrorKind::InvalidArgument, "--imputed-out requires method ace or mcmi");
    std::ostringstream os;
    write_imputed_csv(os, table, schema, *imputed);
    write_text(a.imputed_out, os.str(), io);
    man.outputs.push_back(a.imputed_out);
  }
  write_manifest(man, a.manifest, a.out);

  bool all_converged = true;
  for (const auto& r : reports) {
    for (const auto& w : r.warnings) io.err << "warning: " << r.outcome << ": " << w << '\n';
    all_converged = all_converged && r.converged;
  }
  return all_converged ? kOk : kNotConverged;
}

// ---------------------------------------------------------------------------
// impute

struct ImputeArgs {
  std::string data;
  SchemaArgs schema;
  std::string out;
  std::string cox_out;
  std::string manifest;
  std::optional<std::uint64_t> seed;
};

inline int cmd_impute(ImputeArgs& a, IoContext& io) {
  RunManifest man;
  man.command = "impute";
  man.seed = a.seed ? *a.seed : entropy_seed();
  man.seed_from_entropy = !a.seed;
  man.inputs.push_back(a.data);
  if (!a.schema.path.empty()) man.inputs.push_back(a.schema.path);
  const CsvSchema schema = a.schema.resolve();
  man.config = {{"schema", schema.to_json()}};

  const CsvTable table = read_csv_table(a.data, schema.delimiter);
  const LongitudinalDataset ds = dataset_from_table(table, schema);
  const CoxFit cox = fit_cox(ds.w(), ds.delta(), ds.v());
  const ImputedDataset imp = conditional_mean_impute(ds, cox);
  std::ostringstream os;
  write_imputed_csv(os, table, schema, imp);
  write_text(a.out, os.str(), io);
  man.outputs.push_back(a.out.empty() ? "-" : a.out);
  if (!a.cox_out.empty()) {
    write_text(a.cox_out, cox.to_json().dump(2) + "\n", io);
    man.outputs.push_back(a.cox_out);
  }
  for (const auto& w : imp.warnings) io.err << "warning: " << w << '\n';
  write_manifest(man, a.manifest, a.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config;
  std::string out;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::optional<unsigned> threads;
};

/// Config is one SimConfig object, an array of them, or {"studies": [...]}.
inline std::vector<SimConfig> parse_sim_configs(const nlohmann::json& j, const SimulateArgs& a, RunManifest& man) {
  std::vector<nlohmann::json> items;
  if (j.is_array()) {
    for (const auto& e : j) items.push_back(e);
  } else if (j.contains("studies")) {
    for (const auto& e : j.at("studies")) items.push_back(e);
  } else {
    items.push_back(j);
  }
  if (items.empty()) throw Error(ErrorKind::InvalidArgument, "simulation config lists no studies");
  std::optional<std::uint64_t> seed = a.seed;
  if (!seed && items.front().contains("seed")) seed = items.front().at("seed").get<std::uint64_t>();
  man.seed_from_entropy = !seed;
  man.seed = seed ? *seed : entropy_seed();
  std::vector<SimConfig> out;
  for (auto& item : items) {
    SimConfig c = SimConfig::from_json(item);
    if (a.seed || !item.contains("seed")) c.seed = *man.seed;
    if (a.reps) c.reps = *a.reps;
    c.threads = a.threads.value_or(item.value("threads", 0u));
    c.validate();
    out.push_back(c);
  }
  return out;
}

inline int cmd_simulate(SimulateArgs& a, IoContext& io) {
  RunManifest man;
  man.command = "simulate";
  man.inputs.push_back(a.config);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(a.config));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::IoError, "malformed simulation config '" + a.config + "': " + e.what());
  }
  const auto configs = parse_sim_configs(j, a, man);
  man.config = nlohmann::json::array();
  for (const auto& c : configs) man.config.push_back(c.to_json());

  std::vector<SimReport> reports;
  for (const auto& c : configs) reports.push_back(run_study(c));
  std::ostringstream os;
  write_report_csv(os, reports);
  write_text(a.out, os.str(), io);
  man.outputs.push_back(a.out.empty() ? "-" : a.out);
  write_manifest(man, a.manifest, a.out);

  std::size_t failures = 0;
  for (const auto& r : reports) {
    for (const auto& f : r.failures) io.err << "replicate failure: " << to_string(r.scenario) << " " << f << '\n';
    failures += r.failures.size();
  }
  return failures == 0 ? kOk : kNotConverged;
}

// ---------------------------------------------------------------------------
// power, power-curve

struct PowerArgs {
  PowerSpec spec;
  std::string out;
  std::string manifest;
  std::optional<std::uint64_t> seed;
};

inline nlohmann::json power_json(const PowerSpec& s) {
  const auto n = required_n(s);
  return {{"n_per_group", n},
          {"d", s.effect_size()},
          {"quantiles", {{"power", norm_quantile(s.power)}, {"kappa", norm_quantile(s.kappa)}}},
          {"achieved_power", power_at(s, n)},
          {"inputs",
           {{"slope", s.alpha_p}, {"effect", s.effect_frac}, {"kappa", s.kappa}, {"power", s.power}, {"var_delta", s.var_delta}}}};
}

inline int cmd_power(PowerArgs& a, IoContext& io) {
  RunManifest man;
  man.command = "power";
  man.seed = a.seed ? *a.seed : entropy_seed();
  man.seed_from_entropy = !a.seed;
  const nlohmann::json j = power_json(a.spec);
  man.config = j.at("inputs");
  write_text(a.out, j.dump(2) + "\n", io);
  man.outputs.push_back(a.out.empty() ? "-" : a.out);
  write_manifest(man, a.manifest, a.out);
  return kOk;
}

struct PowerCurveArgs {
  PowerSpec spec{-0.757};
  std::vector<double> effects{0.10, 0.15, 0.20};
  std::int64_t n_min = 0;
  std::int64_t n_max = 4000;
  std::int64_t step = 10;
  std::string out;
  std::string manifest;
  std::optional<std::uint64_t> seed;
};

inline void write_power_curve(std::ostream& os, const PowerCurveArgs& a) {
  if (a.step < 1) throw Error(ErrorKind::InvalidArgument, "--step must be >= 1");
  const std::int64_t start = a.n_min > 0 ? a.n_min : a.step;
  if (a.n_max < start) throw Error(ErrorKind::InvalidArgument, "--n-max must be >= the first n");
  os << "effect,n,power\n";
  for (double e : a.effects) {
    PowerSpec s = a.spec;
    s.effect_frac = e;
    s.validate();
    for (std::int64_t n = start; n <= a.n_max; n += a.step)
      os << format_metric(e) << ',' << n << ',' << format_metric(power_at(s, n)) << '\n';
  }
}

inline int cmd_power_curve(PowerCurveArgs& a, IoContext& io) {
  RunManifest man;
  man.command = "power-curve";
  man.seed = a.seed ? *a.seed : entropy_seed();
  man.seed_from_entropy = !a.seed;
  man.config = {{"slope", a.spec.alpha_p}, {"effects", a.effects}, {"kappa", a.spec.kappa},
                {"var_delta", a.spec.var_delta}, {"n_min", a.n_min}, {"n_max", a.n_max}, {"step", a.step}};
  std::ostringstream os;
  write_power_curve(os, a);
  write_text(a.out, os.str(), io);
  man.outputs.push_back(a.out.empty() ? "-" : a.out);
  write_manifest(man, a.manifest, a.out);
  return kOk;
}

// ---------------------------------------------------------------------------
// dispatch

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  IoContext io{out, err};
  CLI::App app{"ACE imputation for linear mixed models with a right-censored covariate", "ace"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ACE_VERSION));

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Impute censored X and fit the outcome model");
  c_fit->add_option("--data", fit.data, "long-format CSV input")->required()->check(CLI::ExistingFile);
  fit.schema.add(c_fit);
  c_fit->add_option("--method", fit.method, "estimator")
      ->check(CLI::IsMember({"ace", "mcmi", "cca", "oracle"}))
      ->capture_default_str();
  c_fit->add_option("--out", fit.out, "JSON report path (default stdout)");
  c_fit->add_option("--imputed-out", fit.imputed_out, "write the input CSV with xhat, imputed_flag");
  c_fit->add_option("--seed", fit.seed, "RNG seed (MCMI draws); entropy if absent");
  c_fit->add_option("--m-imputations", fit.m_imputations, "MCMI draws")->capture_default_str()->check(CLI::Range(2, 100000));
  c_fit->add_option("--threads", fit.threads, "worker threads (0 = all cores)")->capture_default_str();
  c_fit->add_option("--outcomes", fit.outcomes, "ranking mode: outcome columns to fit and rank by |alpha|/SE")
      ->delimiter(',');
  c_fit->add_option("--manifest", fit.manifest, "run manifest path (default <out>.manifest.json)");

  ImputeArgs imp;
  auto* c_imp = app.add_subcommand("impute", "Cox conditional-mean imputation of censored X");
  c_imp->add_option("--data", imp.data, "long-format CSV input")->required()->check(CLI::ExistingFile);
  imp.schema.add(c_imp);
  c_imp->add_option("--out", imp.out, "imputed CSV path (default stdout)");
  c_imp->add_option("--cox-out", imp.cox_out, "JSON dump of the Cox fit");
  c_imp->add_option("--seed", imp.seed, "recorded in the manifest");
  c_imp->add_option("--manifest", imp.manifest, "run manifest path (default <out>.manifest.json)");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Monte-Carlo study of Oracle, MCMI and ACE");
  c_sim->add_option("--config", sim.config, "simulation config JSON")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--out", sim.out, "report CSV path (default stdout)");
  c_sim->add_option("--seed", sim.seed, "master seed (overrides the config)");
  c_sim->add_option("--reps", sim.reps, "replicates (overrides the config)");
  c_sim->add_option("--threads", sim.threads, "worker threads (0 = all cores)");
  c_sim->add_option("--manifest", sim.manifest, "run manifest path (default <out>.manifest.json)");

  PowerArgs pw;
  auto* c_pw = app.add_subcommand("power", "Per-group sample size for a slope comparison");
  c_pw->add_option("--slope", pw.spec.alpha_p, "placebo slope alpha_p")->required();
  c_pw->add_option("--effect", pw.spec.effect_frac, "treatment effect fraction")->capture_default_str();
  c_pw->add_option("--kappa", pw.spec.kappa, "one-sided type-I error")->capture_default_str();
  c_pw->add_option("--power", pw.spec.power, "target power")->capture_default_str();
  c_pw->add_option("--var-delta", pw.spec.var_delta, "Var(delta)")->capture_default_str();
  c_pw->add_option("--out", pw.out, "JSON output path (default stdout)");
  c_pw->add_option("--seed", pw.seed, "recorded in the manifest");
  c_pw->add_option("--manifest", pw.manifest, "run manifest path (default <out>.manifest.json)");

  PowerCurveArgs pc;
  auto* c_pc = app.add_subcommand("power-curve", "Power against per-group n for several effect sizes (CSV)");
  c_pc->add_option("--slope", pc.spec.alpha_p, "placebo slope alpha_p")->capture_default_str();
  c_pc->add_option("--effects", pc.effects, "effect fractions")->delimiter(',')->capture_default_str();
  c_pc->add_option("--kappa", pc.spec.kappa, "one-sided type-I error")->capture_default_str();
  c_pc->add_option("--var-delta", pc.spec.var_delta, "Var(delta)")->capture_default_str();
  c_pc->add_option("--n-min", pc.n_min, "first n (default: step)");
  c_pc->add_option("--n-max", pc.n_max, "last n")->capture_default_str();
  c_pc->add_option("--step", pc.step, "n increment")->capture_default_str();
  c_pc->add_option("--out", pc.out, "CSV path (default stdout)");
  c_pc->add_option("--seed", pc.seed, "recorded in the manifest");
  c_pc->add_option("--manifest", pc.manifest, "run manifest path (default <out>.manifest.json)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*c_fit) return cmd_fit(fit, io);
    if (*c_imp) return cmd_impute(imp, io);
    if (*c_sim) return cmd_simulate(sim, io);
    if (*c_pw) return cmd_power(pw, io);
    if (*c_pc) return cmd_power_curve(pc, io);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return (e.kind() == ErrorKind::IoError || e.kind() == ErrorKind::MissingColumn ||
            e.kind() == ErrorKind::NonNumericCell || e.kind() == ErrorKind::InconsistentWDelta ||
            e.kind() == ErrorKind::EmptyDataset || e.kind() == ErrorKind::InvalidDataset)
               ? kUsage
               : kEstimation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kEstimation;
  }
  return kUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace ace::cli
