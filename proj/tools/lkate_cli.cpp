// lkate: command-line front end.
//
//   lkate estimate      --data linked.csv --scenario II --estimators o,ps,dr --out run/
//   lkate simulate      --preset table2 --scenario I --reps 200 --seed 7 --out run/
//   lkate bias-surface  --beta -1:3:21 --phi -2:2:5 --out run/
//   lkate pipeline      --data cohort.csv --spec model.txt --out run/
//
// Exit codes: 0 success, 2 bad input, 3 estimation failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lkate/lkate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lkate;

namespace {

struct BadInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

SigmaMode parse_sigma(const std::string& s) {
  if (s == "estimate") return SigmaMode::estimated();
  if (s.rfind("known:", 0) == 0) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str() + 6, &end);
    if (*end == '\0' && v > 0.0) return SigmaMode::fixed(v);
  }
  throw BadInput("--sigma expects known:<value> or estimate, got '" + s + "'");
}

MixtureMode parse_mixture(const std::string& s) {
  if (s == "full") return MixtureMode::full();
  if (s == "reduced") return MixtureMode::reduced();
  if (s.rfind("oracle:", 0) == 0) return MixtureMode::fixed(io::read_oracle_csv(s.substr(7)));
  throw BadInput("--mixture expects full, reduced or oracle:<path>, got '" + s + "'");
}

struct Range {
  double lo = 0, hi = 0;
  Index count = 1;
};

Range parse_range(const std::string& s, const char* flag) {
  Range r;
  char c1 = 0, c2 = 0;
  long count = 0;
  std::istringstream is(s);
  if (!(is >> r.lo >> c1 >> r.hi >> c2 >> count) || c1 != ':' || c2 != ':' || count < 1 || !is.eof()) {
    throw BadInput(std::string(flag) + " expects lo:hi:count, got '" + s + "'");
  }
  r.count = count;
  return r;
}

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw BadInput("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw BadInput("cannot write '" + p.string() + "'");
  return f;
}

void write_manifest(const fs::path& dir, const std::string& command, json config, const std::vector<std::string>& argv,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["argv"] = argv;
  m["config"] = std::move(config);
  m["outputs"] = outputs;
  m["created"] = timestamp();
  auto f = open_out(dir / "manifest.json");
  f << m.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string data;
  std::string scenario = "I";
  std::string estimators = "o,ps,dr";
  std::string sigma = "estimate";
  std::string mixture = "full";
  double level = 0.95;
  bool no_se = false;
  std::string out = ".";
};

int cmd_estimate(const EstimateArgs& a, const std::vector<std::string>& argv) {
  const Scenario sc = parse_scenario(a.scenario);
  const auto ids = split_list(a.estimators);
  if (ids.empty()) throw BadInput("--estimators is empty");
  static const std::vector<std::string> known{"plain", "ig_o", "ig_ps", "naive_A0", "o", "ps", "dr", "ps_A", "dr_A"};
  for (const auto& id : ids) {
    if (std::find(known.begin(), known.end(), id) == known.end()) throw BadInput("unknown estimator '" + id + "'");
  }
  const SigmaMode sigma = parse_sigma(a.sigma);
  const MixtureMode mixture = parse_mixture(a.mixture);
  const LinkedDataset d = io::read_linked_csv(a.data, sc);
  const fs::path out = prepare_out(a.out);

  EstimatorOptions o;
  o.level = a.level;
  const bool with_se = !a.no_se;
  std::vector<EstimateReport> reports;
  int failures = 0;
  auto wants = [&](const char* id) { return std::find(ids.begin(), ids.end(), id) != ids.end(); };
  auto fail = [&](const std::string& id, const std::exception& e) {
    std::cerr << "estimator " << id << " failed: " << e.what() << "\n";
    ++failures;
  };
  auto point = [&](const std::string& id, double v) {
    EstimateReport r;
    r.estimator_id = id;
    r.tau_hat = v;
    r.n_used = d.n();
    reports.push_back(r);
  };

  if (wants("plain")) try { point("plain", tau_plain(d)); } catch (const std::exception& e) { fail("plain", e); }
  if (wants("ig_o")) try { point("ig_o", tau_conventional_ignoring(d, IgnoringKind::outcome, o)); } catch (const std::exception& e) { fail("ig_o", e); }
  if (wants("ig_ps")) try { point("ig_ps", tau_conventional_ignoring(d, IgnoringKind::ps, o)); } catch (const std::exception& e) { fail("ig_ps", e); }
  if (wants("naive_A0")) {
    try {
      const Vector phi = glm::fit_logistic_weighted(d.x, d.e, detail::correct_audit_indicator(d)).coefficients;
      point("naive_A0", tau_audit_correct_only(d, phi, o));
    } catch (const std::exception& e) {
      fail("naive_A0", e);
    }
  }
  std::vector<LambdaSpec> specs;
  for (const auto& s : {LambdaSpec::outcome(), LambdaSpec::ps(), LambdaSpec::dr()})
    if (wants(s.name().c_str())) specs.push_back(s);
  if (!specs.empty()) {
    EmConfig cfg;
    cfg.sigma = sigma;
    cfg.mixture = mixture;
    try {
      const LambdaFit fit = estimate_lambda(d, cfg, specs, o, with_se);
      for (auto r : fit.reports) reports.push_back(r);
    } catch (const std::exception& e) {
      fail("o/ps/dr", e);
    }
  }
  if (wants("ps_A")) {
    try {
      reports.push_back(tau_ps_adjusted_audit(d, o, with_se).report);
    } catch (const std::exception& e) {
      fail("ps_A", e);
    }
  }
  if (wants("dr_A")) {
    try {
      AuditWorkflowConfig wc;
      wc.mixture = mixture;
      wc.sigma = sigma;
      reports.push_back(audit_dr_workflow(d, wc, o, with_se).dr);
    } catch (const std::exception& e) {
      fail("dr_A", e);
    }
  }

  {
    auto f = open_out(out / "estimate.csv");
    io::write_reports_csv(f, reports);
  }
  json cfg = {{"data", a.data},   {"scenario", a.scenario}, {"estimators", ids}, {"sigma", a.sigma},
              {"mixture", a.mixture}, {"level", a.level},   {"with_se", with_se}, {"n", d.n()},
              {"audit_size", d.audit_size()}};
  json rs = json::array();
  for (const auto& r : reports) rs.push_back(io::to_json(r));
  cfg["reports"] = rs;
  write_manifest(out, "estimate", cfg, argv, {"estimate.csv"});
  io::write_reports_csv(std::cout, reports);
  return failures > 0 ? 3 : 0;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string preset = "table2";
  std::string scenario = "I";
  int reps = -1;
  std::uint64_t seed = 1;
  double audit_fraction = -1.0;
  std::string sigma = "known:1";
  std::string estimators;
  Index n = -1;
  int threads = 0;
  std::string out = ".";
};

int cmd_simulate(const SimulateArgs& a, const std::vector<std::string>& argv) {
  sim::SimConfig c;
  try {
    c = sim::preset(a.preset, parse_scenario(a.scenario));
  } catch (const Error& e) {
    throw BadInput(e.what());
  }
  if (a.reps > 0) c.replications = a.reps;
  if (a.n > 0) c.n = a.n;
  if (a.audit_fraction >= 0.0) c.audit_fraction = a.audit_fraction;
  if (!a.estimators.empty()) c.estimators = split_list(a.estimators);
  c.sigma = parse_sigma(a.sigma);
  c.seed = a.seed;
  c.threads = a.threads;
  try {
    c.check();
  } catch (const Error& e) {
    throw BadInput(e.what());
  }
  const fs::path out = prepare_out(a.out);
  const sim::SimSummary s = sim::replicate(c);
  {
    auto f = open_out(out / "summary.csv");
    sim::write_summary_csv(f, s);
  }
  json cfg = {{"preset", c.preset},
              {"scenario", to_string(c.scenario)},
              {"n", c.n},
              {"replications", c.replications},
              {"seed", c.seed},
              {"dgp", sim::to_string(c.dgp)},
              {"fit", c.fit == sim::FitMisspec::none ? "none" : "wrong_component"},
              {"audit_fraction", c.audit_fraction},
              {"sigma", a.sigma},
              {"estimators", c.estimators},
              {"tau_star", s.tau_star},
              {"singleton_clears", s.singleton_clears},
              {"high_failure_rate", s.high_failure_rate}};
  write_manifest(out, "simulate", cfg, argv, {"summary.csv"});
  sim::write_summary_table(std::cout, s);
  for (const auto& r : s.rows) {
    if (!r.first_failure.empty()) std::cerr << r.estimator << ": first failure: " << r.first_failure << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct BiasArgs {
  std::string beta = "-1:3:21";
  std::string phi = "-2:2:5";
  double alpha = 1.0 / 3.0;
  Index nodes = 64;
  std::string out = ".";
};

int cmd_bias_surface(const BiasArgs& a, const std::vector<std::string>& argv) {
  const Range b = parse_range(a.beta, "--beta");
  const Range p = parse_range(a.phi, "--phi");
  if (!(a.alpha > 0.0 && a.alpha <= 1.0)) throw BadInput("--alpha must be in (0, 1]");
  BiasModelSpec tmpl = BiasModelSpec::figure_family(1.0, 0.0, a.alpha);
  tmpl.nodes = a.nodes;
  std::vector<BiasCell> cells;
  try {
    cells = bias_surface_grid(tmpl, b.lo, b.hi, b.count, p.lo, p.hi, p.count);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::invalid_argument) throw BadInput(e.what());
    throw;
  }
  const fs::path out = prepare_out(a.out);
  {
    auto f = open_out(out / "bias_surface.csv");
    write_bias_surface_csv(f, cells);
  }
  json cfg = {{"beta", a.beta}, {"phi", a.phi}, {"alpha", a.alpha}, {"nodes", a.nodes}, {"cells", cells.size()}};
  write_manifest(out, "bias-surface", cfg, argv, {"bias_surface.csv"});
  std::cout << "wrote " << cells.size() << " cells to " << (out / "bias_surface.csv").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PipelineArgs {
  std::string data;
  std::string spec;
  std::string scenario = "II";
  int reps = 20;
  std::uint64_t seed = 1;
  double audit_fraction = 0.1;
  bool no_mismatch = false;
  bool synthetic = false;
  Index synthetic_n = 1566;
  std::string out = ".";
};

int cmd_pipeline(const PipelineArgs& a, const std::vector<std::string>& argv) {
  io::CsvTable table;
  spec::ModelSpec ms;
  if (a.synthetic) {
    table = pipeline::synthetic_nhefs(a.synthetic_n, a.seed);
    std::istringstream is(pipeline::synthetic_model_spec());
    ms = spec::parse_model_spec(is);
  } else {
    if (a.data.empty() || a.spec.empty()) throw BadInput("pipeline needs --data and --spec (or --synthetic)");
    auto f = io::open_input(a.data);
    table = io::read_csv(f);
    ms = spec::read_model_spec(a.spec);
  }
  if (ms.gamma.empty()) throw BadInput("model spec lacks a gamma line for the mismatch model");
  const LinkedDataset d = spec::build_dataset(spec::Frame::from_csv(table), ms, parse_scenario(a.scenario));
  const Vector gamma = Eigen::Map<const Vector>(ms.gamma.data(), static_cast<Index>(ms.gamma.size()));
  pipeline::PipelineConfig c;
  c.scenario = d.scenario;
  c.replications = a.reps;
  c.seed = a.seed;
  c.audit_fraction = a.audit_fraction;
  c.inject = !a.no_mismatch;
  const fs::path out = prepare_out(a.out);
  const pipeline::PipelineResult r = pipeline::run(d, gamma, c);
  {
    auto f = open_out(out / "pipeline.csv");
    pipeline::write_csv(f, r);
  }
  json cfg = {{"data", a.synthetic ? "synthetic" : a.data},
              {"spec", a.synthetic ? "synthetic" : a.spec},
              {"scenario", a.scenario},
              {"replications", a.reps},
              {"seed", a.seed},
              {"audit_fraction", a.audit_fraction},
              {"inject", c.inject},
              {"n", d.n()},
              {"mismatch_rate", r.mismatch_rate}};
  write_manifest(out, "pipeline", cfg, argv, {"pipeline.csv"});
  pipeline::write_csv(std::cout, r);
  std::cout << "mean mismatch rate: " << r.mismatch_rate << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Average treatment effect estimation on linked data with mismatch error"};
  app.require_subcommand(1);
  const std::vector<std::string> args(argv, argv + argc);

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "estimate the ATE from a linked CSV file");
  est->add_option("--data", ea.data, "linked CSV (y, e, m, x1.., z1..)")->required();
  est->add_option("--scenario", ea.scenario, "I, II or III");
  est->add_option("--estimators", ea.estimators, "comma list: plain,ig_o,ig_ps,naive_A0,o,ps,dr,ps_A,dr_A");
  est->add_option("--sigma", ea.sigma, "known:<value> or estimate");
  est->add_option("--mixture", ea.mixture, "full, reduced or oracle:<path>");
  est->add_option("--level", ea.level, "confidence level");
  est->add_flag("--no-se", ea.no_se, "skip standard errors");
  est->add_option("--out", ea.out, "output directory");

  SimulateArgs sa;
  auto* simc = app.add_subcommand("simulate", "Monte Carlo study");
  simc->add_option("--preset", sa.preset, "table2, table3-set1, table3-set2, fig2");
  simc->add_option("--scenario", sa.scenario, "I, II or III");
  simc->add_option("--reps", sa.reps, "replications");
  simc->add_option("--seed", sa.seed, "seed");
  simc->add_option("--n", sa.n, "records per replication");
  simc->add_option("--audit-fraction", sa.audit_fraction, "audit fraction");
  simc->add_option("--sigma", sa.sigma, "known:<value> or estimate");
  simc->add_option("--estimators", sa.estimators, "comma list overriding the preset");
  simc->add_option("--threads", sa.threads, "worker threads (0: all cores)");
  simc->add_option("--out", sa.out, "output directory");

  BiasArgs ba;
  auto* bias = app.add_subcommand("bias-surface", "naive-estimator bias over a (beta, phi) grid");
  bias->add_option("--beta", ba.beta, "lo:hi:count");
  bias->add_option("--phi", ba.phi, "lo:hi:count");
  bias->add_option("--alpha", ba.alpha, "mismatch rate");
  bias->add_option("--nodes", ba.nodes, "quadrature nodes per axis");
  bias->add_option("--out", ba.out, "output directory");

  PipelineArgs pa;
  auto* pipe = app.add_subcommand("pipeline", "repeated-injection comparison on a cohort file");
  pipe->add_option("--data", pa.data, "cohort CSV with named columns");
  pipe->add_option("--spec", pa.spec, "model spec file");
  pipe->add_option("--scenario", pa.scenario, "I, II or III");
  pipe->add_option("--reps", pa.reps, "injections");
  pipe->add_option("--seed", pa.seed, "seed");
  pipe->add_option("--audit-fraction", pa.audit_fraction, "audit fraction");
  pipe->add_flag("--no-mismatch", pa.no_mismatch, "skip injection");
  pipe->add_flag("--synthetic", pa.synthetic, "use the built-in synthetic cohort");
  pipe->add_option("--synthetic-n", pa.synthetic_n, "synthetic cohort size");
  pipe->add_option("--out", pa.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*est) return cmd_estimate(ea, args);
    if (*simc) return cmd_simulate(sa, args);
    if (*bias) return cmd_bias_surface(ba, args);
    if (*pipe) return cmd_pipeline(pa, args);
  } catch (const BadInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    const bool input = e.kind() == ErrorKind::parse_error || e.kind() == ErrorKind::invalid_argument;
    return input ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
