// pwacert: pool building, certification, r sweeps, closed-loop runs and a
// standalone QP sector check.
//
// Exit codes: 0 success / certified, 2 invalid input, 3 numeric or solver
// failure, 4 not certified.

#include "pwacert/certifier.hpp"
#include "pwacert/mpc.hpp"
#include "pwacert/parallel.hpp"
#include "pwacert/pipeline.hpp"
#include "pwacert/plant.hpp"
#include "pwacert/pool_builder.hpp"
#include "pwacert/run_config.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

using namespace pwacert;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kInvalid = 2, kNumeric = 3, kUncertified = 4;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

std::string out_path(const config::RunConfig& c, const std::string& given, const std::string& fallback) {
  if (!given.empty()) return given;
  return (fs::path(c.output_dir) / fallback).string();
}

// Command-line overrides; unset options leave the config value alone.
struct Overrides {
  std::string config_path, plant, pool_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> clusters, theorem, steps;
  std::optional<double> r, b2, gamma_hi, max_solve_seconds;
  std::string theorems, grid, output_dir;

  config::RunConfig apply() const {
    config::RunConfig c = config_path.empty() ? config::RunConfig{} : config::load_config(config_path);
    if (!plant.empty()) c.plant = plant;
    if (!pool_path.empty()) c.pool_path = pool_path;
    if (!output_dir.empty()) c.output_dir = output_dir;
    if (seed) c.seed = *seed;
    if (clusters) c.clusters = *clusters;
    if (theorem) c.theorem = *theorem;
    if (steps) c.steps = *steps;
    if (r) c.r = *r;
    if (b2) c.b2 = *b2;
    if (gamma_hi) c.gamma_hi = *gamma_hi;
    if (max_solve_seconds) c.max_solve_seconds = *max_solve_seconds;
    if (!theorems.empty()) c.theorems = parse_list<int>(theorems, "--theorems");
    if (!grid.empty()) c.r_grid = parse_list<double>(grid, "--grid");
    c.validate();
    return c;
  }

  template <typename T>
  static std::vector<T> parse_list(const std::string& s, const std::string& flag) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::stringstream ts(tok);
      T v;
      if (!(ts >> v)) throw ValidationError(flag + ": cannot parse '" + tok + "'");
      out.push_back(v);
    }
    return out;
  }
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run configuration");
  cmd->add_option("--plant", o.plant, "adsorption, tubular or external");
  cmd->add_option("--pool", o.pool_path, "Load this pool instead of building one");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--clusters", o.clusters, "Number of sub-models");
  cmd->add_option("--out-dir", o.output_dir, "Directory for default output files");
}

void add_analysis(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--r", o.r, "Input weight r");
  cmd->add_option("--b2", o.b2, "Uncertainty level b²");
  cmd->add_option("--gamma-hi", o.gamma_hi, "Upper end of the γ search");
}

// --------------------------------------------------------------- pool build
int cmd_pool_build(const config::RunConfig& c, const std::string& out, const std::string& dataset) {
  if (c.plant == "external") throw ValidationError("config.plant: pool build needs a simulated plant");
  auto study = pipeline::case_by_name(c.plant);
  study.pool.seed = c.seed;
  if (c.clusters) study.pool.clusters = *c.clusters;
  if (c.n_traj) study.pool.n_traj = *c.n_traj;
  if (c.horizon) study.pool.horizon = *c.horizon;
  const auto t0 = Clock::now();
  const auto res = pool::build_pool(study.sim, study.pool);
  const double secs = since(t0);

  const std::string pool_file = out_path(c, out, "pool.json");
  core::save_pool(res.pool, pool_file);
  if (!dataset.empty()) {
    std::ostringstream csv;
    csv.precision(17);
    for (Eigen::Index i = 0; i < res.samples.rows(); ++i) {
      for (Eigen::Index j = 0; j < res.samples.cols(); ++j) csv << (j ? "," : "") << res.samples(i, j);
      csv << "\n";
    }
    write_file(dataset, csv.str());
  }
  const auto& r = res.report;
  json rep = {{"plant", c.plant},
              {"models", res.pool.size()},
              {"samples", r.n_samples},
              {"pca_components", r.pca_components},
              {"pca_retained", r.pca_retained},
              {"wcss", r.wcss},
              {"kmeans_iterations", r.kmeans_iterations},
              {"collapsed", r.collapsed},
              {"rejected", r.rejected},
              {"warnings", r.warnings},
              {"seconds", secs}};
  write_file(pool_file + ".report.json", rep.dump(2) + "\n");
  std::cout << "pool: " << res.pool.size() << " models from " << r.n_samples << " samples (" << r.pca_components
            << " PCA components), written to " << pool_file << "\n";
  for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "time: " << secs << " s\n";
  return kOk;
}

// ------------------------------------------------------------------ certify
int cmd_check(const std::string& path) {
  const auto cert = cert::certificate_from_json(read_file(path));
  const auto v = cert::recheck(cert);
  std::cout << "theorem " << cert.theorem << ", γ = " << cert.gamma << "\n"
            << "max block eigenvalue " << v.max_block_eig << " (required <= " << -cert.margin + 1e-9 << ")\n"
            << "min storage eigenvalue " << v.min_matrix_eig << "\n"
            << (v.ok ? "re-verification PASS" : "re-verification FAIL: " + v.detail) << "\n";
  return v.ok ? kOk : kUncertified;
}

int cmd_certify(const config::RunConfig& c, const std::string& out, const std::string& dump_lmi) {
  const auto t0 = Clock::now();
  const auto cs = config::make_case(c);
  const double r = c.r.value_or(cs.study.mpc.r);
  const auto ext = cs.builder(r);
  if (!dump_lmi.empty()) {
    const auto tp = cert::assemble_theorem(ext, cert::multipliers_for(ext, c.theorem), c.theorem);
    write_file(dump_lmi, tp.lmi.dump());
  }
  cert::CertifyOptions co;
  co.gamma_lo = c.gamma_lo;
  co.gamma_hi = c.gamma_hi;
  co.tol = c.tol;
  co.sdp.max_seconds = c.max_solve_seconds;
  auto cert = cert::certify(ext, c.theorem, co);
  cert.r = r;
  const double secs = since(t0);
  std::cout << "plant " << c.plant << ", " << cs.pool.size() << " models, r = " << r << ", b² = " << c.b2
            << ", theorem " << c.theorem << "\n";
  if (cert.certified) {
    const std::string file = out_path(c, out, "cert.json");
    write_file(file, cert::certificate_to_json(cert));
    std::cout << "certified: γ* = " << cert.gamma << " (lower bound " << cert.gamma_lo << "), " << cert.solves
              << " solves\nmax block eigenvalue " << cert.max_block_eig << "\ncertificate written to " << file << "\n";
  } else {
    std::cout << cert.message << "\n";
  }
  std::cout << "time: " << secs << " s (solver " << cert.solve_seconds << " s)\n";
  if (cert.certified) return kOk;
  return cert.budget_exceeded ? kNumeric : kUncertified;
}

// ------------------------------------------------------------------ sweep-r
int cmd_sweep(const config::RunConfig& c, const std::string& out) {
  const auto t0 = Clock::now();
  const auto cs = config::make_case(c);
  std::vector<cert::RLimitResult> results;
  const char* names[] = {"", "single", "conic", "box", "PWQ+box"};
  std::ostringstream table;
  table << "method,theorem,r_limit,solves,seconds\n";
  bool any_found = false;
  for (int th : c.theorems) {
    cert::RSweepOptions o;
    o.r_lo = c.r_lo;
    o.r_hi = c.r_hi;
    o.resolution = c.resolution;
    o.grid = c.r_grid;
    o.max_solve_seconds = c.max_solve_seconds;
    const auto t1 = Clock::now();
    auto res = cert::r_limit_sweep(cs.builder, th, o);
    const double secs = since(t1);
    std::string lim = res.found ? std::to_string(res.r_limit) : (res.budget_exceeded ? "—" : "none");
    table << names[th] << "," << th << "," << lim << "," << res.profile.size() << "," << secs << "\n";
    std::cout << names[th] << " (theorem " << th << "): r_limit " << lim << ", " << res.profile.size() << " solves, "
              << secs << " s, " << res.message << "\n";
    any_found = any_found || res.found;
    results.push_back(std::move(res));
  }
  const std::string file = out_path(c, out, "sweep.csv");
  write_file(file, cert::sweep_csv(results));
  write_file(file + ".table.csv", table.str());
  std::cout << "profile written to " << file << "\ntime: " << since(t0) << " s\n";
  return any_found ? kOk : kUncertified;
}

// ----------------------------------------------------------------- simulate
int cmd_simulate(const config::RunConfig& c, const std::string& out, const std::string& cert_path) {
  if (c.plant == "external") throw ValidationError("config.plant: simulate needs a simulated plant");
  const auto t0 = Clock::now();
  auto cs = config::make_case(c);
  auto cfg = cs.study.mpc;
  cfg.r = c.r.value_or(cfg.r);
  const auto ctrl = plant::design_controllers(cs.pool, cfg, cs.study.observer_decay);
  const auto d = plant::reference_pulse(cs.pool.n_y(), c.steps, c.steps / 10, c.steps / 10 + 50, c.pulse);
  plant::ClosedLoopOptions o;
  o.steps = c.steps;
  o.seed = c.seed;
  const auto run = plant::run_closed_loop(cs.study.sim, cs.pool, cfg, ctrl, cs.unc, d, o);
  const std::string file = out_path(c, out, "run.csv");
  write_file(file, run.to_csv());
  std::cout << "closed loop: " << run.steps() << " steps, r = " << cfg.r << ", written to " << file << "\n";
  if (!run.error.empty()) std::cout << "run halted: " << run.error << "\n";

  int code = run.error.empty() ? kOk : kNumeric;
  if (!cert_path.empty()) {
    const auto cert = cert::certificate_from_json(read_file(cert_path));
    const auto rep = pipeline::dissipation_run(cert, c.steps, c.seed, c.pulse);
    std::cout << "dissipation " << (rep.pass ? "PASS" : "FAIL") << ": worst slack " << rep.worst_slack << " at step "
              << rep.worst_step << " (tolerance " << rep.tolerance << "), Σ|e|² = " << rep.energy_e
              << ", Σ|d|² = " << rep.energy_d << ", V(0) = " << rep.v0 << ", γ = " << cert.gamma << "\n";
  }
  std::cout << "time: " << since(t0) << " s\n";
  return code;
}

// ----------------------------------------------------------------- qp-check
int cmd_qp_check(int count, std::uint64_t seed, const std::string& dump) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(1, 8), rows(0, 12);
  std::uniform_real_distribution<double> ub(0.0, 2.0);
  std::normal_distribution<double> g;
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  double worst = -std::numeric_limits<double>::infinity();
  int bad = 0;
  json worst_qp;
  for (int t = 0; t < count; ++t) {
    const Eigen::Index n = dim(rng), m = rows(rng);
    const Mat R = randn(n, n);
    const Mat H = R * R.transpose() + 0.1 * Mat::Identity(n, n);
    const Mat L = randn(m, n);
    Vec b(m);
    for (Eigen::Index i = 0; i < m; ++i) b[i] = ub(rng);
    const Vec f = 3.0 * randn(n, 1);
    const auto sol = mpc::solve_qp(H, f, L, b);
    const double s = sol.U.dot(H * sol.U) - sol.U.dot(f);
    if (s > 1e-8) ++bad;
    if (s > worst) {
      worst = s;
      worst_qp = {{"H", linalg::to_row_major(H)}, {"n", n},  {"f", linalg::to_row_major(f)},
                  {"L", linalg::to_row_major(L)}, {"m", m},  {"b", linalg::to_row_major(b)},
                  {"U", linalg::to_row_major(sol.U)},        {"sector", s}};
    }
  }
  if (!dump.empty()) write_file(dump, worst_qp.dump(2) + "\n");
  std::cout << count << " QPs: max φᵀHφ − φᵀf = " << worst << ", violations " << bad << "\n"
            << (bad == 0 ? "sector bound PASS" : "sector bound FAIL") << "\ntime: " << since(t0) << " s\n";
  return bad == 0 ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PWA plant / multi-model MPC stability certification"};
  app.require_subcommand(1);
  int workers = 0;
  app.add_option("-j,--workers", workers, "Worker threads for sweeps (env PWACERT_WORKERS overrides)");

  Overrides o;
  std::string out, dataset, check, dump_lmi, cert_path, dump_qp;
  int qp_count = 10000;
  std::uint64_t qp_seed = 1;

  auto* pool_cmd = app.add_subcommand("pool", "Model pool commands");
  pool_cmd->require_subcommand(1);
  auto* build = pool_cmd->add_subcommand("build", "Build a model pool from a simulated plant");
  add_common(build, o);
  build->add_option("-o,--out", out, "Pool JSON path");
  build->add_option("--dataset", dataset, "Also write the sampled [x; u] rows as CSV");

  auto* certify = app.add_subcommand("certify", "Certify a finite l2 gain");
  add_common(certify, o);
  add_analysis(certify, o);
  certify->add_option("--theorem", o.theorem, "1 single, 2 conic, 3 box, 4 PWQ + box");
  certify->add_option("--max-solve-seconds", o.max_solve_seconds, "Budget per SDP solve");
  certify->add_option("-o,--out", out, "Certificate JSON path");
  certify->add_option("--check", check, "Re-verify an existing certificate and exit");
  certify->add_option("--dump-lmi", dump_lmi, "Write the assembled LMI problem as text");

  auto* sweep = app.add_subcommand("sweep-r", "Smallest certifiable r per theorem");
  add_common(sweep, o);
  add_analysis(sweep, o);
  sweep->add_option("--theorems", o.theorems, "Comma-separated theorem ids");
  sweep->add_option("--grid", o.grid, "Comma-separated r values instead of bisection");
  sweep->add_option("--max-solve-seconds", o.max_solve_seconds, "Budget per SDP solve");
  sweep->add_option("-o,--out", out, "Profile CSV path");

  auto* sim = app.add_subcommand("simulate", "Closed-loop run on the simulated plant");
  add_common(sim, o);
  add_analysis(sim, o);
  sim->add_option("--steps", o.steps, "Number of steps");
  sim->add_option("--cert", cert_path, "Certificate for the dissipation check");
  sim->add_option("-o,--out", out, "Run CSV path");

  auto* qp = app.add_subcommand("qp-check", "Sector-bound check on random QPs");
  qp->add_option("--count", qp_count, "Number of random QPs");
  qp->add_option("--seed", qp_seed, "Random seed");
  qp->add_option("--dump-qp", dump_qp, "Write the worst instance as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  if (const char* env = std::getenv("PWACERT_WORKERS")) workers = std::atoi(env);
  if (workers > 0) par::set_threads(workers);

  try {
    if (*qp) return cmd_qp_check(qp_count, qp_seed, dump_qp);
    if (*certify && !check.empty()) return cmd_check(check);
    const auto cfg = o.apply();
    if (*pool_cmd) return cmd_pool_build(cfg, out, dataset);
    if (*certify) return cmd_certify(cfg, out, dump_lmi);
    if (*sweep) return cmd_sweep(cfg, out);
    if (*sim) return cmd_simulate(cfg, out, cert_path);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kInvalid;
}
