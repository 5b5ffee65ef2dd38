#include "pwacert/run_config.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace pwacert::config {

using json = nlohmann::json;

namespace {

void allowed_keys(const json& j, const std::string& path, const std::set<std::string>& keys) {
  if (!j.is_object()) throw ValidationError(path + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ValidationError(path + "." + k + ": unknown key");
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(path + "." + key + ": wrong type");
  }
}

Vec get_vec(const json& j, const std::string& key, const std::string& path) {
  const auto v = get<std::vector<double>>(j, key, path);
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

void RunConfig::validate() const {
  if (plant.empty()) throw ValidationError("config.plant: required (adsorption, tubular or external)");
  if (plant != "adsorption" && plant != "tubular" && plant != "external")
    throw ValidationError("config.plant: unknown plant '" + plant + "'");
  if (plant == "external") {
    if (pool_path.empty()) throw ValidationError("config.pool.path: required for an external plant");
    if (!u_lower || !u_upper) throw ValidationError("config.mpc.u_lower: input bounds required for an external plant");
  }
  if (clusters && *clusters < 1) throw ValidationError("config.pool.clusters: must be positive");
  if (n_traj && *n_traj < 1) throw ValidationError("config.pool.n_traj: must be positive");
  if (horizon && *horizon < 1) throw ValidationError("config.pool.horizon: must be positive");
  if (n_out && *n_out < 1) throw ValidationError("config.mpc.n_out: must be positive");
  if (n_in && (*n_in < 1 || (n_out && *n_in > *n_out))) throw ValidationError("config.mpc.n_in: must be in [1, n_out]");
  if (r && !(*r > 0.0)) throw ValidationError("config.mpc.r: must be positive");
  if (observer_decay && !(*observer_decay >= 0.0 && *observer_decay < 1.0))
    throw ValidationError("config.mpc.observer_decay: must lie in [0, 1)");
  if (!(b2 >= 0.0) || !std::isfinite(b2)) throw ValidationError("config.uncertainty.b2: must be nonnegative");
  if (placement != "output" && placement != "input" && placement != "both")
    throw ValidationError("config.uncertainty.placement: expected output, input or both");
  if (theorem < 1 || theorem > 4) throw ValidationError("config.analysis.theorem: must be 1..4");
  for (int t : theorems)
    if (t < 1 || t > 4) throw ValidationError("config.analysis.theorems: entries must be 1..4");
  if (!(gamma_lo > 0.0) || !(gamma_hi > gamma_lo)) throw ValidationError("config.analysis.gamma_hi: need 0 < gamma_lo < gamma_hi");
  if (!(tol > 0.0)) throw ValidationError("config.analysis.tol: must be positive");
  for (double r : r_grid)
    if (!(r > 0.0)) throw ValidationError("config.analysis.r_grid: entries must be positive");
  if (!(r_lo > 0.0) || !(r_hi >= r_lo)) throw ValidationError("config.analysis.r_hi: need 0 < r_lo <= r_hi");
  if (!(resolution > 0.0)) throw ValidationError("config.analysis.resolution: must be positive");
  if (max_solve_seconds < 0.0) throw ValidationError("config.analysis.max_solve_seconds: must be nonnegative");
  if (steps < 0) throw ValidationError("config.simulation.steps: must be nonnegative");
}

cert::UncertaintySpec RunConfig::uncertainty() const {
  cert::UncertaintySpec u;
  u.b = std::sqrt(b2);
  u.output = placement == "output" || placement == "both";
  u.input = placement == "input" || placement == "both";
  return u;
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  allowed_keys(j, "config", {"plant", "seed", "output_dir", "pool", "mpc", "uncertainty", "analysis", "simulation"});
  RunConfig c;
  if (j.contains("plant")) c.plant = get<std::string>(j, "plant", "config");
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", "config");
  if (j.contains("output_dir")) c.output_dir = get<std::string>(j, "output_dir", "config");

  if (j.contains("pool")) {
    const auto& p = j["pool"];
    allowed_keys(p, "config.pool", {"path", "clusters", "n_traj", "horizon"});
    if (p.contains("path")) c.pool_path = get<std::string>(p, "path", "config.pool");
    if (p.contains("clusters")) c.clusters = get<int>(p, "clusters", "config.pool");
    if (p.contains("n_traj")) c.n_traj = get<int>(p, "n_traj", "config.pool");
    if (p.contains("horizon")) c.horizon = get<int>(p, "horizon", "config.pool");
  }
  if (j.contains("mpc")) {
    const auto& m = j["mpc"];
    allowed_keys(m, "config.mpc", {"n_out", "n_in", "r", "observer_decay", "u_lower", "u_upper", "ref"});
    if (m.contains("n_out")) c.n_out = get<int>(m, "n_out", "config.mpc");
    if (m.contains("n_in")) c.n_in = get<int>(m, "n_in", "config.mpc");
    if (m.contains("r")) c.r = get<double>(m, "r", "config.mpc");
    if (m.contains("observer_decay")) c.observer_decay = get<double>(m, "observer_decay", "config.mpc");
    if (m.contains("u_lower")) c.u_lower = get_vec(m, "u_lower", "config.mpc");
    if (m.contains("u_upper")) c.u_upper = get_vec(m, "u_upper", "config.mpc");
    if (m.contains("ref")) c.ref = get_vec(m, "ref", "config.mpc");
  }
  if (j.contains("uncertainty")) {
    const auto& u = j["uncertainty"];
    allowed_keys(u, "config.uncertainty", {"b2", "placement"});
    if (u.contains("b2")) c.b2 = get<double>(u, "b2", "config.uncertainty");
    if (u.contains("placement")) c.placement = get<std::string>(u, "placement", "config.uncertainty");
  }
  if (j.contains("analysis")) {
    const auto& a = j["analysis"];
    allowed_keys(a, "config.analysis", {"theorem", "theorems", "gamma_lo", "gamma_hi", "tol", "r_grid", "r_lo", "r_hi",
                                        "resolution", "max_solve_seconds"});
    if (a.contains("theorem")) c.theorem = get<int>(a, "theorem", "config.analysis");
    if (a.contains("theorems")) c.theorems = get<std::vector<int>>(a, "theorems", "config.analysis");
    if (a.contains("gamma_lo")) c.gamma_lo = get<double>(a, "gamma_lo", "config.analysis");
    if (a.contains("gamma_hi")) c.gamma_hi = get<double>(a, "gamma_hi", "config.analysis");
    if (a.contains("tol")) c.tol = get<double>(a, "tol", "config.analysis");
    if (a.contains("r_grid")) c.r_grid = get<std::vector<double>>(a, "r_grid", "config.analysis");
    if (a.contains("r_lo")) c.r_lo = get<double>(a, "r_lo", "config.analysis");
    if (a.contains("r_hi")) c.r_hi = get<double>(a, "r_hi", "config.analysis");
    if (a.contains("resolution")) c.resolution = get<double>(a, "resolution", "config.analysis");
    if (a.contains("max_solve_seconds")) c.max_solve_seconds = get<double>(a, "max_solve_seconds", "config.analysis");
  }
  if (j.contains("simulation")) {
    const auto& s = j["simulation"];
    allowed_keys(s, "config.simulation", {"steps", "pulse"});
    if (s.contains("steps")) c.steps = get<int>(s, "steps", "config.simulation");
    if (s.contains("pulse")) c.pulse = get<double>(s, "pulse", "config.simulation");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["plant"] = c.plant;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  json p = json::object();
  if (!c.pool_path.empty()) p["path"] = c.pool_path;
  if (c.clusters) p["clusters"] = *c.clusters;
  if (c.n_traj) p["n_traj"] = *c.n_traj;
  if (c.horizon) p["horizon"] = *c.horizon;
  j["pool"] = p;
  json m = json::object();
  if (c.n_out) m["n_out"] = *c.n_out;
  if (c.n_in) m["n_in"] = *c.n_in;
  if (c.r) m["r"] = *c.r;
  if (c.observer_decay) m["observer_decay"] = *c.observer_decay;
  if (c.u_lower) m["u_lower"] = vec_json(*c.u_lower);
  if (c.u_upper) m["u_upper"] = vec_json(*c.u_upper);
  if (c.ref) m["ref"] = vec_json(*c.ref);
  j["mpc"] = m;
  j["uncertainty"] = {{"b2", c.b2}, {"placement", c.placement}};
  j["analysis"] = {{"theorem", c.theorem},       {"theorems", c.theorems}, {"gamma_lo", c.gamma_lo},
                   {"gamma_hi", c.gamma_hi},     {"tol", c.tol},           {"r_grid", c.r_grid},
                   {"r_lo", c.r_lo},             {"r_hi", c.r_hi},         {"resolution", c.resolution},
                   {"max_solve_seconds", c.max_solve_seconds}};
  j["simulation"] = {{"steps", c.steps}, {"pulse", c.pulse}};
  return j.dump(2) + "\n";
}

pipeline::CaseSetup make_case(const RunConfig& c) {
  c.validate();
  plant::CaseStudy study;
  if (c.plant == "external") {
    study.name = "external";
  } else {
    study = pipeline::case_by_name(c.plant);
  }
  study.pool.seed = c.seed;
  if (c.clusters) study.pool.clusters = *c.clusters;
  if (c.n_traj) study.pool.n_traj = *c.n_traj;
  if (c.horizon) study.pool.horizon = *c.horizon;
  if (c.n_out) study.mpc.n_out = *c.n_out;
  if (c.n_in) study.mpc.n_in = *c.n_in;
  if (c.r) study.mpc.r = *c.r;
  if (c.observer_decay) study.observer_decay = *c.observer_decay;
  if (c.u_lower) study.mpc.u_lower = *c.u_lower;
  if (c.u_upper) study.mpc.u_upper = *c.u_upper;
  if (c.ref) study.mpc.ref = *c.ref;

  if (!c.pool_path.empty()) {
    core::ModelPool pool = core::load_pool(c.pool_path);
    if (study.mpc.ref.size() == 0) study.mpc.ref = Vec::Zero(pool.n_y());
    study.mpc.validate(pool.n_y(), pool.n_u());
    return pipeline::setup(std::move(study), std::move(pool), c.uncertainty());
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto built = pool::build_pool(study.sim, study.pool);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto s = pipeline::setup(std::move(study), std::move(built.pool), c.uncertainty());
  s.report = std::move(built.report);
  s.pool_seconds = secs;
  return s;
}

}  // namespace pwacert::config
