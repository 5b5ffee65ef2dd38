#pragma once

#include "pwacert/certifier.hpp"
#include "pwacert/linalg.hpp"
#include "pwacert/pipeline.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pwacert::config {

/// Settings shared by every CLI command. Loaded from JSON; keys not listed
/// here are rejected with their path.
struct RunConfig {
  std::string plant;  // adsorption | tubular | external
  std::uint64_t seed = 7;
  std::string output_dir = ".";

  // pool
  std::string pool_path;
  std::optional<int> clusters, n_traj, horizon;

  // mpc
  std::optional<int> n_out, n_in;
  std::optional<double> r, observer_decay;
  std::optional<Vec> u_lower, u_upper, ref;

  // uncertainty
  double b2 = 0.01;
  std::string placement = "output";  // output | input | both

  // analysis
  int theorem = 3;
  std::vector<int> theorems = {1, 2, 3, 4};
  double gamma_lo = 1e-4, gamma_hi = 1e4, tol = 1e-3;
  std::vector<double> r_grid;
  double r_lo = 0.01, r_hi = 2.0, resolution = 0.01;
  double max_solve_seconds = 0.0;

  // simulation
  int steps = 500;
  double pulse = 1.0;

  void validate() const;
  cert::UncertaintySpec uncertainty() const;
};

/// Throws ValidationError naming the offending field (e.g. "config.mpc.r").
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& c);

/// Study, pool and controllers for the configured plant. The pool is loaded
/// from `pool_path` when set, otherwise built with the study's options.
pipeline::CaseSetup make_case(const RunConfig& c);

}  // namespace pwacert::config
