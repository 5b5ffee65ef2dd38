#include "pwacert/pipeline.hpp"

#include <chrono>
#include <random>

namespace pwacert::pipeline {

plant::CaseStudy case_by_name(const std::string& name) {
  if (name == "adsorption") return plant::adsorption_case();
  if (name == "tubular") return plant::tubular_case();
  throw ValidationError("unknown plant '" + name + "' (expected adsorption or tubular)");
}

CaseSetup setup(plant::CaseStudy study, core::ModelPool pool, const cert::UncertaintySpec& unc) {
  if (pool.empty()) throw ValidationError("setup: empty model pool");
  CaseSetup s;
  s.ctrl = plant::design_controllers(pool, study.mpc, study.observer_decay);
  s.builder = plant::case_builder(pool, study.mpc, s.ctrl.observers, unc);
  s.unc = unc;
  s.pool = std::move(pool);
  s.study = std::move(study);
  return s;
}

CaseSetup build_case(const std::string& name, std::uint64_t seed, const cert::UncertaintySpec& unc) {
  auto study = case_by_name(name);
  study.pool.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  auto built = pool::build_pool(study.sim, study.pool);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CaseSetup s = setup(std::move(study), std::move(built.pool), unc);
  s.report = std::move(built.report);
  s.pool_seconds = secs;
  return s;
}

cert::DissipationReport dissipation_run(const cert::Certificate& c, int steps, std::uint64_t seed, double pulse,
                                        double rel_tol) {
  const auto& ext = c.system;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  Vec xs0(ext.n_s);
  for (Eigen::Index i = 0; i < xs0.size(); ++i) xs0[i] = u(rng);
  const auto d = plant::reference_pulse(ext.n_d, steps, steps / 10, steps / 10 + 50, pulse);
  const auto rule = cert::centroid_switching(ext);
  const auto trace = cert::simulate_interconnection(ext, xs0, d, rule, plant::random_uncertainty(ext.unc.b, seed + 1));
  return cert::check_dissipation(c, trace, rel_tol);
}

}  // namespace pwacert::pipeline
