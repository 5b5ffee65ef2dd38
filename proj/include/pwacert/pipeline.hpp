#pragma once

#include "pwacert/certifier.hpp"
#include "pwacert/plant.hpp"

#include <cstdint>
#include <string>

namespace pwacert::pipeline {

/// "adsorption" or "tubular"; anything else is a ValidationError.
plant::CaseStudy case_by_name(const std::string& name);

/// Pool plus the controllers and r-parameterized extended system built on it.
struct CaseSetup {
  plant::CaseStudy study;
  core::ModelPool pool;
  pool::PoolBuildReport report;
  plant::ControllerSet ctrl;
  cert::UncertaintySpec unc;
  cert::CaseBuilder builder;
  double pool_seconds = 0.0;
};

CaseSetup setup(plant::CaseStudy study, core::ModelPool pool, const cert::UncertaintySpec& unc);
/// Builds the pool with the study's own options and the given seed.
CaseSetup build_case(const std::string& name, std::uint64_t seed, const cert::UncertaintySpec& unc);

/// Deterministic 500-step style check of a certificate: random contractions
/// of size b on each uncertainty channel, a square reference pulse, centroid
/// switching, started from the origin of the extended state.
cert::DissipationReport dissipation_run(const cert::Certificate& c, int steps, std::uint64_t seed,
                                        double pulse = 1.0, double rel_tol = 1e-6);

}  // namespace pwacert::pipeline
