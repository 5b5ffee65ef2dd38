// OpenMP kernels against their serial reference paths. Arg 0 = serial,
// 1 = parallel.

#include "pwacert/certifier.hpp"
#include "pwacert/plant.hpp"
#include "pwacert/pool_builder.hpp"
#include "pwacert/sdp.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace pwacert;

namespace {

Exec exec_of(const benchmark::State& st) { return st.range(0) ? Exec::parallel : Exec::serial; }

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> g;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

const plant::CaseStudy& adsorption() {
  static const plant::CaseStudy cs = plant::adsorption_case();
  return cs;
}

// A switched loop similar in size to the adsorption analysis.
const cert::ExtendedSystem& small_loop() {
  static const cert::ExtendedSystem ext = [] {
    std::mt19937_64 rng(5);
    const Eigen::Index n = 6;
    Mat A0 = randn(rng, n, n);
    A0 *= 0.8 / linalg::spectral_radius(A0);
    const Mat B0 = randn(rng, n, 1), C0 = randn(rng, 2, n);
    std::vector<core::PwaModel> models;
    for (int i = 0; i < 6; ++i) {
      core::PwaModel m;
      m.A = A0 + 0.02 * randn(rng, n, n);
      m.B = B0 + 0.05 * randn(rng, n, 1);
      m.C = C0;
      m.f = Vec::Zero(n);
      m.centroid_x = Vec::Constant(n, 0.1 * i);
      m.centroid_u = Vec::Zero(1);
      m.id = i;
      models.push_back(m);
    }
    const core::ModelPool pool(models);
    mpc::MpcConfig cfg;
    cfg.r = 1.0;
    cfg.ref = Vec::Zero(2);
    cfg.u_lower = Vec::Constant(1, -1.0);
    cfg.u_upper = Vec::Constant(1, 1.0);
    const auto ctrl = plant::design_controllers(pool, cfg, 0.5);
    cert::UncertaintySpec unc;
    unc.b = 0.1;
    return cert::build_extended(pool, ctrl.qps, ctrl.observers, unc);
  }();
  return ext;
}

void BM_CollectTrajectories(benchmark::State& st) {
  const auto& cs = adsorption();
  for (auto _ : st) benchmark::DoNotOptimize(pool::collect_trajectories(cs.sim, 8, 10, 1, {}, exec_of(st)));
}
BENCHMARK(BM_CollectTrajectories)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Linearize(benchmark::State& st) {
  const auto& cs = adsorption();
  pool::LinearizeOptions lo;
  lo.output_indices = cs.measured;
  for (auto _ : st)
    benchmark::DoNotOptimize(pool::linearize(cs.sim, cs.x_nominal, cs.u_nominal, lo, exec_of(st)));
}
BENCHMARK(BM_Linearize)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_AssembleTheorem(benchmark::State& st) {
  const auto& ext = small_loop();
  const auto mults = cert::multipliers_for(ext, 4);
  for (auto _ : st) benchmark::DoNotOptimize(cert::assemble_theorem(ext, mults, 4, 2.0, exec_of(st)));
}
BENCHMARK(BM_AssembleTheorem)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SchurComplement(benchmark::State& st) {
  const auto& ext = small_loop();
  const auto tp = cert::assemble_theorem(ext, cert::multipliers_for(ext, 3), 3, 2.0);
  const auto df = sdp::detail::make_dual_form(tp.lmi, 1e-7, sdp::SdpOptions{});
  std::mt19937_64 rng(6);
  std::vector<Mat> X, Zi;
  for (const auto& cb : df.blocks) {
    const Mat a = randn(rng, cb.dim, cb.dim), b = randn(rng, cb.dim, cb.dim);
    X.push_back(a * a.transpose() + Mat::Identity(cb.dim, cb.dim));
    Zi.push_back(b * b.transpose() + Mat::Identity(cb.dim, cb.dim));
  }
  const Vec xl = Vec::Ones(static_cast<Eigen::Index>(df.lp.size()));
  for (auto _ : st) benchmark::DoNotOptimize(sdp::detail::schur_structured(df, X, Zi, xl, xl, exec_of(st)));
  st.counters["m"] = static_cast<double>(df.m);
}
BENCHMARK(BM_SchurComplement)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SolveFeasibility(benchmark::State& st) {
  const auto& ext = small_loop();
  sdp::SdpOptions so;
  so.exec = exec_of(st);
  for (auto _ : st) benchmark::DoNotOptimize(cert::certify_at(ext, 3, 10.0, so));
}
BENCHMARK(BM_SolveFeasibility)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
