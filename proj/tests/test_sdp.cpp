#include "oracles.hpp"
#include "pwacert/sdp.hpp"

#include <doctest.h>

#include <random>

using namespace pwacert;
using namespace pwacert::sdp;

namespace {

LmiProblem scalar_lyapunov() {
  // 0.25 p − p + 1 ⪯ −margin
  LmiProblem p;
  const int P = p.add_matrix("p", 1);
  auto& blk = p.add_block("lyap", 1);
  blk.constant(0, 0) = 1.0;
  blk.congruence.push_back({P, 1.0, Mat::Constant(1, 1, 0.5)});
  blk.congruence.push_back({P, -1.0, Mat::Identity(1, 1)});
  return p;
}

}  // namespace

TEST_CASE("scalar lyapunov is feasible with p above 4/3") {
  const auto sol = solve_feasibility(scalar_lyapunov());
  REQUIRE(sol.status == Status::feasible);
  const double p = sol.assignment.matrices[0](0, 0);
  CHECK(p >= 4.0 / 3.0);
  CHECK(verify(scalar_lyapunov(), sol.assignment, sol.margin).ok);
}

TEST_CASE("contradictory bounds are infeasible") {
  LmiProblem p;
  const int s = p.add_scalar("p", Sign::free);
  auto& b1 = p.add_block("p>=1", 1);  // 1 − p <= 0
  b1.constant(0, 0) = 1.0;
  b1.scalar.push_back({s, -Mat::Identity(1, 1)});
  auto& b2 = p.add_block("-p>=1", 1);  // 1 + p <= 0
  b2.constant(0, 0) = 1.0;
  b2.scalar.push_back({s, Mat::Identity(1, 1)});
  const auto sol = solve_feasibility(p);
  CHECK(sol.status == Status::infeasible);
}

TEST_CASE("bounded-real scalar system switches feasibility at gamma 2") {
  const Mat A = Mat::Constant(1, 1, 0.5), B = Mat::Ones(1, 1), C = Mat::Ones(1, 1), D = Mat::Zero(1, 1);
  CHECK(oracle::hinf_grid(A, B, C, D) == doctest::Approx(2.0).epsilon(1e-9));
  const auto tmpl = bounded_real_lmi(A, B, C, D);
  CHECK(solve_feasibility(at_gamma(tmpl, 2.1)).status == Status::feasible);
  CHECK(solve_feasibility(at_gamma(tmpl, 1.9)).status == Status::infeasible);
}

TEST_CASE("minimize_gamma on the scalar bounded-real case") {
  const Mat A = Mat::Constant(1, 1, 0.5), B = Mat::Ones(1, 1), C = Mat::Ones(1, 1), D = Mat::Zero(1, 1);
  for (bool seed : {true, false}) {
    GammaOptions go;
    go.seed_with_max = seed;
    const auto r = minimize_gamma(bounded_real_lmi(A, B, C, D), go);
    REQUIRE(r.certified);
    CHECK(r.gamma == doctest::Approx(2.0).epsilon(1e-3 / 2.0));
    CHECK(r.gamma - r.lo <= go.tol);
    for (const auto& [g, ok] : r.history) {
      if (ok) CHECK(g >= r.gamma - 1e-12);
      else CHECK(g <= r.lo + 1e-12);
    }
  }
}

TEST_CASE("zero performance output gives gamma at the lower end") {
  const Mat A = Mat::Constant(1, 1, 0.5), B = Mat::Ones(1, 1), C = Mat::Zero(1, 1), D = Mat::Zero(1, 1);
  GammaOptions go;
  go.lo = 1e-4;
  const auto r = minimize_gamma(bounded_real_lmi(A, B, C, D), go);
  REQUIRE(r.certified);
  CHECK(r.gamma <= go.lo + go.tol);
}

TEST_CASE("gamma feasibility is monotone on random stable systems") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 1 + trial % 4;
    const Mat A = oracle::random_stable(rng, n, 0.3 + 0.6 * (trial % 5) / 5.0);
    const Mat B = oracle::random_matrix(rng, n, 1), C = oracle::random_matrix(rng, 1, n);
    const auto tmpl = bounded_real_lmi(A, B, C, Mat::Zero(1, 1));
    const double g = oracle::hinf_grid(A, B, C, Mat::Zero(1, 1), 2000) * 1.05 + 1e-3;
    REQUIRE(solve_feasibility(at_gamma(tmpl, g)).status == Status::feasible);
    CHECK(solve_feasibility(at_gamma(tmpl, 2.0 * g)).status == Status::feasible);
  }
}

TEST_CASE("structured Schur kernel matches the dense reference") {
  std::mt19937_64 rng(5);
  // Two matrix variables, scalar terms and LP rows.
  LmiProblem p;
  const int P1 = p.add_matrix("P1", 3), P2 = p.add_matrix("P2", 2);
  const int s = p.add_scalar("s");
  auto& blk = p.add_block("b", 4);
  blk.congruence.push_back({P1, 1.0, oracle::random_matrix(rng, 3, 4)});
  blk.congruence.push_back({P1, -0.5, oracle::random_matrix(rng, 3, 4)});
  blk.congruence.push_back({P2, 2.0, oracle::random_matrix(rng, 2, 4)});
  Mat F = oracle::random_matrix(rng, 4, 4);
  blk.scalar.push_back({s, F + F.transpose()});
  const auto df = detail::make_dual_form(p, 1e-7, SdpOptions{});
  std::vector<Mat> X, Zi;
  for (const auto& cb : df.blocks) {
    Mat a = oracle::random_matrix(rng, cb.dim, cb.dim), b = oracle::random_matrix(rng, cb.dim, cb.dim);
    X.push_back(a * a.transpose() + Mat::Identity(cb.dim, cb.dim));
    Zi.push_back(b * b.transpose() + Mat::Identity(cb.dim, cb.dim));
  }
  const Vec xl = Vec::LinSpaced(static_cast<Eigen::Index>(df.lp.size()), 1.0, 2.0);
  const Vec zl = Vec::LinSpaced(static_cast<Eigen::Index>(df.lp.size()), 0.5, 3.0);
  const Mat ref = detail::schur_dense_reference(df, X, Zi, xl, zl);
  for (Exec e : {Exec::serial, Exec::parallel}) {
    const Mat got = detail::schur_structured(df, X, Zi, xl, zl, e);
    CHECK((Mat(got.triangularView<Eigen::Lower>()) - Mat(ref.triangularView<Eigen::Lower>())).norm() <=
          1e-10 * ref.norm());
  }
}

TEST_CASE("problem dump lists layout and blocks") {
  const std::string d = scalar_lyapunov().dump();
  CHECK(d.find("matrix_variables 1") != std::string::npos);
  CHECK(d.find("block lyap dim=1") != std::string::npos);
}

TEST_CASE("verify rejects a wrong assignment") {
  Assignment a;
  a.matrices.push_back(Mat::Constant(1, 1, 1.0));
  a.scalars = Vec(0);
  const auto v = verify(scalar_lyapunov(), a, 1e-7);
  CHECK_FALSE(v.ok);
  CHECK(v.max_block_eig == doctest::Approx(0.25));
}
