#include "oracles.hpp"
#include "pwacert/iqc.hpp"

#include <doctest.h>
#include <json.hpp>

#include <random>

using namespace pwacert;

namespace {

struct Box {
  Mat L;
  Vec b;
};

Box random_box(std::mt19937_64& rng, Eigen::Index n, double scale = 2.0) {
  std::uniform_real_distribution<double> u(0.0, scale);
  Box bx{Mat::Zero(2 * n, n), Vec(2 * n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    bx.L(2 * j, j) = 1;
    bx.L(2 * j + 1, j) = -1;
    bx.b[2 * j] = u(rng);
    bx.b[2 * j + 1] = u(rng);
  }
  return bx;
}

Mat random_spd(std::mt19937_64& rng, Eigen::Index n) {
  const Mat R = oracle::random_matrix(rng, n, n);
  Mat H = R * R.transpose() + 0.2 * Mat::Identity(n, n);
  return 0.5 * (H + H.transpose());
}

mpc::MpcQp qp_of(const Mat& H, const Box& bx) {
  mpc::MpcQp q;
  q.H = H;
  q.L = bx.L;
  q.b = bx.b;
  return q;
}

}  // namespace

TEST_CASE("mpc_single_multiplier block form") {
  const auto m1 = iqc::mpc_single_multiplier({Mat::Constant(1, 1, 2.0)});
  Mat want(2, 2);
  want << 0, 1, 1, -4;
  CHECK(m1.per_model[0] == want);
  CHECK(m1.n_params() == 1);

  const auto m2 = iqc::mpc_single_multiplier({Mat::Identity(2, 2)});
  Mat want2(4, 4);
  want2 << 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, -2, 0, 0, 1, 0, -2;
  CHECK(m2.per_model[0] == want2);

  Mat asym(2, 2);
  asym << 1, 0.1, 0, 1;
  CHECK_THROWS_AS(iqc::mpc_single_multiplier({asym}), ValidationError);
  CHECK_THROWS_AS(iqc::mpc_single_multiplier({-Mat::Identity(2, 2)}), ValidationError);
}

TEST_CASE("sector IQC accumulates nonnegatively over random QP evaluations") {
  std::mt19937_64 rng(31);
  const Mat H = random_spd(rng, 3);
  const auto bx = random_box(rng, 3);
  const auto mult = iqc::mpc_single_multiplier({H});
  std::vector<Vec> v, w;
  for (int k = 0; k < 200; ++k) {
    const Vec f = 3.0 * oracle::random_matrix(rng, 3, 1);
    v.push_back(f);
    w.push_back(mpc::solve_qp(H, f, bx.L, bx.b).U);
  }
  const auto chk = iqc::validate_iqc(mult, Vec::Ones(1), v, w, std::vector<size_t>(200, 0));
  CHECK(chk.min_prefix >= -1e-8);
}

TEST_CASE("mpc_conic_multiplier: uniform lambda, inactive models and switched traces") {
  std::mt19937_64 rng(32);
  std::vector<Mat> H;
  std::vector<Box> boxes;
  for (int i = 0; i < 3; ++i) {
    H.push_back(random_spd(rng, 2));
    boxes.push_back(random_box(rng, 2));
  }
  const auto single = iqc::mpc_single_multiplier(H);
  const auto conic = iqc::mpc_conic_multiplier(H);
  CHECK(conic.n_params() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK(conic.evaluate(i, Vec::Ones(3)) == single.evaluate(i, Vec::Ones(1)));

  std::uniform_int_distribution<size_t> pick(0, 1);  // model 2 never active
  std::vector<Vec> v, w;
  std::vector<size_t> act;
  size_t cur = 0;
  for (int k = 0; k < 300; ++k) {
    if (k % 17 == 0) cur = pick(rng);
    const Vec f = 3.0 * oracle::random_matrix(rng, 2, 1);
    v.push_back(f);
    w.push_back(mpc::solve_qp(H[cur], f, boxes[cur].L, boxes[cur].b).U);
    act.push_back(cur);
  }
  Vec lam(3);
  lam << 0.7, 2.0, 1.0;
  const auto with = iqc::validate_iqc(conic, lam, v, w, act);
  lam[2] = 0.0;
  const auto without = iqc::validate_iqc(conic, lam, v, w, act);
  CHECK(with.final_sum == without.final_sum);

  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 20; ++t) {
    const Vec l = Vec::NullaryExpr(3, [&] { return u(rng); });
    CHECK(iqc::validate_iqc(conic, l, v, w, act).min_prefix >= -1e-8);
  }
}

TEST_CASE("mpc_box_multiplier: collapse to the sector form and parameter layout") {
  std::mt19937_64 rng(33);
  const auto bx = random_box(rng, 2);
  const auto m = iqc::mpc_box_multiplier({Mat::Identity(2, 2)}, {qp_of(Mat::Identity(2, 2), bx)});
  CHECK(m.n_params() == 2);
  CHECK(m.param_indices(0).size() == 2);
  const auto single = iqc::mpc_single_multiplier({Mat::Identity(2, 2)});
  CHECK((m.evaluate(0, Vec::Ones(2)) - single.per_model[0]).cwiseAbs().maxCoeff() == 0.0);

  // K = λI reduces to λ times the sector multiplier for any H
  const Mat H = random_spd(rng, 2);
  const auto mh = iqc::mpc_box_multiplier({H}, {qp_of(H, bx)});
  const auto sh = iqc::mpc_single_multiplier({H});
  for (double lam : {0.0, 0.3, 4.0})
    CHECK((mh.evaluate(0, Vec::Constant(2, lam)) - lam * sh.per_model[0]).cwiseAbs().maxCoeff() <= 1e-12);

  Mat K = Mat::Zero(2, 2);
  K.diagonal() << 0.5, 3.0;
  const Mat M = iqc::box_multiplier_matrix(K, H);
  CHECK(M == M.transpose());
}

TEST_CASE("box IQC holds on saturation traces for random diagonal K") {
  std::mt19937_64 rng(34);
  Mat L(2, 1);
  L << 1, -1;
  const Vec b = Vec::Ones(2);
  const Mat H = Mat::Ones(1, 1);
  const auto m = iqc::mpc_box_multiplier({H}, {qp_of(H, {L, b})});
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<Vec> v, w;
    for (int k = 0; k < 100; ++k) {
      const Vec f = 4.0 * oracle::random_matrix(rng, 1, 1);
      v.push_back(f);
      w.push_back(mpc::solve_qp(H, f, L, b).U);
    }
    const Vec K = Vec::Constant(1, u(rng));
    CHECK(iqc::validate_iqc(m, K, v, w, std::vector<size_t>(100, 0)).min_prefix >= -1e-8);
  }

  // general H and a multi-dimensional box
  const Mat H3 = random_spd(rng, 3);
  const auto bx = random_box(rng, 3);
  const auto m3 = iqc::mpc_box_multiplier({H3}, {qp_of(H3, bx)});
  std::vector<Vec> v, w;
  for (int k = 0; k < 300; ++k) {
    const Vec f = 4.0 * oracle::random_matrix(rng, 3, 1);
    v.push_back(f);
    w.push_back(mpc::solve_qp(H3, f, bx.L, bx.b).U);
  }
  const Vec K = Vec::NullaryExpr(3, [&] { return u(rng); });
  CHECK(iqc::validate_iqc(m3, K, v, w, std::vector<size_t>(300, 0)).min_prefix >= -1e-8);
}

TEST_CASE("decompose_box rejects non-box constraint sets") {
  Mat odd = Mat::Zero(3, 2);
  CHECK_THROWS_AS(iqc::decompose_box(odd, Vec::Ones(3)), ValidationError);

  Mat unpaired(2, 2);
  unpaired << 1, 0, 0, -1;
  try {
    iqc::decompose_box(unpaired, Vec::Ones(2));
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("rows 0 and 1") != std::string::npos);
  }

  Mat skew(4, 2);
  skew << 1, 0, -1, 0, 1, 1, -1, -1;
  CHECK_THROWS_AS(iqc::decompose_box(skew, Vec::Ones(4)), ValidationError);

  Mat ok(2, 1);
  ok << 1, -1;
  Vec neg(2);
  neg << -1, 2;  // upper bound below zero
  CHECK_THROWS_AS(iqc::decompose_box(ok, neg), ValidationError);

  // scaled rows normalize, and the basis is orthonormal
  Mat scaled = Mat::Zero(2, 3);
  scaled(0, 1) = 2;
  scaled(1, 1) = -2;
  Vec bb(2);
  bb << 4, 2;
  const auto box = iqc::decompose_box(scaled, bb);
  CHECK(box.upper[0] == doctest::Approx(2.0));
  CHECK(box.lower[0] == doctest::Approx(-1.0));
  CHECK((box.basis * box.basis.transpose() - Mat::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("psi_c path reproduces the direct QP solution") {
  std::mt19937_64 rng(35);
  for (int t = 0; t < 300; ++t) {
    const Eigen::Index n = 1 + t % 5;
    const Mat H = random_spd(rng, n);
    const auto bx = random_box(rng, n);
    const Vec f = 3.0 * oracle::random_matrix(rng, n, 1);
    const Vec U = mpc::solve_qp(H, f, bx.L, bx.b).U;
    const auto box = iqc::decompose_box(bx.L, bx.b);
    const Vec Upsi = iqc::psi_c(box, iqc::psi_input(H, f, U));
    CHECK((Upsi - U).norm() <= 1e-6);
  }
}

TEST_CASE("norm_bounded_multiplier") {
  const auto m = iqc::norm_bounded_multiplier(0.1, 1, 1);
  Mat want(2, 2);
  want << 0.01, 0, 0, -1;
  CHECK((m.M - want).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(iqc::norm_bounded_multiplier(-0.1, 1, 1), ValidationError);

  std::mt19937_64 rng(36);
  const auto m3 = iqc::norm_bounded_multiplier(0.3, 3, 3);
  std::vector<Vec> v, w0, w;
  std::uniform_real_distribution<double> g(-0.3, 0.3);
  for (int k = 0; k < 200; ++k) {
    v.push_back(oracle::random_matrix(rng, 3, 1));
    w0.push_back(Vec::Zero(3));
    w.push_back(g(rng) * v.back());
  }
  const std::vector<size_t> act(200, 0);
  CHECK(iqc::validate_iqc(m3, Vec::Ones(1), v, w0, act).min_prefix == 0.0);
  CHECK(iqc::validate_iqc(m3, Vec::Ones(1), v, w, act).min_prefix >= -1e-12);
}

TEST_CASE("validate_iqc: empty, corrupted and mismatched traces") {
  const auto m = iqc::mpc_single_multiplier({Mat::Ones(1, 1)});
  std::vector<Vec> z(10, Vec::Zero(1));
  CHECK(iqc::validate_iqc(m, Vec::Ones(1), z, z, std::vector<size_t>(10, 0)).min_prefix == 0.0);

  Mat L(2, 1);
  L << 1, -1;
  std::vector<Vec> v, w;
  for (int k = 0; k < 50; ++k) {
    v.push_back(Vec::Constant(1, 0.5 + 0.01 * k));
    w.push_back(mpc::solve_qp(Mat::Ones(1, 1), v.back(), L, Vec::Ones(2)).U);
  }
  CHECK(iqc::validate_iqc(m, Vec::Ones(1), v, w, std::vector<size_t>(50, 0)).min_prefix >= -1e-12);
  w[0] = -w[0];
  CHECK(iqc::validate_iqc(m, Vec::Ones(1), v, w, std::vector<size_t>(50, 0)).min_prefix < 0.0);

  CHECK_THROWS_AS(iqc::validate_iqc(m, Vec::Ones(1), v, w, std::vector<size_t>(3, 0)), ValidationError);
  std::vector<Vec> wide(50, Vec::Zero(2));
  CHECK_THROWS_AS(iqc::validate_iqc(m, Vec::Ones(1), v, wide, std::vector<size_t>(50, 0)), ValidationError);
}

TEST_CASE("multiplier JSON carries kind, dimensions and layout") {
  std::mt19937_64 rng(37);
  const Mat H = random_spd(rng, 2);
  const auto m = iqc::mpc_box_multiplier({H, H}, {qp_of(H, random_box(rng, 2)), qp_of(H, random_box(rng, 2))});
  const auto j = nlohmann::json::parse(iqc::multiplier_to_json(m));
  CHECK(j["kind"] == "mpc_box");
  CHECK(j["n_v"] == 2);
  CHECK(j["free_params"]["count"] == 4);
  CHECK(j["per_model"].size() == 2);
  CHECK(iqc::kind_from_string(iqc::to_string(iqc::MultiplierKind::mpc_conic)) == iqc::MultiplierKind::mpc_conic);
  CHECK_THROWS_AS(iqc::kind_from_string("zames_falb"), ValidationError);
}
