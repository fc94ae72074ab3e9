#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "steer/matfun.hpp"
#include "test_support.hpp"

using Eigen::MatrixXd;
using namespace steer;
namespace ts = test_support;

namespace {

double rel_err(const MatrixXd& got, const MatrixXd& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

MatrixXd random_skew(std::mt19937_64& rng, int n) {
  const MatrixXd g = ts::random_matrix(rng, n, n);
  return 0.5 * (g - g.transpose());
}

}  // namespace

TEST_CASE("expm matches a truncated Taylor series on moderate-norm matrices",
          "[matfun]") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    MatrixXd a = ts::random_matrix(rng, n, n);
    a *= 2.5 / std::max(1.0, a.lpNorm<Eigen::Infinity>());
    REQUIRE(rel_err(expm(a), ts::expm_series(a)) < 1e-12);
  }
}

TEST_CASE("expm reproduces the quarter-turn rotation", "[matfun]") {
  MatrixXd omega(2, 2);
  omega << 0.0, -1.0, 1.0, 0.0;
  const double h = std::sqrt(2.0) / 2.0;  // 0.7071067811865476
  MatrixXd want(2, 2);
  want << h, -h, h, h;
  REQUIRE((expm(M_PI / 4.0 * omega) - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("expm is exact on a nilpotent block", "[matfun]") {
  MatrixXd a(2, 2);
  a << 0.0, 1.0, 0.0, 0.0;
  MatrixXd want(2, 2);
  want << 1.0, 1.0, 0.0, 1.0;
  REQUIRE((expm(a) - want).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("expm of A and -A are mutual inverses", "[matfun]") {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    MatrixXd a = ts::random_matrix(rng, n, n);
    a *= 2.0 / std::max(1.0, a.lpNorm<Eigen::Infinity>());
    const MatrixXd prod = expm(a) * expm(-a);
    REQUIRE(rel_err(prod, MatrixXd::Identity(n, n)) < 1e-12);
  }
}

TEST_CASE("sqrtm_spd squares back to its argument", "[matfun]") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    const SpdMatrix p(ts::random_spd(rng, n, 1e-3, 1e3));
    const SpdMatrix r = sqrtm_spd(p);
    REQUIRE(rel_err(r.matrix() * r.matrix(), p.matrix()) < 1e-11);
  }

  // A reachability Gramian instance with exact rational entries.
  MatrixXd w(2, 2);
  w << 1.0 / 3.0, -0.5, -0.5, 1.0;
  const SpdMatrix root = sqrtm_spd(SpdMatrix(w));
  REQUIRE(rel_err(root.matrix() * root.matrix(), w) < 1e-13);
}

TEST_CASE("inv_sqrtm_spd inverts the SPD square root", "[matfun]") {
  std::mt19937_64 rng(104);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 4);
    const SpdMatrix p(ts::random_spd(rng, n, 1e-2, 1e2));
    const MatrixXd prod = sqrtm_spd(p).matrix() * inv_sqrtm_spd(p).matrix();
    REQUIRE(rel_err(prod, MatrixXd::Identity(n, n)) < 1e-11);
  }
}

TEST_CASE("logm_spd round-trips through expm and halves under sqrt",
          "[matfun]") {
  std::mt19937_64 rng(105);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    const SpdMatrix p(ts::random_spd(rng, n, 1e-2, 1e2));
    const MatrixXd lg = logm_spd(p);
    REQUIRE(rel_err(expm(lg), p.matrix()) < 1e-11);
    // Spectral calculus: log(sqrt(P)) = log(P)/2.
    REQUIRE(rel_err(logm_spd(sqrtm_spd(p)), 0.5 * lg) < 1e-11);
  }
}

TEST_CASE("logm_rotation recovers known planar logs", "[matfun]") {
  const double theta = 0.7;
  const MatrixXd r2 = ts::plane_rotation(2, 0, 1, theta);
  MatrixXd want2(2, 2);
  want2 << 0.0, -theta, theta, 0.0;
  REQUIRE(rel_err(logm_rotation(RotationMatrix(r2)), want2) < 1e-13);

  // Rotation about the third axis in three dimensions.
  const MatrixXd r3 = ts::plane_rotation(3, 0, 1, theta);
  const MatrixXd lg3 = logm_rotation(RotationMatrix(r3));
  MatrixXd want3 = MatrixXd::Zero(3, 3);
  want3(0, 1) = -theta;
  want3(1, 0) = theta;
  REQUIRE(rel_err(lg3, want3) < 1e-13);
}

TEST_CASE("logm_rotation round-trips random rotations below the branch cut",
          "[matfun]") {
  std::mt19937_64 rng(106);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    MatrixXd s = random_skew(rng, n);
    const double top = operator_norm(s);  // largest rotation angle
    if (top > 0.0) {
      s *= (M_PI - 0.2) / top * (0.1 + 0.9 * (trial / 20.0));
    }
    const MatrixXd r = expm(s);
    const MatrixXd lg = logm_rotation(RotationMatrix(r));
    REQUIRE((lg + lg.transpose()).norm() < 1e-12);
    REQUIRE(rel_err(lg, s) < 1e-9);
  }
}

TEST_CASE("logm_rotation assigns +pi on half-turn planes", "[matfun]") {
  const MatrixXd minus_i2 = -MatrixXd::Identity(2, 2);
  const MatrixXd lg2 = logm_rotation(RotationMatrix(minus_i2));
  REQUIRE((lg2 + lg2.transpose()).norm() < 1e-14);
  REQUIRE(std::abs(operator_norm(lg2) - M_PI) < 1e-12);
  REQUIRE(rel_err(expm(lg2), minus_i2) < 1e-12);

  Eigen::Vector3d diag3(1.0, -1.0, -1.0);
  const MatrixXd flip3 = diag3.asDiagonal();
  const MatrixXd lg3 = logm_rotation(RotationMatrix(flip3));
  REQUIRE(rel_err(expm(lg3), flip3) < 1e-12);

  const MatrixXd minus_i4 = -MatrixXd::Identity(4, 4);
  const MatrixXd lg4 = logm_rotation(RotationMatrix(minus_i4));
  REQUIRE(rel_err(expm(lg4), minus_i4) < 1e-12);
}

TEST_CASE("logm_rotation eigen-angles stay in the principal interval",
          "[matfun]") {
  std::mt19937_64 rng(107);
  for (int trial = 0; trial < 15; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 4);
    const MatrixXd q = ts::random_rotation(rng, n);
    const MatrixXd lg = logm_rotation(RotationMatrix(q));
    const Eigen::VectorXcd ev = Eigen::EigenSolver<MatrixXd>(lg).eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
      REQUIRE(ev(i).imag() <= M_PI + 1e-12);
      REQUIRE(ev(i).imag() > -M_PI - 1e-12);
    }
    REQUIRE(rel_err(expm(lg), q) < 1e-9);
  }
}

TEST_CASE("polar reconstructs its input and matches a Newton oracle",
          "[matfun]") {
  std::mt19937_64 rng(108);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    const MatrixXd m = ts::random_glplus(rng, n);
    const PolarFactors pf = polar(m);
    REQUIRE(rel_err(pf.p.matrix() * pf.q.matrix(), m) < 1e-11);
    REQUIRE(rel_err(pf.q.matrix(), ts::newton_polar_rotation(m)) < 1e-9);
  }
}

TEST_CASE("polar of the canonical two-SPD product is a quarter turn",
          "[matfun]") {
  const double sigma = (std::sqrt(17.0) - 3.0) / 4.0;
  MatrixXd s1(2, 2), s2(2, 2);
  s1 << 1.0, sigma, sigma, 2.0 * sigma * sigma;
  s2 << 2.0 * sigma * sigma, sigma, sigma, 1.0;
  const MatrixXd m = s2 * s1;
  const PolarFactors pf = polar(m);
  REQUIRE(rel_err(pf.q.matrix(), ts::plane_rotation(2, 0, 1, M_PI / 4.0)) <
          1e-12);
  const MatrixXd gram = s2 * s1 * s1 * s2;
  REQUIRE(rel_err(pf.p.matrix(), sqrtm_spd(SpdMatrix(gram)).matrix()) < 1e-12);
}

TEST_CASE("polar rejects reflections and singular matrices", "[matfun]") {
  MatrixXd reflect(2, 2);
  reflect << 0.0, 1.0, 1.0, 0.0;  // determinant -1
  REQUIRE_THROWS_AS(polar(reflect), std::domain_error);

  MatrixXd rank1(2, 2);
  rank1 << 1.0, 2.0, 2.0, 4.0;
  REQUIRE_THROWS_AS(polar(rank1), std::domain_error);
}

TEST_CASE("extremal singular values agree with independent oracles",
          "[matfun]") {
  std::mt19937_64 rng(109);
  for (int trial = 0; trial < 15; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    const MatrixXd m = ts::random_matrix(rng, n, n, 2.0);

    const double top = operator_norm(m);
    REQUIRE(std::abs(top - ts::power_iteration_norm(rng, m)) < 1e-6 * top);

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m.transpose() * m);
    const double bottom_oracle = std::sqrt(std::max(0.0, eig.eigenvalues().minCoeff()));
    REQUIRE(std::abs(min_singular_value(m) - bottom_oracle) <
            1e-10 * std::max(1.0, top));
  }

  // Inversion identity on a well-conditioned instance.
  std::mt19937_64 rng2(110);
  const MatrixXd w = ts::random_spd(rng2, 4, 0.5, 2.0);
  REQUIRE(std::abs(min_singular_value(w.inverse()) - 1.0 / operator_norm(w)) <
          1e-9);
}

TEST_CASE("SpdMatrix and RotationMatrix enforce their invariants", "[matfun]") {
  // Asymmetry beyond tolerance is rejected.
  MatrixXd bad_sym(2, 2);
  bad_sym << 1.0, 0.5, -0.5, 1.0;
  REQUIRE_THROWS_AS(SpdMatrix(bad_sym), std::domain_error);

  // Indefinite input is rejected.
  MatrixXd indef(2, 2);
  indef << 1.0, 0.0, 0.0, -1.0;
  REQUIRE_THROWS_AS(SpdMatrix(indef), std::domain_error);

  // Tiny asymmetry is absorbed and symmetrized.
  MatrixXd nearly(2, 2);
  nearly << 2.0, 1e-10, 0.0, 2.0;
  const SpdMatrix cleaned(nearly);
  REQUIRE((cleaned.matrix() - cleaned.matrix().transpose()).norm() == 0.0);

  // Reflections and non-orthogonal matrices are rejected.
  MatrixXd reflect(2, 2);
  reflect << 1.0, 0.0, 0.0, -1.0;
  REQUIRE_THROWS_AS(RotationMatrix(reflect), std::domain_error);
  REQUIRE_THROWS_AS(RotationMatrix(MatrixXd::Constant(2, 2, 1.0)),
                    std::domain_error);

  // In-tolerance defects are re-orthonormalized.
  std::mt19937_64 rng(111);
  MatrixXd q = ts::random_rotation(rng, 3);
  q(0, 1) += 1e-10;
  const RotationMatrix fixed(q);
  REQUIRE((fixed.matrix().transpose() * fixed.matrix() -
           MatrixXd::Identity(3, 3))
              .norm() < 1e-13);
}
