#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "steer/factorizer.hpp"
#include "steer/segment.hpp"
#include "steer/sysmod.hpp"
#include "test_support.hpp"

namespace {

using test_support::plane_rotation;
using test_support::random_glplus;
using test_support::random_matrix;
using test_support::random_rotation;
using test_support::random_spd;

Eigen::MatrixXd omega2() {
  Eigen::MatrixXd w(2, 2);
  w << 0.0, -1.0, 1.0, 0.0;
  return w;
}

/// Factor-list product in the library's convention: last element leftmost.
Eigen::MatrixXd product_last_leftmost(const std::vector<Eigen::MatrixXd>& fs,
                                      int n) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(n, n);
  for (const Eigen::MatrixXd& f : fs) {
    acc = f * acc;
  }
  return acc;
}

/// The opposite (wrong) reading, used to pin the convention.
Eigen::MatrixXd product_first_leftmost(const std::vector<Eigen::MatrixXd>& fs,
                                       int n) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(n, n);
  for (const Eigen::MatrixXd& f : fs) {
    acc = acc * f;
  }
  return acc;
}

steer::PeriodizedSystem double_integrator(double t_s) {
  Eigen::MatrixXd a(2, 2);
  a << 0.0, 1.0, 0.0, 0.0;
  Eigen::MatrixXd b(2, 1);
  b << 0.0, 1.0;
  return steer::PeriodizedSystem::synthesize(steer::LinearEnsemble(a, b), t_s);
}

}  // namespace

TEST_CASE("polar split into rotation and stretch exponents", "[factorizer]") {
  std::mt19937_64 rng(8101);

  const auto at_identity =
      steer::two_exponential_split(Eigen::MatrixXd::Identity(3, 3));
  REQUIRE(at_identity.rotation_log.norm() <= 1e-12);
  REQUIRE(at_identity.stretch_log.norm() <= 1e-12);

  const Eigen::MatrixXd quarter = plane_rotation(2, 0, 1, 0.25 * M_PI);
  const auto at_rotation = steer::two_exponential_split(quarter);
  REQUIRE((at_rotation.rotation_log - 0.25 * M_PI * omega2()).norm() <=
          1e-12);
  REQUIRE(at_rotation.stretch_log.norm() <= 1e-12);

  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::MatrixXd target = random_glplus(rng, 4);
    const auto logs = steer::two_exponential_split(target);
    REQUIRE((logs.rotation_log + logs.rotation_log.transpose()).norm() <=
            1e-12);
    REQUIRE((logs.stretch_log - logs.stretch_log.transpose()).norm() <=
            1e-12);
    const Eigen::MatrixXd rebuilt =
        steer::expm(logs.stretch_log) * steer::expm(logs.rotation_log);
    REQUIRE((rebuilt - target).norm() <= 1e-9 * (1.0 + target.norm()));
  }

  Eigen::MatrixXd reflect(2, 2);
  reflect << -1.0, 0.0, 0.0, 1.0;
  REQUIRE_THROWS_AS(steer::two_exponential_split(reflect), std::domain_error);
}

TEST_CASE("near-identity factor counts are minimal admissible", "[factorizer]") {
  std::mt19937_64 rng(8102);

  const auto empty = steer::near_identity_factorize(
      Eigen::MatrixXd::Identity(3, 3), 0.1);
  REQUIRE(empty.count() == 0);
  REQUIRE(empty.rotation_count == 0);
  REQUIRE(empty.stretch_count == 0);

  // Quarter turn at epsilon = 0.1: nine copies of the 5-degree rotation.
  const Eigen::MatrixXd quarter = plane_rotation(2, 0, 1, 0.25 * M_PI);
  const auto rot = steer::near_identity_factorize(quarter, 0.1);
  REQUIRE(rot.rotation_count == 9);
  REQUIRE(rot.stretch_count == 0);
  REQUIRE(rot.count() == 9);
  const Eigen::MatrixXd step = plane_rotation(2, 0, 1, M_PI / 36.0);
  for (const Eigen::MatrixXd& f : rot.factors) {
    REQUIRE((f - step).norm() <= 1e-13);
    REQUIRE(steer::operator_norm(f - Eigen::MatrixXd::Identity(2, 2)) < 0.1);
  }
  REQUIRE((product_last_leftmost(rot.factors, 2) - quarter).norm() <= 1e-12);

  // Pure stretch diag(e^3, 1) at epsilon = 0.5: eight equal roots.
  Eigen::MatrixXd stretch(2, 2);
  stretch << std::exp(3.0), 0.0, 0.0, 1.0;
  const auto str = steer::near_identity_factorize(stretch, 0.5);
  REQUIRE(str.rotation_count == 0);
  REQUIRE(str.stretch_count == 8);
  Eigen::MatrixXd root(2, 2);
  root << std::exp(3.0 / 8.0), 0.0, 0.0, 1.0;
  REQUIRE((str.factors.front() - root).norm() <= 1e-13);
  REQUIRE((product_last_leftmost(str.factors, 2) - stretch).norm() <=
          1e-11 * stretch.norm());

  // Count formula against an independent norm oracle.
  for (const double eps : {0.1, 0.5}) {
    for (int rep = 0; rep < 10; ++rep) {
      const Eigen::MatrixXd target = random_glplus(rng, 3);
      const auto fact = steer::near_identity_factorize(target, eps);
      const auto logs = steer::two_exponential_split(target);
      for (const auto& [log_part, count] :
           {std::pair{logs.rotation_log, fact.rotation_count},
            std::pair{logs.stretch_log, fact.stretch_count}}) {
        const double norm = test_support::power_iteration_norm(rng, log_part);
        if (norm > 1e-10) {
          REQUIRE(count == static_cast<int>(
                               std::floor(norm / std::log1p(eps))) +
                               1);
        }
      }
      for (const Eigen::MatrixXd& f : fact.factors) {
        REQUIRE(steer::operator_norm(
                    f - Eigen::MatrixXd::Identity(3, 3)) < eps);
      }
      REQUIRE((product_last_leftmost(fact.factors, 3) - target).norm() <=
              1e-9 * (1.0 + target.norm()));
    }
  }

  REQUIRE_THROWS_AS(steer::near_identity_factorize(quarter, 0.0),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(steer::near_identity_factorize(quarter, -0.2),
                    std::invalid_argument);
}

TEST_CASE("factor lists reconstruct with the last element leftmost",
          "[factorizer]") {
  // Non-commuting rotation and stretch parts expose the order.
  const Eigen::MatrixXd m1 = 0.9 * omega2();
  Eigen::MatrixXd m2(2, 2);
  m2 << 1.2, 0.0, 0.0, -0.4;
  const Eigen::MatrixXd target = steer::expm(m2) * steer::expm(m1);

  const auto near = steer::near_identity_factorize(target, 0.3);
  REQUIRE((product_last_leftmost(near.factors, 2) - target).norm() <= 1e-10);
  REQUIRE((product_first_leftmost(near.factors, 2) - target).norm() > 1e-2);

  std::mt19937_64 rng(8103);
  const steer::SpdMatrix w(random_spd(rng, 2, 0.5, 4.0));
  const auto cone = steer::spd_cone_factorize(target, w);
  REQUIRE((product_last_leftmost(cone.factors, 2) - target).norm() <=
          1e-9 * (1.0 + target.norm()));
  REQUIRE((product_first_leftmost(cone.factors, 2) - target).norm() > 1e-2);
}

TEST_CASE("three SPD factors rebuild a plane rotation", "[factorizer]") {
  // Quarter turn: sigma takes its closed-form value.
  const auto quarter = steer::rotation_to_three_spd(0.25 * M_PI);
  const double sigma_want = 0.25 * (std::sqrt(17.0) - 3.0);
  const double sigma = quarter.s1.matrix()(0, 1);
  REQUIRE(std::abs(sigma - sigma_want) <= 1e-14);
  Eigen::MatrixXd s1_want(2, 2);
  s1_want << 1.0, sigma_want, sigma_want, 2.0 * sigma_want * sigma_want;
  REQUIRE((quarter.s1.matrix() - s1_want).norm() <= 1e-13);
  Eigen::MatrixXd s2_want(2, 2);
  s2_want << 2.0 * sigma_want * sigma_want, sigma_want, sigma_want, 1.0;
  REQUIRE((quarter.s2.matrix() - s2_want).norm() <= 1e-13);
  REQUIRE((quarter.s3.matrix() * quarter.s2.matrix() * quarter.s1.matrix() -
           plane_rotation(2, 0, 1, 0.25 * M_PI))
              .norm() <= 1e-10);

  // Sixty degrees: sigma solves its defining quadratic.
  const auto third = steer::rotation_to_three_spd(M_PI / 3.0);
  const double sigma3 = third.s1.matrix()(0, 1);
  REQUIRE(std::abs(2.0 * sigma3 * sigma3 +
                   3.0 * std::tan(M_PI / 3.0) * sigma3 - 1.0) <= 1e-12);
  REQUIRE((third.s3.matrix() * third.s2.matrix() * third.s1.matrix() -
           plane_rotation(2, 0, 1, M_PI / 3.0))
              .norm() <= 1e-10);

  // Small angles: sigma approaches 1/sqrt(2) and s2 s1 becomes symmetric.
  const auto tiny = steer::rotation_to_three_spd(1e-4);
  REQUIRE(std::abs(tiny.s1.matrix()(0, 1) - 1.0 / std::sqrt(2.0)) <= 1e-3);
  const Eigen::MatrixXd s21 = tiny.s2.matrix() * tiny.s1.matrix();
  REQUIRE((s21 - s21.transpose()).norm() <= 1e-3);
  REQUIRE((tiny.s3.matrix() * s21 - plane_rotation(2, 0, 1, 1e-4)).norm() <=
          1e-10);

  // Negative angles mirror by transposition.
  const auto neg = steer::rotation_to_three_spd(-0.6);
  REQUIRE((neg.s3.matrix() * neg.s2.matrix() * neg.s1.matrix() -
           plane_rotation(2, 0, 1, -0.6))
              .norm() <= 1e-10);

  // Structural identity: the orthogonal polar factor of s2 s1 is the
  // rotation itself (Newton-iteration polar oracle).
  std::mt19937_64 rng(8104);
  std::uniform_real_distribution<double> angle(0.01, 0.5 * M_PI - 0.11);
  for (int rep = 0; rep < 50; ++rep) {
    const double theta = (rep % 2 == 0 ? 1.0 : -1.0) * angle(rng);
    const auto triple = steer::rotation_to_three_spd(theta);
    REQUIRE((triple.s3.matrix() * triple.s2.matrix() * triple.s1.matrix() -
             plane_rotation(2, 0, 1, theta))
                .norm() <= 1e-10);
    if (theta > 0.0) {
      const Eigen::MatrixXd q = test_support::newton_polar_rotation(
          triple.s2.matrix() * triple.s1.matrix());
      REQUIRE((q - plane_rotation(2, 0, 1, theta)).norm() <= 1e-9);
    }
  }

  REQUIRE_THROWS_AS(steer::rotation_to_three_spd(0.0), std::domain_error);
  REQUIRE_THROWS_AS(steer::rotation_to_three_spd(0.5 * M_PI),
                    std::domain_error);
  REQUIRE_THROWS_AS(steer::rotation_to_three_spd(-1.7), std::domain_error);
}

TEST_CASE("whitened factorization certifies every piece", "[factorizer]") {
  std::mt19937_64 rng(8105);

  // Rotation target against the double-integrator Gramian: one SPD polar
  // core plus one three-SPD triple.
  const auto di = double_integrator(4.0);
  const steer::SpdMatrix w = steer::GramianEvaluator(di).gramian(di.period());
  const Eigen::MatrixXd quarter = plane_rotation(2, 0, 1, 0.25 * M_PI);
  const auto fact = steer::spd_cone_factorize(quarter, w);
  REQUIRE(fact.count() == 4);
  REQUIRE(fact.spd_cores.size() == 4);
  REQUIRE((product_last_leftmost(fact.factors, 2) - quarter).norm() <= 1e-9);
  for (const Eigen::MatrixXd& core : fact.spd_cores) {
    REQUIRE((core - core.transpose()).norm() <= 1e-10);
    REQUIRE(steer::SpdMatrix(core).min_eigenvalue() > 0.0);
  }
  for (const Eigen::MatrixXd& f : fact.factors) {
    REQUIRE(steer::passes_spd_cone(f, w));
  }

  // The five-piece conjugation pattern (W^{1/2}, then the triple, then
  // W^{-1/2}) also satisfies the same invariants.
  const Eigen::MatrixXd w_half = steer::sqrtm_spd(w).matrix();
  const Eigen::MatrixXd w_inv_half = steer::inv_sqrtm_spd(w).matrix();
  const auto triple = steer::rotation_to_three_spd(0.25 * M_PI);
  const std::vector<Eigen::MatrixXd> five = {
      w_half,
      w_half * triple.s1.matrix() * w_inv_half,
      w_half * triple.s2.matrix() * w_inv_half,
      w_half * triple.s3.matrix() * w_inv_half,
      w_inv_half,
  };
  REQUIRE((product_last_leftmost(five, 2) - quarter).norm() <= 1e-9);
  for (const Eigen::MatrixXd& f : five) {
    REQUIRE(steer::passes_spd_cone(f, w));
  }

  // Already-conjugated SPD targets come back as a single factor.
  const Eigen::MatrixXd spd_target =
      w_half * random_spd(rng, 2, 0.3, 3.0) * w_inv_half;
  const auto single = steer::spd_cone_factorize(spd_target, w);
  REQUIRE(single.count() == 1);
  REQUIRE((single.factors[0] - spd_target).norm() <=
          1e-9 * (1.0 + spd_target.norm()));

  // Identity target: empty product.
  REQUIRE(steer::spd_cone_factorize(Eigen::MatrixXd::Identity(2, 2), w)
              .count() == 0);

  // Wide angles are split; a half-turn exercises the negative-diagonal
  // branch of the Givens sweep.
  for (const double theta : {2.9, M_PI}) {
    const Eigen::MatrixXd wide =
        w_half * plane_rotation(2, 0, 1, theta) * w_inv_half;
    const auto split = steer::spd_cone_factorize(wide, w);
    REQUIRE(split.count() == 1 + 3 * 4);  // four quarter-ish sub-rotations
    REQUIRE((product_last_leftmost(split.factors, 2) - wide).norm() <=
            1e-8 * (1.0 + wide.norm()));
    for (const Eigen::MatrixXd& f : split.factors) {
      REQUIRE(steer::passes_spd_cone(f, w));
    }
  }

  // Random targets in higher dimension with a generic conjugator.
  for (int rep = 0; rep < 15; ++rep) {
    const int n = 3 + rep % 2;
    const steer::SpdMatrix w_rand(random_spd(rng, n, 0.5, 4.0));
    const Eigen::MatrixXd target = random_glplus(rng, n);
    const auto rand_fact = steer::spd_cone_factorize(target, w_rand);
    REQUIRE((product_last_leftmost(rand_fact.factors, n) - target).norm() <=
            1e-8 * (1.0 + target.norm()));
    for (const Eigen::MatrixXd& core : rand_fact.spd_cores) {
      REQUIRE((core - core.transpose()).norm() <= 1e-10);
      REQUIRE(steer::SpdMatrix(core).min_eigenvalue() > 0.0);
    }
    for (const Eigen::MatrixXd& f : rand_fact.factors) {
      REQUIRE(steer::passes_spd_cone(f, w_rand));
    }
  }

  // A pure rotation conjugator mismatch: reflections are rejected.
  Eigen::MatrixXd reflect(2, 2);
  reflect << 0.0, 1.0, 1.0, 0.0;
  REQUIRE_THROWS_AS(steer::spd_cone_factorize(reflect, w), std::domain_error);
}

TEST_CASE("whitening ratio bounds the ball certificate of each factor",
          "[factorizer]") {
  std::mt19937_64 rng(8106);
  std::uniform_real_distribution<double> lo_draw(0.2, 1.0);
  std::uniform_real_distribution<double> width(0.5, 5.0);
  std::uniform_real_distribution<double> radius(0.05, 0.99);

  // Conjugation by W^{1/2} dilates operator norms by at most the square
  // root of the eigenvalue spread.
  for (int rep = 0; rep < 500; ++rep) {
    const int n = 2 + rep % 5;
    const double lo = lo_draw(rng);
    const steer::SpdMatrix w(random_spd(rng, n, lo, lo + width(rng)));
    Eigen::MatrixXd delta = random_matrix(rng, n, n);
    delta *= radius(rng) / steer::operator_norm(delta);
    const double dilated = steer::operator_norm(
        steer::sqrtm_spd(w).matrix() * delta *
        steer::inv_sqrtm_spd(w).matrix());
    const double bound =
        std::sqrt(w.max_eigenvalue() / w.min_eigenvalue());
    REQUIRE(dilated <= bound * (1.0 + 1e-10));
  }

  // Consequence: factoring at epsilon = sqrt(lambda_min/lambda_max) leaves
  // every factor inside the norm-ball certificate of W.
  for (int rep = 0; rep < 10; ++rep) {
    const steer::SpdMatrix w(random_spd(rng, 3, 0.5, 4.0));
    const double eps =
        std::sqrt(w.min_eigenvalue() / w.max_eigenvalue());
    const Eigen::MatrixXd target = random_glplus(rng, 3);
    const auto fact = steer::near_identity_factorize(target, eps);
    REQUIRE(fact.count() > 0);
    for (const Eigen::MatrixXd& f : fact.factors) {
      REQUIRE(steer::passes_norm_ball(f, w));
    }
  }
}
