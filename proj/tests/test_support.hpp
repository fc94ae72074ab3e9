#ifndef STEER_TESTS__TEST_SUPPORT_HPP_
#define STEER_TESTS__TEST_SUPPORT_HPP_

/// Shared generators and independent numerical oracles for the test suite.
/// Oracles deliberately use different algorithms than the library code they
/// check (truncated series vs Pade, quadrature vs block exponential, power
/// iteration vs SVD, Newton vs SVD-based polar).

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "steer/matfun.hpp"

namespace test_support {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols,
                                     double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      m(i, j) = scale * gauss(rng);
    }
  }
  return m;
}

inline Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, int n) {
  const Eigen::MatrixXd g = random_matrix(rng, n, n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix the sign convention so the distribution is Haar-like.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) {
      q.col(j) *= -1.0;
    }
  }
  return q;
}

inline Eigen::MatrixXd random_rotation(std::mt19937_64& rng, int n) {
  Eigen::MatrixXd q = random_orthogonal(rng, n);
  if (q.determinant() < 0.0) {
    q.col(0) *= -1.0;
  }
  return q;
}

inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int n, double eig_lo,
                                  double eig_hi) {
  const Eigen::MatrixXd q = random_orthogonal(rng, n);
  std::uniform_real_distribution<double> uni(eig_lo, eig_hi);
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) {
    d(i) = uni(rng);
  }
  const Eigen::MatrixXd m = q * d.asDiagonal() * q.transpose();
  return 0.5 * (m + m.transpose());
}

/// Random element of GL+(n): generic matrix, determinant sign fixed and
/// magnitude bounded away from zero by resampling.
inline Eigen::MatrixXd random_glplus(std::mt19937_64& rng, int n,
                                     double scale = 1.0) {
  for (;;) {
    Eigen::MatrixXd m = random_matrix(rng, n, n, scale);
    const double det = m.determinant();
    if (std::abs(det) < 1e-3 * std::pow(scale, n)) {
      continue;
    }
    if (det < 0.0) {
      m.col(0) *= -1.0;
    }
    return m;
  }
}

/// Matrix exponential by direct Taylor series (oracle; adequate for the
/// moderate norms used in tests).
inline Eigen::MatrixXd expm_series(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd sum = term;
  for (int k = 1; k < 300; ++k) {
    term = (term * a) / static_cast<double>(k);
    sum += term;
    if (term.norm() <= 1e-18 * sum.norm()) {
      break;
    }
  }
  return sum;
}

/// Reachability Gramian of the pair (a_closed, b) over [0, t] by composite
/// Simpson quadrature on exp(-a_closed tau) b b^T exp(-a_closed^T tau).
inline Eigen::MatrixXd gram_quadrature(const Eigen::MatrixXd& a_closed,
                                       const Eigen::MatrixXd& b, double t,
                                       int intervals = 2000) {
  if (intervals % 2 != 0) {
    ++intervals;
  }
  const double h = t / intervals;
  const auto integrand = [&](double tau) {
    const Eigen::MatrixXd e = steer::expm(-a_closed * tau) * b;
    return Eigen::MatrixXd(e * e.transpose());
  };
  Eigen::MatrixXd acc = integrand(0.0) + integrand(t);
  for (int i = 1; i < intervals; ++i) {
    acc += integrand(i * h) * ((i % 2 == 1) ? 4.0 : 2.0);
  }
  return acc * (h / 3.0);
}

/// Largest singular value by power iteration on M^T M (oracle).
inline double power_iteration_norm(std::mt19937_64& rng,
                                   const Eigen::MatrixXd& m, int iters = 500) {
  Eigen::VectorXd v = random_matrix(rng, static_cast<int>(m.cols()), 1);
  v.normalize();
  for (int k = 0; k < iters; ++k) {
    Eigen::VectorXd w = m.transpose() * (m * v);
    const double nw = w.norm();
    if (nw == 0.0) {
      return 0.0;
    }
    v = w / nw;
  }
  return (m * v).norm();
}

/// Orthogonal polar factor by Newton iteration X <- (X + X^{-T})/2 (oracle).
inline Eigen::MatrixXd newton_polar_rotation(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd x = m;
  for (int k = 0; k < 100; ++k) {
    const Eigen::MatrixXd next =
        0.5 * (x + x.transpose().partialPivLu().inverse());
    if ((next - x).norm() <= 1e-15 * next.norm()) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

/// Plane rotation by theta embedded in coordinates (i, j) of an n x n
/// identity.
inline Eigen::MatrixXd plane_rotation(int n, int i, int j, double theta) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n);
  r(i, i) = std::cos(theta);
  r(j, j) = std::cos(theta);
  r(i, j) = -std::sin(theta);
  r(j, i) = std::sin(theta);
  return r;
}

}  // namespace test_support

#endif  // STEER_TESTS__TEST_SUPPORT_HPP_
