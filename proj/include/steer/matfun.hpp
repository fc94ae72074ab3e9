#ifndef STEER__MATFUN_HPP_
#define STEER__MATFUN_HPP_

/// Dense matrix functions on small matrices: exponential, logarithms on the
/// SPD cone and on SO(n), SPD square roots, polar decomposition, and
/// extremal singular values.  Everything is double precision and sized for
/// state dimensions in the single digits.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "steer/matrix_types.hpp"

namespace steer {

/// Matrix exponential by scaling-and-squaring with a diagonal [6/6] Pade
/// approximant.  The input is scaled so its infinity norm is at most 1/2,
/// where the [6/6] approximant is accurate to double-precision roundoff.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
  detail::require_square_finite(a, "expm");
  const Eigen::Index n = a.rows();

  const double nrm = a.lpNorm<Eigen::Infinity>();
  int squarings = 0;
  if (nrm > 0.5) {
    squarings = static_cast<int>(std::ceil(std::log2(nrm / 0.5)));
  }
  const Eigen::MatrixXd as = a / std::ldexp(1.0, squarings);

  // Diagonal [6/6] Pade coefficients.
  constexpr double c1 = 1.0 / 2.0;
  constexpr double c2 = 5.0 / 44.0;
  constexpr double c3 = 1.0 / 66.0;
  constexpr double c4 = 1.0 / 792.0;
  constexpr double c5 = 1.0 / 15840.0;
  constexpr double c6 = 1.0 / 665280.0;

  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd a2 = as * as;
  const Eigen::MatrixXd a4 = a2 * a2;
  const Eigen::MatrixXd even = id + c2 * a2 + c4 * a4 + c6 * a4 * a2;
  const Eigen::MatrixXd odd = as * (c1 * id + c3 * a2 + c5 * a4);

  // exp(as) ~= (even - odd)^{-1} (even + odd), then undo the scaling.
  Eigen::MatrixXd result =
      (even - odd).partialPivLu().solve(even + odd);
  for (int k = 0; k < squarings; ++k) {
    result = result * result;
  }
  return result;
}

/// SPD square root via spectral decomposition.
inline SpdMatrix sqrtm_spd(const SpdMatrix& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.matrix());
  const Eigen::MatrixXd r = eig.eigenvectors() *
                            eig.eigenvalues().cwiseSqrt().asDiagonal() *
                            eig.eigenvectors().transpose();
  return SpdMatrix(r);
}

/// Inverse SPD square root via spectral decomposition.
inline SpdMatrix inv_sqrtm_spd(const SpdMatrix& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.matrix());
  const Eigen::MatrixXd r =
      eig.eigenvectors() *
      eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
      eig.eigenvectors().transpose();
  return SpdMatrix(r);
}

/// Principal logarithm of an SPD matrix (symmetric result).
inline Eigen::MatrixXd logm_spd(const SpdMatrix& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.matrix());
  return eig.eigenvectors() * eig.eigenvalues().array().log().matrix().asDiagonal() *
         eig.eigenvectors().transpose();
}

/// Principal logarithm of a rotation matrix: the unique skew-symmetric log
/// whose rotation angles lie in (-pi, pi].  Half-turn planes (angle exactly
/// pi) are assigned +pi; there the log is one representative of a
/// non-unique family, which is documented rather than rejected.
inline Eigen::MatrixXd logm_rotation(const RotationMatrix& q) {
  const Eigen::MatrixXd& r = q.matrix();
  const Eigen::Index n = r.rows();

  Eigen::RealSchur<Eigen::MatrixXd> schur(r);
  const Eigen::MatrixXd& t = schur.matrixT();
  const Eigen::MatrixXd& u = schur.matrixU();

  // For an orthogonal matrix the quasi-triangular factor is block diagonal:
  // 2x2 blocks are plane rotations, 1x1 blocks are +/-1.
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  std::vector<Eigen::Index> half_turns;
  Eigen::Index i = 0;
  while (i < n) {
    if (i + 1 < n && t(i + 1, i) != 0.0) {
      const double c = 0.5 * (t(i, i) + t(i + 1, i + 1));
      const double sn = 0.5 * (t(i + 1, i) - t(i, i + 1));
      const double theta = std::atan2(sn, c);
      s(i, i + 1) = -theta;
      s(i + 1, i) = theta;
      i += 2;
    } else {
      if (t(i, i) < 0.0) {
        half_turns.push_back(i);
      }
      i += 1;
    }
  }
  if (half_turns.size() % 2 != 0) {
    // An odd count would force determinant -1, which the type excludes.
    throw std::domain_error(
        "logm_rotation: inconsistent spectrum (odd number of -1 eigenvalues)");
  }
  for (std::size_t k = 0; k + 1 < half_turns.size(); k += 2) {
    const Eigen::Index ia = half_turns[k];
    const Eigen::Index ib = half_turns[k + 1];
    s(ia, ib) = -M_PI;
    s(ib, ia) = M_PI;
  }

  const Eigen::MatrixXd w = u * s * u.transpose();
  return 0.5 * (w - w.transpose());
}

/// Left polar decomposition M = P * Q with P SPD and Q a rotation.
struct PolarFactors {
  SpdMatrix p;
  RotationMatrix q;
};

/// Polar factors of a matrix with positive determinant.  Computed through
/// the SVD, which realizes P = (M M^T)^{1/2} and Q = P^{-1} M with an
/// exactly orthonormal Q.
inline PolarFactors polar(const Eigen::MatrixXd& m) {
  detail::require_square_finite(m, "polar");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double sign = svd.matrixU().determinant() * svd.matrixV().determinant();
  if (svd.singularValues().minCoeff() <= 0.0 || sign <= 0.0) {
    throw std::domain_error(
        "polar: matrix must be invertible with positive determinant");
  }
  const Eigen::MatrixXd p = svd.matrixU() *
                            svd.singularValues().asDiagonal() *
                            svd.matrixU().transpose();
  const Eigen::MatrixXd q = svd.matrixU() * svd.matrixV().transpose();
  return PolarFactors{SpdMatrix(p), RotationMatrix(q)};
}

/// Largest singular value (spectral norm).
inline double operator_norm(const Eigen::MatrixXd& m) {
  detail::require_finite(m, "operator_norm");
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

/// Smallest singular value.
inline double min_singular_value(const Eigen::MatrixXd& m) {
  detail::require_finite(m, "min_singular_value");
  const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
  return sv(sv.size() - 1);
}

}  // namespace steer

#endif  // STEER__MATFUN_HPP_
