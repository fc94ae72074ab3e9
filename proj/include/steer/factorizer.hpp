#ifndef STEER__FACTORIZER_HPP_
#define STEER__FACTORIZER_HPP_

/// Factoring a target transition matrix into steerable pieces.
///
/// Two constructions are provided, matching the two reachability
/// certificates a single steering leg can carry:
///
///  - near-identity factors: split the target into a rotation part and a
///    stretch part via the polar decomposition, then take equal roots of
///    each logarithm so every factor sits within a prescribed distance of
///    the identity (and therefore inside the norm-ball certificate of a
///    suitably conditioned Gramian);
///  - conjugated-SPD factors: whiten the target by W^{±1/2}, peel off the
///    SPD polar factor, reduce the remaining rotation to plane rotations,
///    and write every plane rotation as a product of three SPD matrices.
///    Each resulting factor is W-conjugate-SPD, which certifies steering
///    in any prescribed segment duration.
///
/// Ordered-product convention used throughout: a factor list [f_1 ... f_N]
/// reconstructs the target as f_N * ... * f_1, i.e. the product is read
/// with the LAST list element leftmost.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "steer/matfun.hpp"
#include "steer/matrix_types.hpp"

namespace steer {

/// Logarithms of the two polar parts of a target: target = e^{stretch_log}
/// * e^{rotation_log} with rotation_log skew-symmetric and stretch_log
/// symmetric.
struct MatrixLogPair {
  Eigen::MatrixXd rotation_log;
  Eigen::MatrixXd stretch_log;
};

/// Splits a target with positive determinant into commuting-free rotation
/// and stretch exponents via the polar decomposition.
inline MatrixLogPair two_exponential_split(const Eigen::MatrixXd& target) {
  const PolarFactors pf = polar(target);
  return MatrixLogPair{logm_rotation(pf.q), logm_spd(pf.p)};
}

/// Factorization of a target into near-identity pieces: rotation_count
/// copies of the equal rotation root followed by stretch_count copies of
/// the equal stretch root, every factor within epsilon of the identity in
/// operator norm.
struct NearIdentityFactorization {
  /// Reconstructs as factors[N-1] * ... * factors[0].
  std::vector<Eigen::MatrixXd> factors;
  double epsilon = 0.0;
  int rotation_count = 0;  ///< leading factors: equal roots of rotation_log
  int stretch_count = 0;   ///< trailing factors: equal roots of stretch_log
  Eigen::MatrixXd rotation_log;
  Eigen::MatrixXd stretch_log;

  int count() const { return static_cast<int>(factors.size()); }
};

namespace detail {

/// Smallest integer strictly exceeding ||log|| / log(1 + epsilon); zero for
/// logarithms at rounding scale (their factor would be the identity).
inline int equal_root_count(const Eigen::MatrixXd& log_part, double epsilon) {
  const double norm = operator_norm(log_part);
  if (norm <= 1e-12) {
    return 0;
  }
  return static_cast<int>(std::floor(norm / std::log1p(epsilon))) + 1;
}

}  // namespace detail

/// Factors the target into near-identity pieces.  The equal-root counts are
/// the minimal integers for which each root stays strictly within epsilon
/// of the identity; an identity target yields an empty factorization.
inline NearIdentityFactorization near_identity_factorize(
    const Eigen::MatrixXd& target, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument(
        "near_identity_factorize: epsilon must be positive");
  }
  NearIdentityFactorization out;
  out.epsilon = epsilon;
  const MatrixLogPair logs = two_exponential_split(target);
  out.rotation_log = logs.rotation_log;
  out.stretch_log = logs.stretch_log;
  out.rotation_count = detail::equal_root_count(logs.rotation_log, epsilon);
  out.stretch_count = detail::equal_root_count(logs.stretch_log, epsilon);
  if (out.rotation_count > 0) {
    const Eigen::MatrixXd root = expm(logs.rotation_log / out.rotation_count);
    out.factors.insert(out.factors.end(), out.rotation_count, root);
  }
  if (out.stretch_count > 0) {
    const Eigen::MatrixXd root = expm(logs.stretch_log / out.stretch_count);
    out.factors.insert(out.factors.end(), out.stretch_count, root);
  }
  return out;
}

/// Three SPD matrices whose product s3 * s2 * s1 equals a plane rotation.
struct SpdTriple {
  SpdMatrix s1;
  SpdMatrix s2;
  SpdMatrix s3;
};

/// Writes the 2x2 rotation by theta as a product of three SPD matrices.
/// sigma is the positive root of 2 sigma^2 + 3 sigma tan(theta) - 1 = 0,
/// chosen so the orthogonal polar factor of s2 * s1 is exactly the
/// requested rotation; s3 straightens the SPD remainder.  Negative angles
/// are handled by transposition (which reverses the product order).
/// Angles of magnitude >= pi/2 must be split by the caller first.
inline SpdTriple rotation_to_three_spd(double theta) {
  if (!(std::abs(theta) > 0.0) || !(std::abs(theta) < 0.5 * M_PI)) {
    throw std::domain_error(
        "rotation_to_three_spd: need 0 < |theta| < pi/2 (split wider angles "
        "into sub-rotations first)");
  }
  const double t = std::tan(std::abs(theta));
  const double sigma = 0.25 * (-3.0 * t + std::sqrt(9.0 * t * t + 8.0));
  Eigen::MatrixXd s1(2, 2), s2(2, 2);
  s1 << 1.0, sigma, sigma, 2.0 * sigma * sigma;
  s2 << 2.0 * sigma * sigma, sigma, sigma, 1.0;
  const Eigen::MatrixXd s3 =
      inv_sqrtm_spd(SpdMatrix(s2 * s1 * s1 * s2)).matrix();
  if (theta > 0.0) {
    return SpdTriple{SpdMatrix(s1), SpdMatrix(s2), SpdMatrix(s3)};
  }
  // R(-|theta|) = R(|theta|)^T = (s3 s2 s1)^T = s1 s2 s3: reuse the positive
  // triple in reversed roles.
  return SpdTriple{SpdMatrix(s3), SpdMatrix(s2), SpdMatrix(s1)};
}

/// Factorization of a target into W-conjugate-SPD pieces: each factor is
/// W^{1/2} * core * W^{-1/2} with core SPD.
struct SpdConeFactorization {
  /// Reconstructs as factors[K-1] * ... * factors[0].
  std::vector<Eigen::MatrixXd> factors;
  /// SPD cores in the same order as factors.
  std::vector<Eigen::MatrixXd> spd_cores;
  SpdMatrix conjugator;  ///< the W used for whitening

  int count() const { return static_cast<int>(factors.size()); }
};

namespace detail {

/// Embeds a 2x2 matrix into the (p, q) coordinate plane of an n x n
/// identity.
inline Eigen::MatrixXd embed_plane(const Eigen::Matrix2d& m, Eigen::Index n,
                                   Eigen::Index p, Eigen::Index q) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(n, n);
  out(p, p) = m(0, 0);
  out(p, q) = m(0, 1);
  out(q, p) = m(1, 0);
  out(q, q) = m(1, 1);
  return out;
}

}  // namespace detail

/// Factors the target into W-conjugate-SPD pieces: whiten, split off the
/// (right) SPD polar factor, reduce the rotation remainder to plane
/// rotations by column-major Givens elimination, split wide angles into
/// equal sub-rotations, and expand each sub-rotation into an SPD triple.
/// Every factor then satisfies the spd-cone certificate against W, so a
/// schedule can steer through the factors in any prescribed total time.
inline SpdConeFactorization spd_cone_factorize(const Eigen::MatrixXd& target,
                                               const SpdMatrix& w) {
  detail::require_square_finite(target, "spd_cone_factorize");
  if (target.rows() != w.dim()) {
    throw std::invalid_argument(
        "spd_cone_factorize: target and conjugator dimensions differ");
  }
  if (!(target.determinant() > 0.0)) {
    throw std::domain_error(
        "spd_cone_factorize: target determinant must be positive");
  }
  const Eigen::Index n = target.rows();
  const Eigen::MatrixXd w_half = sqrtm_spd(w).matrix();
  const Eigen::MatrixXd w_inv_half = inv_sqrtm_spd(w).matrix();
  const Eigen::MatrixXd psi = w_inv_half * target * w_half;

  SpdConeFactorization out{{}, {}, w};
  if ((psi - Eigen::MatrixXd::Identity(n, n)).norm() <=
      1e-12 * (1.0 + psi.norm())) {
    return out;  // identity target: empty product, callers hold the base gain
  }

  // Right polar: psi = Q * P with P SPD, so the core list can start with P
  // and the reconstruction (last element leftmost) ends with it.
  const PolarFactors pf = polar(psi);
  const Eigen::MatrixXd q = pf.q.matrix();
  const Eigen::MatrixXd p_right_raw = q.transpose() * pf.p.matrix() * q;
  out.spd_cores.push_back(0.5 * (p_right_raw + p_right_raw.transpose()));

  // Column-major Givens elimination: angles such that the product of the
  // transposed Givens (in elimination order) rebuilds Q.
  Eigen::MatrixXd r = q;
  std::vector<std::pair<std::pair<Eigen::Index, Eigen::Index>, double>> planes;
  for (Eigen::Index col = 0; col + 1 < n; ++col) {
    for (Eigen::Index row = col + 1; row < n; ++row) {
      const double a = r(col, col);
      const double b = r(row, col);
      if (std::abs(b) <= 1e-15 && a > 0.0) {
        continue;
      }
      const double phi = std::atan2(b, a);
      const double c = std::cos(phi);
      const double s = std::sin(phi);
      const Eigen::RowVectorXd top = r.row(col);
      const Eigen::RowVectorXd bottom = r.row(row);
      r.row(col) = c * top + s * bottom;
      r.row(row) = -s * top + c * bottom;
      planes.push_back({{col, row}, phi});
    }
  }

  // Q = R_1(phi_1) * ... * R_L(phi_L) in elimination order; the flat core
  // list therefore visits the planes in reverse so that reading it last
  // element leftmost restores the order.
  for (auto it = planes.rbegin(); it != planes.rend(); ++it) {
    const auto [plane, phi] = *it;
    if (std::abs(phi) <= 1e-12) {
      continue;  // numerically the identity rotation
    }
    const int splits = (std::abs(phi) >= 0.5 * M_PI - 0.1)
                           ? static_cast<int>(std::ceil(std::abs(phi) /
                                                        (0.25 * M_PI)))
                           : 1;
    const SpdTriple triple = rotation_to_three_spd(phi / splits);
    for (int k = 0; k < splits; ++k) {
      out.spd_cores.push_back(detail::embed_plane(triple.s1.matrix(), n,
                                                  plane.first, plane.second));
      out.spd_cores.push_back(detail::embed_plane(triple.s2.matrix(), n,
                                                  plane.first, plane.second));
      out.spd_cores.push_back(detail::embed_plane(triple.s3.matrix(), n,
                                                  plane.first, plane.second));
    }
  }

  out.factors.reserve(out.spd_cores.size());
  for (const Eigen::MatrixXd& core : out.spd_cores) {
    out.factors.push_back(w_half * core * w_inv_half);
  }
  return out;
}

}  // namespace steer

#endif  // STEER__FACTORIZER_HPP_
