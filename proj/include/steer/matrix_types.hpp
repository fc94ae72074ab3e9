#ifndef STEER__MATRIX_TYPES_HPP_
#define STEER__MATRIX_TYPES_HPP_

/// Checked matrix value types used across the library.
///
/// SpdMatrix and RotationMatrix validate their defining properties on
/// construction and keep a cleaned-up representative (exactly symmetric,
/// re-orthonormalized).  Downstream code can then rely on the invariants
/// instead of re-checking them at every use.

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

#include "steer/errors.hpp"

namespace steer {

namespace tol {

/// Relative symmetry slack: defect <= kSym * (1 + ||M||).
inline constexpr double kSym = 1e-8;
/// Absolute orthonormality slack on ||Q^T Q - I||.
inline constexpr double kOrth = 1e-8;
/// Periodicity residual allowance per state dimension.
inline constexpr double kPeriodPerDim = 1e-8;
/// Strictness margin for the norm reachability condition (value < 1 - slack).
inline constexpr double kCondSlack = 1e-9;
/// Relative invertibility floor for trajectory evaluation.
inline constexpr double kInvMarginRel = 1e-9;
/// Relative singular-value threshold for numerical rank decisions.
inline constexpr double kRankRel = 1e-12;
/// Fixed-point iteration stopping tolerance.
inline constexpr double kFixedPoint = 1e-12;
/// Fixed-point iteration cap.
inline constexpr int kMaxFixedPointIters = 200;
/// Default sample count for singularity scans.
inline constexpr int kDefaultGridPoints = 512;
/// Default integrator resolution per schedule segment.
inline constexpr int kDefaultStepsPerSegment = 2000;

}  // namespace tol

namespace detail {

inline void require_square_finite(const Eigen::MatrixXd& m, const char* who) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(who) +
                                ": expected a non-empty square matrix");
  }
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(who) +
                                ": matrix has non-finite entries");
  }
}

inline void require_finite(const Eigen::MatrixXd& m, const char* who) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(who) +
                                ": matrix has non-finite entries");
  }
}

}  // namespace detail

/// Symmetric positive definite matrix.  Construction symmetrizes the input
/// and rejects it if the symmetry defect exceeds kSym * (1 + ||M||_F) or the
/// least eigenvalue is not strictly positive.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Eigen::MatrixXd& m) {
    detail::require_square_finite(m, "SpdMatrix");
    const double defect = (m - m.transpose()).norm();
    if (defect > tol::kSym * (1.0 + m.norm())) {
      throw std::domain_error("SpdMatrix: symmetry defect " +
                              std::to_string(defect) + " exceeds tolerance");
    }
    m_ = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        m_, Eigen::EigenvaluesOnly);
    min_eigenvalue_ = eig.eigenvalues().minCoeff();
    if (!(min_eigenvalue_ > 0.0)) {
      throw std::domain_error("SpdMatrix: least eigenvalue " +
                              std::to_string(min_eigenvalue_) +
                              " is not strictly positive");
    }
    max_eigenvalue_ = eig.eigenvalues().maxCoeff();
  }

  const Eigen::MatrixXd& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }
  double min_eigenvalue() const { return min_eigenvalue_; }
  double max_eigenvalue() const { return max_eigenvalue_; }

 private:
  Eigen::MatrixXd m_;
  double min_eigenvalue_ = 0.0;
  double max_eigenvalue_ = 0.0;
};

namespace detail {

/// Nearest orthonormal matrix in Frobenius norm (orthogonal polar factor).
inline Eigen::MatrixXd nearest_orthonormal(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace detail

/// Element of SO(n).  Construction rejects matrices whose orthonormality
/// defect ||Q^T Q - I||_F exceeds kOrth or whose determinant is negative,
/// and re-orthonormalizes anything with a detectable (but in-tolerance)
/// defect so stored values are orthonormal to machine precision.
class RotationMatrix {
 public:
  explicit RotationMatrix(const Eigen::MatrixXd& q) {
    detail::require_square_finite(q, "RotationMatrix");
    const Eigen::Index n = q.rows();
    const double defect =
        (q.transpose() * q - Eigen::MatrixXd::Identity(n, n)).norm();
    if (defect > tol::kOrth) {
      throw std::domain_error("RotationMatrix: orthonormality defect " +
                              std::to_string(defect) + " exceeds tolerance");
    }
    if (q.determinant() <= 0.0) {
      throw std::domain_error(
          "RotationMatrix: determinant is not positive (reflection or "
          "degenerate input)");
    }
    m_ = (defect > 1e-13) ? detail::nearest_orthonormal(q) : q;
  }

  const Eigen::MatrixXd& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }

 private:
  Eigen::MatrixXd m_;
};

}  // namespace steer

#endif  // STEER__MATRIX_TYPES_HPP_
