#ifndef STEER__SEGMENT_HPP_
#define STEER__SEGMENT_HPP_

/// One minimum-energy steering leg on GL+(n).
///
/// A SteeringSegment pairs a periodized ensemble with a target transition
/// matrix and exposes the closed-form minimum-energy open-loop input, the
/// induced optimal trajectory, and the broadcast feedback gain realizing it.
/// Two sufficient reachability certificates are evaluated up front:
///
///  - norm-ball: the Gramian-whitened target lies strictly inside the unit
///    ball around the identity, which keeps the whole trajectory invertible;
///  - spd-cone: the whitened target is symmetric positive definite, which
///    keeps the trajectory invertible for every segment duration.
///
/// A singularity scan locates times where the planned trajectory would leave
/// GL+ (determinant sign changes and tangential touches of zero), so callers
/// can prove a plan sound or reject it with a concrete witness time.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "steer/errors.hpp"
#include "steer/matfun.hpp"
#include "steer/matrix_types.hpp"
#include "steer/sysmod.hpp"

namespace steer {

namespace tol {

/// Relative slack when clamping evaluation times to [0, duration].
inline constexpr double kTimeSlackRel = 1e-9;
/// Grid-level relative threshold below which a local minimum of the least
/// singular value is refined as a possible tangential zero.
inline constexpr double kTangentialTrigger = 1e-2;
/// Relative threshold under which a refined minimum counts as a zero.
inline constexpr double kTangentialAccept = 1e-7;
/// Merge radius (relative to duration) for reported singular times.
inline constexpr double kScanMergeRel = 1e-6;

}  // namespace tol

/// Which reachability certificate a steering target satisfies.
enum class SteeringCondition {
  kNone,      ///< neither check passed; the trajectory may leave GL+
  kNormBall,  ///< whitened target strictly inside the unit ball at I
  kSpdCone,   ///< whitened target symmetric positive definite
};

inline const char* to_string(SteeringCondition c) {
  switch (c) {
    case SteeringCondition::kNormBall:
      return "norm_ball";
    case SteeringCondition::kSpdCone:
      return "spd_cone";
    default:
      return "none";
  }
}

/// Operator norm of W^{-1/2} * target * W^{1/2} - I: how far the whitened
/// target sits from the identity.  Values < 1 certify that the minimum-energy
/// trajectory stays in GL+ over the segment.
inline double norm_ball_value(const Eigen::MatrixXd& target,
                              const SpdMatrix& w) {
  detail::require_square_finite(target, "norm_ball_value");
  if (target.rows() != w.dim()) {
    throw std::invalid_argument(
        "norm_ball_value: target and Gramian dimensions differ");
  }
  const Eigen::MatrixXd w_half = sqrtm_spd(w).matrix();
  const Eigen::MatrixXd w_inv_half = inv_sqrtm_spd(w).matrix();
  const Eigen::Index n = target.rows();
  return operator_norm(w_inv_half * target * w_half -
                       Eigen::MatrixXd::Identity(n, n));
}

/// True iff the whitened target is strictly inside the unit ball, with a
/// small safety margin so boundary cases are rejected rather than flaky.
inline bool passes_norm_ball(const Eigen::MatrixXd& target,
                             const SpdMatrix& w) {
  return norm_ball_value(target, w) < 1.0 - tol::kCondSlack;
}

/// Outcome of the spd-cone membership check for a whitened target
/// Psi = W^{-1/2} * target * W^{1/2}.
struct SpdConeDiagnostics {
  double symmetry_defect = 0.0;           ///< ||Psi - Psi^T||_F
  double min_symmetric_eigenvalue = 0.0;  ///< least eigenvalue of sym(Psi)
  bool pass = false;
};

inline SpdConeDiagnostics spd_cone_diagnostics(const Eigen::MatrixXd& target,
                                               const SpdMatrix& w) {
  detail::require_square_finite(target, "spd_cone_diagnostics");
  if (target.rows() != w.dim()) {
    throw std::invalid_argument(
        "spd_cone_diagnostics: target and Gramian dimensions differ");
  }
  const Eigen::MatrixXd psi = inv_sqrtm_spd(w).matrix() * target *
                              sqrtm_spd(w).matrix();
  SpdConeDiagnostics diag;
  diag.symmetry_defect = (psi - psi.transpose()).norm();
  const Eigen::MatrixXd sym = 0.5 * (psi + psi.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym,
                                                     Eigen::EigenvaluesOnly);
  diag.min_symmetric_eigenvalue = eig.eigenvalues().minCoeff();
  diag.pass = diag.symmetry_defect <= tol::kSym * (1.0 + psi.norm()) &&
              diag.min_symmetric_eigenvalue > 0.0;
  return diag;
}

/// True iff the whitened target is (numerically) symmetric positive
/// definite, i.e. the segment is steerable in any prescribed duration.
inline bool passes_spd_cone(const Eigen::MatrixXd& target,
                            const SpdMatrix& w) {
  return spd_cone_diagnostics(target, w).pass;
}

/// A single steering leg: periodized ensemble + target transition matrix
/// over one period.  Immutable after construction; evaluation at distinct
/// times is pure, so segments may be shared across threads.
class SteeringSegment {
 public:
  /// Builds the segment, precomputing the end-of-period Gramian, the
  /// constant solve factor shared by input/trajectory formulas, and both
  /// reachability diagnostics.  Throws std::domain_error if det(target) is
  /// not positive (the reachable component of the identity).
  SteeringSegment(const PeriodizedSystem& sys, const Eigen::MatrixXd& target)
      : sys_(sys),
        gram_(sys),
        target_(checked_target(sys, target)),
        w_end_(gram_.gramian(sys.period())),
        cone_(spd_cone_diagnostics(target_, w_end_)) {
    const Eigen::Index n = target_.rows();
    // Constant factor W_end^{-1} (e^{-A_c t_s} target - I), computed once by
    // an SPD solve.  Retaining the e^{-A_c t_s} premultiplier (close to, but
    // not exactly, the identity after periodization) makes the trajectory
    // land on the target to solve precision rather than inheriting the
    // periodicity residual.
    const Eigen::MatrixXd pulled_back =
        expm(-sys_.closed_loop() * duration()) * target_;
    core_ = w_end_.matrix().llt().solve(
        pulled_back - Eigen::MatrixXd::Identity(n, n));
    norm_value_ = norm_ball_value(target_, w_end_);
    if (norm_value_ < 1.0 - tol::kCondSlack) {
      tag_ = SteeringCondition::kNormBall;
    } else if (cone_.pass) {
      tag_ = SteeringCondition::kSpdCone;
    } else {
      tag_ = SteeringCondition::kNone;
    }
  }

  const PeriodizedSystem& system() const { return sys_; }
  const Eigen::MatrixXd& target() const { return target_; }
  double duration() const { return sys_.period(); }
  const SpdMatrix& gramian_end() const { return w_end_; }

  /// Which certificate the target carries.  Norm-ball is preferred when both
  /// hold; kNone means the segment may cross out of GL+ (scan to find out).
  SteeringCondition condition_tag() const { return tag_; }
  double norm_value() const { return norm_value_; }
  const SpdConeDiagnostics& cone_diagnostics() const { return cone_; }

  /// Minimum-energy open-loop input U*_t (m x n), defined for all t in
  /// [0, duration] even when the trajectory passes through a singularity.
  Eigen::MatrixXd optimal_input(double t) const {
    t = checked_time(t, "optimal_input");
    return sys_.base().b().transpose() *
           expm(-sys_.closed_loop() * t).transpose() * core_;
  }

  /// Optimal transition matrix at time t: starts at I, reaches the target at
  /// t = duration.
  Eigen::MatrixXd optimal_trajectory(double t) const {
    t = checked_time(t, "optimal_trajectory");
    const Eigen::Index n = target_.rows();
    return expm(sys_.closed_loop() * t) *
           (Eigen::MatrixXd::Identity(n, n) + gram_.gramian_unchecked(t) * core_);
  }

  /// Broadcast feedback gain K*_t realizing the optimal trajectory in closed
  /// loop.  Throws SingularTrajectory (carrying t) when the planned
  /// transition matrix is numerically singular at t, instead of returning an
  /// unusable gain.
  Eigen::MatrixXd feedback_gain(double t) const {
    t = checked_time(t, "feedback_gain");
    const Eigen::MatrixXd phi = optimal_trajectory(t);
    // The identity anchors the scale: a transition matrix that has decayed
    // to rounding noise is singular for steering purposes even though its
    // singular values are all comparable (margin relative to ||phi|| alone
    // would wave it through).
    const double margin = tol::kInvMarginRel * (1.0 + operator_norm(phi));
    if (!(min_singular_value(phi) > margin)) {
      throw SingularTrajectory(
          "feedback_gain: trajectory leaves GL+ at t = " + std::to_string(t),
          t);
    }
    const Eigen::MatrixXd u = optimal_input(t);
    return phi.transpose().partialPivLu().solve(u.transpose()).transpose() +
           sys_.gain();
  }

  /// Times in (0, duration) where the planned trajectory becomes singular,
  /// located from a uniform grid of grid_points intervals: determinant sign
  /// changes are bisected, and near-zero local minima of the least singular
  /// value (tangential touches, which flip no sign) are refined by
  /// golden-section search.  Sorted, de-duplicated; empty means the
  /// trajectory stays in GL+ as sampled.
  std::vector<double> singularity_scan(
      int grid_points = tol::kDefaultGridPoints) const {
    if (grid_points < 16) {
      throw std::invalid_argument(
          "singularity_scan: need at least 16 grid points");
    }
    const double dur = duration();
    const double dt = dur / grid_points;
    std::vector<double> dets(grid_points + 1);
    std::vector<double> sigmas(grid_points + 1);
    std::vector<double> scales(grid_points + 1);
    for (int i = 0; i <= grid_points; ++i) {
      const Eigen::MatrixXd phi = optimal_trajectory(i * dt);
      dets[i] = phi.determinant();
      sigmas[i] = min_singular_value(phi);
      scales[i] = 1.0 + phi.norm();
    }

    std::vector<double> times;
    for (int i = 0; i < grid_points; ++i) {
      if ((dets[i] < 0.0) != (dets[i + 1] < 0.0)) {
        times.push_back(bisect_det_zero(i * dt, (i + 1) * dt));
      }
    }
    for (int i = 1; i < grid_points; ++i) {
      const bool local_min = sigmas[i] <= sigmas[i - 1] &&
                             sigmas[i] <= sigmas[i + 1];
      if (!local_min || sigmas[i] > tol::kTangentialTrigger * scales[i]) {
        continue;
      }
      const auto [t_min, sigma_min] =
          golden_min_sigma((i - 1) * dt, (i + 1) * dt);
      if (sigma_min <= tol::kTangentialAccept * scales[i]) {
        times.push_back(t_min);
      }
    }

    std::sort(times.begin(), times.end());
    const double merge = tol::kScanMergeRel * dur;
    std::vector<double> merged;
    for (double t : times) {
      if (merged.empty() || t - merged.back() > merge) {
        merged.push_back(t);
      }
    }
    return merged;
  }

 private:
  static Eigen::MatrixXd checked_target(const PeriodizedSystem& sys,
                                        const Eigen::MatrixXd& target) {
    detail::require_square_finite(target, "SteeringSegment");
    if (target.rows() != sys.base().state_dim()) {
      throw std::invalid_argument(
          "SteeringSegment: target dimension does not match the ensemble");
    }
    if (!(target.determinant() > 0.0)) {
      throw std::domain_error(
          "SteeringSegment: target determinant must be positive (same "
          "connected component as the identity)");
    }
    return target;
  }

  double checked_time(double t, const char* who) const {
    const double slack = tol::kTimeSlackRel * duration();
    if (!(t >= -slack && t <= duration() + slack)) {
      throw std::domain_error(std::string(who) + ": time " +
                              std::to_string(t) + " outside [0, " +
                              std::to_string(duration()) + "]");
    }
    return std::clamp(t, 0.0, duration());
  }

  /// Bisects det(optimal_trajectory) over a bracketing interval down to a
  /// width of kTimeSlackRel * duration; returns the midpoint.
  double bisect_det_zero(double lo, double hi) const {
    const double width = tol::kTimeSlackRel * duration();
    double f_lo = optimal_trajectory(lo).determinant();
    while (hi - lo > width) {
      const double mid = 0.5 * (lo + hi);
      const double f_mid = optimal_trajectory(mid).determinant();
      if ((f_lo < 0.0) != (f_mid < 0.0)) {
        hi = mid;
      } else {
        lo = mid;
        f_lo = f_mid;
      }
    }
    return 0.5 * (lo + hi);
  }

  /// Golden-section minimization of the least singular value of the
  /// trajectory over [lo, hi], to a bracket of kTimeSlackRel * duration.
  std::pair<double, double> golden_min_sigma(double lo, double hi) const {
    const double width = tol::kTimeSlackRel * duration();
    const double inv_phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo;
    double b = hi;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = min_singular_value(optimal_trajectory(x1));
    double f2 = min_singular_value(optimal_trajectory(x2));
    while (b - a > width) {
      if (f1 <= f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - inv_phi * (b - a);
        f1 = min_singular_value(optimal_trajectory(x1));
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + inv_phi * (b - a);
        f2 = min_singular_value(optimal_trajectory(x2));
      }
    }
    const double t_min = 0.5 * (a + b);
    return {t_min, min_singular_value(optimal_trajectory(t_min))};
  }

  PeriodizedSystem sys_;
  GramianEvaluator gram_;
  Eigen::MatrixXd target_;
  SpdMatrix w_end_;
  SpdConeDiagnostics cone_;
  Eigen::MatrixXd core_;
  double norm_value_ = 0.0;
  SteeringCondition tag_ = SteeringCondition::kNone;
};

}  // namespace steer

#endif  // STEER__SEGMENT_HPP_
