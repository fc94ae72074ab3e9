#pragma once

/// End-to-end plan synthesis: turn a swarm steering request into an ordered
/// list of minimum-energy legs whose concatenation realizes the requested
/// transition matrix, in one of four modes:
///
///  - strong:          prescribed total time, conjugated-SPD factor pieces,
///                     each leg lasting total/K;
///  - free_time:       near-identity factor pieces, one period per leg, total
///                     time N * t_s chosen by the factor count;
///  - single_segment:  one leg, accepted only when the target satisfies one
///                     of the two reachability certificates (rejected with
///                     both diagnostics otherwise);
///  - covariance:      steer a Gaussian covariance pair by constructing the
///                     unique conjugated-SPD transition matrix that pushes
///                     the initial covariance onto the final one.
///
/// A schedule concatenates legs by right-composition: the exact closed-loop
/// trajectory is Phi_t = Phi*_tau(segment k) * (target_{k-1} * ... *
/// target_1), so each leg starts from the identity in its own local clock
/// and the running product carries the history.  The broadcast gain of a
/// leg does not depend on that product, which is what makes piecewise
/// assembly possible.
///
/// Reference (mean) steering is reduced away up front: plans steer the
/// deviation-from-reference ensemble, so the reference input never appears.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "steer/errors.hpp"
#include "steer/factorizer.hpp"
#include "steer/matfun.hpp"
#include "steer/matrix_types.hpp"
#include "steer/segment.hpp"
#include "steer/sysmod.hpp"

namespace steer {

/// Planning mode requested by a task file or caller.
enum class PlanMode { kStrong, kFreeTime, kSingleSegment, kCovariance };

inline const char* to_string(PlanMode m) {
  switch (m) {
    case PlanMode::kStrong:
      return "strong";
    case PlanMode::kFreeTime:
      return "free_time";
    case PlanMode::kSingleSegment:
      return "single_segment";
    case PlanMode::kCovariance:
      return "covariance";
  }
  return "unknown";
}

inline PlanMode plan_mode_from_string(const std::string& s) {
  if (s == "strong") return PlanMode::kStrong;
  if (s == "free_time") return PlanMode::kFreeTime;
  if (s == "single_segment") return PlanMode::kSingleSegment;
  if (s == "covariance") return PlanMode::kCovariance;
  throw SchemaError("unknown plan mode: \"" + s + "\"");
}

/// A steering request: ensemble dynamics, effective transition-matrix
/// target, and (optionally) a prescribed total time.  Construct through the
/// factories, which validate the target's determinant sign and reduce
/// arrangement or endpoint pairs to the single effective target.
class SteeringTask {
 public:
  /// Target given directly as the desired transition matrix.
  static SteeringTask from_target(const LinearEnsemble& sys,
                                  const Eigen::MatrixXd& target,
                                  double horizon = 0.0,
                                  PlanMode mode = PlanMode::kStrong) {
    return SteeringTask(sys, checked_target(sys, target), horizon, mode);
  }

  /// Target from a pair of transition-matrix endpoints: the plan steers
  /// phi_in onto phi_fn, so the effective target is phi_fn * phi_in^{-1}.
  static SteeringTask from_transitions(const LinearEnsemble& sys,
                                       const Eigen::MatrixXd& phi_in,
                                       const Eigen::MatrixXd& phi_fn,
                                       double horizon = 0.0,
                                       PlanMode mode = PlanMode::kStrong) {
    return from_target(sys, reduce_pair(phi_in, phi_fn, "transition"),
                       horizon, mode);
  }

  /// Target from square arrangement matrices whose columns are particle
  /// states: the plan maps the columns of x_in onto the columns of x_fn,
  /// so the effective target is x_fn * x_in^{-1}.
  static SteeringTask from_arrangements(const LinearEnsemble& sys,
                                        const Eigen::MatrixXd& x_in,
                                        const Eigen::MatrixXd& x_fn,
                                        double horizon = 0.0,
                                        PlanMode mode = PlanMode::kStrong) {
    return from_target(sys, reduce_pair(x_in, x_fn, "arrangement"), horizon,
                       mode);
  }

  const LinearEnsemble& sys() const { return sys_; }
  const Eigen::MatrixXd& target() const { return target_; }
  /// Prescribed total time; meaningful only when has_horizon().
  double horizon() const { return horizon_; }
  bool has_horizon() const { return horizon_ > 0.0; }
  PlanMode mode() const { return mode_; }

 private:
  SteeringTask(LinearEnsemble sys, Eigen::MatrixXd target, double horizon,
               PlanMode mode)
      : sys_(std::move(sys)),
        target_(std::move(target)),
        horizon_(horizon),
        mode_(mode) {}

  static Eigen::MatrixXd checked_target(const LinearEnsemble& sys,
                                        const Eigen::MatrixXd& target) {
    detail::require_square_finite(target, "SteeringTask");
    if (target.rows() != sys.state_dim()) {
      throw std::invalid_argument(
          "SteeringTask: target dimension does not match the ensemble");
    }
    if (target.determinant() <= 0.0) {
      throw std::domain_error(
          "SteeringTask: target determinant must be positive (same "
          "connected component as the identity)");
    }
    return target;
  }

  static Eigen::MatrixXd reduce_pair(const Eigen::MatrixXd& in,
                                     const Eigen::MatrixXd& fn,
                                     const char* kind) {
    detail::require_square_finite(in, "SteeringTask");
    detail::require_square_finite(fn, "SteeringTask");
    if (in.rows() != fn.rows()) {
      throw std::invalid_argument(
          std::string("SteeringTask: ") + kind +
          " endpoints must share dimensions");
    }
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(in.transpose());
    const double det_in = lu.determinant();
    if (!(std::abs(det_in) > 0.0) || !std::isfinite(det_in)) {
      throw std::domain_error(std::string("SteeringTask: initial ") + kind +
                              " matrix must be invertible");
    }
    // Solve target * in = fn instead of forming the inverse.
    return lu.solve(fn.transpose()).transpose();
  }

  LinearEnsemble sys_;
  Eigen::MatrixXd target_;
  double horizon_;
  PlanMode mode_;
};

/// A covariance steering request on the SPD cone.
class CovarianceTask {
 public:
  CovarianceTask(LinearEnsemble sys, SpdMatrix sigma_in, SpdMatrix sigma_fn,
                 double horizon)
      : sys_(std::move(sys)),
        sigma_in_(std::move(sigma_in)),
        sigma_fn_(std::move(sigma_fn)),
        horizon_(horizon) {
    if (sigma_in_.dim() != sys_.state_dim() ||
        sigma_fn_.dim() != sys_.state_dim()) {
      throw std::invalid_argument(
          "CovarianceTask: covariance dimensions must match the ensemble");
    }
    if (!(horizon_ > 0.0)) {
      throw std::domain_error("CovarianceTask: horizon must be positive");
    }
  }

  const LinearEnsemble& sys() const { return sys_; }
  const SpdMatrix& sigma_in() const { return sigma_in_; }
  const SpdMatrix& sigma_fn() const { return sigma_fn_; }
  double horizon() const { return horizon_; }

 private:
  LinearEnsemble sys_;
  SpdMatrix sigma_in_;
  SpdMatrix sigma_fn_;
  double horizon_;
};

/// How a schedule's factor list was produced, for reporting and
/// serialization.
struct ScheduleProvenance {
  std::string method;      ///< "hold", "single_segment", "near_identity_roots",
                           ///< "spd_cone_pieces", "covariance", "external"
  int rotation_count = 0;  ///< near-identity only: rotation-root copies
  int stretch_count = 0;   ///< near-identity only: stretch-root copies
  double epsilon = 0.0;    ///< near-identity only: factor radius used
};

/// An immutable, fully validated gain schedule: steering legs tiled back to
/// back from time zero, plus the periodic hold gain that applies when there
/// are no legs.  Every leg must carry a passing reachability certificate;
/// construction rejects uncertified legs.
class GainSchedule {
 public:
  /// Hold-only schedule: no legs, the periodic gain runs for `total`.
  GainSchedule(const PeriodizedSystem& hold, double total,
               ScheduleProvenance provenance)
      : hold_(hold), total_(total), provenance_(std::move(provenance)) {
    if (!(total >= 0.0) || !std::isfinite(total)) {
      throw std::invalid_argument("GainSchedule: total time must be >= 0");
    }
    prefixes_.push_back(
        Eigen::MatrixXd::Identity(hold_.base().state_dim(),
                                  hold_.base().state_dim()));
  }

  /// Tiled schedule: legs run back to back from zero.  If expected_total
  /// >= 0, the tiled durations must reach it to relative slack 1e-9 and the
  /// stored total is snapped to it (prescribed-time modes quote their
  /// horizon exactly).
  GainSchedule(std::vector<SteeringSegment> segments,
               ScheduleProvenance provenance, double expected_total = -1.0)
      : hold_(checked_front(segments).system()),
        segments_(std::move(segments)),
        provenance_(std::move(provenance)) {
    const Eigen::Index n = hold_.base().state_dim();
    prefixes_.push_back(Eigen::MatrixXd::Identity(n, n));
    double clock = 0.0;
    for (const SteeringSegment& seg : segments_) {
      if (seg.condition_tag() == SteeringCondition::kNone) {
        throw std::invalid_argument(
            "GainSchedule: every leg must satisfy a reachability "
            "certificate");
      }
      starts_.push_back(clock);
      clock += seg.duration();
      prefixes_.push_back(seg.target() * prefixes_.back());
    }
    total_ = clock;
    if (expected_total >= 0.0) {
      if (std::abs(clock - expected_total) >
          1e-9 * std::max(1.0, expected_total)) {
        throw std::logic_error(
            "GainSchedule: legs do not tile the requested total time");
      }
      total_ = expected_total;
    }
  }

  const PeriodizedSystem& system() const { return hold_; }
  const std::vector<SteeringSegment>& segments() const { return segments_; }
  std::size_t segment_count() const { return segments_.size(); }
  double total_time() const { return total_; }
  const ScheduleProvenance& provenance() const { return provenance_; }
  /// Start time of leg i.
  double start_time(std::size_t i) const { return starts_.at(i); }
  /// Product of the first i leg targets (last applied leftmost); i =
  /// segment_count() gives the full cumulative target.
  const Eigen::MatrixXd& prefix_product(std::size_t i) const {
    return prefixes_.at(i);
  }
  /// The transition matrix the whole schedule realizes.
  const Eigen::MatrixXd& cumulative_target() const {
    return prefixes_.back();
  }

  /// Index of the leg owning time t.  Legs own left-closed/right-open
  /// intervals; the final instant belongs to the last leg.
  std::size_t segment_index(double t) const {
    if (segments_.empty()) {
      throw std::logic_error("GainSchedule: hold-only schedule has no legs");
    }
    const auto it =
        std::upper_bound(starts_.begin(), starts_.end(), checked_time(t));
    return static_cast<std::size_t>(it - starts_.begin()) - 1;
  }

  /// Broadcast feedback gain at absolute time t.  Hold-only schedules
  /// return the periodic gain everywhere.
  Eigen::MatrixXd gain(double t) const {
    const double tc = checked_time(t);
    if (segments_.empty()) {
      return hold_.gain();
    }
    const std::size_t k = segment_index(tc);
    return segments_[k].feedback_gain(local_clock(tc, k));
  }

  /// Exact closed-loop transition matrix at absolute time t: the owning
  /// leg's local trajectory right-composed with the finished-leg product.
  Eigen::MatrixXd transition(double t) const {
    const double tc = checked_time(t);
    if (segments_.empty()) {
      return expm(hold_.closed_loop() * tc);
    }
    const std::size_t k = segment_index(tc);
    return segments_[k].optimal_trajectory(local_clock(tc, k)) * prefixes_[k];
  }

 private:
  static const SteeringSegment& checked_front(
      const std::vector<SteeringSegment>& segments) {
    if (segments.empty()) {
      throw std::invalid_argument(
          "GainSchedule: tiled construction needs at least one leg (use the "
          "hold constructor otherwise)");
    }
    return segments.front();
  }

  double checked_time(double t) const {
    const double slack = tol::kTimeSlackRel * std::max(1.0, total_);
    if (!(t >= -slack) || !(t <= total_ + slack)) {
      throw std::domain_error(
          "GainSchedule: time outside the schedule span [0, total_time]");
    }
    return std::min(std::max(t, 0.0), total_);
  }

  /// Leg-local clock for absolute time tc owned by leg k.  The final
  /// instant snaps to the last leg's exact terminal time so it is immune to
  /// accumulated start-time rounding.
  double local_clock(double tc, std::size_t k) const {
    if (tc == total_ && k + 1 == segments_.size()) {
      return segments_[k].duration();
    }
    return tc - starts_[k];
  }

  PeriodizedSystem hold_;
  std::vector<SteeringSegment> segments_;
  std::vector<double> starts_;
  std::vector<Eigen::MatrixXd> prefixes_;  // size segment_count() + 1
  double total_ = 0.0;
  ScheduleProvenance provenance_;
};

/// Broadcast gain of a schedule at absolute time t.
inline Eigen::MatrixXd eval_gain(const GainSchedule& schedule, double t) {
  return schedule.gain(t);
}

namespace detail {

inline bool is_identity_target(const Eigen::MatrixXd& target) {
  const Eigen::Index n = target.rows();
  return (target - Eigen::MatrixXd::Identity(n, n)).norm() <=
         1e-12 * (1.0 + target.norm());
}

inline void require_controllable(const LinearEnsemble& sys,
                                 const char* who) {
  if (!kalman_rank_ok(sys)) {
    throw std::domain_error(
        std::string(who) +
        ": ensemble fails the controllability rank test");
  }
}

}  // namespace detail

/// Builds a tiled schedule from an externally supplied factor list, one leg
/// per factor, all legs on the given periodized system.  The list is read
/// in the library's ordered-product convention (last element leftmost), so
/// factors[0] is the first leg.  Every factor must carry a passing
/// reachability certificate against the leg Gramian.
inline GainSchedule schedule_from_factors(
    const PeriodizedSystem& sys, const std::vector<Eigen::MatrixXd>& factors,
    ScheduleProvenance provenance, double expected_total = -1.0) {
  if (factors.empty()) {
    return GainSchedule(sys, expected_total >= 0.0 ? expected_total : 0.0,
                        std::move(provenance));
  }
  std::vector<SteeringSegment> segments;
  segments.reserve(factors.size());
  for (const Eigen::MatrixXd& f : factors) {
    segments.emplace_back(sys, f);
  }
  return GainSchedule(std::move(segments), std::move(provenance),
                      expected_total);
}

/// Prescribed-time planning: factor the target into conjugated-SPD pieces
/// and steer each piece in an equal share of the horizon.  The piece count
/// K and the leg duration t_s = horizon/K depend on each other through the
/// leg Gramian, so the count is resolved by fixed-point iteration: a trial
/// factorization at horizon/5 seeds K, then the factorization is recomputed
/// at horizon/K until the count reproduces itself (conjugated-SPD
/// acceptance is structural, so this settles immediately in practice; a
/// final certificate check guards it regardless).
inline GainSchedule plan_strong(const SteeringTask& task) {
  detail::require_controllable(task.sys(), "plan_strong");
  if (!task.has_horizon()) {
    throw std::domain_error(
        "plan_strong: a positive total time is required");
  }
  const double horizon = task.horizon();
  if (detail::is_identity_target(task.target())) {
    return GainSchedule(PeriodizedSystem::synthesize(task.sys(), horizon),
                        horizon, ScheduleProvenance{"hold", 0, 0, 0.0});
  }

  int count = 0;
  {
    const double trial = horizon / 5.0;
    const PeriodizedSystem sys0 =
        PeriodizedSystem::synthesize(task.sys(), trial);
    const SpdMatrix w0 = GramianEvaluator(sys0).gramian(trial);
    count = std::max(1, spd_cone_factorize(task.target(), w0).count());
  }
  for (int round = 0; round < 8; ++round) {
    const double t_s = horizon / count;
    const PeriodizedSystem sys =
        PeriodizedSystem::synthesize(task.sys(), t_s);
    const SpdMatrix w = GramianEvaluator(sys).gramian(t_s);
    const SpdConeFactorization fact = spd_cone_factorize(task.target(), w);
    if (std::max(1, fact.count()) != count) {
      count = std::max(1, fact.count());
      continue;
    }
    for (const Eigen::MatrixXd& f : fact.factors) {
      if (!passes_spd_cone(f, w)) {
        const SpdConeDiagnostics d = spd_cone_diagnostics(f, w);
        throw PlanRejection(
            "plan_strong: a factor lost its conjugated-SPD certificate "
            "after the leg-duration fixed point",
            norm_ball_value(f, w), d.symmetry_defect,
            d.min_symmetric_eigenvalue);
      }
    }
    GainSchedule schedule = schedule_from_factors(
        sys, fact.factors,
        ScheduleProvenance{"spd_cone_pieces", 0, 0, 0.0}, horizon);
    if ((schedule.cumulative_target() - task.target()).norm() >
        1e-8 * (1.0 + task.target().norm())) {
      throw std::logic_error(
          "plan_strong: factor product does not reproduce the target");
    }
    return schedule;
  }
  throw std::runtime_error(
      "plan_strong: factor count did not stabilize against the leg "
      "duration");
}

/// Free-time planning: factor the target into near-identity pieces sized to
/// the leg Gramian's eigenvalue spread and steer one piece per period t_s.
/// The factor radius is (1 - 1e-6) * sqrt(lambda_min/lambda_max) of the leg
/// Gramian: conjugation by W^{1/2} dilates norms by at most the square root
/// of the spread, so every factor lands strictly inside the norm-ball
/// certificate.  Total time is N * t_s for the resulting factor count N.
inline GainSchedule plan_free_time(const SteeringTask& task,
                                   double t_s = 1.0) {
  detail::require_controllable(task.sys(), "plan_free_time");
  if (!(t_s > 0.0) || !std::isfinite(t_s)) {
    throw std::domain_error("plan_free_time: leg period must be positive");
  }
  const PeriodizedSystem sys = PeriodizedSystem::synthesize(task.sys(), t_s);
  if (detail::is_identity_target(task.target())) {
    return GainSchedule(sys, 0.0, ScheduleProvenance{"hold", 0, 0, 0.0});
  }
  const SpdMatrix w = GramianEvaluator(sys).gramian(t_s);
  const double epsilon =
      (1.0 - 1e-6) *
      std::sqrt(w.min_eigenvalue() / w.max_eigenvalue());
  const NearIdentityFactorization fact =
      near_identity_factorize(task.target(), epsilon);
  GainSchedule schedule = schedule_from_factors(
      sys, fact.factors,
      ScheduleProvenance{"near_identity_roots", fact.rotation_count,
                         fact.stretch_count, epsilon},
      fact.count() * t_s);
  if ((schedule.cumulative_target() - task.target()).norm() >
      1e-8 * (1.0 + task.target().norm())) {
    throw std::logic_error(
        "plan_free_time: factor product does not reproduce the target");
  }
  return schedule;
}

/// One-leg planning: accepted only when the target itself carries a
/// reachability certificate for the whole horizon; otherwise the request is
/// rejected with both certificate diagnostics (there is no universal
/// single-leg construction, which is exactly why the multi-leg modes
/// exist).
inline GainSchedule plan_single_segment(const SteeringTask& task) {
  detail::require_controllable(task.sys(), "plan_single_segment");
  if (!task.has_horizon()) {
    throw std::domain_error(
        "plan_single_segment: a positive total time is required");
  }
  const PeriodizedSystem sys =
      PeriodizedSystem::synthesize(task.sys(), task.horizon());
  SteeringSegment segment(sys, task.target());
  if (segment.condition_tag() == SteeringCondition::kNone) {
    std::ostringstream msg;
    msg << "plan_single_segment: steering conditions not met: whitened "
           "distance from identity = "
        << segment.norm_value() << " (needs < 1); whitened symmetry defect = "
        << segment.cone_diagnostics().symmetry_defect
        << ", least symmetric-part eigenvalue = "
        << segment.cone_diagnostics().min_symmetric_eigenvalue
        << " (needs > 0)";
    throw PlanRejection(msg.str(), segment.norm_value(),
                        segment.cone_diagnostics().symmetry_defect,
                        segment.cone_diagnostics().min_symmetric_eigenvalue);
  }
  std::vector<SteeringSegment> segments;
  segments.push_back(std::move(segment));
  return GainSchedule(std::move(segments),
                      ScheduleProvenance{"single_segment", 0, 0, 0.0},
                      task.horizon());
}

/// Covariance steering: construct the transition matrix that pushes the
/// initial covariance onto the final one and steer it in a single leg.  In
/// Gramian-whitened coordinates the optimal-transport style map
/// sigma_in^{-1/2} (sigma_in^{1/2} sigma_fn sigma_in^{1/2})^{1/2}
/// sigma_in^{-1/2} is SPD, so the un-whitened transition is conjugated-SPD
/// by construction and always certifiable, for any horizon.
inline GainSchedule plan_covariance(const CovarianceTask& task) {
  detail::require_controllable(task.sys(), "plan_covariance");
  const PeriodizedSystem sys =
      PeriodizedSystem::synthesize(task.sys(), task.horizon());
  const SpdMatrix w = GramianEvaluator(sys).gramian(task.horizon());
  const Eigen::MatrixXd w_half = sqrtm_spd(w).matrix();
  const Eigen::MatrixXd w_inv_half = inv_sqrtm_spd(w).matrix();

  const auto whiten = [&](const SpdMatrix& sigma) {
    const Eigen::MatrixXd m = w_inv_half * sigma.matrix() * w_inv_half;
    return SpdMatrix(0.5 * (m + m.transpose()));
  };
  const SpdMatrix s_in = whiten(task.sigma_in());
  const SpdMatrix s_fn = whiten(task.sigma_fn());
  const Eigen::MatrixXd in_half = sqrtm_spd(s_in).matrix();
  const Eigen::MatrixXd in_inv_half = inv_sqrtm_spd(s_in).matrix();
  const Eigen::MatrixXd mid_raw = in_half * s_fn.matrix() * in_half;
  const Eigen::MatrixXd mid_half =
      sqrtm_spd(SpdMatrix(0.5 * (mid_raw + mid_raw.transpose()))).matrix();
  const Eigen::MatrixXd core_raw = in_inv_half * mid_half * in_inv_half;
  const SpdMatrix core(0.5 * (core_raw + core_raw.transpose()));
  const Eigen::MatrixXd target = w_half * core.matrix() * w_inv_half;

  std::vector<SteeringSegment> segments;
  segments.emplace_back(sys, target);
  if (segments.front().condition_tag() == SteeringCondition::kNone) {
    throw std::logic_error(
        "plan_covariance: constructed transition lost its certificate");
  }
  return GainSchedule(std::move(segments),
                      ScheduleProvenance{"covariance", 0, 0, 0.0},
                      task.horizon());
}

}  // namespace steer
