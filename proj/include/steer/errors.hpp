#ifndef STEER__ERRORS_HPP_
#define STEER__ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace steer {

/// Malformed or out-of-contract input files (JSON schema, CSV layout).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gain synthesis could not produce a periodic closed loop within tolerance.
class PeriodizationFailure : public std::runtime_error {
 public:
  PeriodizationFailure(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// A steering request failed a reachability condition.  This is a structured
/// rejection (the request is well-formed but provably outside the certified
/// class), distinct from operational errors.
class PlanRejection : public std::runtime_error {
 public:
  PlanRejection(const std::string& what, double norm_condition_value,
                double spd_symmetry_defect, double spd_min_eigenvalue)
      : std::runtime_error(what),
        norm_condition_value_(norm_condition_value),
        spd_symmetry_defect_(spd_symmetry_defect),
        spd_min_eigenvalue_(spd_min_eigenvalue) {}

  /// ||W^{-1/2} Phi W^{1/2} - I|| at the rejected target.
  double norm_condition_value() const { return norm_condition_value_; }
  /// ||Psi - Psi^T|| of the conjugated target (SPD-cone check).
  double spd_symmetry_defect() const { return spd_symmetry_defect_; }
  /// Least eigenvalue of sym(Psi) (SPD-cone check).
  double spd_min_eigenvalue() const { return spd_min_eigenvalue_; }

 private:
  double norm_condition_value_;
  double spd_symmetry_defect_;
  double spd_min_eigenvalue_;
};

/// The planned transition matrix lost invertibility at some time.
class SingularTrajectory : public std::runtime_error {
 public:
  SingularTrajectory(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// Numerical integration produced a non-finite or runaway state.
class IntegrationBlowup : public std::runtime_error {
 public:
  IntegrationBlowup(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// A nonlinear rearrangement map failed the contraction requirement, or the
/// associated fixed-point solve did not converge.
class ContractionFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace steer

#endif  // STEER__ERRORS_HPP_
