#pragma once

/// Nonlinear rearrangement by state feedback: given an orientation-
/// preserving diffeomorphism target phi, every particle should arrive at
/// phi of its own starting point after one leg, using one broadcast
/// feedback law u = K(x, t).
///
/// The construction rides on the minimum-energy vector steering problem:
/// for a known start x_in, the optimal leg reaching phi(x_in) in time t_s
/// is available in closed form (open_loop_pair).  Turning that family of
/// open-loop plans into a feedback law requires recovering x_in from the
/// current state (x, t); that inversion is a fixed-point equation for the
/// whitened start y_in, and it contracts whenever the whitened displacement
/// map
///
///   psi(y) = W^{-1/2} phi(W^{1/2} y) - y
///
/// is a contraction (W is the leg Gramian).  The task constructor estimates
/// psi's Lipschitz constant empirically from random probe pairs in a box --
/// a desk-scale stand-in for the global hypothesis, recorded as such.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "steer/errors.hpp"
#include "steer/matfun.hpp"
#include "steer/matrix_types.hpp"
#include "steer/segment.hpp"
#include "steer/sysmod.hpp"

namespace steer {

/// A state-space map x -> phi(x).
using DiffeoMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Builtin maps exposed by name through the CLI registry.
inline DiffeoMap diffeo_identity() {
  return [](const Eigen::VectorXd& x) { return x; };
}

inline DiffeoMap diffeo_translate(const Eigen::VectorXd& c) {
  return [c](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x + c; };
}

inline DiffeoMap diffeo_linear(const Eigen::MatrixXd& m) {
  return [m](const Eigen::VectorXd& x) -> Eigen::VectorXd { return m * x; };
}

inline DiffeoMap diffeo_tanh_perturb(double alpha) {
  return [alpha](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return x + alpha * x.array().tanh().matrix();
  };
}

/// Convergence record of one feedback fixed-point solve.
struct FixedPointTrace {
  std::vector<double> residuals;  ///< successive iterate distances
  int iterations = 0;
  bool converged = false;
};

/// A nonlinear rearrangement task on one periodized leg.  Construction
/// estimates the whitened displacement map's Lipschitz constant from
/// `probe_pairs` random pairs in the centered box of half-width
/// `probe_radius` (whitened coordinates) and refuses tasks whose estimate
/// reaches one.
class DiffeoTask {
 public:
  DiffeoTask(const PeriodizedSystem& sys, DiffeoMap phi,
             double probe_radius = 1.0, double lipschitz_hint = -1.0,
             int probe_pairs = 200)
      : sys_(sys),
        phi_(std::move(phi)),
        gram_(sys),
        w_end_(gram_.gramian(sys.period())),
        w_half_(sqrtm_spd(w_end_).matrix()),
        w_inv_half_(inv_sqrtm_spd(w_end_).matrix()),
        lipschitz_hint_(lipschitz_hint) {
    if (!phi_) {
      throw std::invalid_argument("DiffeoTask: map must be callable");
    }
    if (!(probe_radius > 0.0)) {
      throw std::invalid_argument("DiffeoTask: probe radius must be positive");
    }
    if (probe_pairs < 1) {
      throw std::invalid_argument("DiffeoTask: need at least one probe pair");
    }
    if (lipschitz_hint >= 1.0) {
      throw ContractionFailure(
          "DiffeoTask: a Lipschitz hint >= 1 already violates the "
          "contraction hypothesis");
    }
    empirical_lipschitz_ =
        estimate_lipschitz(probe_radius, probe_pairs);
    if (empirical_lipschitz_ >= 1.0) {
      std::ostringstream msg;
      msg << "DiffeoTask: whitened displacement map is not a contraction "
             "on the probe box (empirical Lipschitz estimate "
          << empirical_lipschitz_ << " >= 1)";
      throw ContractionFailure(msg.str());
    }
  }

  const PeriodizedSystem& system() const { return sys_; }
  const SpdMatrix& gramian_end() const { return w_end_; }
  double empirical_lipschitz() const { return empirical_lipschitz_; }
  double lipschitz_hint() const { return lipschitz_hint_; }

  /// The target map.
  Eigen::VectorXd map(const Eigen::VectorXd& x) const { return phi_(x); }

  /// Whitened displacement map psi(y) = W^{-1/2} phi(W^{1/2} y) - y.
  Eigen::VectorXd psi(const Eigen::VectorXd& y) const {
    return w_inv_half_ * phi_(w_half_ * y) - y;
  }

  /// Minimum-energy leg for a known start: the state reached at local time
  /// t and the input applied there, for the leg steering x_in to
  /// phi(x_in) in one period.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> open_loop_pair(
      const Eigen::VectorXd& x_in, double t) const {
    check_state(x_in, "open_loop_pair");
    const double tc = checked_time(t, "open_loop_pair");
    const Eigen::VectorXd core =
        w_end_.matrix().llt().solve(phi_(x_in) - x_in);
    const Eigen::VectorXd x_star =
        expm(sys_.closed_loop() * tc) *
        (x_in + gram_.gramian_unchecked(tc) * core);
    const Eigen::VectorXd u_star =
        sys_.base().b().transpose() *
        expm(-sys_.closed_loop() * tc).transpose() * core;
    return {x_star, u_star};
  }

  /// Broadcast feedback input at state x and local time t: recovers the
  /// start whose optimal leg passes through (x, t) by Banach fixed-point
  /// iteration in whitened coordinates, then returns that leg's input.
  Eigen::VectorXd feedback_eval(const Eigen::VectorXd& x, double t,
                                FixedPointTrace* trace = nullptr) const {
    check_state(x, "feedback_eval");
    const double tc = checked_time(t, "feedback_eval");
    const Eigen::MatrixXd mixer =
        w_inv_half_ * gram_.gramian_unchecked(tc) * w_inv_half_;
    const Eigen::VectorXd rhs =
        w_inv_half_ * (expm(-sys_.closed_loop() * tc) * x);

    Eigen::VectorXd y = rhs;
    bool converged = false;
    int iters = 0;
    if (trace != nullptr) {
      trace->residuals.clear();
    }
    for (; iters < tol::kMaxFixedPointIters; ++iters) {
      const Eigen::VectorXd next = rhs - mixer * psi(y);
      const double residual = (next - y).norm();
      if (trace != nullptr) {
        trace->residuals.push_back(residual);
      }
      y = next;
      if (residual <= tol::kFixedPoint * (1.0 + y.norm())) {
        converged = true;
        ++iters;
        break;
      }
    }
    if (trace != nullptr) {
      trace->iterations = iters;
      trace->converged = converged;
    }
    if (!converged) {
      std::ostringstream msg;
      msg << "DiffeoTask: feedback fixed point did not converge within "
          << tol::kMaxFixedPointIters << " iterations (last residual "
          << (mixer * psi(y)).norm() << ")";
      throw ContractionFailure(msg.str());
    }
    const Eigen::VectorXd x_in = w_half_ * y;
    const Eigen::VectorXd core =
        w_end_.matrix().llt().solve(phi_(x_in) - x_in);
    return sys_.base().b().transpose() *
           expm(-sys_.closed_loop() * tc).transpose() * core;
  }

  /// Integrates x_dot = A_c x + B u with u = feedback_eval(x, t) from x_in
  /// over one period (classical RK4, fixed step) and returns the distance
  /// from the target point phi(x_in).
  double closed_loop_check(const Eigen::VectorXd& x_in, int steps) const {
    check_state(x_in, "closed_loop_check");
    if (steps < 100) {
      throw std::invalid_argument(
          "closed_loop_check: need at least 100 steps");
    }
    const Eigen::MatrixXd& a_c = sys_.closed_loop();
    const Eigen::MatrixXd& b = sys_.base().b();
    const double h = sys_.period() / steps;
    Eigen::VectorXd x = x_in;
    const auto f = [&](double t, const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return a_c * v + b * feedback_eval(v, t);
    };
    for (int i = 0; i < steps; ++i) {
      const double t0 = i * h;
      const double t1 = (i + 1 == steps) ? sys_.period() : t0 + h;
      const Eigen::VectorXd k1 = f(t0, x);
      const Eigen::VectorXd k2 = f(t0 + 0.5 * h, x + (0.5 * h) * k1);
      const Eigen::VectorXd k3 = f(t0 + 0.5 * h, x + (0.5 * h) * k2);
      const Eigen::VectorXd k4 = f(t1, x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite()) {
        throw IntegrationBlowup(
            "closed_loop_check: state diverged", t1);
      }
    }
    return (x - phi_(x_in)).norm();
  }

 private:
  double estimate_lipschitz(double radius, int pairs) const {
    std::mt19937_64 rng(detail::default_seed());
    std::uniform_real_distribution<double> coord(-radius, radius);
    const Eigen::Index n = sys_.base().state_dim();
    double worst = 0.0;
    for (int p = 0; p < pairs; ++p) {
      Eigen::VectorXd y1(n), y2(n);
      double gap = 0.0;
      do {
        for (Eigen::Index i = 0; i < n; ++i) {
          y1(i) = coord(rng);
          y2(i) = coord(rng);
        }
        gap = (y1 - y2).norm();
      } while (gap < 1e-9 * radius);
      worst = std::max(worst, (psi(y1) - psi(y2)).norm() / gap);
    }
    return worst;
  }

  void check_state(const Eigen::VectorXd& x, const char* who) const {
    if (x.size() != sys_.base().state_dim() || !x.allFinite()) {
      throw std::invalid_argument(std::string(who) +
                                  ": state must be a finite n-vector");
    }
  }

  double checked_time(double t, const char* who) const {
    const double slack = tol::kTimeSlackRel * sys_.period();
    if (!(t >= -slack) || !(t <= sys_.period() + slack)) {
      throw std::domain_error(std::string(who) +
                              ": time outside the leg [0, t_s]");
    }
    return std::min(std::max(t, 0.0), sys_.period());
  }

  PeriodizedSystem sys_;
  DiffeoMap phi_;
  GramianEvaluator gram_;
  SpdMatrix w_end_;
  Eigen::MatrixXd w_half_;
  Eigen::MatrixXd w_inv_half_;
  double lipschitz_hint_ = -1.0;
  double empirical_lipschitz_ = 0.0;
};

}  // namespace steer
