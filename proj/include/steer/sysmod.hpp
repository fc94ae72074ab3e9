#ifndef STEER__SYSMOD_HPP_
#define STEER__SYSMOD_HPP_

/// System model: the controlled ensemble (A, B), synthesis of a periodizing
/// feedback gain K_c with exp((A + B K_c) t_s) = I, and reachability
/// Gramians of the closed loop computed through a block matrix exponential.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "steer/errors.hpp"
#include "steer/matfun.hpp"
#include "steer/matrix_types.hpp"

namespace steer {

namespace detail {

/// Seed for randomized internals.  Reproducible by default; override with
/// the COLLECTIVE_STEER_SEED environment variable.
inline std::uint64_t default_seed() {
  const char* env = std::getenv("COLLECTIVE_STEER_SEED");
  if (env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0') {
      throw SchemaError(
          "COLLECTIVE_STEER_SEED must be a base-10 unsigned integer");
    }
    return static_cast<std::uint64_t>(parsed);
  }
  return 0x51eed5eedULL;
}

}  // namespace detail

/// The controlled ensemble x-dot = A x + B u with B of full column rank.
/// All agents share (A, B); a broadcast feedback u = K x closes the loop.
class LinearEnsemble {
 public:
  LinearEnsemble(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
      : a_(a), b_(b) {
    detail::require_square_finite(a, "LinearEnsemble");
    detail::require_finite(b, "LinearEnsemble");
    if (b.rows() != a.rows() || b.cols() < 1) {
      throw std::invalid_argument(
          "LinearEnsemble: B must be n x m with m >= 1");
    }
    const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(b).singularValues();
    if (sv(sv.size() - 1) <=
        static_cast<double>(b.rows()) * sv(0) * tol::kRankRel) {
      throw std::invalid_argument(
          "LinearEnsemble: B must have full column rank");
    }
  }

  const Eigen::MatrixXd& a() const { return a_; }
  const Eigen::MatrixXd& b() const { return b_; }
  Eigen::Index state_dim() const { return a_.rows(); }
  Eigen::Index input_dim() const { return b_.cols(); }

 private:
  Eigen::MatrixXd a_;
  Eigen::MatrixXd b_;
};

/// Numerical Kalman controllability test: rank of [B, AB, ..., A^{n-1}B]
/// equals n, judged by singular values with threshold n * sigma_max * 1e-12.
inline bool kalman_rank_ok(const LinearEnsemble& sys) {
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index m = sys.input_dim();
  Eigen::MatrixXd ctrb(n, n * m);
  Eigen::MatrixXd power = sys.b();
  for (Eigen::Index k = 0; k < n; ++k) {
    ctrb.block(0, k * m, n, m) = power;
    power = sys.a() * power;
  }
  const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(ctrb).singularValues();
  return sv(n - 1) > static_cast<double>(n) * sv(0) * tol::kRankRel;
}

namespace detail {

/// How the closed-loop spectrum is spread over the periodic lattice
/// {+-2 pi i k / t_s}.  Each conjugate pair at harmonic k consumes one unit
/// of geometric multiplicity there, so a harmonic can host at most m pairs.
struct LatticePlan {
  std::vector<std::pair<int, int>> harmonic_mult;  // (harmonic k, # pairs)
  bool place_zero = false;                         // one 0 eigenvalue (odd n)
};

inline Eigen::Index lattice_direction_count(const LatticePlan& plan) {
  Eigen::Index count = plan.place_zero ? 1 : 0;
  for (const auto& [harmonic, mult] : plan.harmonic_mult) {
    count += mult;
  }
  return count;
}

/// Candidate allocations of the n/2 conjugate pairs over harmonics
/// 1, 2, ..., ordered with the fewest (lowest) harmonics first: packing
/// pairs onto low harmonics keeps the gain small, but the eigenspace a
/// lattice point offers, range((i w I - A)^{-1} B), is invariant under
/// feedback, and when it nearly meets its conjugate no direction choice
/// conditions that allocation -- so alternatives that spread pairs across
/// harmonics are kept as fallbacks.  The list is capped; for m = 1 it
/// degenerates to the single one-pair-per-harmonic plan.
inline std::vector<LatticePlan> lattice_allocations(Eigen::Index n,
                                                    Eigen::Index m,
                                                    std::size_t cap = 16) {
  const Eigen::Index pairs = n / 2;
  std::vector<std::vector<int>> comps;
  std::vector<int> current;
  const auto dfs = [&](auto&& self, Eigen::Index remaining) -> void {
    if (comps.size() >= cap) {
      return;
    }
    if (remaining == 0) {
      comps.push_back(current);
      return;
    }
    for (Eigen::Index part = std::min(m, remaining); part >= 1; --part) {
      current.push_back(static_cast<int>(part));
      self(self, remaining - part);
      current.pop_back();
    }
  };
  dfs(dfs, pairs);

  std::vector<LatticePlan> plans;
  plans.reserve(comps.size());
  for (const auto& comp : comps) {
    LatticePlan plan;
    plan.place_zero = (n % 2 == 1);
    for (std::size_t i = 0; i < comp.size(); ++i) {
      plan.harmonic_mult.emplace_back(static_cast<int>(i) + 1, comp[i]);
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

/// Gain K with exp((a + b K) t_s) = I, built by whole-eigenstructure
/// assignment: the eigenvalue mu = 2 pi i k / t_s with input direction g
/// receives the closed-loop eigenvector w = (mu I - a)^{-1} b g, pinned by
/// K w = g; conjugate pairs are realified into [Re w, Im w] columns.  All
/// solves run in extended precision so the dominant error left in the
/// returned gain is its final rounding to double.  Returns std::nullopt
/// when a lattice point (numerically) meets the spectrum of `a` or the
/// eigenvector basis degenerates; the caller then redraws directions.
inline std::optional<Eigen::MatrixXd> assign_periodic_gain(
    const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double t_s,
    const LatticePlan& plan, const std::vector<Eigen::VectorXcd>& dirs) {
  using Real = long double;
  using CScalar = std::complex<Real>;
  using RMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
  using CMat = Eigen::Matrix<CScalar, Eigen::Dynamic, Eigen::Dynamic>;
  using CVec = Eigen::Matrix<CScalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  const RMat a_x = a.cast<Real>();
  const RMat b_x = b.cast<Real>();
  const CMat a_c = a_x.cast<CScalar>();
  const CMat b_c = b_x.cast<CScalar>();
  const Real a_norm = a_x.norm();
  constexpr Real pi = std::numbers::pi_v<Real>;

  RMat basis(n, n);    // realified closed-loop eigenvectors, by column
  RMat targets(m, n);  // K * basis = targets pins the gain
  Eigen::Index col = 0;
  Eigen::Index dir_index = 0;

  for (const auto& [harmonic, mult] : plan.harmonic_mult) {
    const CScalar mu(Real(0),
                     Real(2) * pi * Real(harmonic) / static_cast<Real>(t_s));
    const CMat shift = mu * CMat::Identity(n, n) - a_c;
    const auto lu = shift.fullPivLu();
    for (int l = 0; l < mult; ++l) {
      const CVec g = dirs[dir_index++].cast<CScalar>();
      const CVec w = lu.solve(b_c * g);
      if (!w.allFinite() ||
          (shift * w - b_c * g).norm() >
              Real(1e-8) * (Real(1) + w.norm() * (std::abs(mu) + a_norm))) {
        return std::nullopt;  // mu sits (numerically) on the spectrum of a
      }
      basis.col(col) = w.real();
      targets.col(col) = g.real();
      ++col;
      basis.col(col) = w.imag();
      targets.col(col) = g.imag();
      ++col;
    }
  }
  if (plan.place_zero) {
    const Eigen::VectorXcd g0 = dirs[dir_index++];
    const auto lu = a_x.fullPivLu();
    const Eigen::Matrix<Real, Eigen::Dynamic, 1> rhs0 =
        -(b_x * g0.real().cast<Real>());
    const Eigen::Matrix<Real, Eigen::Dynamic, 1> w0 = lu.solve(rhs0);
    if (!w0.allFinite() ||
        (a_x * w0 - rhs0).norm() > Real(1e-8) * (Real(1) + w0.norm() * a_norm)) {
      return std::nullopt;  // a is (numerically) singular
    }
    basis.col(col) = w0;
    targets.col(col) = g0.real().cast<Real>();
    ++col;
  }

  const RMat gain_x =
      basis.transpose().fullPivLu().solve(targets.transpose()).transpose();
  if (!gain_x.allFinite() ||
      (gain_x * basis - targets).norm() >
          Real(1e-8) * (Real(1) + gain_x.norm() * basis.norm())) {
    return std::nullopt;  // eigenvector basis degenerate for these draws
  }
  return gain_x.cast<double>();
}

/// Gauss-Newton polish of a periodizing gain, minimizing the measured
/// residual ||exp((a + b K) t_s) - I||_F directly over K.  The assignment
/// above leaves the spectrum off the lattice by roughly the rounding of K
/// times the eigenvalue conditioning; one or two corrector steps push the
/// residual of the represented closed loop down to evaluation noise.  The
/// directional derivative of the exponential is read off the top-right
/// block of exp([[M, N], [0, M]]).
inline std::pair<Eigen::MatrixXd, double> polish_periodic_gain(
    const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double t_s,
    Eigen::MatrixXd k, double target, int max_iters = 3) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd best_k = k;
  double best_residual = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter <= max_iters; ++iter) {
    const Eigen::MatrixXd a_c = a + b * k;
    const Eigen::MatrixXd gap = expm(a_c * t_s) - id;
    const double residual = gap.norm();
    if (residual < best_residual) {
      best_residual = residual;
      best_k = k;
    }
    if (residual <= target || iter == max_iters || !gap.allFinite()) {
      break;
    }
    Eigen::MatrixXd jac(n * n, m * n);
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    block.topLeftCorner(n, n) = a_c * t_s;
    block.bottomRightCorner(n, n) = a_c * t_s;
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        block.topRightCorner(n, n) = t_s * b.col(i) * id.row(j);
        const Eigen::MatrixXd deriv =
            expm(block).topRightCorner(n, n);
        jac.col(j * m + i) =
            Eigen::Map<const Eigen::VectorXd>(deriv.data(), n * n);
      }
    }
    if (!jac.allFinite()) {
      break;  // exponential overflow from a runaway candidate; keep the best
    }
    const Eigen::VectorXd rhs =
        -Eigen::Map<const Eigen::VectorXd>(gap.data(), n * n);
    const Eigen::VectorXd step =
        jac.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
    if (!step.allFinite()) {
      break;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        k(i, j) += step(j * m + i);
      }
    }
  }
  return {best_k, best_residual};
}

}  // namespace detail

/// A controlled ensemble together with a gain K_c whose closed loop
/// A_c = A + B K_c satisfies exp(A_c t_s) = I: holding K_c makes every
/// transition return to the identity after one period t_s.
class PeriodizedSystem {
 public:
  /// Adopt a user-supplied gain verbatim; the periodicity residual
  /// ||exp(A_c t_s) - I||_F must not exceed n * 1e-8.
  static PeriodizedSystem with_gain(const LinearEnsemble& sys,
                                    const Eigen::MatrixXd& k_c, double t_s) {
    if (!(t_s > 0.0)) {
      throw std::invalid_argument("PeriodizedSystem: t_s must be positive");
    }
    detail::require_finite(k_c, "PeriodizedSystem");
    if (k_c.rows() != sys.input_dim() || k_c.cols() != sys.state_dim()) {
      throw std::invalid_argument("PeriodizedSystem: K_c must be m x n");
    }
    const Eigen::MatrixXd a_c = sys.a() + sys.b() * k_c;
    const double residual =
        (expm(a_c * t_s) -
         Eigen::MatrixXd::Identity(sys.state_dim(), sys.state_dim()))
            .norm();
    if (residual >
        tol::kPeriodPerDim * static_cast<double>(sys.state_dim())) {
      throw PeriodizationFailure(
          "PeriodizedSystem: supplied gain misses periodicity (residual " +
              std::to_string(residual) + ")",
          residual);
    }
    return PeriodizedSystem(sys, k_c, a_c, t_s, residual);
  }

  /// Synthesize a periodizing gain by whole-eigenstructure assignment on the
  /// periodic lattice (see detail::assign_periodic_gain).  Eigenvector input
  /// directions are drawn at random (deterministically seeded, redrawn up to
  /// max_draws times, with a random pre-feedback rescue when a lattice point
  /// meets the open-loop spectrum), and every candidate is post-verified
  /// through the residual gate.
  static PeriodizedSystem synthesize(const LinearEnsemble& sys, double t_s,
                                     int max_draws = 8) {
    if (!(t_s > 0.0)) {
      throw std::invalid_argument("periodize: t_s must be positive");
    }
    if (!kalman_rank_ok(sys)) {
      throw std::domain_error("periodize: the pair (A, B) is not controllable");
    }
    const Eigen::Index n = sys.state_dim();
    const Eigen::Index m = sys.input_dim();
    const std::vector<detail::LatticePlan> plans =
        detail::lattice_allocations(n, m);

    std::mt19937_64 rng(detail::default_seed());
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double gate = tol::kPeriodPerDim * static_cast<double>(n);
    double best_residual = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd best_k_c;

    for (const detail::LatticePlan& plan : plans) {
      const Eigen::Index dir_count = detail::lattice_direction_count(plan);
      for (int draw = 0; draw < max_draws; ++draw) {
        std::vector<Eigen::VectorXcd> dirs(dir_count);
        for (Eigen::Index i = 0; i < dir_count; ++i) {
          Eigen::VectorXcd g(m);
          if (m == 1) {
            g(0) = 1.0;  // phase does not change the (unique) gain
          } else {
            for (Eigen::Index j = 0; j < m; ++j) {
              g(j) = std::complex<double>(gauss(rng), gauss(rng));
            }
            g.normalize();
          }
          dirs[i] = g;
        }
        // A lattice point on the open-loop spectrum (or a singular A with
        // an odd state dimension) blocks the resolvent solves; a random
        // pre-feedback shifts the spectrum away.  Engage it on later draws.
        Eigen::MatrixXd f0 = Eigen::MatrixXd::Zero(m, n);
        const bool shift_spectrum =
            (m == 1) ? draw > 0 : draw >= max_draws / 2;
        if (shift_spectrum) {
          for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
              f0(i, j) = gauss(rng);
            }
          }
        }

        const auto gain = detail::assign_periodic_gain(
            sys.a() + sys.b() * f0, sys.b(), t_s, plan, dirs);
        if (!gain) {
          continue;
        }
        const auto [k_c, residual] = detail::polish_periodic_gain(
            sys.a(), sys.b(), t_s, f0 + *gain, 0.05 * gate);
        if (residual < best_residual) {
          best_residual = residual;
          best_k_c = k_c;
        }
        if (best_residual <= 0.25 * gate) {
          break;  // comfortable margin; stop early
        }
      }
      if (best_residual <= 0.25 * gate) {
        break;
      }
    }
    if (best_residual <= gate) {
      return PeriodizedSystem(sys, best_k_c,
                              sys.a() + sys.b() * best_k_c, t_s,
                              best_residual);
    }
    throw PeriodizationFailure(
        "periodize: could not meet the periodicity residual after " +
            std::to_string(max_draws) + " draws (best " +
            std::to_string(best_residual) + ")",
        best_residual);
  }

  const LinearEnsemble& base() const { return base_; }
  /// The periodizing gain K_c.
  const Eigen::MatrixXd& gain() const { return k_c_; }
  /// The closed loop A_c = A + B K_c.
  const Eigen::MatrixXd& closed_loop() const { return a_c_; }
  /// The period t_s with exp(A_c t_s) = I.
  double period() const { return t_s_; }
  /// Achieved ||exp(A_c t_s) - I||_F.
  double periodicity_residual() const { return residual_; }

 private:
  PeriodizedSystem(LinearEnsemble base, Eigen::MatrixXd k_c,
                   Eigen::MatrixXd a_c, double t_s, double residual)
      : base_(std::move(base)),
        k_c_(std::move(k_c)),
        a_c_(std::move(a_c)),
        t_s_(t_s),
        residual_(residual) {}

  LinearEnsemble base_;
  Eigen::MatrixXd k_c_;
  Eigen::MatrixXd a_c_;
  double t_s_;
  double residual_;
};

/// Synthesize a periodizing gain for the ensemble (see
/// PeriodizedSystem::synthesize).
inline PeriodizedSystem periodize(const LinearEnsemble& sys, double t_s,
                                  int max_draws = 8) {
  return PeriodizedSystem::synthesize(sys, t_s, max_draws);
}

/// Evaluates reachability Gramians
///   W_t = int_0^t exp(-A_c tau) B B^T exp(-A_c^T tau) dtau
/// of a closed-loop pair (A_c, B).  The 2n x 2n block generator
/// [[A_c, B B^T], [0, -A_c^T]] is cached at construction; each query costs
/// one matrix exponential, and W_t is recovered from two of its blocks.
class GramianEvaluator {
 public:
  GramianEvaluator(const Eigen::MatrixXd& a_closed, const Eigen::MatrixXd& b) {
    detail::require_square_finite(a_closed, "GramianEvaluator");
    detail::require_finite(b, "GramianEvaluator");
    if (b.rows() != a_closed.rows()) {
      throw std::invalid_argument(
          "GramianEvaluator: A_c and B row counts differ");
    }
    n_ = a_closed.rows();
    block_ = Eigen::MatrixXd::Zero(2 * n_, 2 * n_);
    block_.topLeftCorner(n_, n_) = a_closed;
    block_.topRightCorner(n_, n_) = b * b.transpose();
    block_.bottomRightCorner(n_, n_) = -a_closed.transpose();
  }

  explicit GramianEvaluator(const PeriodizedSystem& sys)
      : GramianEvaluator(sys.closed_loop(), sys.base().b()) {}

  /// W_t without the positive-definiteness gate.  Intended for trajectory
  /// formulas where the W_t -> 0 limit near t = 0 is benign; the result is
  /// exactly symmetric but may have eigenvalues at roundoff level.
  Eigen::MatrixXd gramian_unchecked(double t) const {
    if (t < 0.0) {
      throw std::domain_error("gramian: t must be non-negative");
    }
    if (t == 0.0) {
      return Eigen::MatrixXd::Zero(n_, n_);
    }
    const Eigen::MatrixXd e = expm(block_ * t);
    const Eigen::MatrixXd w = e.bottomRightCorner(n_, n_).transpose() *
                              e.topRightCorner(n_, n_);
    return 0.5 * (w + w.transpose());
  }

  /// Validated W_t: positive definite or a domain error.
  SpdMatrix gramian(double t) const {
    if (!(t > 0.0)) {
      throw std::domain_error("gramian: t must be positive");
    }
    return SpdMatrix(gramian_unchecked(t));
  }

  /// The ratio W_t W_{t_end}^{-1} through an SPD solve.  At t = 0 this is
  /// the zero matrix; at t = t_end it is the identity to roundoff.
  Eigen::MatrixXd gramian_ratio(double t, double t_end) const {
    if (!(t_end > 0.0) || t < 0.0 || t > t_end) {
      throw std::domain_error(
          "gramian_ratio: need 0 <= t <= t_end with t_end > 0");
    }
    if (t == 0.0) {
      return Eigen::MatrixXd::Zero(n_, n_);
    }
    const SpdMatrix w_end = gramian(t_end);
    const Eigen::MatrixXd w_t = gramian_unchecked(t);
    // W_t W_end^{-1} = (W_end^{-1} W_t)^T for symmetric W_t.
    return w_end.matrix().llt().solve(w_t).transpose();
  }

  Eigen::Index dim() const { return n_; }

 private:
  Eigen::Index n_;
  Eigen::MatrixXd block_;
};

}  // namespace steer

#endif  // STEER__SYSMOD_HPP_
