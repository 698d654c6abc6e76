#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "opmix/detail/numeric.hpp"
#include "opmix/green.hpp"
#include "opmix/grid.hpp"
#include "opmix/spectral.hpp"

namespace opmix {

/// Gauss-Legendre nodes/weights on [-1,1], found by Newton iteration on the
/// Legendre polynomial; symmetric and accurate to machine precision.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
  Eigen::VectorXd x(n), w(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));  // Chebyshev seed
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      const double step = p1 / dp;
      t -= step;
      if (std::abs(step) < 1e-15) break;
    }
    {  // refresh derivative at the converged node
      double p0 = 1.0, p1 = t;
      for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
    }
    x[i] = -t;
    x[n - 1 - i] = t;
    const double wi = 2.0 / ((1.0 - t * t) * dp * dp);
    w[i] = wi;
    w[n - 1 - i] = wi;
  }
  return {x, w};
}

/// Outer quadrature plan for the ridge integral over v in [0,1].
/// With split enabled the domain is cut at 1/N and then doubled dyadically,
/// matching the 1/(N v) variation scale of the integrand; plain [0,1]
/// otherwise.
struct QuadratureSpec {
  int nodes = 64;
  bool split = true;

  std::vector<std::pair<double, double>> intervals(int n_points) const {
    if (!split || n_points < 2) return {{0.0, 1.0}};
    std::vector<std::pair<double, double>> iv;
    double hi = 1.0 / n_points;
    iv.emplace_back(0.0, std::min(1.0, hi));
    while (hi < 1.0) {
      const double next = std::min(1.0, 2.0 * hi);
      iv.emplace_back(hi, next);
      hi = next;
    }
    return iv;
  }
};

/// The eight closed-form pieces of int_a^b G_*(t,t) dt for L_* = v I + delta L.
struct DiagIntegralParts {
  double v = 0.0;
  CMatrix a_mm, a_pp, a_mp, a_pm;
  std::array<double, 8> terms{};
  double total = 0.0;
};

/**
 * int_a^b G_v(t,t) dt assembled in closed form from the spectral data:
 * a rank-structured combination of the boundary couplings with the
 * exponential moment matrices A_--, A_++, A_-+, A_+-. Runtime is O(k^3),
 * independent of N.
 */
inline DiagIntegralParts diag_integral(const OperatorSpec& op, const Grid& grid, double v) {
  if (!(v > 0.0) || v > 1.0) throw std::invalid_argument("diag_integral: v must lie in (0,1]");
  if (!grid.equidistant())
    throw std::invalid_argument("diag_integral: closed form requires an equidistant grid");
  const SpectralFactorization f = factorize(op, v, grid);
  const int k = f.k;
  const double width = f.width();
  const double n_pts = grid.size();
  const double tau = op.tau();

  DiagIntegralParts parts;
  parts.v = v;
  parts.a_mm.resize(k, k);
  parts.a_pp.resize(k, k);
  parts.a_mp.resize(k, k);
  parts.a_pm.resize(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (i == j) {
        parts.a_mm(i, j) = n_pts * std::exp(width * f.eta_m[i]);
        parts.a_pp(i, j) = n_pts * std::exp(-width * f.eta_p[i]);
      } else {
        parts.a_mm(i, j) = std::exp(width * f.eta_m[j]) * n_pts *
                           detail::expm1_over(width * (f.eta_m[i] - f.eta_m[j]));
        parts.a_pp(i, j) = std::exp(-width * f.eta_p[j]) * n_pts *
                           detail::expm1_over(-width * (f.eta_p[i] - f.eta_p[j]));
      }
      parts.a_mp(i, j) = n_pts * detail::expm1_over(width * (f.eta_m[i] - f.eta_p[j]));
      parts.a_pm(i, j) = n_pts * detail::expm1_over(-width * (f.eta_p[i] - f.eta_m[j]));
    }
  }

  const CRowVector ones = CRowVector::Ones(k);
  const CMatrix em_diag = CMatrix(f.decay_m.asDiagonal());
  const CMatrix ba = f.couple_b * em_diag * f.couple_a;      // across the cycle, b side first
  const CMatrix cyc_a = f.cycle * em_diag * f.couple_a;      // B e^{(b-a)J_-} couple_a
  const CMatrix b_cyc = f.couple_b * em_diag * f.cycle;      // couple_b e^{(b-a)J_-} B

  const double inv_tau = 1.0 / tau;
  std::array<Complex, 8> ct;
  ct[0] = n_pts * inv_tau * f.vm.sum();
  ct[1] = inv_tau * (ones * (f.couple_a.cwiseProduct(parts.a_mp) * f.vp)).value();
  ct[2] = -inv_tau * (ones * (f.couple_b.cwiseProduct(parts.a_pm) * f.vm)).value();
  ct[3] = -inv_tau * (ones * (ba.cwiseProduct(parts.a_pp) * f.vp)).value();
  ct[4] = inv_tau * (ones * (f.cycle.cwiseProduct(parts.a_mm) * f.vm)).value();
  ct[5] = inv_tau * (ones * (cyc_a.cwiseProduct(parts.a_mp) * f.vp)).value();
  ct[6] = -inv_tau * (ones * (b_cyc.cwiseProduct(parts.a_pm) * f.vm)).value();
  ct[7] = -inv_tau * (ones * ((b_cyc * em_diag * f.couple_a).cwiseProduct(parts.a_pp) * f.vp))
                         .value();

  Complex sum(0.0, 0.0);
  for (int i = 0; i < 8; ++i) {
    if (!std::isfinite(ct[i].real()) || !std::isfinite(ct[i].imag()))
      throw std::runtime_error("diag_integral: non-finite term");
    parts.terms[i] = ct[i].real();
    sum += ct[i];
  }
  parts.total = detail::real_checked(sum, std::max(std::abs(sum), 1.0), "diag_integral");
  if (!(parts.total > 0.0))
    throw std::runtime_error("diag_integral: non-positive total (kernel trace must be positive)");
  return parts;
}

/// Operator approximation of log det(I_N + R_0):
/// the double integral of G_v(t,t) over t in [a,b] and v in [0,1], with the
/// inner integral in closed form and the outer one by Gauss-Legendre on the
/// quadrature plan. Runtime independent of N.
inline double logdet_approx(const OperatorSpec& op, const Grid& grid,
                            const QuadratureSpec& quad = {}) {
  const auto [xs, ws] = gauss_legendre(quad.nodes);
  double total = 0.0;
  for (const auto& [lo, hi] : quad.intervals(grid.size())) {
    const double c = 0.5 * (hi + lo), h = 0.5 * (hi - lo);
    for (int i = 0; i < xs.size(); ++i) {
      const double v = c + h * xs[i];
      total += h * ws[i] * diag_integral(op, grid, v).total;
    }
  }
  if (!std::isfinite(total)) throw std::runtime_error("logdet_approx: non-finite quadrature");
  return total;
}

enum class BrownianKind { motion, bridge };

/// Closed-form operator log-determinant for the first-derivative penalty:
/// log cosh(x) for the free-right-end process and log(sinh(x)/x) for the
/// pinned one, x = sqrt((b-a) N) / lambda. Overflow-safe for large x.
inline double logdet_closed_brownian(BrownianKind kind, double lambda, double a, double b,
                                     double n_pts) {
  if (!(lambda > 0.0) || !(b > a) || !(n_pts >= 1.0))
    throw std::invalid_argument("logdet_closed_brownian: invalid parameters");
  const double x = std::sqrt((b - a) * n_pts) / lambda;
  if (kind == BrownianKind::motion)
    return x + std::log1p(std::exp(-2.0 * x)) - std::log(2.0);
  if (x < 1e-4) return std::log1p(x * x / 6.0 * (1.0 + x * x / 20.0));
  return x + std::log1p(-std::exp(-2.0 * x)) - std::log(2.0 * x);
}

}  // namespace opmix
