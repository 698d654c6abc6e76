#pragma once

// Test-only reference implementations, kept independent of the library's
// production code paths: closed-form kernels, direct O(N^2) evaluation of
// the scan formulas, quadrature helpers and random model generators.

#include <Eigen/Dense>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <opmix/fast_solve.hpp>
#include <opmix/green.hpp>
#include <opmix/grid.hpp>
#include <opmix/operator_spec.hpp>
#include <opmix/spectral.hpp>

namespace refimpl {

// ---------------------------------------------------------------------------
// Closed-form kernels of v I + delta L for the first-derivative penalty
// K = lambda d/dt. "free" pins theta(a) = theta'(b) = 0, "pinned" pins both
// ends. Derived by hand from the two-point boundary-value problem
// -delta lambda^2 u'' + v u = f.
// ---------------------------------------------------------------------------

// Exponential-factored evaluation keeps the hyperbolic ratios finite even
// when the raw sinh/cosh would overflow: with x = kappa (lo - a),
// y = kappa (b - hi), z = kappa (b - a),
//   sinh(x) cosh(y) / cosh(z)
//     = e^{x+y-z} (1 - e^{-2x})(1 + e^{-2y}) / (2 (1 + e^{-2z})),
// and x + y - z = -kappa (hi - lo) <= 0.
inline double kernel_motion_v(double t, double s, double lambda, double a, double b, int n,
                              double v) {
  const double delta = (b - a) / n;
  const double c = delta * lambda * lambda;
  const double kappa = std::sqrt(v / c);
  const double lo = std::min(t, s), hi = std::max(t, s);
  const double x = kappa * (lo - a), y = kappa * (b - hi), z = kappa * (b - a);
  return std::exp(x + y - z) * (1.0 - std::exp(-2.0 * x)) * (1.0 + std::exp(-2.0 * y)) /
         (2.0 * (1.0 + std::exp(-2.0 * z))) / (c * kappa);
}

inline double kernel_bridge_v(double t, double s, double lambda, double a, double b, int n,
                              double v) {
  const double delta = (b - a) / n;
  const double c = delta * lambda * lambda;
  const double kappa = std::sqrt(v / c);
  const double lo = std::min(t, s), hi = std::max(t, s);
  const double x = kappa * (lo - a), y = kappa * (b - hi), z = kappa * (b - a);
  return std::exp(x + y - z) * (1.0 - std::exp(-2.0 * x)) * (1.0 - std::exp(-2.0 * y)) /
         (2.0 * (1.0 - std::exp(-2.0 * z))) / (c * kappa);
}

// int_a^b G_v(t,t) dt closed forms
inline double diag_integral_motion(double lambda, double a, double b, int n, double v) {
  const double x = std::sqrt((b - a) * n * v) / lambda;
  return std::sqrt(b - a) / (2.0 * lambda) * std::sqrt(n / v) * std::tanh(x);
}

inline double diag_integral_bridge(double lambda, double a, double b, int n, double v) {
  const double x = std::sqrt((b - a) * n * v) / lambda;
  return std::sqrt(b - a) / (2.0 * lambda) * std::sqrt(n / v) / std::tanh(x) - 0.5 / v;
}

// ---------------------------------------------------------------------------
// Direct O(N^2) evaluation of the eight boundary-coupled sums, with every
// exponential computed afresh per (n, j) pair. No scans, no running
// products; isolates scan-ordering bugs from formula bugs.
// ---------------------------------------------------------------------------

inline Eigen::VectorXd brute_force_solve(const opmix::SpectralFactorization& f,
                                         const opmix::Grid& grid, const Eigen::VectorXd& z,
                                         int mu) {
  using opmix::CVector;
  using opmix::Complex;
  const int n_pts = grid.size();
  const int k = f.k;
  const opmix::XiWeights xi = opmix::xi_weights(f);
  const Eigen::VectorXd& t = grid.points();
  const double a = grid.a(), b = grid.b();

  auto expm = [&](double c) -> CVector { return (c * f.eta_m.array()).exp(); };
  auto expp = [&](double c) -> CVector { return (c * f.eta_p.array()).exp(); };

  Eigen::VectorXd out(n_pts);
  for (int n = 0; n < n_pts; ++n) {
    const opmix::PhiPsi pp = opmix::phi_psi(f, t[n], mu);
    Complex acc(0.0, 0.0);

    CVector sum1 = CVector::Zero(k);
    for (int j = 0; j < n; ++j)
      sum1 += expm(t[n] - t[j + 1]).cwiseProduct(f.vm.cwiseProduct(xi.xi_m0)) * z[j];
    acc += (pp.phi * sum1).value();

    CVector sum2 = CVector::Zero(k);
    for (int j = 0; j <= n; ++j) {
      const CVector w = (j == 0) ? f.vm.cwiseProduct(xi.xi_m) : f.vm.cwiseProduct(xi.xi_m1);
      sum2 += expm(t[n] - t[j]).cwiseProduct(w) * z[j];
    }
    acc += (pp.phi * sum2).value();

    CVector sum3 = CVector::Zero(k);
    for (int j = n; j < n_pts; ++j) {
      const CVector w =
          (j == n_pts - 1) ? f.vp.cwiseProduct(xi.xi_p) : f.vp.cwiseProduct(xi.xi_p0);
      sum3 += expp(-(t[j] - t[n])).cwiseProduct(w) * z[j];
    }
    acc -= (pp.psi * sum3).value();

    CVector sum4 = CVector::Zero(k);
    for (int j = n + 1; j < n_pts; ++j)
      sum4 += expp(-(t[j - 1] - t[n])).cwiseProduct(f.vp.cwiseProduct(xi.xi_p1)) * z[j];
    acc -= (pp.psi * sum4).value();

    CVector sum5 = CVector::Zero(k);
    for (int j = 0; j < n; ++j)
      sum5 += expp(-(t[j] - a)).cwiseProduct(f.vp.cwiseProduct(xi.xi_p0)) * z[j];
    acc += (pp.phi.cwiseProduct(expm(t[n] - a).transpose()) * (f.couple_a * sum5)).value();

    CVector sum6 = CVector::Zero(k);
    for (int j = 0; j <= n; ++j) {
      const CVector w = (j == 0) ? f.vp.cwiseProduct(xi.xi_p) : f.vp.cwiseProduct(xi.xi_p1);
      const double tprev = (j == 0) ? a : t[j - 1];
      sum6 += expp(-(tprev - a)).cwiseProduct(w) * z[j];
    }
    acc += (pp.phi.cwiseProduct(expm(t[n] - a).transpose()) * (f.couple_a * sum6)).value();

    CVector sum7 = CVector::Zero(k);
    for (int j = n; j < n_pts; ++j) {
      const CVector w =
          (j == n_pts - 1) ? f.vm.cwiseProduct(xi.xi_m) : f.vm.cwiseProduct(xi.xi_m0);
      const double tnext = (j == n_pts - 1) ? b : t[j + 1];
      sum7 += expm(b - tnext).cwiseProduct(w) * z[j];
    }
    acc -= (pp.psi.cwiseProduct(expp(-(b - t[n])).transpose()) * (f.couple_b * sum7)).value();

    CVector sum8 = CVector::Zero(k);
    for (int j = n + 1; j < n_pts; ++j)
      sum8 += expm(b - t[j]).cwiseProduct(f.vm.cwiseProduct(xi.xi_m1)) * z[j];
    acc -= (pp.psi.cwiseProduct(expp(-(b - t[n])).transpose()) * (f.couple_b * sum8)).value();

    out[n] = acc.real();
  }
  return out;
}

// sum1 uses t[j+1] with j <= n-1 <= N-1, always a genuine grid point.

// ---------------------------------------------------------------------------
// Quadrature helpers
// ---------------------------------------------------------------------------

template <typename F>
double adaptive_integral(const F& fn, double lo, double hi, double tol = 1e-10) {
  return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(fn, lo, hi, 12, tol);
}

// Segment-exact integral of s -> green_eval(f, t, s) * E_z(s): per-segment
// Gauss quadrature with the segment containing t split at t (the kernel has
// a derivative kink on the diagonal). Oracle for the solve formulas.
inline double kernel_quadrature_apply(const opmix::SpectralFactorization& f,
                                      const opmix::Grid& grid, const Eigen::VectorXd& z,
                                      double t) {
  using boost::math::quadrature::gauss;
  auto integrand = [&](double s) {
    return opmix::green_eval(f, t, s, 0) * opmix::embed_eval(grid, z, s);
  };
  std::vector<double> knots;
  knots.push_back(grid.a());
  for (int i = 0; i < grid.size(); ++i) knots.push_back(grid.points()[i]);
  knots.push_back(grid.b());
  double total = 0.0;
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    double lo = knots[i], hi = knots[i + 1];
    if (t > lo && t < hi) {
      total += gauss<double, 20>::integrate(integrand, lo, t);
      total += gauss<double, 20>::integrate(integrand, t, hi);
    } else {
      total += gauss<double, 20>::integrate(integrand, lo, hi);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Random generators
// ---------------------------------------------------------------------------

inline Eigen::VectorXd randn_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

// Random operator of half-order k with valid boundary selectors. The leading
// penalty coefficient is kept away from zero; an optional low-order penalty
// keeps alpha_0 > 0 so that even v = 0 factorizations stay regular.
inline opmix::OperatorSpec random_operator(int k, std::mt19937_64& rng,
                                           bool ensure_alpha0 = true) {
  std::uniform_real_distribution<double> unif(0.3, 1.7);
  std::bernoulli_distribution coin(0.5);
  Eigen::VectorXd lead = Eigen::VectorXd::Zero(k + 1);
  lead[k] = unif(rng);
  if (k >= 2 && coin(rng)) lead[k - 1] = 0.5 * unif(rng) * (coin(rng) ? 1.0 : -1.0);
  std::vector<Eigen::VectorXd> penalties{lead};
  if (ensure_alpha0) {
    Eigen::VectorXd order0 = Eigen::VectorXd::Zero(1);
    order0[0] = 0.5 * unif(rng);
    penalties.push_back(order0);
  }
  std::vector<int> bc_a, bc_b;
  for (int i = 1; i <= k; ++i) {
    bc_a.push_back(coin(rng) ? i - 1 : 2 * k - i);
    bc_b.push_back(coin(rng) ? i - 1 : 2 * k - i);
  }
  return opmix::OperatorSpec::make(penalties, bc_a, bc_b);
}

}  // namespace refimpl
