#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>

#include "opmix/detail/numeric.hpp"
#include "opmix/spectral.hpp"

namespace opmix {

/// Row vectors phi_mu(t), psi_mu(t) entering the stable kernel expression.
/// All exponentials inside carry non-positive real exponents, so the entries
/// stay finite for every t in [a,b].
struct PhiPsi {
  double t = 0.0;
  int mu = 0;
  CRowVector phi;
  CRowVector psi;
};

namespace detail {

inline void check_green_args(const SpectralFactorization& f, double t, int mu) {
  if (t < f.a || t > f.b) throw std::invalid_argument("green: t outside [a,b]");
  if (mu < 0 || mu > 2 * f.k - 1)
    throw std::invalid_argument("green: derivative order must satisfy 0 <= mu <= 2k-1");
}

inline CVector expv(const CVector& eta, double c) { return (c * eta.array()).exp(); }

// row * (I - X)^{-1} with singularity detection
inline CRowVector row_resolvent(const CRowVector& row, const CMatrix& x, const char* what) {
  const CMatrix m = (CMatrix::Identity(x.rows(), x.cols()) - x).transpose();
  Eigen::FullPivLU<CMatrix> lu(m);
  if (!lu.isInvertible()) throw std::runtime_error(std::string("green: singular ") + what);
  return lu.solve(row.transpose()).transpose();
}

inline CRowVector power_row(const CVector& eta, int mu) {
  CRowVector r = CRowVector::Ones(eta.size());
  for (int p = 0; p < mu; ++p) r = r.cwiseProduct(eta.transpose());
  return r;
}

}  // namespace detail

/// phi_mu(t) and psi_mu(t) of the numerically stable kernel representation.
inline PhiPsi phi_psi(const SpectralFactorization& f, double t, int mu) {
  detail::check_green_args(f, t, mu);
  const CVector ea_m = detail::expv(f.eta_m, t - f.a);    // e^{(t-a) J_-}
  const CVector ea_p = detail::expv(f.eta_p, -(t - f.a));  // e^{-(t-a) J_+}
  const CVector eb_m = detail::expv(f.eta_m, f.b - t);     // e^{(b-t) J_-}
  const CVector eb_p = detail::expv(f.eta_p, -(f.b - t));  // e^{-(b-t) J_+}

  const Complex lead_inv = Complex(1.0, 0.0) / f.lead;
  const CRowVector row_m = detail::power_row(f.eta_m, mu);
  const CRowVector row_p = detail::power_row(f.eta_p, mu);

  PhiPsi out;
  out.t = t;
  out.mu = mu;

  {
    const CMatrix cb_t = eb_p.asDiagonal() * f.couple_b * eb_m.asDiagonal();
    const CMatrix x = ea_m.asDiagonal() * f.through_ab * eb_m.asDiagonal();
    const CRowVector row = row_m - row_p * cb_t;
    out.phi = lead_inv * detail::row_resolvent(row, x, "phi resolvent");
  }
  {
    const CMatrix ca_t = ea_m.asDiagonal() * f.couple_a * ea_p.asDiagonal();
    const CMatrix x = eb_p.asDiagonal() * f.through_ba * ea_p.asDiagonal();
    const CRowVector row = row_p - row_m * ca_t;
    out.psi = lead_inv * detail::row_resolvent(row, x, "psi resolvent");
  }
  return out;
}

/**
 * d^mu/dt^mu of the Green's function of L_* = v I + delta L, evaluated via
 * the numerically stable factored expression (decaying exponentials only).
 * At t == s the kernel derivative may jump for mu >= 1; the s <= t branch
 * (left limit in s) is used there.
 */
inline double green_eval(const SpectralFactorization& f, double t, double s, int mu = 0) {
  detail::check_green_args(f, t, mu);
  if (s < f.a || s > f.b) throw std::invalid_argument("green_eval: s outside [a,b]");
  const PhiPsi pp = phi_psi(f, t, mu);
  Complex value;
  double scale;
  if (s <= t) {
    const CVector col = f.vm + CVector(detail::expv(f.eta_m, s - f.a).asDiagonal() *
                                       (f.couple_a * CVector(detail::expv(f.eta_p, -(s - f.a))
                                                                 .asDiagonal() *
                                                             f.vp)));
    const CVector mid = detail::expv(f.eta_m, t - s);
    value = (pp.phi.cwiseProduct(mid.transpose()) * col).value();
    scale = pp.phi.norm() * col.norm();
  } else {
    const CVector col = f.vp + CVector(detail::expv(f.eta_p, -(f.b - s)).asDiagonal() *
                                       (f.couple_b * CVector(detail::expv(f.eta_m, f.b - s)
                                                                 .asDiagonal() *
                                                             f.vm)));
    const CVector mid = detail::expv(f.eta_p, -(s - t));
    value = -(pp.psi.cwiseProduct(mid.transpose()) * col).value();
    scale = pp.psi.norm() * col.norm();
  }
  return detail::real_checked(value, 1e-2 * scale, "green_eval");
}

/**
 * Direct assembly of the explicit kernel formula through the full 2k x 2k
 * matrices H = Fbar_a W e^{aJ} + Fbar_b W e^{bJ}. Exact but prone to
 * overflow: every exponent's real part is required to stay below 300.
 * Retained as the cross-validation route for the stable evaluator.
 */
inline double green_eval_naive(const SpectralFactorization& f, double t, double s, int mu = 0) {
  detail::check_green_args(f, t, mu);
  if (s < f.a || s > f.b) throw std::invalid_argument("green_eval_naive: s outside [a,b]");
  const int k = f.k;
  CVector eta(2 * k);
  eta << f.eta_m, f.eta_p;

  const bool lower = s <= t;
  const double arg_h = lower ? f.a - s : f.b - s;
  double max_exp = 0.0;
  for (int i = 0; i < 2 * k; ++i) {
    const double re = std::abs(eta[i].real());
    max_exp = std::max(max_exp, re * std::max({std::abs(f.a), std::abs(f.b), std::abs(t),
                                               std::abs(arg_h)}));
  }
  if (max_exp > 300.0)
    throw std::runtime_error("green_eval_naive: exponent overflow guard tripped");

  CMatrix w(2 * k, 2 * k);
  w << f.wm, f.wp;
  CMatrix fabar = CMatrix::Zero(2 * k, 2 * k);
  CMatrix fbbar = CMatrix::Zero(2 * k, 2 * k);
  fabar.topRows(k) = f.fa.cast<Complex>();
  fbbar.bottomRows(k) = f.fb.cast<Complex>();

  const CVector exp_a = detail::expv(eta, f.a);
  const CVector exp_b = detail::expv(eta, f.b);
  const CMatrix h = fabar * w * exp_a.asDiagonal() + fbbar * w * exp_b.asDiagonal();
  Eigen::FullPivLU<CMatrix> lu(h);
  if (!lu.isInvertible())
    throw std::runtime_error("green_eval_naive: H singular (boundary-value problem not solvable)");

  CVector wv(2 * k);
  wv << f.vm, f.vp;
  const CMatrix fsel = lower ? fabar : fbbar;
  const CVector col = fsel * w * CVector(detail::expv(eta, arg_h).asDiagonal() * wv);
  const CVector hx = lu.solve(col);

  CRowVector row = detail::power_row(eta, mu).cwiseProduct(detail::expv(eta, t).transpose());
  const Complex value = (lower ? 1.0 : -1.0) / f.lead * (row * hx).value();
  return detail::real_checked(value, 1e-2 * row.norm() * hx.norm() / std::abs(f.lead),
                              "green_eval_naive");
}

/// G_*(t,t) in the rearranged two-term form whose t-integral splits into the
/// eight closed-form pieces used by the log-determinant; numerically stable.
inline double green_diag_stable(const SpectralFactorization& f, double t) {
  detail::check_green_args(f, t, 0);
  const CVector ea_m = detail::expv(f.eta_m, t - f.a);
  const CVector ea_p = detail::expv(f.eta_p, -(t - f.a));
  const CVector eb_m = detail::expv(f.eta_m, f.b - t);
  const CVector eb_p = detail::expv(f.eta_p, -(f.b - t));
  const Complex lead_inv = Complex(1.0, 0.0) / f.lead;
  const CRowVector ones = CRowVector::Ones(f.k);

  const CRowVector row1 =
      ones - ones * CMatrix(eb_p.asDiagonal() * f.couple_b * eb_m.asDiagonal());
  const CVector col1 =
      f.vm + CVector(ea_m.asDiagonal() * (f.couple_a * CVector(ea_p.asDiagonal() * f.vp)));
  const Complex term1 = lead_inv * (row1 * col1).value();

  const CRowVector row2 = ones.cwiseProduct(ea_m.transpose()) -
                          ones * CMatrix(eb_p.asDiagonal() * f.couple_b *
                                         CMatrix(f.decay_m.asDiagonal()));
  const CVector col2 = eb_m.cwiseProduct(f.vm) +
                       CVector(f.decay_m.asDiagonal() *
                               (f.couple_a * CVector(ea_p.asDiagonal() * f.vp)));
  const Complex term2 = lead_inv * (row2 * (f.cycle * col2)).value();

  const double scale =
      (row1.norm() * col1.norm() + row2.norm() * f.cycle.norm() * col2.norm()) / std::abs(f.lead);
  return detail::real_checked(term1 + term2, 1e-2 * scale, "green_diag_stable");
}

}  // namespace opmix
