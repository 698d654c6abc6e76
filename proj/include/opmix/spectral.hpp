#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "opmix/grid.hpp"
#include "opmix/operator_spec.hpp"

namespace opmix {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using CRowVector = Eigen::RowVectorXcd;

/// Companion matrix of the polynomial sum_j alpha[j] z^j; eigenvalues are the
/// polynomial roots. Last row carries -alpha_j / alpha_d.
inline Eigen::MatrixXd companion_matrix(const Eigen::VectorXd& alpha) {
  const int d = static_cast<int>(alpha.size()) - 1;
  if (d < 1) throw std::invalid_argument("companion_matrix: polynomial degree < 1");
  if (alpha[d] == 0.0) throw std::invalid_argument("companion_matrix: zero leading coefficient");
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i + 1 < d; ++i) c(i, i + 1) = 1.0;
  for (int j = 0; j < d; ++j) c(d - 1, j) = -alpha[j] / alpha[d];
  return c;
}

/**
 * Spectral data of the operator L_* = v I + delta L on [a,b].
 *
 * The characteristic polynomial alpha*_{2k} z^{2k} + ... + alpha*_0 must have
 * 2k distinct roots splitting k/k by sign of the real part. All downstream
 * formulas are arranged so that only exponentials with non-positive real
 * exponents appear: e^{(t-a) J_-}, e^{-(b-t) J_+}, and friends.
 *
 * Immutable value object; concurrent reads are safe.
 */
struct SpectralFactorization {
  int k = 0;
  double v = 0.0;
  double delta = 0.0;
  double a = 0.0;
  double b = 0.0;
  Eigen::VectorXd alpha_star;  // coefficients of L_*, length 2k+1
  double lead = 0.0;           // alpha*_{2k} = delta * tau

  CVector eta_m;  // k roots, Re <= 0
  CVector eta_p;  // k roots, Re >= 0
  CMatrix wm;     // 2k x k Vandermonde block of eta_m
  CMatrix wp;     // 2k x k Vandermonde block of eta_p
  CVector vm;     // top half of W^{-1} e_{2k}
  CVector vp;     // bottom half

  Eigen::MatrixXd fa;  // k x 2k boundary selector at a
  Eigen::MatrixXd fb;  // k x 2k boundary selector at b

  CMatrix couple_a;    // (F_a W_-)^{-1} F_a W_+
  CMatrix couple_b;    // (F_b W_+)^{-1} F_b W_-
  CVector decay_m;     // e^{(b-a) eta_m}
  CVector decay_p;     // e^{-(b-a) eta_p}
  CMatrix through_ab;  // couple_a diag(decay_p) couple_b
  CMatrix through_ba;  // couple_b diag(decay_m) couple_a
  CMatrix cycle;       // through_ab (I - diag(decay_m) through_ab)^{-1}

  double width() const { return b - a; }
};

namespace detail {

inline CMatrix solve_checked(const CMatrix& lhs, const CMatrix& rhs, const char* what) {
  Eigen::FullPivLU<CMatrix> lu(lhs);
  if (!lu.isInvertible()) throw std::runtime_error(std::string("factorize: singular ") + what);
  return lu.solve(rhs);
}

// Partition 2k roots into k with Re <= 0 and k with Re >= 0. Roots with
// |Re| below tolerance are distributed to balance the split, but a complex
// conjugate pair sitting on the imaginary axis may not be separated: that
// would break per-block conjugate closure, so it is rejected as ambiguous.
inline void partition_roots(const CVector& roots, int k, double scale, CVector& minus,
                            CVector& plus) {
  const double retol = 1e-12 * scale;
  std::vector<Complex> neg, pos, axis;
  for (int i = 0; i < roots.size(); ++i) {
    const Complex r = roots[i];
    if (r.real() < -retol)
      neg.push_back(r);
    else if (r.real() > retol)
      pos.push_back(r);
    else
      axis.push_back(r);
  }
  if (static_cast<int>(neg.size()) > k || static_cast<int>(pos.size()) > k)
    throw std::runtime_error("factorize: root sign partition is not k/k");

  const double imtol = 1e-10 * scale;
  std::vector<Complex> axis_real;
  int axis_pairs = 0;
  for (const Complex& r : axis) {
    if (std::abs(r.imag()) <= imtol)
      axis_real.push_back(r);
    else
      ++axis_pairs;
  }
  if (axis_pairs % 2 != 0)
    throw std::runtime_error("factorize: unpaired root on the imaginary axis");
  axis_pairs /= 2;

  const int need_m = k - static_cast<int>(neg.size());
  const int need_p = k - static_cast<int>(pos.size());
  const int singles = static_cast<int>(axis_real.size());
  // place x conjugate pairs and y real roots on the minus side
  bool feasible = false;
  int use_pairs_m = 0, use_singles_m = 0;
  for (int x = 0; x <= axis_pairs && !feasible; ++x) {
    const int y = need_m - 2 * x;
    if (y < 0 || y > singles) continue;
    if (2 * (axis_pairs - x) + (singles - y) == need_p) {
      feasible = true;
      use_pairs_m = x;
      use_singles_m = y;
    }
  }
  if (!feasible)
    throw std::runtime_error(
        "factorize: sign partition ambiguous (imaginary-axis roots cannot be split k/k "
        "without separating a conjugate pair)");

  int pairs_placed = 0, singles_placed = 0;
  std::vector<bool> used(axis.size(), false);
  for (size_t i = 0; i < axis.size(); ++i) {
    if (used[i]) continue;
    const Complex r = axis[i];
    if (std::abs(r.imag()) <= imtol) {
      auto& dst = (singles_placed++ < use_singles_m) ? neg : pos;
      dst.push_back(r);
      used[i] = true;
    } else {
      // find the conjugate partner
      size_t j = i + 1;
      for (; j < axis.size(); ++j)
        if (!used[j] && std::abs(axis[j] - std::conj(r)) <= imtol * 10) break;
      if (j == axis.size())
        throw std::runtime_error("factorize: imaginary-axis root without conjugate partner");
      auto& dst = (pairs_placed++ < use_pairs_m) ? neg : pos;
      dst.push_back(r);
      dst.push_back(axis[j]);
      used[i] = used[j] = true;
    }
  }

  auto order = [](const Complex& x, const Complex& y) {
    if (x.real() != y.real()) return x.real() < y.real();
    return x.imag() < y.imag();
  };
  std::sort(neg.begin(), neg.end(), order);
  std::sort(pos.begin(), pos.end(), order);
  minus = Eigen::Map<CVector>(neg.data(), k);
  plus = Eigen::Map<CVector>(pos.data(), k);
}

inline void check_conjugate_closure(const CVector& block, double scale, const char* name) {
  const double tol = 1e-10 * std::max(scale, 1.0);
  for (int i = 0; i < block.size(); ++i) {
    if (std::abs(block[i].imag()) <= tol) continue;
    bool paired = false;
    for (int j = 0; j < block.size(); ++j)
      if (j != i && std::abs(block[j] - std::conj(block[i])) <= tol) paired = true;
    if (!paired)
      throw std::runtime_error(std::string("factorize: block ") + name +
                               " not closed under conjugation");
  }
}

}  // namespace detail

/// Factorize L_* given its raw polynomial coefficients and the boundary
/// selector matrices. This is the workhorse behind factorize(op, ...).
inline SpectralFactorization factorize_polynomial(const Eigen::VectorXd& alpha_star,
                                                  const Eigen::MatrixXd& fa,
                                                  const Eigen::MatrixXd& fb, double a, double b,
                                                  double v, double delta) {
  const int deg = static_cast<int>(alpha_star.size()) - 1;
  if (deg < 2 || deg % 2 != 0)
    throw std::invalid_argument("factorize: polynomial degree must be even and >= 2");
  const int k = deg / 2;
  if (fa.rows() != k || fa.cols() != 2 * k || fb.rows() != k || fb.cols() != 2 * k)
    throw std::invalid_argument("factorize: selector matrices must be k x 2k");
  if (!(b > a)) throw std::invalid_argument("factorize: requires b > a");

  SpectralFactorization f;
  f.k = k;
  f.v = v;
  f.delta = delta;
  f.a = a;
  f.b = b;
  f.alpha_star = alpha_star;
  f.lead = alpha_star[deg];
  f.fa = fa;
  f.fb = fb;

  Eigen::EigenSolver<Eigen::MatrixXd> es(companion_matrix(alpha_star), false);
  if (es.info() != Eigen::Success) throw std::runtime_error("factorize: eigensolver failed");
  const CVector roots = es.eigenvalues();

  double scale = 0.0;
  for (int i = 0; i < roots.size(); ++i) scale = std::max(scale, std::abs(roots[i]));
  for (int i = 0; i < roots.size(); ++i)
    for (int j = i + 1; j < roots.size(); ++j)
      if (std::abs(roots[i] - roots[j]) <= 1e-8 * scale)
        throw std::runtime_error("factorize: repeated characteristic roots (within tolerance)");

  detail::partition_roots(roots, k, scale, f.eta_m, f.eta_p);
  detail::check_conjugate_closure(f.eta_m, scale, "J_-");
  detail::check_conjugate_closure(f.eta_p, scale, "J_+");

  // reconstruction check: alpha*_{2k} prod (z - eta) must reproduce alpha*
  {
    std::vector<Complex> c{f.lead};  // c[j] = coefficient of z^j
    for (int r = 0; r < 2 * k; ++r) {
      const Complex eta = r < k ? f.eta_m[r] : f.eta_p[r - k];
      std::vector<Complex> nc(c.size() + 1, Complex(0, 0));
      for (size_t i = 0; i < c.size(); ++i) {
        nc[i + 1] += c[i];
        nc[i] -= eta * c[i];
      }
      c = std::move(nc);
    }
    const double amax = alpha_star.cwiseAbs().maxCoeff();
    for (int j = 0; j <= deg; ++j)
      if (std::abs(c[j] - Complex(alpha_star[j], 0.0)) > 1e-8 * amax)
        throw std::runtime_error("factorize: root reconstruction residual too large");
  }

  f.wm.resize(2 * k, k);
  f.wp.resize(2 * k, k);
  for (int i = 0; i < k; ++i) {
    Complex pm(1.0, 0.0), pp(1.0, 0.0);
    for (int r = 0; r < 2 * k; ++r) {
      f.wm(r, i) = pm;
      f.wp(r, i) = pp;
      pm *= f.eta_m[i];
      pp *= f.eta_p[i];
    }
  }

  CMatrix w(2 * k, 2 * k);
  w << f.wm, f.wp;
  CVector e_last = CVector::Zero(2 * k);
  e_last[2 * k - 1] = Complex(1.0, 0.0);
  const CVector wv = detail::solve_checked(w, e_last, "Vandermonde matrix W");
  f.vm = wv.head(k);
  f.vp = wv.tail(k);

  const CMatrix fac = fa.cast<Complex>();
  const CMatrix fbc = fb.cast<Complex>();
  const CMatrix fa_wm = fac * f.wm;
  const CMatrix fa_wp = fac * f.wp;
  const CMatrix fb_wm = fbc * f.wm;
  const CMatrix fb_wp = fbc * f.wp;
  f.couple_a = detail::solve_checked(fa_wm, fa_wp, "F_a W_- (invalid boundary conditions)");
  f.couple_b = detail::solve_checked(fb_wp, fb_wm, "F_b W_+ (invalid boundary conditions)");

  const double width = b - a;
  f.decay_m = (width * f.eta_m.array()).exp();
  f.decay_p = (-width * f.eta_p.array()).exp();
  f.through_ab = f.couple_a * f.decay_p.asDiagonal() * f.couple_b;
  f.through_ba = f.couple_b * f.decay_m.asDiagonal() * f.couple_a;
  // cycle = through_ab * (I - diag(decay_m) through_ab)^{-1}
  const CMatrix eye = CMatrix::Identity(k, k);
  f.cycle = f.through_ab *
            detail::solve_checked(eye - CMatrix(f.decay_m.asDiagonal()) * f.through_ab,
                                  CMatrix(eye), "I - loop matrix");
  return f;
}

/// Spectral factorization of L_* = v I + delta L on [a,b].
inline SpectralFactorization factorize(const OperatorSpec& op, double v, double delta, double a,
                                       double b) {
  if (v < 0.0 || v > 1.0) throw std::invalid_argument("factorize: v must lie in [0,1]");
  if (!(delta > 0.0)) throw std::invalid_argument("factorize: delta must be positive");
  const Eigen::VectorXd& alpha = op.alpha();
  if (v == 0.0 && alpha[0] <= 0.0)
    throw std::invalid_argument("factorize: v = 0 requires alpha_0 > 0 (no zero root)");
  Eigen::VectorXd alpha_star = delta * alpha;
  alpha_star[0] += v;
  return factorize_polynomial(alpha_star, op.selector_a(), op.selector_b(), a, b, v, delta);
}

inline SpectralFactorization factorize(const OperatorSpec& op, double v, const Grid& grid) {
  return factorize(op, v, grid.mesh(), grid.a(), grid.b());
}

}  // namespace opmix
