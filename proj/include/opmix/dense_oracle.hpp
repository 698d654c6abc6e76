#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <stdexcept>

#include "opmix/green.hpp"
#include "opmix/grid.hpp"
#include "opmix/logdet.hpp"
#include "opmix/mixed_model_types.hpp"
#include "opmix/spectral.hpp"

namespace opmix {

/**
 * Brute-force dense reference: R_0 = {G(t_n, t_m)} materialized, A_0 = I + R_0
 * factorized by Cholesky, and the mixed-model formulae evaluated without any
 * operator approximation. Test fixture for small N, not a production path.
 */
struct DenseModel {
  Eigen::MatrixXd r0;
  Eigen::MatrixXd a0;
  Eigen::LLT<Eigen::MatrixXd> a0_chol;

  static DenseModel from_r0(Eigen::MatrixXd r0_in) {
    // symmetry within 1e-10 is required; the stored matrix is the symmetric part
    const double asym = (r0_in - r0_in.transpose()).cwiseAbs().maxCoeff();
    const double scale = std::max(r0_in.cwiseAbs().maxCoeff(), 1e-300);
    if (asym > 1e-10 * scale) throw std::runtime_error("DenseModel: R0 not symmetric");
    DenseModel m;
    m.r0 = 0.5 * (r0_in + r0_in.transpose());
    m.a0 = m.r0;
    m.a0.diagonal().array() += 1.0;
    m.a0_chol.compute(m.a0);
    if (m.a0_chol.info() != Eigen::Success)
      throw std::runtime_error("DenseModel: Cholesky of I + R0 failed");
    return m;
  }
};

/// Closed-form kernels of the first-derivative penalty operator.
inline double brownian_kernel(BrownianKind kind, double lambda, double a, double b, double t,
                              double s) {
  const double lo = std::min(t, s), hi = std::max(t, s);
  if (kind == BrownianKind::motion) return (lo - a) / (lambda * lambda);
  return (lo - a) * (b - hi) / ((b - a) * lambda * lambda);
}

inline DenseModel build_r0(BrownianKind kind, double lambda, const Grid& grid) {
  const int n = grid.size();
  Eigen::MatrixXd r0(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      r0(i, j) = brownian_kernel(kind, lambda, grid.a(), grid.b(), grid.points()[i],
                                 grid.points()[j]);
  DenseModel m = DenseModel::from_r0(std::move(r0));
  Eigen::LLT<Eigen::MatrixXd> pd(m.r0);
  if (pd.info() != Eigen::Success)
    throw std::runtime_error("build_r0: kernel matrix not positive definite");
  return m;
}

/// Generic kernel path: R0 sampled from the Green's function of v I + L
/// (delta = 1). Only regular operators qualify; v = 0 needs alpha_0 > 0.
inline DenseModel build_r0(const OperatorSpec& op, double v, const Grid& grid) {
  const SpectralFactorization f = factorize(op, v, 1.0, grid.a(), grid.b());
  const int n = grid.size();
  Eigen::MatrixXd r0(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      r0(i, j) = green_eval(f, grid.points()[i], grid.points()[j]);
      r0(j, i) = r0(i, j);
    }
  DenseModel m = DenseModel::from_r0(std::move(r0));
  Eigen::LLT<Eigen::MatrixXd> pd(m.r0);
  if (pd.info() != Eigen::Success)
    throw std::runtime_error("build_r0: kernel matrix not positive definite");
  return m;
}

/// log det(I + R0) by way of the ridge-trace integral
/// int_0^1 tr(R0 (v R0 + I)^{-1}) dv, evaluated with adaptive quadrature.
/// Works for singular R0 as well; pure matrix-identity validation hook.
inline double logdet_trace_integral(const Eigen::MatrixXd& r0, double tol = 1e-9) {
  using boost::math::quadrature::gauss_kronrod;
  auto integrand = [&](double v) {
    Eigen::MatrixXd m = v * r0;
    m.diagonal().array() += 1.0;
    return m.partialPivLu().solve(r0).trace();
  };
  return gauss_kronrod<double, 15>::integrate(integrand, 0.0, 1.0, 12, tol);
}

inline double logdet_cholesky(const Eigen::LLT<Eigen::MatrixXd>& chol) {
  return 2.0 * chol.matrixLLT().diagonal().array().log().sum();
}

namespace detail {

inline void check_oracle_size(const MixedModelData& data) {
  if (static_cast<long>(data.n_points()) * data.n_samples() > 5000)
    throw std::invalid_argument("dense oracle: size guard N*M <= 5000 exceeded");
}

}  // namespace detail

/// Exact GLS / Henderson solution with dense per-sample A0 solves.
inline FitResult oracle_fit(const MixedModelData& data, const VarianceParams& vp,
                            const DenseModel& dense) {
  detail::check_oracle_size(data);
  auto apply = [&](const Eigen::VectorXd& col) -> Eigen::VectorXd {
    return dense.a0_chol.solve(col);
  };
  FitResult fit = detail::fit_with_applier(data, vp, apply);
  // exact quadratic form x' R^{-1} x = x' A^{-1} w, with A^{-1} w the residual
  fit.x_qform = fit.x_qform_identity;
  fit.sigma2_profile = (fit.rss + fit.u_qform + fit.x_qform) /
                       (data.n_total() - data.n_fixed());
  fit.logdet_a0 = logdet_cholesky(dense.a0_chol);
  fit.neg2_relik = detail::neg2_from_parts(data, vp, fit, fit.logdet_a0);
  return fit;
}

/// Exact restricted likelihood (log det A0 from the Cholesky factor).
inline double oracle_neg2relik(const MixedModelData& data, const VarianceParams& vp,
                               const DenseModel& dense) {
  return oracle_fit(data, vp, dense).neg2_relik;
}

}  // namespace opmix
