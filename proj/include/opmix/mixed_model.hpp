#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "opmix/fast_solve.hpp"
#include "opmix/logdet.hpp"
#include "opmix/mixed_model_types.hpp"
#include "opmix/nelder_mead.hpp"

namespace opmix {

/**
 * Action of A0^{-1} = (I + R0)^{-1} on N-vectors through the operator
 * identity A0^{-1} z = z - (I + delta L)^{-1} E_z; applied column-wise on
 * sample vectors and on the sample sections of design-matrix columns.
 */
class AInvOperator {
 public:
  AInvOperator(const OperatorSpec& op, const Grid& grid)
      : grid_(grid), fac_(factorize(op, 1.0, grid)) {}

  Eigen::VectorXd operator()(const Eigen::VectorXd& col) const {
    return col - solve_grid(fac_, grid_, col, {0}).values.col(0);
  }

  /// Column-wise application to an N x M block of sample vectors.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& nm) const {
    Eigen::MatrixXd out(nm.rows(), nm.cols());
    parallel_for(static_cast<int>(nm.cols()),
                 [&](int c) { out.col(c) = (*this)(nm.col(c)); });
    return out;
  }

  const SpectralFactorization& factorization() const { return fac_; }

 private:
  const Grid& grid_;
  SpectralFactorization fac_;
};

inline AInvOperator apply_Ainv(const MixedModelData& data, const OperatorSpec& op) {
  return AInvOperator(op, data.grid);
}

struct FitOptions {
  std::vector<int> deriv_orders;  // emitted derivative orders (beyond those for the penalty)
  QuadratureSpec quad;
};

/**
 * GLS estimate of beta, BLUPs of u and of the latent curves (with requested
 * derivatives), profile sigma^2 and the restricted likelihood, all routed
 * through the O(N) operator solves. neg2_relik is evaluated at vp.sigma2.
 *
 * The latent quadratic form x' R^{-1} x uses the penalty-derivative form
 * delta sum_l |K_l x|^2, exercising the derivative machinery; the
 * determinant-free identity form x' A^{-1} w is kept alongside as a
 * cross-check.
 */
inline FitResult gls_fit(const MixedModelData& data, const VarianceParams& vp,
                         const FitOptions& options = {}) {
  data.validate();
  if (!data.grid.equidistant())
    throw std::invalid_argument("gls_fit: fast path requires an equidistant grid");
  const AInvOperator ainv(vp.op, data.grid);
  FitResult fit = detail::fit_with_applier(
      data, vp, [&](const Eigen::VectorXd& col) { return ainv(col); });

  // derivative BLUPs of w = y - Gamma beta - Z u: orders 0..k for the penalty
  // form, plus whatever the caller asked for
  const int k = vp.op.half_order();
  std::vector<int> orders;
  for (int j = 0; j <= k; ++j) orders.push_back(j);
  for (int j : options.deriv_orders)
    if (std::find(orders.begin(), orders.end(), j) == orders.end()) orders.push_back(j);
  std::sort(orders.begin(), orders.end());

  Eigen::MatrixXd w = fit.x_blup + fit.residuals;  // = y - Gamma beta - Z u
  const int n = data.n_points(), m = data.n_samples();
  std::vector<Eigen::MatrixXd> derivs(orders.size(), Eigen::MatrixXd(n, m));
  parallel_for(m, [&](int s) {
    const SolveResult sol = solve_grid(ainv.factorization(), data.grid, w.col(s), orders);
    for (size_t oi = 0; oi < orders.size(); ++oi) derivs[oi].col(s) = sol.values.col(oi);
  });
  fit.deriv_orders = orders;
  fit.x_blup_deriv = std::move(derivs);

  // delta sum_l sum_m sum_n (K_l x_m(t_n))^2 from the derivative BLUPs
  double qform = 0.0;
  for (const Eigen::VectorXd& coeffs : vp.op.penalties()) {
    Eigen::MatrixXd klx = Eigen::MatrixXd::Zero(n, m);
    for (int j = 0; j < coeffs.size(); ++j)
      if (coeffs[j] != 0.0) klx += coeffs[j] * fit.deriv(j);
    qform += klx.squaredNorm();
  }
  fit.x_qform_deriv = data.grid.mesh() * qform;
  fit.x_qform = fit.x_qform_deriv;

  fit.sigma2_profile =
      (fit.rss + fit.u_qform + fit.x_qform) / (data.n_total() - data.n_fixed());
  fit.logdet_a0 = logdet_approx(vp.op, data.grid, options.quad);
  fit.neg2_relik = detail::neg2_from_parts(data, vp, fit, fit.logdet_a0);
  return fit;
}

inline double neg2_restricted_loglik(const MixedModelData& data, const VarianceParams& vp,
                                     const FitOptions& options = {}) {
  return gls_fit(data, vp, options).neg2_relik;
}

/// Exact profile maximizer of the restricted likelihood over sigma^2; the
/// BLUP quantities only depend on G and the operator, not on sigma^2.
inline double profile_sigma2(const MixedModelData& data, const VarianceParams& vp,
                             const FitOptions& options = {}) {
  return gls_fit(data, vp, options).sigma2_profile;
}

struct RemlOptions {
  int max_evals = 200;
  double tol = 1e-6;
  FitOptions fit;
};

struct RemlTracePoint {
  Eigen::VectorXd theta;
  double value;
};

struct RemlResult {
  VarianceParams params;
  FitResult fit;
  std::vector<RemlTracePoint> trace;
  bool converged = false;
  int evals = 0;
};

namespace detail {

/// theta -> variance parameters: theta[0] scales the penalty operators by
/// e^{theta_0}; the remaining q(q+1)/2 entries are the log-Cholesky factor
/// of G (log of the diagonal keeps positive-definiteness unconstrained).
inline VarianceParams theta_to_params(const Eigen::VectorXd& theta, const VarianceParams& init) {
  const int q = static_cast<int>(init.g.rows());
  VarianceParams vp = init;
  vp.op = init.op.scaled(std::exp(theta[0]));
  if (q > 0) {
    Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(q, q);
    int idx = 1;
    for (int j = 0; j < q; ++j)
      for (int i = j; i < q; ++i) {
        chol(i, j) = (i == j) ? std::exp(theta[idx]) : theta[idx];
        ++idx;
      }
    vp.g = chol * chol.transpose();
  }
  return vp;
}

inline Eigen::VectorXd params_to_theta(const VarianceParams& init) {
  const int q = static_cast<int>(init.g.rows());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(1 + q * (q + 1) / 2);
  if (q > 0) {
    Eigen::LLT<Eigen::MatrixXd> chol(init.g);
    if (chol.info() != Eigen::Success)
      throw std::invalid_argument("reml_optimize: init G not positive definite");
    const Eigen::MatrixXd l = chol.matrixL();
    int idx = 1;
    for (int j = 0; j < q; ++j)
      for (int i = j; i < q; ++i) {
        theta[idx] = (i == j) ? std::log(l(i, j)) : l(i, j);
        ++idx;
      }
  }
  return theta;
}

}  // namespace detail

/**
 * REML estimation of the variance parameters by downhill simplex over the
 * unconstrained parameterization (log operator scale, log-Cholesky of G);
 * sigma^2 is profiled out exactly inside every evaluation. Returns the best
 * point with its fit and the evaluation trace; a non-convergent run returns
 * best-so-far with converged = false.
 */
inline RemlResult reml_optimize(const MixedModelData& data, const VarianceParams& init,
                                const RemlOptions& options = {}) {
  const double dof = data.n_total() - data.n_fixed();
  RemlResult result;

  auto objective = [&](const Eigen::VectorXd& theta) -> double {
    if (!theta.allFinite() || theta.cwiseAbs().maxCoeff() > 25.0)
      return std::numeric_limits<double>::infinity();
    double value;
    try {
      VarianceParams vp = detail::theta_to_params(theta, init);
      const FitResult fit = gls_fit(data, vp, options.fit);
      vp.sigma2 = fit.sigma2_profile;  // exact profile step
      value = detail::neg2_from_parts(data, vp, fit, fit.logdet_a0);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(value)) return std::numeric_limits<double>::infinity();
    result.trace.push_back({theta, value});
    return value;
  };

  const Eigen::VectorXd theta0 = detail::params_to_theta(init);
  {
    const double f0 = objective(theta0);
    if (!std::isfinite(f0))
      throw std::runtime_error("reml_optimize: likelihood not finite at the initial point");
  }

  NelderMeadOptions nm;
  nm.max_evals = options.max_evals;
  nm.f_tol = options.tol;
  const NelderMeadResult best = nelder_mead(objective, theta0, nm);

  result.params = detail::theta_to_params(best.x, init);
  result.fit = gls_fit(data, result.params, options.fit);
  result.params.sigma2 = result.fit.sigma2_profile;
  result.fit.neg2_relik =
      detail::neg2_from_parts(data, result.params, result.fit, result.fit.logdet_a0);
  result.converged = best.converged;
  result.evals = best.evals;
  return result;
}

struct LrtReport {
  double statistic = 0.0;
  int df = 0;
};

/// Twice the log ratio of maximum restricted likelihoods between nested
/// fixed-effect designs, with the degrees-of-freedom difference. The caller
/// is responsible for using the null design consistently in both fits.
inline LrtReport lrt_report(const FitResult& fit_full, const FitResult& fit_null) {
  LrtReport rep;
  rep.statistic = fit_null.neg2_relik - fit_full.neg2_relik;
  rep.df = static_cast<int>(fit_full.beta_hat.size() - fit_null.beta_hat.size());
  if (rep.statistic < -1e-6)
    throw std::runtime_error(
        "lrt_report: negative statistic (designs not nested or optimization failed)");
  return rep;
}

}  // namespace opmix
