#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "opmix/grid.hpp"
#include "opmix/operator_spec.hpp"
#include "opmix/parallel.hpp"

namespace opmix {

/**
 * Observations and designs of the mixed model y = Gamma beta + Z u + x + eps.
 * Rows of the stacked designs are sample-major: row index = m*N + n, so the
 * latent covariance is block diagonal with one R0 block per sample.
 */
struct MixedModelData {
  Grid grid;
  Eigen::MatrixXd y;      // N x M, column m = sample m
  Eigen::MatrixXd gamma;  // (N*M) x p fixed-effect design
  Eigen::MatrixXd z;      // (N*M) x q random-effect design

  int n_points() const { return static_cast<int>(y.rows()); }
  int n_samples() const { return static_cast<int>(y.cols()); }
  int n_total() const { return n_points() * n_samples(); }
  int n_fixed() const { return static_cast<int>(gamma.cols()); }
  int n_random() const { return static_cast<int>(z.cols()); }

  void validate() const {
    if (grid.size() != n_points()) throw std::invalid_argument("MixedModelData: grid/y mismatch");
    if (n_samples() < 1) throw std::invalid_argument("MixedModelData: no samples");
    if (gamma.size() > 0 && gamma.rows() != n_total())
      throw std::invalid_argument("MixedModelData: Gamma row count must be N*M");
    if (z.size() > 0 && z.rows() != n_total())
      throw std::invalid_argument("MixedModelData: Z row count must be N*M");
  }
};

/// Variance parameters: error scale sigma^2, random-effect covariance
/// sigma^2 G, and the penalty operator defining the latent-process
/// covariance through its Green's function.
struct VarianceParams {
  double sigma2 = 1.0;
  Eigen::MatrixXd g;  // q x q, symmetric positive definite
  OperatorSpec op;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd c_beta;  // p x p
  Eigen::VectorXd u_blup;
  Eigen::MatrixXd c_u;     // q x q
  Eigen::MatrixXd x_blup;  // N x M
  std::vector<int> deriv_orders;
  std::vector<Eigen::MatrixXd> x_blup_deriv;  // aligned with deriv_orders, N x M each
  Eigen::MatrixXd residuals;                  // N x M

  double sigma2_profile = 0.0;
  double neg2_relik = 0.0;

  // components of the quadratic form and the determinant terms
  double rss = 0.0;
  double u_qform = 0.0;
  double x_qform = 0.0;           // the variant used for sigma2/likelihood
  double x_qform_identity = 0.0;  // x' A^{-1} (y - Gamma beta - Z u)
  double x_qform_deriv = 0.0;     // delta sum_l |K_l x|^2 (fast path only)
  double logdet_q = 0.0;          // log det(I_q + Z' A^{-1} Z G)
  double logdet_gram = 0.0;       // log det(Gamma' C_r Gamma)
  double logdet_a0 = 0.0;         // log det(I_N + R0), by whichever route built the fit

  const Eigen::MatrixXd& deriv(int order) const {
    for (size_t i = 0; i < deriv_orders.size(); ++i)
      if (deriv_orders[i] == order) return x_blup_deriv[i];
    throw std::invalid_argument("FitResult: derivative order not computed");
  }
};

namespace detail {

using ColumnApplier = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Apply an N-vector operator to each sample section of stacked columns.
inline Eigen::MatrixXd apply_sections(const ColumnApplier& apply, const Eigen::MatrixXd& cols,
                                      int n, int m) {
  Eigen::MatrixXd out(cols.rows(), cols.cols());
  const int jobs = static_cast<int>(cols.cols()) * m;
  parallel_for(jobs, [&](int job) {
    const int c = job / m, s = job % m;
    out.block(s * n, c, n, 1) = apply(cols.block(s * n, c, n, 1));
  });
  return out;
}

/**
 * Shared Henderson/GLS assembly. `apply` is the action of A0^{-1} on an
 * N-vector (exact Cholesky solve for the oracle, operator approximation for
 * the fast path). Never materializes anything N_total x N_total: C_r acts
 * through A^{-1} columns, and the only dense inversions are q x q and p x p.
 *
 * Fills everything except sigma2_profile / neg2_relik / x_qform, which
 * depend on the caller's choice of quadratic form and log-determinant route.
 */
inline FitResult fit_with_applier(const MixedModelData& data, const VarianceParams& vp,
                                  const ColumnApplier& apply) {
  data.validate();
  const int n = data.n_points(), m = data.n_samples();
  const int p = data.n_fixed(), q = data.n_random();
  if (vp.g.rows() != q || vp.g.cols() != q)
    throw std::invalid_argument("fit: G dimension must match the random design");

  FitResult fit;

  Eigen::MatrixXd ainv_y(n, m);
  parallel_for(m, [&](int s) { ainv_y.col(s) = apply(data.y.col(s)); });
  const Eigen::Map<const Eigen::VectorXd> y_vec(data.y.data(), data.n_total());
  const Eigen::Map<const Eigen::VectorXd> ainv_y_vec(ainv_y.data(), data.n_total());

  Eigen::MatrixXd ainv_z, ainv_gamma;
  Eigen::MatrixXd c_u(q, q);
  Eigen::LLT<Eigen::MatrixXd> g_chol;
  if (q > 0) {
    g_chol.compute(vp.g);
    if (g_chol.info() != Eigen::Success)
      throw std::runtime_error("fit: G is not positive definite");
    ainv_z = apply_sections(apply, data.z, n, m);
    Eigen::MatrixXd cu_inv = g_chol.solve(Eigen::MatrixXd::Identity(q, q));
    cu_inv += data.z.transpose() * ainv_z;
    cu_inv = 0.5 * (cu_inv + cu_inv.transpose());
    Eigen::LLT<Eigen::MatrixXd> cu_chol(cu_inv);
    if (cu_chol.info() != Eigen::Success)
      throw std::runtime_error("fit: random-effect information matrix singular");
    c_u = cu_chol.solve(Eigen::MatrixXd::Identity(q, q));

    // log det(I_q + Z' A^{-1} Z G) via the same Cholesky pieces:
    // det(G^{-1} + Z'A^{-1}Z) det(G) = det(I + Z'A^{-1}Z G)
    fit.logdet_q = 2.0 * cu_chol.matrixLLT().diagonal().array().log().sum() +
                   2.0 * g_chol.matrixLLT().diagonal().array().log().sum();
  }
  fit.c_u = c_u;

  // C_r cols = A^{-1} cols - A^{-1} Z C_u Z' A^{-1} cols, operator form
  auto cr_apply = [&](const Eigen::MatrixXd& ainv_cols) -> Eigen::MatrixXd {
    if (q == 0) return ainv_cols;
    return ainv_cols - ainv_z * (c_u * (data.z.transpose() * ainv_cols));
  };

  Eigen::VectorXd beta(p);
  if (p > 0) {
    ainv_gamma = apply_sections(apply, data.gamma, n, m);
    // The approximate A^{-1} is not exactly self-adjoint, so the Gram matrix
    // is kept as computed (no symmetrization): solving with the same matrix
    // that defines C_r preserves exact translation equivariance.
    const Eigen::MatrixXd gram = data.gamma.transpose() * cr_apply(ainv_gamma);
    if (!gram.allFinite()) throw std::runtime_error("fit: non-finite whitened Gram matrix");
    Eigen::PartialPivLU<Eigen::MatrixXd> gram_lu(gram);
    const Eigen::VectorXd diag_u = gram_lu.matrixLU().diagonal();
    double sign = gram_lu.permutationP().determinant();
    double logdet = 0.0;
    for (int i = 0; i < p; ++i) {
      sign *= (diag_u[i] > 0.0) ? 1.0 : -1.0;
      logdet += std::log(std::abs(diag_u[i]));
    }
    if (!(sign > 0.0) || !std::isfinite(logdet))
      throw std::runtime_error("fit: fixed-effect design collinear after whitening");
    fit.logdet_gram = logdet;
    const Eigen::VectorXd cr_y = cr_apply(ainv_y_vec);
    beta = gram_lu.solve(data.gamma.transpose() * cr_y);
    fit.c_beta = gram_lu.solve(Eigen::MatrixXd::Identity(p, p));
  } else {
    fit.c_beta.resize(0, 0);
  }
  fit.beta_hat = beta;

  Eigen::VectorXd u(q);
  if (q > 0) {
    Eigen::VectorXd rhs = ainv_y_vec;
    if (p > 0) rhs -= ainv_gamma * beta;
    u = c_u * (data.z.transpose() * rhs);
  }
  fit.u_blup = u;

  // w = y - Gamma beta - Z u;  x = w - A^{-1} w;  r = A^{-1} w
  Eigen::VectorXd w_vec = y_vec;
  if (p > 0) w_vec -= data.gamma * beta;
  if (q > 0) w_vec -= data.z * u;
  const Eigen::MatrixXd w = Eigen::Map<const Eigen::MatrixXd>(w_vec.data(), n, m);

  Eigen::MatrixXd r(n, m);
  parallel_for(m, [&](int s) { r.col(s) = apply(w.col(s)); });
  fit.x_blup = w - r;
  fit.residuals = r;

  fit.rss = r.squaredNorm();
  fit.u_qform = (q > 0) ? u.dot(g_chol.solve(u)) : 0.0;
  fit.x_qform_identity = (fit.x_blup.array() * r.array()).sum();
  return fit;
}

/// Restricted likelihood (doubled negative log) of eq-style parts at the
/// given sigma^2, once a log det(I + R0) value is supplied.
inline double neg2_from_parts(const MixedModelData& data, const VarianceParams& vp,
                              const FitResult& fit, double logdet_a0) {
  const double dof = data.n_total() - data.n_fixed();
  const double s2 = vp.sigma2;
  if (!(s2 > 0.0)) throw std::invalid_argument("neg2: sigma2 must be positive");
  return dof * std::log(s2) + data.n_samples() * logdet_a0 + fit.logdet_q + fit.logdet_gram +
         (fit.rss + fit.u_qform + fit.x_qform) / s2;
}

}  // namespace detail

}  // namespace opmix
