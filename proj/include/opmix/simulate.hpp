#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "opmix/dense_oracle.hpp"
#include "opmix/grid.hpp"
#include "opmix/mixed_model_types.hpp"

namespace opmix {

/**
 * Synthetic-data generator for y = Gamma beta + Z u + x + eps, with the
 * latent curves sampled through a dense Cholesky factor of R0. The factor is
 * N x N and shared across samples, so the guard is on N; simulation is a
 * desk-scale tool, not a production path.
 */
struct SimulationSpec {
  int n_points = 100;
  int n_samples = 1;
  double a = 0.0;
  double b = 1.0;
  BrownianKind kernel = BrownianKind::motion;
  double lambda = 1.0;
  double sigma2 = 1.0;
  Eigen::VectorXd beta;              // length = fixed.size()
  std::vector<std::string> fixed;    // column builders: "intercept" | "time"
  Eigen::MatrixXd g;                 // q x q; q = random.size()
  std::vector<std::string> random;   // column builders: "intercept" | "time"
  std::uint64_t seed = 1;
};

struct SimulationResult {
  MixedModelData data;
  Eigen::VectorXd u_true;
  Eigen::MatrixXd x_true;  // N x M
};

namespace detail {

inline Eigen::VectorXd design_column(const std::string& name, const Grid& grid, int m) {
  const int n = grid.size();
  Eigen::VectorXd col(n * m);
  for (int s = 0; s < m; ++s) {
    for (int i = 0; i < n; ++i) {
      double v;
      if (name == "intercept")
        v = 1.0;
      else if (name == "time")
        v = grid.points()[i];
      else if (name == "time2")
        v = grid.points()[i] * grid.points()[i];
      else
        throw std::invalid_argument("simulate: unknown design column '" + name + "'");
      col[s * n + i] = v;
    }
  }
  return col;
}

}  // namespace detail

inline Eigen::MatrixXd build_design(const std::vector<std::string>& names, const Grid& grid,
                                    int m) {
  Eigen::MatrixXd d(grid.size() * m, static_cast<int>(names.size()));
  for (size_t c = 0; c < names.size(); ++c)
    d.col(static_cast<int>(c)) = detail::design_column(names[c], grid, m);
  return d;
}

inline SimulationResult simulate(const SimulationSpec& spec) {
  if (spec.n_points > 5000)
    throw std::invalid_argument("simulate: dense sampling guard N <= 5000 exceeded");
  if (spec.n_samples < 1) throw std::invalid_argument("simulate: need at least one sample");
  if (static_cast<int>(spec.fixed.size()) != spec.beta.size())
    throw std::invalid_argument("simulate: beta length must match fixed design");
  const int q = static_cast<int>(spec.random.size());
  if (q > 0 && (spec.g.rows() != q || spec.g.cols() != q))
    throw std::invalid_argument("simulate: G dimension must match random design");
  if (spec.sigma2 < 0.0) throw std::invalid_argument("simulate: sigma2 must be >= 0");

  const Grid grid = Grid::equidistant(spec.a, spec.b, spec.n_points);
  const int n = spec.n_points, m = spec.n_samples;
  const double sigma = std::sqrt(spec.sigma2);

  const DenseModel dense = build_r0(spec.kernel, spec.lambda, grid);
  Eigen::LLT<Eigen::MatrixXd> r0_chol(dense.r0);
  if (r0_chol.info() != Eigen::Success)
    throw std::runtime_error("simulate: kernel not positive definite, cannot sample");
  const Eigen::MatrixXd l = r0_chol.matrixL();

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto randn = [&](int rows, int cols) {
    Eigen::MatrixXd r(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) r(i, j) = gauss(rng);
    return r;
  };

  SimulationResult out;
  out.x_true = sigma * (l * randn(n, m));

  Eigen::VectorXd u(q);
  if (q > 0) {
    Eigen::LLT<Eigen::MatrixXd> g_chol(spec.g);
    if (g_chol.info() != Eigen::Success)
      throw std::invalid_argument("simulate: G not positive definite");
    u = sigma * (Eigen::MatrixXd(g_chol.matrixL()) * randn(q, 1));
  }
  out.u_true = u;

  MixedModelData data;
  data.grid = grid;
  data.gamma = build_design(spec.fixed, grid, m);
  data.z = build_design(spec.random, grid, m);

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n * m);
  if (spec.beta.size() > 0) mean += data.gamma * spec.beta;
  if (q > 0) mean += data.z * u;

  const Eigen::MatrixXd eps = sigma * randn(n, m);
  data.y.resize(n, m);
  for (int s = 0; s < m; ++s)
    data.y.col(s) = mean.segment(s * n, n) + out.x_true.col(s) + eps.col(s);

  out.data = std::move(data);
  return out;
}

}  // namespace opmix
