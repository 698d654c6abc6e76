#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace opmix {

struct NelderMeadOptions {
  int max_evals = 200;
  double f_tol = 1e-6;
  double x_tol = 1e-5;
  double initial_step = 0.5;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double fx = std::numeric_limits<double>::infinity();
  int evals = 0;
  bool converged = false;
};

/// Derivative-free downhill simplex minimization. The objective may return
/// +inf to reject a point. Evaluation budget is a hard cap.
inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& fn,
                                    const Eigen::VectorXd& x0,
                                    const NelderMeadOptions& opts = {}) {
  const int dim = static_cast<int>(x0.size());
  NelderMeadResult result;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = fn(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> xs(dim + 1, x0);
  std::vector<double> fs(dim + 1);
  fs[0] = eval(xs[0]);
  for (int i = 0; i < dim; ++i) {
    xs[i + 1][i] += opts.initial_step;
    fs[i + 1] = eval(xs[i + 1]);
  }

  auto order = [&] {
    std::vector<int> idx(dim + 1);
    for (int i = 0; i <= dim; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    std::vector<Eigen::VectorXd> xs2(dim + 1);
    std::vector<double> fs2(dim + 1);
    for (int i = 0; i <= dim; ++i) {
      xs2[i] = xs[idx[i]];
      fs2[i] = fs[idx[i]];
    }
    xs.swap(xs2);
    fs.swap(fs2);
  };

  order();
  while (evals < opts.max_evals) {
    double diam = 0.0;
    for (int i = 1; i <= dim; ++i) diam = std::max(diam, (xs[i] - xs[0]).norm());
    const double fspread = fs[dim] - fs[0];
    if (std::isfinite(fs[dim]) && fspread <= opts.f_tol * (std::abs(fs[0]) + opts.f_tol) &&
        diam <= opts.x_tol) {
      result.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < dim; ++i) centroid += xs[i];
    centroid /= std::max(dim, 1);

    const Eigen::VectorXd xr = centroid + (centroid - xs[dim]);  // reflection
    const double fr = eval(xr);
    if (fr < fs[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[dim]);  // expansion
      const double fe = (evals < opts.max_evals) ? eval(xe) : fr;
      if (fe < fr) {
        xs[dim] = xe;
        fs[dim] = fe;
      } else {
        xs[dim] = xr;
        fs[dim] = fr;
      }
    } else if (fr < fs[dim - 1]) {
      xs[dim] = xr;
      fs[dim] = fr;
    } else {
      const bool outside = fr < fs[dim];
      const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                         : Eigen::VectorXd(centroid - 0.5 * (centroid - xs[dim]));
      const double fc = (evals < opts.max_evals)
                            ? eval(xc)
                            : std::numeric_limits<double>::infinity();
      if (fc < std::min(fr, fs[dim])) {
        xs[dim] = xc;
        fs[dim] = fc;
      } else {  // shrink toward the best vertex
        for (int i = 1; i <= dim && evals < opts.max_evals; ++i) {
          xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
          fs[i] = eval(xs[i]);
        }
      }
    }
    order();
  }

  order();
  result.x = xs[0];
  result.fx = fs[0];
  result.evals = evals;
  return result;
}

}  // namespace opmix
