#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace opmix {

/**
 * Discretization of a time interval [a,b] by N interior points
 * a < t_1 < ... < t_N < b, together with the trapezoid-cell weights
 * mu_n used by the multiplication operator of the functional embedding.
 *
 * An equidistant grid places t_n at the midpoints of N equal cells,
 *   t_n = a + (2n-1)/(2N) * (b-a),
 * and then mu_n = N/(b-a) for all n and the mesh is delta = (b-a)/N.
 *
 * Immutable after construction; safe for concurrent reads.
 */
class Grid {
 public:
  Grid() = default;  // empty grid; build real ones through the factories

  /// Equidistant grid of n midpoints on [a,b].
  static Grid equidistant(double a, double b, int n) {
    validate_interval(a, b, n);
    Eigen::VectorXd pts(n);
    const double delta = (b - a) / n;
    for (int i = 0; i < n; ++i) pts[i] = a + (2.0 * i + 1.0) / (2.0 * n) * (b - a);
    Grid g;
    g.a_ = a;
    g.b_ = b;
    g.points_ = std::move(pts);
    g.equidistant_ = true;
    g.mesh_ = delta;
    // Analytic weights; agrees with the generic cell formula to rounding.
    g.mu_ = Eigen::VectorXd::Constant(n, n / (b - a));
    return g;
  }

  /// Grid from explicit strictly increasing points inside (a,b).
  /// Equidistance (midpoint pattern) is detected within 1e-12*(b-a).
  static Grid from_points(double a, double b, Eigen::VectorXd pts) {
    const int n = static_cast<int>(pts.size());
    validate_interval(a, b, n);
    if (!(pts[0] > a) || !(pts[n - 1] < b))
      throw std::invalid_argument("Grid: points must lie strictly inside (a,b)");
    for (int i = 1; i < n; ++i)
      if (!(pts[i] > pts[i - 1]))
        throw std::invalid_argument("Grid: points must be strictly increasing");

    Grid g;
    g.a_ = a;
    g.b_ = b;
    g.points_ = std::move(pts);
    g.mu_ = cell_weights(a, b, g.points_);

    const double delta = (b - a) / n;
    double dev = 0.0;
    for (int i = 0; i < n; ++i) {
      const double ideal = a + (2.0 * i + 1.0) / (2.0 * n) * (b - a);
      dev = std::max(dev, std::abs(g.points_[i] - ideal));
    }
    g.equidistant_ = dev <= 1e-12 * (b - a);
    g.mesh_ = g.equidistant_ ? delta : 0.0;
    return g;
  }

  double a() const { return a_; }
  double b() const { return b_; }
  int size() const { return static_cast<int>(points_.size()); }
  const Eigen::VectorXd& points() const { return points_; }
  const Eigen::VectorXd& mu() const { return mu_; }
  bool equidistant() const { return equidistant_; }

  /// Mesh delta = (b-a)/N; only defined for equidistant grids.
  double mesh() const {
    if (!equidistant_) throw std::logic_error("Grid: mesh undefined for non-equidistant grid");
    return mesh_;
  }

 private:
  static void validate_interval(double a, double b, int n) {
    if (!(b > a)) throw std::invalid_argument("Grid: requires b > a");
    if (n < 2) throw std::invalid_argument("Grid: requires at least 2 points");
  }

  // Cell weights: mu_n = 2 / (length of the cell around t_n), where the cell
  // boundaries are the midpoints of neighbouring points and the interval ends
  // act as t_0 = a, t_{N+1} = b.
  static Eigen::VectorXd cell_weights(double a, double b, const Eigen::VectorXd& t) {
    const int n = static_cast<int>(t.size());
    Eigen::VectorXd mu(n);
    mu[0] = 2.0 / (t[1] + t[0] - 2.0 * a);
    for (int i = 1; i < n - 1; ++i) mu[i] = 2.0 / (t[i + 1] - t[i - 1]);
    mu[n - 1] = 2.0 / (2.0 * b - t[n - 1] - t[n - 2]);
    return mu;
  }

  double a_ = 0.0;
  double b_ = 1.0;
  Eigen::VectorXd points_;
  Eigen::VectorXd mu_;
  bool equidistant_ = false;
  double mesh_ = 0.0;
};

/// Piecewise-linear embedding of grid values z into C([a,b]).
/// Constant on the end cells: E_z(a) = z_1 and E_z(b) = z_N.
struct EmbeddedFunction {
  const Grid& grid;
  const Eigen::VectorXd& values;
};

/// Evaluate the piecewise-linear embedding at t in [a,b].
inline double embed_eval(const EmbeddedFunction& f, double t) {
  const Grid& g = f.grid;
  const Eigen::VectorXd& z = f.values;
  if (z.size() != g.size())
    throw std::invalid_argument("embed_eval: value/grid size mismatch");
  if (t < g.a() || t > g.b())
    throw std::invalid_argument("embed_eval: t outside [a,b]");
  const Eigen::VectorXd& pts = g.points();
  const int n = g.size();
  if (t <= pts[0]) return z[0];
  if (t >= pts[n - 1]) return z[n - 1];
  // first index with pts[hi] >= t
  const double* begin = pts.data();
  const auto hi = static_cast<int>(std::lower_bound(begin, begin + n, t) - begin);
  const int lo = hi - 1;
  const double w = (t - pts[lo]) / (pts[hi] - pts[lo]);
  return (1.0 - w) * z[lo] + w * z[hi];
}

inline double embed_eval(const Grid& g, const Eigen::VectorXd& z, double t) {
  return embed_eval(EmbeddedFunction{g, z}, t);
}

/// delta^{-1} * int_a^b E_z(s) ds, integrated segment-exactly.
/// For equidistant grids this equals sum_n z_n by construction of the
/// half-width end cells; exposed so that property can be asserted.
inline double weighted_sum_identity_check(const Grid& g, const Eigen::VectorXd& z) {
  if (!g.equidistant())
    throw std::invalid_argument("weighted_sum_identity_check: grid must be equidistant");
  if (z.size() != g.size())
    throw std::invalid_argument("weighted_sum_identity_check: size mismatch");
  const Eigen::VectorXd& t = g.points();
  const int n = g.size();
  double integral = (t[0] - g.a()) * z[0];  // constant end segment
  for (int i = 0; i + 1 < n; ++i) integral += 0.5 * (t[i + 1] - t[i]) * (z[i] + z[i + 1]);
  integral += (g.b() - t[n - 1]) * z[n - 1];
  return integral / g.mesh();
}

}  // namespace opmix
