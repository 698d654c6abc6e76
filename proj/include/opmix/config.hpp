#pragma once

#include <json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opmix/logdet.hpp"
#include "opmix/mixed_model.hpp"
#include "opmix/operator_spec.hpp"
#include "opmix/simulate.hpp"

namespace opmix {

/**
 * JSON run configuration:
 * {
 *   "operator":  {"k": 1, "penalties": [[0.0, 1.0]],
 *                 "bc_a": ["theta(a)=0"], "bc_b": ["theta'(b)=0"]},
 *   "optimizer": {"max_iter": 200, "tol": 1e-6,
 *                 "init": {"lambda": 1.0, "sigma2": 1.0, "G": [[1.0]]}},
 *   "quadrature": {"nodes": 64, "split": true},
 *   "emit_derivatives": [1],
 *   "simulate": {...}   // only read by the simulate command
 * }
 */
struct RunConfig {
  OperatorSpec op;
  double init_lambda = 1.0;
  double init_sigma2 = 1.0;
  Eigen::MatrixXd init_g;
  RemlOptions reml;
  std::vector<int> emit_derivatives;
  nlohmann::json raw;
};

namespace detail {

/// Parse a boundary-condition string like "theta(a)=0", "theta'(b)=0",
/// "theta''(a)=0" or "theta^(3)(b)=0" into (derivative order, endpoint).
inline std::pair<int, char> parse_bc_string(const std::string& s) {
  std::string t;
  for (char c : s)
    if (c != ' ') t.push_back(c);
  if (t.rfind("theta", 0) != 0)
    throw std::invalid_argument("bc: expected 'theta...' in '" + s + "'");
  size_t pos = 5;
  int order = 0;
  if (pos < t.size() && t[pos] == '^') {
    if (pos + 1 >= t.size() || t[pos + 1] != '(')
      throw std::invalid_argument("bc: malformed derivative in '" + s + "'");
    size_t close = t.find(')', pos + 2);
    if (close == std::string::npos)
      throw std::invalid_argument("bc: malformed derivative in '" + s + "'");
    order = std::stoi(t.substr(pos + 2, close - pos - 2));
    pos = close + 1;
  } else {
    while (pos < t.size() && t[pos] == '\'') {
      ++order;
      ++pos;
    }
  }
  if (pos + 4 > t.size() || t[pos] != '(' || t[pos + 2] != ')' ||
      (t[pos + 1] != 'a' && t[pos + 1] != 'b'))
    throw std::invalid_argument("bc: expected '(a)' or '(b)' in '" + s + "'");
  const char endpoint = t[pos + 1];
  if (t.substr(pos + 3) != "=0")
    throw std::invalid_argument("bc: condition must read '=0' in '" + s + "'");
  return {order, endpoint};
}

inline std::vector<int> parse_bc_list(const nlohmann::json& arr, char endpoint) {
  std::vector<int> orders;
  for (const auto& item : arr) {
    const auto [order, ep] = parse_bc_string(item.get<std::string>());
    if (ep != endpoint)
      throw std::invalid_argument(std::string("bc: condition for endpoint '") + ep +
                                  "' listed under bc_" + endpoint);
    orders.push_back(order);
  }
  return orders;
}

inline Eigen::MatrixXd parse_matrix(const nlohmann::json& rows) {
  const int r = static_cast<int>(rows.size());
  if (r == 0) return Eigen::MatrixXd(0, 0);
  const int c = static_cast<int>(rows[0].size());
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(rows[i].size()) != c)
      throw std::invalid_argument("config: ragged matrix");
    for (int j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
  }
  return m;
}

}  // namespace detail

inline OperatorSpec operator_from_json(const nlohmann::json& j) {
  std::vector<Eigen::VectorXd> penalties;
  for (const auto& pen : j.at("penalties")) {
    Eigen::VectorXd c(pen.size());
    for (size_t i = 0; i < pen.size(); ++i) c[static_cast<int>(i)] = pen[i].get<double>();
    penalties.push_back(std::move(c));
  }
  OperatorSpec op = OperatorSpec::make(penalties, detail::parse_bc_list(j.at("bc_a"), 'a'),
                                       detail::parse_bc_list(j.at("bc_b"), 'b'));
  if (j.contains("k") && j.at("k").get<int>() != op.half_order())
    throw std::invalid_argument("config: declared k does not match penalty orders");
  return op;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  nlohmann::json j;
  in >> j;

  RunConfig cfg;
  cfg.raw = j;
  cfg.op = operator_from_json(j.at("operator"));

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    cfg.reml.max_evals = o.value("max_iter", 200);
    cfg.reml.tol = o.value("tol", 1e-6);
    if (o.contains("init")) {
      const auto& init = o.at("init");
      cfg.init_lambda = init.value("lambda", 1.0);
      cfg.init_sigma2 = init.value("sigma2", 1.0);
      if (init.contains("G")) cfg.init_g = detail::parse_matrix(init.at("G"));
    }
  }
  if (j.contains("quadrature")) {
    cfg.reml.fit.quad.nodes = j.at("quadrature").value("nodes", 64);
    cfg.reml.fit.quad.split = j.at("quadrature").value("split", true);
  }
  if (j.contains("emit_derivatives"))
    for (const auto& mu : j.at("emit_derivatives")) {
      cfg.emit_derivatives.push_back(mu.get<int>());
      cfg.reml.fit.deriv_orders.push_back(mu.get<int>());
    }
  return cfg;
}

inline SimulationSpec simulation_from_json(const nlohmann::json& j) {
  SimulationSpec spec;
  spec.n_points = j.at("N").get<int>();
  spec.n_samples = j.at("M").get<int>();
  spec.a = j.value("a", 0.0);
  spec.b = j.value("b", 1.0);
  const std::string kernel = j.value("kernel", "brownian-motion");
  if (kernel == "brownian-motion")
    spec.kernel = BrownianKind::motion;
  else if (kernel == "brownian-bridge")
    spec.kernel = BrownianKind::bridge;
  else
    throw std::invalid_argument("simulate: unsupported kernel '" + kernel + "' for sampling");
  spec.lambda = j.value("lambda", 1.0);
  spec.sigma2 = j.value("sigma2", 1.0);
  if (j.contains("fixed")) {
    for (const auto& name : j.at("fixed")) spec.fixed.push_back(name.get<std::string>());
    const auto& beta = j.at("beta");
    spec.beta.resize(beta.size());
    for (size_t i = 0; i < beta.size(); ++i) spec.beta[static_cast<int>(i)] = beta[i].get<double>();
  } else {
    spec.beta.resize(0);
  }
  if (j.contains("random")) {
    for (const auto& name : j.at("random")) spec.random.push_back(name.get<std::string>());
    spec.g = detail::parse_matrix(j.at("G"));
  }
  spec.seed = j.value("seed", 1);
  return spec;
}

}  // namespace opmix
