// opmix command-line interface: simulate, fit, predict, logdet, benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <opmix/config.hpp>
#include <opmix/opmix.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

// Dense reference covariance for the configured operator: the closed-form
// kernel for the plain first-derivative penalty, the generic Green's
// function path otherwise.
opmix::DenseModel dense_for_operator(const opmix::OperatorSpec& op, const opmix::Grid& grid) {
  const auto& pen = op.penalties();
  const bool first_derivative = op.half_order() == 1 && pen.size() == 1 &&
                                pen[0].size() == 2 && pen[0][0] == 0.0 && pen[0][1] > 0.0;
  if (first_derivative) {
    const auto kind = op.bc_b()[0] == 0 ? opmix::BrownianKind::bridge
                                        : opmix::BrownianKind::motion;
    return opmix::build_r0(kind, pen[0][1], grid);
  }
  if (op.alpha()[0] > 0.0) return opmix::build_r0(op, 0.0, grid);
  throw std::runtime_error(
      "oracle: no dense kernel available for this operator (needs the first-derivative "
      "penalty or alpha_0 > 0)");
}

double fitted_scale(const opmix::OperatorSpec& fitted, const opmix::OperatorSpec& init) {
  return std::sqrt(std::abs(fitted.tau() / init.tau()));
}

int run_simulate(const std::string& config_path, const std::string& out_dir, long seed_override) {
  const opmix::RunConfig cfg = opmix::load_config(config_path);
  if (!cfg.raw.contains("simulate"))
    throw std::runtime_error("simulate: config lacks a \"simulate\" section");
  opmix::SimulationSpec spec = opmix::simulation_from_json(cfg.raw.at("simulate"));
  if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);

  const opmix::SimulationResult sim = opmix::simulate(spec);
  opmix::DataSet ds;
  ds.model = sim.data;
  for (int s = 0; s < sim.data.n_samples(); ++s) ds.sample_ids.push_back(std::to_string(s + 1));
  ds.fixed_names = spec.fixed;
  ds.random_names = spec.random;

  fs::create_directories(out_dir);
  opmix::write_csv((fs::path(out_dir) / "data.csv").string(), ds);

  json truth;
  truth["kernel"] = spec.kernel == opmix::BrownianKind::motion ? "brownian-motion"
                                                               : "brownian-bridge";
  truth["lambda"] = spec.lambda;
  truth["sigma2"] = spec.sigma2;
  truth["beta"] = vector_to_json(spec.beta);
  truth["G"] = matrix_to_json(spec.g);
  truth["u"] = vector_to_json(sim.u_true);
  truth["seed"] = spec.seed;
  truth["N"] = spec.n_points;
  truth["M"] = spec.n_samples;
  truth["a"] = spec.a;
  truth["b"] = spec.b;
  write_json(fs::path(out_dir) / "truth.json", truth);
  return 0;
}

json oracle_comparison(const opmix::DataSet& ds, const opmix::VarianceParams& vp,
                       const opmix::FitResult& fast, opmix::FitResult& exact_out) {
  const opmix::DenseModel dense = dense_for_operator(vp.op, ds.model.grid);
  opmix::FitResult exact = opmix::oracle_fit(ds.model, vp, dense);
  json out;
  out["max_abs_diff_beta"] = fast.beta_hat.size() > 0
                                 ? (fast.beta_hat - exact.beta_hat).cwiseAbs().maxCoeff()
                                 : 0.0;
  out["max_abs_diff_u"] =
      fast.u_blup.size() > 0 ? (fast.u_blup - exact.u_blup).cwiseAbs().maxCoeff() : 0.0;
  out["max_abs_diff_x"] = (fast.x_blup - exact.x_blup).cwiseAbs().maxCoeff();
  out["neg2_relik_diff"] = fast.neg2_relik - exact.neg2_relik;
  out["logdet_a0_diff"] = fast.logdet_a0 - exact.logdet_a0;
  exact_out = std::move(exact);
  return out;
}

int run_fit(const std::string& data_path, const std::string& config_path,
            const std::string& out_dir, bool oracle) {
  const opmix::RunConfig cfg = opmix::load_config(config_path);
  const opmix::DataSet ds = opmix::ingest_csv(data_path);

  opmix::VarianceParams init;
  init.sigma2 = cfg.init_sigma2;
  init.op = cfg.op.scaled(cfg.init_lambda);
  const int q = ds.model.n_random();
  init.g = cfg.init_g.size() > 0 ? cfg.init_g : Eigen::MatrixXd::Identity(q, q);
  if (init.g.rows() != q)
    throw std::runtime_error("fit: init G dimension does not match the random design");

  const opmix::RemlResult res = opmix::reml_optimize(ds.model, init, cfg.reml);

  fs::create_directories(out_dir);
  json out;
  out["command"] = "fit";
  out["converged"] = res.converged;
  out["evals"] = res.evals;
  out["beta_hat"] = vector_to_json(res.fit.beta_hat);
  out["c_beta"] = matrix_to_json(res.fit.c_beta);
  out["u_blup"] = vector_to_json(res.fit.u_blup);
  out["sigma2_hat"] = res.params.sigma2;
  out["lambda_hat"] = cfg.init_lambda * fitted_scale(res.params.op, init.op);
  out["g_hat"] = matrix_to_json(res.params.g);
  out["neg2_relik"] = res.fit.neg2_relik;
  out["logdet_a0"] = res.fit.logdet_a0;
  json trace = json::array();
  for (const auto& pt : res.trace)
    trace.push_back({{"theta", vector_to_json(pt.theta)}, {"value", pt.value}});
  out["trace"] = trace;
  opmix::FitResult exact;
  out["oracle"] = oracle ? oracle_comparison(ds, res.params, res.fit, exact) : json(nullptr);
  write_json(fs::path(out_dir) / "fit.json", out);

  opmix::write_predictions_csv((fs::path(out_dir) / "predictions.csv").string(), ds, res.fit,
                               cfg.emit_derivatives, oracle ? &exact.x_blup : nullptr);
  return res.converged ? 0 : 2;
}

int run_predict(const std::string& data_path, const std::string& config_path,
                const std::string& out_dir, bool oracle) {
  const opmix::RunConfig cfg = opmix::load_config(config_path);
  const opmix::DataSet ds = opmix::ingest_csv(data_path);

  opmix::VarianceParams vp;
  vp.sigma2 = cfg.init_sigma2;
  vp.op = cfg.op.scaled(cfg.init_lambda);
  const int q = ds.model.n_random();
  vp.g = cfg.init_g.size() > 0 ? cfg.init_g : Eigen::MatrixXd::Identity(q, q);

  opmix::FitOptions fopt = cfg.reml.fit;
  const opmix::FitResult fit = opmix::gls_fit(ds.model, vp, fopt);

  fs::create_directories(out_dir);
  json out;
  out["command"] = "predict";
  out["beta_hat"] = vector_to_json(fit.beta_hat);
  out["u_blup"] = vector_to_json(fit.u_blup);
  out["sigma2_profile"] = fit.sigma2_profile;
  out["neg2_relik"] = fit.neg2_relik;
  opmix::FitResult exact;
  out["oracle"] = oracle ? oracle_comparison(ds, vp, fit, exact) : json(nullptr);
  write_json(fs::path(out_dir) / "predict.json", out);
  opmix::write_predictions_csv((fs::path(out_dir) / "predictions.csv").string(), ds, fit,
                               cfg.emit_derivatives, oracle ? &exact.x_blup : nullptr);
  return 0;
}

int run_logdet(const std::string& config_path, const std::string& out_dir, int n, double a,
               double b, bool oracle) {
  const opmix::RunConfig cfg = opmix::load_config(config_path);
  const opmix::Grid grid = opmix::Grid::equidistant(a, b, n);
  const opmix::OperatorSpec op = cfg.op.scaled(cfg.init_lambda);
  const double value = opmix::logdet_approx(op, grid, cfg.reml.fit.quad);
  std::printf("logdet_approx %.17g\n", value);

  json out;
  out["command"] = "logdet";
  out["N"] = n;
  out["value"] = value;
  if (oracle) {
    const opmix::DenseModel dense = dense_for_operator(op, grid);
    const double exact = opmix::logdet_cholesky(dense.a0_chol);
    std::printf("logdet_dense  %.17g\n", exact);
    out["oracle"] = {{"value", exact}, {"abs_diff", std::abs(exact - value)}};
  } else {
    out["oracle"] = nullptr;
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_json(fs::path(out_dir) / "logdet.json", out);
  }
  return 0;
}

int run_benchmark(const std::string& out_dir, long max_n) {
  const opmix::OperatorSpec op = opmix::laplacian_operator(1.0, false);
  std::vector<long> sizes;
  for (long n = 1000; n <= max_n; n *= 10) sizes.push_back(n);

  struct Row {
    std::string component;
    long n;
    double seconds;
  };
  std::vector<Row> rows;

  for (long n : sizes) {
    const opmix::Grid grid = opmix::Grid::equidistant(0.0, 1.0, static_cast<int>(n));
    const opmix::SpectralFactorization f = opmix::factorize(op, 1.0, grid);
    Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(n, -1.0, 1.0);
    opmix::solve_grid(f, grid, z, {0});  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    opmix::solve_grid(f, grid, z, {0});
    const auto t1 = std::chrono::steady_clock::now();
    rows.push_back({"solve_grid", n, std::chrono::duration<double>(t1 - t0).count()});

    const auto t2 = std::chrono::steady_clock::now();
    opmix::logdet_approx(op, grid);
    const auto t3 = std::chrono::steady_clock::now();
    rows.push_back({"logdet_approx", n, std::chrono::duration<double>(t3 - t2).count()});
  }

  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "benchmark.csv");
  csv << "component,N,seconds\n";
  for (const Row& r : rows)
    csv << r.component << ',' << r.n << ',' << std::scientific << r.seconds << "\n";

  auto slope = [&](const std::string& component) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int cnt = 0;
    for (const Row& r : rows) {
      if (r.component != component) continue;
      const double x = std::log(static_cast<double>(r.n));
      const double y = std::log(std::max(r.seconds, 1e-9));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      ++cnt;
    }
    return (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  };
  std::printf("solve_grid slope %.3f\n", slope("solve_grid"));
  std::printf("logdet_approx slope %.3f\n", slope("logdet_approx"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opmix: linear-time mixed-effects inference for functional data"};
  app.require_subcommand(1);

  std::string data_path, config_path, out_dir = ".";
  bool oracle = false;
  long seed = -1;
  int logdet_n = 100;
  double interval_a = 0.0, interval_b = 1.0;
  long bench_max_n = 1000000;

  auto* sim = app.add_subcommand("simulate", "generate synthetic data from the model");
  sim->add_option("--config", config_path)->required();
  sim->add_option("--out", out_dir);
  sim->add_option("--seed", seed);

  auto* fit = app.add_subcommand("fit", "REML fit with BLUP predictions");
  fit->add_option("--data", data_path)->required();
  fit->add_option("--config", config_path)->required();
  fit->add_option("--out", out_dir);
  fit->add_flag("--oracle", oracle, "cross-check against the dense reference");

  auto* pred = app.add_subcommand("predict", "BLUPs at fixed variance parameters");
  pred->add_option("--data", data_path)->required();
  pred->add_option("--config", config_path)->required();
  pred->add_option("--out", out_dir);
  pred->add_flag("--oracle", oracle);

  auto* ld = app.add_subcommand("logdet", "operator log-determinant of I + R0");
  ld->add_option("--config", config_path)->required();
  ld->add_option("--n", logdet_n);
  ld->add_option("--a", interval_a);
  ld->add_option("--b", interval_b);
  ld->add_option("--out", out_dir);
  ld->add_flag("--oracle", oracle);

  auto* bench = app.add_subcommand("benchmark", "timing sweep with log-log slopes");
  bench->add_option("--out", out_dir);
  bench->add_option("--max-n", bench_max_n);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(config_path, out_dir, seed);
    if (fit->parsed()) return run_fit(data_path, config_path, out_dir, oracle);
    if (pred->parsed()) return run_predict(data_path, config_path, out_dir, oracle);
    if (ld->parsed()) return run_logdet(config_path, out_dir, logdet_n, interval_a, interval_b,
                                        oracle);
    if (bench->parsed()) return run_benchmark(out_dir, bench_max_n);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
