#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opmix/grid.hpp"
#include "opmix/mixed_model_types.hpp"

namespace opmix {

/// Mixed-model data together with the naming metadata of its CSV source.
struct DataSet {
  MixedModelData model;
  std::vector<std::string> sample_ids;    // length M, order of first appearance
  std::vector<std::string> fixed_names;   // without the fixed_ prefix
  std::vector<std::string> random_names;  // without the random_ prefix
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& cell, int line_no) {
  try {
    size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("ingest_csv: non-numeric cell '" + cell + "' on line " +
                             std::to_string(line_no));
  }
}

}  // namespace detail

/**
 * Long-format ingestion. Header: sample_id,time,y[,fixed_*...][,random_*...].
 * Every sample must carry the identical time vector; the grid interval is
 * inferred by extending half a cell beyond the first and last time points,
 * which round-trips grids written by the simulator exactly.
 */
inline DataSet ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("ingest_csv: empty file");
  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "time" || header[2] != "y")
    throw std::runtime_error("ingest_csv: header must start with sample_id,time,y");

  DataSet ds;
  std::vector<int> fixed_cols, random_cols;
  for (size_t c = 3; c < header.size(); ++c) {
    if (header[c].rfind("fixed_", 0) == 0) {
      ds.fixed_names.push_back(header[c].substr(6));
      fixed_cols.push_back(static_cast<int>(c));
    } else if (header[c].rfind("random_", 0) == 0) {
      ds.random_names.push_back(header[c].substr(7));
      random_cols.push_back(static_cast<int>(c));
    } else {
      throw std::runtime_error("ingest_csv: covariate column '" + header[c] +
                               "' must be prefixed fixed_ or random_");
    }
  }

  struct Row {
    double time, y;
    std::vector<double> fixed, random;
  };
  std::map<std::string, int> sample_index;
  std::vector<std::vector<Row>> rows_by_sample;

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("ingest_csv: wrong cell count on line " + std::to_string(line_no));
    const std::string& id = cells[0];
    auto [it, inserted] = sample_index.try_emplace(id, static_cast<int>(ds.sample_ids.size()));
    if (inserted) {
      ds.sample_ids.push_back(id);
      rows_by_sample.emplace_back();
    }
    Row r;
    r.time = detail::parse_number(cells[1], line_no);
    r.y = detail::parse_number(cells[2], line_no);
    for (int c : fixed_cols) r.fixed.push_back(detail::parse_number(cells[c], line_no));
    for (int c : random_cols) r.random.push_back(detail::parse_number(cells[c], line_no));
    rows_by_sample[it->second].push_back(std::move(r));
  }
  if (rows_by_sample.empty()) throw std::runtime_error("ingest_csv: no observations");

  const int m = static_cast<int>(rows_by_sample.size());
  const int n = static_cast<int>(rows_by_sample[0].size());
  if (n < 2) throw std::runtime_error("ingest_csv: need at least two time points per sample");
  for (const auto& sample : rows_by_sample) {
    if (static_cast<int>(sample.size()) != n)
      throw std::runtime_error("ingest_csv: ragged design (differing time vectors)");
    for (int i = 0; i < n; ++i) {
      if (sample[i].time != rows_by_sample[0][i].time)
        throw std::runtime_error("ingest_csv: ragged design (differing time vectors)");
      if (i > 0 && !(sample[i].time > sample[i - 1].time)) {
        if (sample[i].time == sample[i - 1].time)
          throw std::runtime_error("ingest_csv: duplicate (sample, time) pair");
        throw std::runtime_error("ingest_csv: times must be strictly increasing per sample");
      }
    }
  }

  Eigen::VectorXd times(n);
  for (int i = 0; i < n; ++i) times[i] = rows_by_sample[0][i].time;
  const double a = times[0] - 0.5 * (times[1] - times[0]);
  const double b = times[n - 1] + 0.5 * (times[n - 1] - times[n - 2]);

  MixedModelData model;
  model.grid = Grid::from_points(a, b, times);
  model.y.resize(n, m);
  const int p = static_cast<int>(fixed_cols.size());
  const int q = static_cast<int>(random_cols.size());
  model.gamma.resize(n * m, p);
  model.z.resize(n * m, q);
  for (int s = 0; s < m; ++s) {
    for (int i = 0; i < n; ++i) {
      const Row& r = rows_by_sample[s][i];
      model.y(i, s) = r.y;
      for (int c = 0; c < p; ++c) model.gamma(s * n + i, c) = r.fixed[c];
      for (int c = 0; c < q; ++c) model.z(s * n + i, c) = r.random[c];
    }
  }
  model.validate();
  ds.model = std::move(model);
  return ds;
}

namespace detail {

inline std::string format_g17(double v) {
  char buf[64];
  snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Write a DataSet back to the ingestion schema (17 significant digits).
inline void write_csv(const std::string& path, const DataSet& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  out << "sample_id,time,y";
  for (const auto& name : ds.fixed_names) out << ",fixed_" << name;
  for (const auto& name : ds.random_names) out << ",random_" << name;
  out << "\n";
  const MixedModelData& mm = ds.model;
  const int n = mm.n_points(), m = mm.n_samples();
  for (int s = 0; s < m; ++s) {
    for (int i = 0; i < n; ++i) {
      out << ds.sample_ids[s] << ',' << detail::format_g17(mm.grid.points()[i]) << ','
          << detail::format_g17(mm.y(i, s));
      for (int c = 0; c < mm.n_fixed(); ++c)
        out << ',' << detail::format_g17(mm.gamma(s * n + i, c));
      for (int c = 0; c < mm.n_random(); ++c)
        out << ',' << detail::format_g17(mm.z(s * n + i, c));
      out << "\n";
    }
  }
}

/// predictions.csv: one row per (sample, time) with the latent BLUP, any
/// requested derivative columns, and the conditional residual. A dense
/// cross-check BLUP appends an x_blup_oracle column when provided.
inline void write_predictions_csv(const std::string& path, const DataSet& ds,
                                  const FitResult& fit, const std::vector<int>& orders,
                                  const Eigen::MatrixXd* x_oracle = nullptr) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_predictions_csv: cannot open " + path);
  out << "sample_id,time,x_blup";
  for (int mu : orders) out << ",x_blup_d" << mu;
  out << ",residual";
  if (x_oracle) out << ",x_blup_oracle";
  out << "\n";
  const MixedModelData& mm = ds.model;
  for (int s = 0; s < mm.n_samples(); ++s) {
    for (int i = 0; i < mm.n_points(); ++i) {
      out << ds.sample_ids[s] << ',' << detail::format_g17(mm.grid.points()[i]) << ','
          << detail::format_g17(fit.x_blup(i, s));
      for (int mu : orders) out << ',' << detail::format_g17(fit.deriv(mu)(i, s));
      out << ',' << detail::format_g17(fit.residuals(i, s));
      if (x_oracle) out << ',' << detail::format_g17((*x_oracle)(i, s));
      out << "\n";
    }
  }
}

}  // namespace opmix
