#include "fairpse/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fairpse/errors.hpp"

namespace fairpse {

int Dataset::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) return -1;
  return static_cast<int>(it - columns.begin());
}

Eigen::Index Dataset::require_column(const std::string& name) const {
  int idx = column_index(name);
  if (idx < 0) throw ValidationError("unknown column '" + name + "'");
  return idx;
}

Eigen::VectorXd Dataset::col(const std::string& name) const {
  return values.col(require_column(name));
}

void Dataset::add_column(const std::string& name, const Eigen::VectorXd& v) {
  if (has_column(name)) throw ValidationError("duplicate column '" + name + "'");
  if (values.cols() > 0 && v.size() != values.rows())
    throw ValidationError("column '" + name + "' has wrong length");
  Eigen::MatrixXd next(v.size(), values.cols() + 1);
  if (values.cols() > 0) next.leftCols(values.cols()) = values;
  next.col(values.cols()) = v;
  values = std::move(next);
  columns.push_back(name);
}

Dataset Dataset::rows(const std::vector<Eigen::Index>& idx) const {
  Dataset out;
  out.columns = columns;
  out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
  for (Eigen::Index i = 0; i < out.values.rows(); ++i)
    out.values.row(i) = values.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

Dataset Dataset::head(Eigen::Index n) const {
  Dataset out;
  out.columns = columns;
  out.values = values.topRows(std::min(n, n_rows()));
  return out;
}

Dataset Dataset::tail(Eigen::Index n) const {
  Dataset out;
  out.columns = columns;
  out.values = values.bottomRows(std::min(n, n_rows()));
  return out;
}

bool is_binary_column(const Dataset& data, const std::string& name) {
  Eigen::VectorXd v = data.col(name);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] != 0.0 && v[i] != 1.0) return false;
  return true;
}

void validate_roles(const Dataset& data, const ColumnRoles& roles) {
  if (roles.treatment.empty() || roles.outcome.empty())
    throw ValidationError("role map must name a treatment and an outcome column");
  data.require_column(roles.treatment);
  data.require_column(roles.outcome);
  for (const auto& m : roles.mediators) data.require_column(m);
  for (const auto& c : roles.baseline) data.require_column(c);
  if (!is_binary_column(data, roles.treatment))
    throw ValidationError("treatment column '" + roles.treatment +
                          "' must be binary 0/1");
}

namespace {

std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");

  Dataset out;
  for (const auto& name : split_line(line, ',')) {
    std::string c = trim(name);
    if (c.empty()) throw ValidationError("'" + path + "': empty column name in header");
    if (std::find(out.columns.begin(), out.columns.end(), c) != out.columns.end())
      throw ValidationError("'" + path + "': duplicate column '" + c + "'");
    out.columns.push_back(c);
  }

  std::vector<double> flat;
  Eigen::Index n = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_line(line, ',');
    if (cells.size() != out.columns.size())
      throw ValidationError("'" + path + "' line " + std::to_string(lineno) +
                            ": expected " + std::to_string(out.columns.size()) +
                            " cells, got " + std::to_string(cells.size()));
    for (const auto& cell : cells) {
      const std::string t = trim(cell);
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(t, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != t.size() || t.empty())
        throw ValidationError("'" + path + "' line " + std::to_string(lineno) +
                              ": non-numeric cell '" + t + "'");
      flat.push_back(v);
    }
    ++n;
  }

  out.values.resize(n, static_cast<Eigen::Index>(out.columns.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < out.values.cols(); ++j)
      out.values(i, j) = flat[static_cast<std::size_t>(i * out.values.cols() + j)];
  return out;
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  for (std::size_t j = 0; j < data.columns.size(); ++j) {
    if (j) out << ',';
    out << data.columns[j];
  }
  out << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < data.n_rows(); ++i) {
    for (Eigen::Index j = 0; j < data.values.cols(); ++j) {
      if (j) out << ',';
      // %.17g round-trips doubles exactly, so save(load(x)) == load(x).
      std::snprintf(buf, sizeof(buf), "%.17g", data.values(i, j));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace fairpse
