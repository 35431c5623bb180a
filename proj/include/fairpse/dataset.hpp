#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace fairpse {

/// A rectangular numeric table: named columns over an Eigen matrix.
struct Dataset {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;  // n_rows x columns.size()

  Eigen::Index n_rows() const { return values.rows(); }

  int column_index(const std::string& name) const;
  bool has_column(const std::string& name) const { return column_index(name) >= 0; }

  /// Throws ValidationError when the column is absent.
  Eigen::VectorXd col(const std::string& name) const;
  Eigen::Index require_column(const std::string& name) const;

  void add_column(const std::string& name, const Eigen::VectorXd& v);
  Dataset rows(const std::vector<Eigen::Index>& idx) const;
  Dataset head(Eigen::Index n) const;
  Dataset tail(Eigen::Index n) const;
};

/// Column roles for estimation: which column is the sensitive treatment,
/// which the outcome, which mediate, and which are baseline covariates.
struct ColumnRoles {
  std::string treatment;
  std::string outcome;
  std::vector<std::string> mediators;
  std::vector<std::string> baseline;
};

/// Checks role columns exist and that the treatment column is binary 0/1.
void validate_roles(const Dataset& data, const ColumnRoles& roles);

/// True when every value of the column is 0 or 1.
bool is_binary_column(const Dataset& data, const std::string& name);

Dataset load_csv(const std::string& path);
void save_csv(const Dataset& data, const std::string& path);

}  // namespace fairpse
