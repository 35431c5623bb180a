#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "fairpse/dataset.hpp"

namespace fairpse {

enum class Family { gaussian_identity, bernoulli_logit };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

/// One regression term: the elementwise product of the named columns.
/// A single factor is a main effect, several factors an interaction.
struct Term {
  std::vector<std::string> factors;

  Term() = default;
  explicit Term(std::vector<std::string> f);

  std::string name() const;  // canonical "A:C1" form
  bool operator==(const Term& o) const { return factors == o.factors; }
};

struct ModelSpec {
  std::string response;
  Family family = Family::gaussian_identity;
  std::vector<Term> terms;  // intercept is implicit

  std::string formula() const;  // "Y ~ A + M + A:M"
  std::vector<std::string> predictor_columns() const;
  Eigen::Index n_coefficients() const { return 1 + static_cast<Eigen::Index>(terms.size()); }
};

/// Parses "Y ~ A + M + C1 + A:M" (":" marks interactions, "1" the bare intercept).
ModelSpec parse_formula(const std::string& formula, Family family);
void validate_spec(const ModelSpec& spec);

struct FittedGlm {
  ModelSpec spec;
  Eigen::VectorXd coefficients;  // aligned with [intercept, terms...]
  double dispersion = 1.0;       // gaussian residual variance; fixed 1 for logit
  Eigen::Index n_train = 0;

  /// Coefficient of a single main-effect term, e.g. the treatment slope.
  double coefficient(const std::string& main_effect) const;
  int term_index(const Term& term) const;  // -1 when absent; 0 = first term
};

/// Builds [1 | terms...]; columns named in `overrides` are replaced by the
/// given constant before products are formed.
Eigen::MatrixXd design_matrix(const Dataset& data, const ModelSpec& spec,
                              const std::map<std::string, double>& overrides = {});

/// Maximum likelihood fit. Gaussian solves least squares; logit runs IRLS
/// with step-halving until the score norm drops below 1e-8.
FittedGlm fit_glm(const Dataset& data, const ModelSpec& spec);

/// Same fit with some coefficients pinned: `fixed` maps coefficient index
/// (0 = intercept) to its value. Backs the box-constraint fast path.
FittedGlm fit_glm_fixed(const Dataset& data, const ModelSpec& spec,
                        const std::map<Eigen::Index, double>& fixed);

double log_likelihood(const FittedGlm& model, const Dataset& data);
double log_likelihood(const FittedGlm& model, const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& y);

/// Gradient of the log-likelihood in the coefficients.
Eigen::VectorXd score(const FittedGlm& model, const Dataset& data);

/// Asymptotic standard errors from the Fisher information at the fit.
Eigen::VectorXd std_errors(const FittedGlm& model, const Dataset& data);

/// Mean response for one assignment of predictor values.
double predict_mean(const FittedGlm& model, const std::map<std::string, double>& row);

/// Mean response for every row of a prebuilt design matrix.
Eigen::VectorXd predict_mean(const FittedGlm& model, const Eigen::MatrixXd& design);

double mean_from_linear(Family family, double eta);

/// Density (gaussian) or mass (bernoulli) of observing y given the mean.
double density(const FittedGlm& model, double mean, double y);

inline double expit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace fairpse
