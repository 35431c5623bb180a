#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fairpse/dataset.hpp"
#include "fairpse/glm.hpp"
#include "fairpse/graph.hpp"

namespace fairpse {

struct NoiseSpec {
  enum class Kind { none, bernoulli, normal, mvnormal };
  Kind kind = Kind::none;
  double p = 0.5;                 // bernoulli
  double mean = 0.0, var = 1.0;   // normal
  Eigen::VectorXd mv_mean;        // mvnormal block
  Eigen::MatrixXd mv_cov;
};

enum class LinkKind { identity, logit };

/// One structural equation. `vertices` has several names only for a jointly
/// drawn multivariate-gaussian block. A term with coefficient zero still
/// declares its parents as edges of the induced DAG.
struct SemEquation {
  std::vector<std::string> vertices;
  LinkKind link = LinkKind::identity;
  double intercept = 0.0;
  std::vector<std::pair<Term, double>> terms;
  NoiseSpec noise;
};

struct Sem {
  std::vector<SemEquation> equations;

  std::vector<std::string> vertex_order() const;
  /// Induced DAG: one edge per distinct parent named in an equation's terms.
  CausalGraph graph() const;
};

void validate_sem(const Sem& sem);

/// Ancestral sampling; identical (seed, n) give bit-identical output. Noise
/// streams derive from (seed, row, equation) so row order never matters.
Dataset generate(const Sem& sem, Eigen::Index n, std::uint64_t seed);

struct OracleResult {
  double value = 0.0;
  double std_error = 0.0;
  Eigen::Index n_mc = 0;
};

/// Ground-truth path-specific effect by direct simulation: the active
/// treatment value propagates along disallowed paths, the baseline value
/// elsewhere; both arms share every exogenous draw (common random numbers).
/// Mean-difference scale. Rejects path sets that are not edge-consistent.
OracleResult counterfactual_oracle(const Sem& sem, const PseSpec& spec,
                                   Eigen::Index n_mc, std::uint64_t seed);

/// Two-arm do-intervention contrast E[Y(a)] - E[Y(a')], same noise sharing.
OracleResult ace_oracle(const Sem& sem, const std::string& treatment,
                        const std::string& outcome, double active, double baseline,
                        Eigen::Index n_mc, std::uint64_t seed);

}  // namespace fairpse
