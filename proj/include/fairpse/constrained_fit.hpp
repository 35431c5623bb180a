#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fairpse/dataset.hpp"
#include "fairpse/estimators.hpp"
#include "fairpse/graph.hpp"

namespace fairpse {

/// Tolerated interval for the discriminatory path-specific effect.
struct Bounds {
  double lower = 0.0;
  double upper = 0.0;
  EffectScale scale = EffectScale::mean_difference;
};

void validate_bounds(const Bounds& bounds);

/// Feasibility slack: absolute on the mean-difference scale, relative on the
/// odds-ratio scale.
constexpr double kFeasibilityTol = 1e-4;

struct SolverOptions {
  int max_outer = 20;
  int max_inner = 200;
  double penalty_init = 10.0;
  double penalty_growth = 10.0;
  double tol_constraint = 1e-6;
  double tol_stationarity = 1e-5;
  double fd_step = 1e-6;  // scaled by (1 + |alpha_j|)
  bool force_general = false;  // skip the box fast path (agreement tests)
  std::optional<McConfig> mc;
};

struct SolverInfo {
  std::string strategy;  // "box" or "augmented_lagrangian"
  int iterations = 0;
  double kkt_residual = 0.0;
  bool feasible = false;
  double constraint_violation = 0.0;
};

/// The fitted fair world: constrained maximum likelihood of the modeled
/// factors with the estimated PSE held inside the bounds.
struct FairFitResult {
  ModelSet constrained_models;            // every fitted model, by vertex
  std::vector<std::string> g_model_names; // the subset the constraint touches
  EstimatorKind estimator;
  PseSpec spec;
  Bounds bounds;
  double achieved_pse = 0.0;   // recomputed from the returned models
  std::vector<std::string> w_set;
  double loglik_constrained = 0.0;
  double loglik_unconstrained = 0.0;
  SolverInfo solver;
  std::optional<McConfig> mc;  // draws used by Monte Carlo estimators, for re-evaluation
};

/// Solves max sum-loglik subject to lower <= g <= upper. Models the estimator
/// does not use are fitted unconstrained. Refuses non-identified specs.
/// Infeasible solves come back with solver.feasible == false and the closest
/// achieved value, never silently clipped.
FairFitResult fit_fair(const Dataset& data, const CausalGraph& graph, const PseSpec& spec,
                       const EstimatorKind& estimator, const std::vector<ModelSpec>& model_specs,
                       const Bounds& bounds, const SolverOptions& options = {});

/// Independent re-evaluation of the constrained estimate from a result's
/// models; used by feasibility audits.
double evaluate_pse(const FairFitResult& fit, const Dataset& data);

/// Joint log-likelihood of the constraint-relevant models (gaussian
/// dispersions profiled out).
double g_models_loglik(const FairFitResult& fit, const Dataset& data);

struct CandidateReport {
  ModelSpec spec;
  double rmse = 0.0;
  double unconstrained_pse = 0.0;
  double achieved_pse = 0.0;
  bool feasible = false;
};

struct SelectionResult {
  ModelSpec chosen;
  double rmse = 0.0;
  FairFitResult fit;  // the winning candidate's fit
  std::vector<CandidateReport> reports;
};

/// Scores outcome-model candidates by fair-prediction rMSE on the validation
/// split, under an estimator robust to outcome-model misspecification.
/// Ties break toward fewer terms, then the lexicographically first formula.
SelectionResult select_outcome_model(const std::vector<ModelSpec>& candidates,
                                     const Dataset& train, const Dataset& validate,
                                     const ModelSpec& a_spec, const ModelSpec& m_spec,
                                     const CausalGraph& graph, const PseSpec& spec,
                                     const EstimatorKind& estimator, const Bounds& bounds,
                                     const SolverOptions& options = {});

}  // namespace fairpse
