#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fairpse/dataset.hpp"
#include "fairpse/glm.hpp"
#include "fairpse/graph.hpp"

namespace fairpse {

enum class EstimatorTag { plugin_mediation, ipw, triply_robust, edge_g_plugin, closed_form };
enum class ClosedFormVariant { linear_nde, logistic_or_nde, chain_or_pse };

struct EstimatorKind {
  EstimatorTag tag = EstimatorTag::plugin_mediation;
  std::optional<ClosedFormVariant> variant;  // present iff tag == closed_form

  std::string name() const;
  static EstimatorKind parse(const std::string& name);
  static EstimatorKind closed_form(ClosedFormVariant v) { return {EstimatorTag::closed_form, v}; }

  bool operator==(const EstimatorKind& o) const { return tag == o.tag && variant == o.variant; }
};

struct EstimateReport {
  double value = 0.0;
  EffectScale scale = EffectScale::mean_difference;
  EstimatorKind estimator;
  std::vector<std::string> models_used;  // modeled vertex names
  Eigen::Index n = 0;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> warnings;
};

/// Monte Carlo budget for continuous mediators. Draws are seeded and shared
/// across counterfactual arms (common random numbers).
struct McConfig {
  Eigen::Index draws = 1000;
  std::uint64_t seed = 1;
};

/// Fitted models keyed by the vertex they model.
using ModelSet = std::map<std::string, FittedGlm>;

/// Probability denominators below this are reported as positivity violations.
constexpr double kPositivityFloor = 1e-6;

/// Adjustment formula: (1/n) sum_i E[Y | treatment := a, c_i].
double counterfactual_mean_adjustment(const FittedGlm& y_model, const Dataset& data,
                                      const std::string& treatment, double a);

/// Plug-in natural direct effect, mean-difference scale:
/// (1/n) sum_i sum_m (E[Y|a,m,c_i] - E[Y|a',m,c_i]) p(m|a',c_i).
EstimateReport nde_plugin(const FittedGlm& y_model, const FittedGlm& m_model,
                          const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc = std::nullopt);

/// Plug-in natural indirect effect:
/// (1/n) sum_i sum_m E[Y|a,m,c_i] (p(m|a,c_i) - p(m|a',c_i)).
EstimateReport nie_plugin(const FittedGlm& y_model, const FittedGlm& m_model,
                          const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc = std::nullopt);

/// Plug-in average causal effect from the same two models; telescoping makes
/// this equal nde_plugin + nie_plugin.
EstimateReport ace_plugin(const FittedGlm& y_model, const FittedGlm& m_model,
                          const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc = std::nullopt);

/// Inverse-probability-weighted NDE; uses the treatment and mediator models
/// only, never the outcome model.
EstimateReport nde_ipw(const FittedGlm& a_model, const FittedGlm& m_model,
                       const Dataset& data, const PseSpec& spec);

/// Triply robust NDE: consistent when any two of the three models are right.
/// The internal eta(a,a'',c) regressions are surfaced in diagnostics.
EstimateReport nde_triply_robust(const FittedGlm& a_model, const FittedGlm& m_model,
                                 const FittedGlm& y_model, const Dataset& data,
                                 const PseSpec& spec,
                                 const std::optional<McConfig>& mc = std::nullopt);

/// Plug-in evaluation of the edge g-formula / general product functional for
/// the requested path set: every mediator and the outcome receive the active
/// treatment value exactly on disallowed direct edges, baseline otherwise.
/// `models` must hold the outcome model and one model per mediator.
EstimateReport pse_edge_g(const ModelSet& models, const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc = std::nullopt);

/// Closed forms: linear_nde returns the treatment slope of a gaussian outcome
/// model (mean difference); logistic_or_nde returns exp(theta_a) (odds ratio);
/// chain_or_pse exponentiates the sum over disallowed paths of the products
/// of edge coefficients (odds ratio). When `data` is supplied it is used for
/// the report's n and the odds-ratio prevalence warning.
EstimateReport pse_closed_form(const ModelSet& models, const PseSpec& spec,
                               ClosedFormVariant variant, const Dataset* data = nullptr);

/// Dispatch by kind; `models` must contain whatever the estimator needs.
EstimateReport estimate_pse(const EstimatorKind& kind, const ModelSet& models,
                            const Dataset& data, const PseSpec& spec,
                            const std::optional<McConfig>& mc = std::nullopt);

/// Vertices whose models enter the estimator g; these are what the
/// constrained fit restricts. Mediators come from the graph labeling.
std::vector<std::string> models_in_g(const EstimatorKind& kind, const CausalGraph& graph,
                                     const PseSpec& spec);

/// An estimator pinned to one dataset and spec. Design matrices are built
/// once and memoized, so evaluating at new coefficients (the constrained
/// solver does this thousands of times) reduces to matrix products. Monte
/// Carlo draws are fixed at construction (common random numbers), keeping
/// the value smooth in the coefficients.
class PinnedEstimator {
 public:
  PinnedEstimator(const EstimatorKind& kind, const Dataset& data, const PseSpec& spec,
                  const std::optional<McConfig>& mc = std::nullopt);
  ~PinnedEstimator();
  PinnedEstimator(PinnedEstimator&&) noexcept;

  double value(const ModelSet& models) const;

  /// Closed-form gradient of value() in the coefficients of the models named
  /// by `order`, concatenated in that order. Empty when no analytic form is
  /// available (Monte Carlo mediators, edge-g products); callers fall back to
  /// finite differences then.
  Eigen::VectorXd gradient(const ModelSet& models, const std::vector<std::string>& order) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Natural scale of an estimator's report.
EffectScale estimator_scale(const EstimatorKind& kind);

}  // namespace fairpse
