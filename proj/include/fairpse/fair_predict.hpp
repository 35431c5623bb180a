#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairpse/constrained_fit.hpp"

namespace fairpse {

/// The columns a fair predictor may read: baseline covariates always, plus
/// any variable whose model the estimator's g does not touch (the treatment
/// for plug-in and edge-g estimators, never for ipw / triply_robust).
std::vector<std::string> select_w(const EstimatorKind& estimator, const CausalGraph& graph,
                                  const PseSpec& spec);

struct Marginalization {
  Eigen::Index draws = 1000;
  std::uint64_t seed = 1;
};

struct BatchPredictResult {
  Eigen::VectorXd predictions;
  std::optional<Eigen::VectorXd> labels;  // bernoulli outcomes, thresholded at 0.5
  std::optional<double> rmse;             // when the outcome column is present
  std::optional<double> accuracy;         // bernoulli + outcome column
};

/// Serves E*[Y | W]: reads only the W columns of an instance and marginalizes
/// the remaining modeled variables under the constrained (fair) models.
/// Discrete factors are enumerated exactly; continuous ones use seeded draws.
class FairPredictor {
 public:
  explicit FairPredictor(FairFitResult fit, Marginalization marg = {},
                         std::optional<std::vector<std::string>> w_override = std::nullopt);

  const std::vector<std::string>& w_set() const { return w_; }
  const std::vector<std::string>& marginalized() const { return internal_; }
  const FairFitResult& fit() const { return fit_; }

  double fair_expectation(const std::map<std::string, double>& instance) const;

  /// Row seeds derive from (seed, row index) so any evaluation order gives
  /// identical output.
  BatchPredictResult batch_predict(const Dataset& data) const;

 private:
  double expectation_seeded(const std::map<std::string, double>& w_values,
                            std::uint64_t seed) const;

  FairFitResult fit_;
  Marginalization marg_;
  std::vector<std::string> w_;
  std::vector<std::string> internal_;  // marginalized vertices, dependency order
  bool any_continuous_ = false;
};

}  // namespace fairpse
