#include "fairpse/fair_predict.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fairpse/errors.hpp"
#include "fairpse/rng.hpp"

namespace fairpse {

std::vector<std::string> select_w(const EstimatorKind& estimator, const CausalGraph& graph,
                                  const PseSpec& spec) {
  validate_graph(graph);
  validate_pse_spec(graph, spec);
  const auto g_names = models_in_g(estimator, graph, spec);
  std::set<std::string> constrained(g_names.begin(), g_names.end());
  const auto meds = mediators_of(graph, spec);
  std::set<std::string> mediator_set(meds.begin(), meds.end());

  std::vector<std::string> w;
  if (!constrained.count(spec.treatment)) w.push_back(spec.treatment);
  for (const auto& v : graph.vertices) {
    if (v == spec.treatment || v == spec.outcome) continue;
    if (mediator_set.count(v)) {
      if (!constrained.count(v)) w.push_back(v);  // unconstrained mediator
    } else {
      w.push_back(v);  // baseline covariate
    }
  }
  return w;
}

FairPredictor::FairPredictor(FairFitResult fit, Marginalization marg,
                             std::optional<std::vector<std::string>> w_override)
    : fit_(std::move(fit)), marg_(marg) {
  w_ = w_override ? *w_override : fit_.w_set;
  const std::string& outcome = fit_.spec.outcome;
  if (!fit_.constrained_models.count(outcome))
    throw ValidationError("fair predictor needs the outcome model '" + outcome + "'");
  std::set<std::string> w_set(w_.begin(), w_.end());
  if (w_set.count(outcome)) throw ValidationError("the outcome cannot be in the W set");

  // Everything modeled but not readable gets marginalized, ordered so each
  // model conditions only on W and on earlier marginalized variables.
  std::vector<std::string> pending;
  for (const auto& [name, model] : fit_.constrained_models)
    if (name != outcome && !w_set.count(name)) pending.push_back(name);
  std::set<std::string> placed;
  while (internal_.size() < pending.size()) {
    bool progressed = false;
    for (const auto& v : pending) {
      if (placed.count(v)) continue;
      bool ready = true;
      for (const auto& p : fit_.constrained_models.at(v).spec.predictor_columns()) {
        if (w_set.count(p) || placed.count(p)) continue;
        ready = false;
      }
      if (ready) {
        internal_.push_back(v);
        placed.insert(v);
        progressed = true;
      }
    }
    if (!progressed)
      throw ValidationError("marginalized models depend on variables outside the W set");
  }
  for (const auto& v : internal_)
    if (fit_.constrained_models.at(v).spec.family == Family::gaussian_identity)
      any_continuous_ = true;

  for (const auto& p : fit_.constrained_models.at(outcome).spec.predictor_columns())
    if (!w_set.count(p) && !placed.count(p))
      throw ValidationError("outcome model reads '" + p +
                            "', which is neither in W nor marginalized");
}

double FairPredictor::expectation_seeded(const std::map<std::string, double>& w_values,
                                         std::uint64_t seed) const {
  const FittedGlm& y_model = fit_.constrained_models.at(fit_.spec.outcome);

  if (!any_continuous_) {
    // Exact enumeration over the binary marginalized variables.
    const std::size_t k = internal_.size();
    if (k > 20) throw ValidationError("too many discrete variables to enumerate");
    double total = 0.0;
    std::map<std::string, double> values = w_values;
    for (std::size_t combo = 0; combo < (1u << k); ++combo) {
      double weight = 1.0;
      for (std::size_t j = 0; j < k; ++j) {
        const FittedGlm& mod = fit_.constrained_models.at(internal_[j]);
        const double p1 = predict_mean(mod, values);
        const double val = (combo >> j) & 1u ? 1.0 : 0.0;
        weight *= val == 1.0 ? p1 : 1.0 - p1;
        values[internal_[j]] = val;
      }
      total += weight * predict_mean(y_model, values);
    }
    if (!std::isfinite(total))
      throw ValidationError("fair expectation is not finite");
    return total;
  }

  Rng rng(seed);
  double total = 0.0;
  std::map<std::string, double> values = w_values;
  for (Eigen::Index d = 0; d < marg_.draws; ++d) {
    for (const auto& v : internal_) {
      const FittedGlm& mod = fit_.constrained_models.at(v);
      const double mean = predict_mean(mod, values);
      const double z = rng.normal();
      const double u = rng.uniform();
      if (mod.spec.family == Family::bernoulli_logit)
        values[v] = u < mean ? 1.0 : 0.0;
      else
        values[v] = mean + std::sqrt(mod.dispersion) * z;
    }
    total += predict_mean(y_model, values);
  }
  const double out = total / static_cast<double>(marg_.draws);
  if (!std::isfinite(out)) throw ValidationError("fair expectation is not finite");
  return out;
}

double FairPredictor::fair_expectation(const std::map<std::string, double>& instance) const {
  std::map<std::string, double> w_values;
  for (const auto& col : w_) {
    auto it = instance.find(col);
    if (it == instance.end())
      throw ValidationError("instance is missing W column '" + col + "'");
    w_values[col] = it->second;
  }
  return expectation_seeded(w_values, derive_seed(marg_.seed, 0));
}

BatchPredictResult FairPredictor::batch_predict(const Dataset& data) const {
  std::vector<Eigen::Index> w_idx;
  for (const auto& col : w_) w_idx.push_back(data.require_column(col));

  const Eigen::Index n = data.n_rows();
  BatchPredictResult out;
  out.predictions.resize(n);
  std::map<std::string, double> w_values;
  for (Eigen::Index i = 0; i < n; ++i) {
    w_values.clear();
    for (std::size_t j = 0; j < w_.size(); ++j)
      w_values[w_[j]] = data.values(i, w_idx[j]);
    out.predictions[i] =
        expectation_seeded(w_values, derive_seed(marg_.seed, static_cast<std::uint64_t>(i)));
  }

  const FittedGlm& y_model = fit_.constrained_models.at(fit_.spec.outcome);
  const bool bernoulli = y_model.spec.family == Family::bernoulli_logit;
  if (bernoulli) {
    Eigen::VectorXd labels(n);
    for (Eigen::Index i = 0; i < n; ++i) labels[i] = out.predictions[i] >= 0.5 ? 1.0 : 0.0;
    out.labels = labels;
  }
  if (data.has_column(fit_.spec.outcome)) {
    const Eigen::VectorXd y = data.col(fit_.spec.outcome);
    out.rmse = std::sqrt((y - out.predictions).squaredNorm() / static_cast<double>(n));
    if (bernoulli) {
      double correct = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        if ((*out.labels)[i] == y[i]) correct += 1.0;
      out.accuracy = correct / static_cast<double>(n);
    }
  }
  return out;
}

}  // namespace fairpse
