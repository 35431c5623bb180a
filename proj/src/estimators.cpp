#include "fairpse/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "fairpse/errors.hpp"
#include "fairpse/rng.hpp"

namespace fairpse {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void check_denominator(double value, const char* what, Eigen::Index row) {
  if (value < kPositivityFloor)
    throw PositivityError("positivity violation at row " + std::to_string(row) + ": " +
                          what + " = " + fmt(value) + " below 1e-06");
}

// Treatment columns must carry exactly the two spec values, coded 0/1.
void check_binary_treatment(const Dataset& data, const PseSpec& spec) {
  const Eigen::VectorXd a = data.col(spec.treatment);
  const double lo = std::min(spec.active_value, spec.baseline_value);
  const double hi = std::max(spec.active_value, spec.baseline_value);
  if (lo != 0.0 || hi != 1.0)
    throw ValidationError("binary-treatment estimators require active/baseline values {0,1}");
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != 0.0 && a[i] != 1.0)
      throw ValidationError("treatment column '" + spec.treatment +
                            "' is not binary 0/1 at row " + std::to_string(i));
}

void check_scale(const PseSpec& spec, const EstimatorKind& kind) {
  if (spec.scale != estimator_scale(kind))
    throw ValidationError("estimator " + kind.name() + " reports on the " +
                          scale_name(estimator_scale(kind)) +
                          " scale; odds-ratio requests need the closed-form variants");
}

std::map<std::string, double> row_map(const Dataset& data, Eigen::Index i) {
  std::map<std::string, double> out;
  for (std::size_t j = 0; j < data.columns.size(); ++j)
    out[data.columns[j]] = data.values(i, static_cast<Eigen::Index>(j));
  return out;
}

bool mediator_is_exact(const FittedGlm& m_model) {
  return m_model.spec.family == Family::bernoulli_logit;
}

// Memoized design matrices for one dataset. Overrides recur from a small
// fixed set of values, so the cache stays finite.
class DesignCache {
 public:
  explicit DesignCache(const Dataset& data) : data_(data) {}

  const Eigen::MatrixXd& get(const ModelSpec& spec,
                             const std::map<std::string, double>& overrides) {
    std::string key = spec.response + '|' + spec.formula();
    char buf[40];
    for (const auto& [name, value] : overrides) {
      std::snprintf(buf, sizeof(buf), "=%.17g;", value);
      key += '|';
      key += name;
      key += buf;
    }
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(std::move(key), design_matrix(data_, spec, overrides)).first;
    return it->second;
  }

  const Dataset& data() const { return data_; }

 private:
  const Dataset& data_;
  std::map<std::string, Eigen::MatrixXd> cache_;
};

struct PluginGrids {
  // Outcome means with the treatment and mediator pinned: mu_<s><m> where s
  // is the treatment arm (a = active, b = baseline) and m the mediator value.
  Eigen::VectorXd mu_a1, mu_a0, mu_b1, mu_b0;
  Eigen::VectorXd pm1_active, pm1_baseline;  // P(M=1 | A:=s, c_i)
};

PluginGrids plugin_grids(const FittedGlm& y_model, const FittedGlm& m_model,
                         const PseSpec& spec, DesignCache& cache) {
  const std::string& a = spec.treatment;
  const std::string& m = m_model.spec.response;
  const double act = spec.active_value, base = spec.baseline_value;
  PluginGrids g;
  g.mu_a1 = predict_mean(y_model, cache.get(y_model.spec, {{a, act}, {m, 1.0}}));
  g.mu_a0 = predict_mean(y_model, cache.get(y_model.spec, {{a, act}, {m, 0.0}}));
  g.mu_b1 = predict_mean(y_model, cache.get(y_model.spec, {{a, base}, {m, 1.0}}));
  g.mu_b0 = predict_mean(y_model, cache.get(y_model.spec, {{a, base}, {m, 0.0}}));
  g.pm1_active = predict_mean(m_model, cache.get(m_model.spec, {{a, act}}));
  g.pm1_baseline = predict_mean(m_model, cache.get(m_model.spec, {{a, base}}));
  return g;
}

enum class PluginTarget { nde, nie, ace };

// Per-row plug-in contrasts; pairwise-summed by the caller.
std::vector<double> plugin_rows(PluginTarget target, const FittedGlm& y_model,
                                const FittedGlm& m_model, const PseSpec& spec,
                                DesignCache& cache, const std::optional<McConfig>& mc) {
  const Dataset& data = cache.data();
  const Eigen::Index n = data.n_rows();
  if (n == 0) throw ValidationError("empty dataset");
  std::vector<double> rows(static_cast<std::size_t>(n));

  if (mediator_is_exact(m_model)) {
    const PluginGrids g = plugin_grids(y_model, m_model, spec, cache);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p_act = g.pm1_active[i], p_base = g.pm1_baseline[i];
      double v = 0.0;
      switch (target) {
        case PluginTarget::nde:
          v = (g.mu_a1[i] - g.mu_b1[i]) * p_base + (g.mu_a0[i] - g.mu_b0[i]) * (1.0 - p_base);
          break;
        case PluginTarget::nie:
          v = g.mu_a1[i] * (p_act - p_base) + g.mu_a0[i] * ((1.0 - p_act) - (1.0 - p_base));
          break;
        case PluginTarget::ace:
          v = g.mu_a1[i] * p_act + g.mu_a0[i] * (1.0 - p_act) -
              (g.mu_b1[i] * p_base + g.mu_b0[i] * (1.0 - p_base));
          break;
      }
      rows[static_cast<std::size_t>(i)] = v;
    }
    return rows;
  }

  if (!mc)
    throw ValidationError("continuous mediator '" + m_model.spec.response +
                          "' needs a Monte Carlo budget");
  const std::string& a = spec.treatment;
  const std::string& m = m_model.spec.response;
  const double sd = std::sqrt(m_model.dispersion);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = row_map(data, i);
    Rng rng(derive_seed(mc->seed, static_cast<std::uint64_t>(i)));
    row[a] = spec.active_value;
    const double mean_m_act = predict_mean(m_model, row);
    row[a] = spec.baseline_value;
    const double mean_m_base = predict_mean(m_model, row);
    double acc = 0.0;
    for (Eigen::Index d = 0; d < mc->draws; ++d) {
      const double z = rng.normal();  // shared across arms
      const double m_base = mean_m_base + sd * z;
      const double m_act = mean_m_act + sd * z;
      double v = 0.0;
      switch (target) {
        case PluginTarget::nde:
          row[m] = m_base;
          row[a] = spec.active_value;
          v = predict_mean(y_model, row);
          row[a] = spec.baseline_value;
          v -= predict_mean(y_model, row);
          break;
        case PluginTarget::nie:
          row[a] = spec.active_value;
          row[m] = m_act;
          v = predict_mean(y_model, row);
          row[m] = m_base;
          v -= predict_mean(y_model, row);
          break;
        case PluginTarget::ace:
          row[a] = spec.active_value;
          row[m] = m_act;
          v = predict_mean(y_model, row);
          row[a] = spec.baseline_value;
          row[m] = m_base;
          v -= predict_mean(y_model, row);
          break;
      }
      acc += v;
    }
    rows[static_cast<std::size_t>(i)] = acc / static_cast<double>(mc->draws);
  }
  return rows;
}

EstimateReport report_from_rows(const std::vector<double>& rows, EstimatorTag tag,
                                std::vector<std::string> models_used) {
  EstimateReport rep;
  const double n = static_cast<double>(rows.size());
  rep.value = pairwise_sum(rows) / n;
  rep.scale = EffectScale::mean_difference;
  rep.estimator = {tag, std::nullopt};
  rep.models_used = std::move(models_used);
  rep.n = static_cast<Eigen::Index>(rows.size());
  double ss = 0.0;
  for (double v : rows) ss += (v - rep.value) * (v - rep.value);
  rep.diagnostics["se_rows"] = rows.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return rep;
}

// P(A = value | c_i) from the fitted treatment model.
Eigen::VectorXd treatment_probability(const FittedGlm& a_model, double value,
                                      DesignCache& cache) {
  if (a_model.spec.family != Family::bernoulli_logit)
    throw ValidationError("treatment model must be bernoulli_logit");
  Eigen::VectorXd p1 = predict_mean(a_model, cache.get(a_model.spec, {}));
  if (value == 1.0) return p1;
  return (1.0 - p1.array()).matrix();
}

// Density/mass of the observed mediator value with the treatment pinned.
Eigen::VectorXd mediator_density_at(const FittedGlm& m_model, const std::string& treatment,
                                    double a_value, DesignCache& cache) {
  const Eigen::VectorXd m_obs = cache.data().col(m_model.spec.response);
  const Eigen::VectorXd mean =
      predict_mean(m_model, cache.get(m_model.spec, {{treatment, a_value}}));
  Eigen::VectorXd out(m_obs.size());
  for (Eigen::Index i = 0; i < m_obs.size(); ++i)
    out[i] = density(m_model, mean[i], m_obs[i]);
  return out;
}

std::vector<double> ipw_rows(const FittedGlm& a_model, const FittedGlm& m_model,
                             const PseSpec& spec, DesignCache& cache) {
  const Dataset& data = cache.data();
  check_binary_treatment(data, spec);
  const Eigen::Index n = data.n_rows();
  const Eigen::VectorXd a = data.col(spec.treatment);
  const Eigen::VectorXd y = data.col(spec.outcome);
  const Eigen::VectorXd p_act = treatment_probability(a_model, spec.active_value, cache);
  const Eigen::VectorXd p_base = treatment_probability(a_model, spec.baseline_value, cache);
  const Eigen::VectorXd pm_act =
      mediator_density_at(m_model, spec.treatment, spec.active_value, cache);
  const Eigen::VectorXd pm_base =
      mediator_density_at(m_model, spec.treatment, spec.baseline_value, cache);

  std::vector<double> rows(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    // Both arms' probabilities are structural denominators of the weighting
    // scheme; a vanishing one is a positivity violation even on rows of the
    // other arm.
    check_denominator(p_act[i], "p(active|c)", i);
    check_denominator(p_base[i], "p(baseline|c)", i);
    double v = 0.0;
    if (a[i] == spec.active_value) {
      check_denominator(pm_act[i], "p(m|active,c)", i);
      v = y[i] * pm_base[i] / (p_act[i] * pm_act[i]);
    } else {
      v = -y[i] / p_base[i];
    }
    rows[static_cast<std::size_t>(i)] = v;
  }
  return rows;
}

struct TrParts {
  std::vector<double> rows;
  double eta_ab_mean = 0.0, eta_bb_mean = 0.0;
};

TrParts tr_rows(const FittedGlm& a_model, const FittedGlm& m_model, const FittedGlm& y_model,
                const PseSpec& spec, DesignCache& cache, const std::optional<McConfig>& mc) {
  const Dataset& data = cache.data();
  check_binary_treatment(data, spec);
  const Eigen::Index n = data.n_rows();
  const std::string& a_col = spec.treatment;
  const std::string& m_col = m_model.spec.response;
  const Eigen::VectorXd a = data.col(a_col);
  const Eigen::VectorXd y = data.col(spec.outcome);

  const Eigen::VectorXd p_act = treatment_probability(a_model, spec.active_value, cache);
  const Eigen::VectorXd p_base = treatment_probability(a_model, spec.baseline_value, cache);
  const Eigen::VectorXd pm_act = mediator_density_at(m_model, a_col, spec.active_value, cache);
  const Eigen::VectorXd pm_base = mediator_density_at(m_model, a_col, spec.baseline_value, cache);

  // E[Y | active, m_i, c_i] at the observed mediator value.
  const Eigen::VectorXd mu_act_obs =
      predict_mean(y_model, cache.get(y_model.spec, {{a_col, spec.active_value}}));

  // eta(s, baseline, c_i) = sum_m E[Y|s,m,c_i] p(m|baseline,c_i).
  Eigen::VectorXd eta_ab(n), eta_bb(n);
  if (mediator_is_exact(m_model)) {
    const PluginGrids g = plugin_grids(y_model, m_model, spec, cache);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p1 = g.pm1_baseline[i];
      eta_ab[i] = g.mu_a1[i] * p1 + g.mu_a0[i] * (1.0 - p1);
      eta_bb[i] = g.mu_b1[i] * p1 + g.mu_b0[i] * (1.0 - p1);
    }
  } else {
    if (!mc)
      throw ValidationError("continuous mediator '" + m_col + "' needs a Monte Carlo budget");
    const double sd = std::sqrt(m_model.dispersion);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto row = row_map(data, i);
      Rng rng(derive_seed(mc->seed, static_cast<std::uint64_t>(i)));
      row[a_col] = spec.baseline_value;
      const double mean_m = predict_mean(m_model, row);
      double acc_a = 0.0, acc_b = 0.0;
      for (Eigen::Index d = 0; d < mc->draws; ++d) {
        row[m_col] = mean_m + sd * rng.normal();
        row[a_col] = spec.active_value;
        acc_a += predict_mean(y_model, row);
        row[a_col] = spec.baseline_value;
        acc_b += predict_mean(y_model, row);
      }
      eta_ab[i] = acc_a / static_cast<double>(mc->draws);
      eta_bb[i] = acc_b / static_cast<double>(mc->draws);
    }
  }

  TrParts parts;
  parts.rows.assign(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    check_denominator(p_act[i], "p(active|c)", i);
    check_denominator(p_base[i], "p(baseline|c)", i);
    double v = eta_ab[i] - eta_bb[i];
    if (a[i] == spec.active_value) {
      check_denominator(pm_act[i], "p(m|active,c)", i);
      v += pm_base[i] / (p_act[i] * pm_act[i]) * (y[i] - mu_act_obs[i]);
    } else {
      v += (mu_act_obs[i] - eta_ab[i]) / p_base[i];
      v -= (y[i] - eta_bb[i]) / p_base[i];
    }
    parts.rows[static_cast<std::size_t>(i)] = v;
  }
  parts.eta_ab_mean = eta_ab.mean();
  parts.eta_bb_mean = eta_bb.mean();
  return parts;
}

// Mediators ordered so each model conditions only on earlier ones.
std::vector<std::string> order_mediators(const ModelSet& models, const PseSpec& spec) {
  std::vector<std::string> meds;
  for (const auto& [name, model] : models)
    if (name != spec.outcome) meds.push_back(name);
  std::vector<std::string> order;
  std::set<std::string> placed;
  while (order.size() < meds.size()) {
    bool progressed = false;
    for (const auto& v : meds) {
      if (placed.count(v)) continue;
      bool ready = true;
      for (const auto& p : models.at(v).spec.predictor_columns())
        if (std::find(meds.begin(), meds.end(), p) != meds.end() && !placed.count(p))
          ready = false;
      if (ready) {
        order.push_back(v);
        placed.insert(v);
        progressed = true;
      }
    }
    if (!progressed) throw ValidationError("mediator models are cyclically dependent");
  }
  return order;
}

// Treatment value each modeled vertex receives on its direct treatment edge.
std::map<std::string, double> substitutions_from_paths(const PseSpec& spec,
                                                       const std::vector<std::string>& mediators) {
  std::set<std::pair<std::string, std::string>> active;
  for (const auto& p : spec.disallowed_paths)
    for (std::size_t i = 0; i + 1 < p.size(); ++i) active.insert({p[i], p[i + 1]});
  std::map<std::string, double> sub;
  for (const auto& v : mediators)
    sub[v] = active.count({spec.treatment, v}) ? spec.active_value : spec.baseline_value;
  sub[spec.outcome] =
      active.count({spec.treatment, spec.outcome}) ? spec.active_value : spec.baseline_value;
  return sub;
}

// One arm of the product functional: per-row E[Y] marginalized over the
// mediators, each factor evaluated at its own treatment substitution.
Eigen::VectorXd edge_g_arm(const ModelSet& models, const PseSpec& spec,
                           const std::vector<std::string>& meds,
                           const std::map<std::string, double>& sub, DesignCache& cache,
                           const std::optional<McConfig>& mc) {
  const Dataset& data = cache.data();
  const Eigen::Index n = data.n_rows();
  const FittedGlm& y_model = models.at(spec.outcome);
  const std::string& a_col = spec.treatment;

  bool all_exact = true;
  for (const auto& v : meds)
    if (!mediator_is_exact(models.at(v))) all_exact = false;

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  if (all_exact) {
    const std::size_t k = meds.size();
    if (k > 12) throw ValidationError("too many discrete mediators to enumerate");
    for (std::size_t combo = 0; combo < (1u << k); ++combo) {
      std::map<std::string, double> fixed;
      for (std::size_t j = 0; j < k; ++j)
        fixed[meds[j]] = (combo >> j) & 1u ? 1.0 : 0.0;
      Eigen::VectorXd weight = Eigen::VectorXd::Ones(n);
      for (std::size_t j = 0; j < k; ++j) {
        const FittedGlm& mod = models.at(meds[j]);
        std::map<std::string, double> ov;
        for (std::size_t l = 0; l < j; ++l) ov[meds[l]] = fixed[meds[l]];
        ov[a_col] = sub.at(meds[j]);
        const Eigen::VectorXd p1 = predict_mean(mod, cache.get(mod.spec, ov));
        weight = weight.cwiseProduct(fixed[meds[j]] == 1.0 ? p1 : (1.0 - p1.array()).matrix());
      }
      std::map<std::string, double> ov = fixed;
      ov[a_col] = sub.at(spec.outcome);
      acc += weight.cwiseProduct(predict_mean(y_model, cache.get(y_model.spec, ov)));
    }
    return acc;
  }

  if (!mc) throw ValidationError("continuous mediators need a Monte Carlo budget");

  // Index-resolved evaluation: draws run hot, so no string lookups per draw.
  struct FlatModel {
    const FittedGlm* model;
    std::vector<std::vector<Eigen::Index>> term_cols;
    double sd = 0.0;
    bool exact = false;
    double eval(const std::vector<double>& row) const {
      double eta = model->coefficients[0];
      for (std::size_t t = 0; t < term_cols.size(); ++t) {
        double prod = 1.0;
        for (const auto c : term_cols[t]) prod *= row[static_cast<std::size_t>(c)];
        eta += model->coefficients[static_cast<Eigen::Index>(t) + 1] * prod;
      }
      return mean_from_linear(model->spec.family, eta);
    }
  };
  auto flatten = [&](const FittedGlm& m) {
    FlatModel f{&m, {}, std::sqrt(m.dispersion), mediator_is_exact(m)};
    for (const auto& t : m.spec.terms) {
      std::vector<Eigen::Index> cols;
      for (const auto& factor : t.factors) cols.push_back(data.require_column(factor));
      f.term_cols.push_back(std::move(cols));
    }
    return f;
  };

  std::vector<FlatModel> med_flat;
  std::vector<std::size_t> med_idx;
  std::vector<double> med_sub;
  for (const auto& v : meds) {
    med_flat.push_back(flatten(models.at(v)));
    med_idx.push_back(static_cast<std::size_t>(data.require_column(v)));
    med_sub.push_back(sub.at(v));
  }
  const FlatModel y_flat = flatten(y_model);
  const std::size_t a_idx = static_cast<std::size_t>(data.require_column(a_col));
  const double y_sub = sub.at(spec.outcome);

  std::vector<double> row(data.columns.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng(derive_seed(mc->seed, static_cast<std::uint64_t>(i)));
    double total = 0.0;
    for (Eigen::Index d = 0; d < mc->draws; ++d) {
      for (std::size_t j = 0; j < row.size(); ++j)
        row[j] = data.values(i, static_cast<Eigen::Index>(j));
      for (std::size_t j = 0; j < med_flat.size(); ++j) {
        row[a_idx] = med_sub[j];
        const double mean = med_flat[j].eval(row);
        // One (z, u) pair per level keeps draws aligned across arms.
        const double z = rng.normal();
        const double u = rng.uniform();
        row[med_idx[j]] = med_flat[j].exact ? (u < mean ? 1.0 : 0.0)
                                            : mean + med_flat[j].sd * z;
      }
      row[a_idx] = y_sub;
      total += y_flat.eval(row);
    }
    acc[i] = total / static_cast<double>(mc->draws);
  }
  return acc;
}

std::vector<double> edge_g_rows(const ModelSet& models, const PseSpec& spec,
                                DesignCache& cache, const std::optional<McConfig>& mc,
                                std::vector<std::string>* meds_out = nullptr) {
  if (!models.count(spec.outcome))
    throw ValidationError("edge g-formula needs a model of the outcome '" + spec.outcome + "'");
  for (const auto& path : spec.disallowed_paths)
    for (std::size_t i = 1; i + 1 < path.size(); ++i)
      if (!models.count(path[i]))
        throw ValidationError("edge g-formula needs a model of the mediator '" + path[i] + "'");
  const auto meds = order_mediators(models, spec);
  const auto sub = substitutions_from_paths(spec, meds);
  std::map<std::string, double> all_baseline;
  for (const auto& [v, s] : sub) all_baseline[v] = spec.baseline_value;

  const Eigen::VectorXd active_arm = edge_g_arm(models, spec, meds, sub, cache, mc);
  const Eigen::VectorXd baseline_arm = edge_g_arm(models, spec, meds, all_baseline, cache, mc);
  const Eigen::VectorXd contrast = active_arm - baseline_arm;
  if (meds_out) *meds_out = meds;
  return {contrast.data(), contrast.data() + contrast.size()};
}

// ---- analytic estimator gradients (binary-mediator exact paths) ----
//
// These back the constrained solver: with them the constraint gradient is
// exact instead of finite-differenced, so the KKT residual is not limited by
// a differencing noise floor.

using GradMap = std::map<std::string, Eigen::VectorXd>;

// Mean-response derivative factor per row: 1 for identity, mu(1-mu) for logit.
Eigen::VectorXd link_slope(const FittedGlm& model, const Eigen::VectorXd& mu) {
  if (model.spec.family == Family::gaussian_identity)
    return Eigen::VectorXd::Ones(mu.size());
  return mu.array() * (1.0 - mu.array());
}

struct MediationParts {
  Eigen::VectorXd a, y, m;                        // observed columns
  Eigen::VectorXd ind_act, ind_base;              // treatment indicators
  Eigen::VectorXd p_act, p_base;                  // P(A=s | c)
  Eigen::VectorXd pi1, wa;                        // P(A=1|c) and its IRLS weight
  double sign_act = 1.0;                          // d p_act / d eta_a sign
  Eigen::VectorXd p1_act, p1_base;                // P(M=1 | A:=s, c)
  Eigen::VectorXd wm_act, wm_base;                // logit slopes of the above
  Eigen::VectorXd pm_act, pm_base;                // mass at the observed m
  PluginGrids g;
  Eigen::VectorXd mu_obs, slope_obs;
  Eigen::VectorXd slope_a1, slope_a0, slope_b1, slope_b0;
};

MediationParts mediation_parts(const FittedGlm* a_model, const FittedGlm& m_model,
                               const FittedGlm* y_model, const PseSpec& spec,
                               DesignCache& cache) {
  const Dataset& data = cache.data();
  MediationParts p;
  p.a = data.col(spec.treatment);
  p.y = data.col(spec.outcome);
  p.m = data.col(m_model.spec.response);
  const Eigen::Index n = data.n_rows();
  p.ind_act.resize(n);
  p.ind_base.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.ind_act[i] = p.a[i] == spec.active_value ? 1.0 : 0.0;
    p.ind_base[i] = 1.0 - p.ind_act[i];
  }
  if (a_model) {
    p.pi1 = predict_mean(*a_model, cache.get(a_model->spec, {}));
    p.wa = p.pi1.array() * (1.0 - p.pi1.array());
    p.sign_act = spec.active_value == 1.0 ? 1.0 : -1.0;
    p.p_act = spec.active_value == 1.0 ? p.pi1 : (1.0 - p.pi1.array()).matrix();
    p.p_base = (1.0 - p.p_act.array()).matrix();
  }
  p.p1_act = predict_mean(m_model, cache.get(m_model.spec, {{spec.treatment, spec.active_value}}));
  p.p1_base =
      predict_mean(m_model, cache.get(m_model.spec, {{spec.treatment, spec.baseline_value}}));
  p.wm_act = p.p1_act.array() * (1.0 - p.p1_act.array());
  p.wm_base = p.p1_base.array() * (1.0 - p.p1_base.array());
  p.pm_act.resize(n);
  p.pm_base.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.pm_act[i] = p.m[i] != 0.0 ? p.p1_act[i] : 1.0 - p.p1_act[i];
    p.pm_base[i] = p.m[i] != 0.0 ? p.p1_base[i] : 1.0 - p.p1_base[i];
  }
  if (y_model) {
    p.g = plugin_grids(*y_model, m_model, spec, cache);
    p.mu_obs =
        predict_mean(*y_model, cache.get(y_model->spec, {{spec.treatment, spec.active_value}}));
    p.slope_obs = link_slope(*y_model, p.mu_obs);
    p.slope_a1 = link_slope(*y_model, p.g.mu_a1);
    p.slope_a0 = link_slope(*y_model, p.g.mu_a0);
    p.slope_b1 = link_slope(*y_model, p.g.mu_b1);
    p.slope_b0 = link_slope(*y_model, p.g.mu_b0);
  }
  return p;
}

// m-observed sign factor (2m - 1) for d pm / d p1.
Eigen::VectorXd msign(const Eigen::VectorXd& m) {
  return (2.0 * m.array() - 1.0).matrix();
}

GradMap plugin_nde_gradient(const FittedGlm& y_model, const FittedGlm& m_model,
                            const PseSpec& spec, DesignCache& cache) {
  MediationParts p = mediation_parts(nullptr, m_model, &y_model, spec, cache);
  const double n = static_cast<double>(p.y.size());
  const Eigen::VectorXd q = p.p1_base;
  const Eigen::VectorXd one_q = (1.0 - q.array()).matrix();

  GradMap grads;
  const Eigen::VectorXd dq_coeff =
      (p.g.mu_a1 - p.g.mu_b1 - p.g.mu_a0 + p.g.mu_b0).cwiseProduct(p.wm_base);
  grads[m_model.spec.response] =
      cache.get(m_model.spec, {{spec.treatment, spec.baseline_value}}).transpose() * dq_coeff / n;

  const std::string& a_col = spec.treatment;
  const std::string& m_col = m_model.spec.response;
  const double act = spec.active_value, base = spec.baseline_value;
  Eigen::VectorXd gy =
      cache.get(y_model.spec, {{a_col, act}, {m_col, 1.0}}).transpose() *
          q.cwiseProduct(p.slope_a1) +
      cache.get(y_model.spec, {{a_col, act}, {m_col, 0.0}}).transpose() *
          one_q.cwiseProduct(p.slope_a0) -
      cache.get(y_model.spec, {{a_col, base}, {m_col, 1.0}}).transpose() *
          q.cwiseProduct(p.slope_b1) -
      cache.get(y_model.spec, {{a_col, base}, {m_col, 0.0}}).transpose() *
          one_q.cwiseProduct(p.slope_b0);
  grads[spec.outcome] = gy / n;
  return grads;
}

GradMap ipw_gradient(const FittedGlm& a_model, const FittedGlm& m_model, const PseSpec& spec,
                     DesignCache& cache) {
  MediationParts p = mediation_parts(&a_model, m_model, nullptr, spec, cache);
  const double n = static_cast<double>(p.y.size());
  const Eigen::VectorXd ms = msign(p.m);

  GradMap grads;
  const Eigen::ArrayXd ratio = p.pm_base.array() / (p.p_act.array() * p.pm_act.array());
  Eigen::VectorXd ca =
      (p.sign_act * p.wa.array() *
       (-p.ind_act.array() * p.y.array() * ratio / p.p_act.array() -
        p.ind_base.array() * p.y.array() / (p.p_base.array() * p.p_base.array())))
          .matrix();
  grads[a_model.spec.response] = cache.get(a_model.spec, {}).transpose() * ca / n;

  const Eigen::VectorXd cb =
      (p.ind_act.array() * p.y.array() * ms.array() * p.wm_base.array() /
       (p.p_act.array() * p.pm_act.array()))
          .matrix();
  const Eigen::VectorXd cc =
      (p.ind_act.array() * p.y.array() * p.pm_base.array() * ms.array() * p.wm_act.array() /
       (p.p_act.array() * p.pm_act.array() * p.pm_act.array()))
          .matrix();
  grads[m_model.spec.response] =
      (cache.get(m_model.spec, {{spec.treatment, spec.baseline_value}}).transpose() * cb -
       cache.get(m_model.spec, {{spec.treatment, spec.active_value}}).transpose() * cc) /
      n;
  return grads;
}

GradMap tr_gradient(const FittedGlm& a_model, const FittedGlm& m_model, const FittedGlm& y_model,
                    const PseSpec& spec, DesignCache& cache) {
  MediationParts p = mediation_parts(&a_model, m_model, &y_model, spec, cache);
  const double n = static_cast<double>(p.y.size());
  const Eigen::VectorXd ms = msign(p.m);
  const std::string& a_col = spec.treatment;
  const std::string& m_col = m_model.spec.response;
  const double act = spec.active_value, base = spec.baseline_value;

  const Eigen::ArrayXd q = p.p1_base.array();
  const Eigen::ArrayXd eta_ab = p.g.mu_a1.array() * q + p.g.mu_a0.array() * (1.0 - q);
  const Eigen::ArrayXd eta_bb = p.g.mu_b1.array() * q + p.g.mu_b0.array() * (1.0 - q);
  const Eigen::ArrayXd ratio = p.pm_base.array() / (p.p_act.array() * p.pm_act.array());
  const Eigen::ArrayXd resid = p.y.array() - p.mu_obs.array();
  // Shared factor on d eta_ab and -d eta_bb.
  const Eigen::ArrayXd eta_w = 1.0 - p.ind_base.array() / p.p_base.array();

  GradMap grads;
  {
    Eigen::VectorXd ca =
        (p.sign_act * p.wa.array() *
         (-p.ind_act.array() * resid * ratio / p.p_act.array() +
          p.ind_base.array() * (p.mu_obs.array() - eta_ab - p.y.array() + eta_bb) /
              (p.p_base.array() * p.p_base.array())))
            .matrix();
    grads[a_model.spec.response] = cache.get(a_model.spec, {}).transpose() * ca / n;
  }
  {
    const Eigen::VectorXd c_base =
        (eta_w * (p.g.mu_a1.array() - p.g.mu_a0.array() - p.g.mu_b1.array() + p.g.mu_b0.array()) *
             p.wm_base.array() +
         p.ind_act.array() * resid * ms.array() * p.wm_base.array() /
             (p.p_act.array() * p.pm_act.array()))
            .matrix();
    const Eigen::VectorXd c_act =
        (p.ind_act.array() * resid * p.pm_base.array() * ms.array() * p.wm_act.array() /
         (p.p_act.array() * p.pm_act.array() * p.pm_act.array()))
            .matrix();
    grads[m_model.spec.response] =
        (cache.get(m_model.spec, {{a_col, base}}).transpose() * c_base -
         cache.get(m_model.spec, {{a_col, act}}).transpose() * c_act) /
        n;
  }
  {
    const Eigen::ArrayXd obs_w = -p.ind_act.array() * ratio + p.ind_base.array() / p.p_base.array();
    Eigen::VectorXd gy =
        cache.get(y_model.spec, {{a_col, act}, {m_col, 1.0}}).transpose() *
            (eta_w * q * p.slope_a1.array()).matrix() +
        cache.get(y_model.spec, {{a_col, act}, {m_col, 0.0}}).transpose() *
            (eta_w * (1.0 - q) * p.slope_a0.array()).matrix() -
        cache.get(y_model.spec, {{a_col, base}, {m_col, 1.0}}).transpose() *
            (eta_w * q * p.slope_b1.array()).matrix() -
        cache.get(y_model.spec, {{a_col, base}, {m_col, 0.0}}).transpose() *
            (eta_w * (1.0 - q) * p.slope_b0.array()).matrix() +
        cache.get(y_model.spec, {{a_col, act}}).transpose() *
            (obs_w * p.slope_obs.array()).matrix();
    grads[spec.outcome] = gy / n;
  }
  return grads;
}

// d value / d coefficient for the chain product form: for each edge (u -> v)
// on a disallowed path, the sum over paths through that edge of the product
// of the remaining edge coefficients, all scaled by value * (act - base).
GradMap chain_gradient(const ModelSet& models, const PseSpec& spec, double value) {
  const double delta = spec.active_value - spec.baseline_value;
  GradMap grads;
  for (const auto& [name, model] : models)
    grads[name] = Eigen::VectorXd::Zero(model.coefficients.size());
  for (const auto& path : spec.disallowed_paths) {
    for (std::size_t e = 0; e + 1 < path.size(); ++e) {
      double partial = 1.0;
      for (std::size_t o = 0; o + 1 < path.size(); ++o) {
        if (o == e) continue;
        partial *= models.at(path[o + 1]).coefficient(path[o]);
      }
      const FittedGlm& head = models.at(path[e + 1]);
      const int idx = head.term_index(Term({path[e]}));
      grads[path[e + 1]][1 + idx] += partial;
    }
  }
  for (auto& [name, g] : grads) g *= value * delta;
  return grads;
}

void forbid_treatment_interactions(const FittedGlm& y_model, const std::string& treatment) {
  for (const auto& t : y_model.spec.terms)
    if (t.factors.size() > 1 &&
        std::find(t.factors.begin(), t.factors.end(), treatment) != t.factors.end())
      throw ValidationError("closed form forbids treatment interactions; found '" + t.name() +
                            "'");
}

void forbid_any_interactions(const FittedGlm& model) {
  for (const auto& t : model.spec.terms)
    if (t.factors.size() > 1)
      throw ValidationError("chain closed form forbids interactions; model of " +
                            model.spec.response + " has '" + t.name() + "'");
}

}  // namespace

std::string EstimatorKind::name() const {
  switch (tag) {
    case EstimatorTag::plugin_mediation: return "plugin_mediation";
    case EstimatorTag::ipw: return "ipw";
    case EstimatorTag::triply_robust: return "triply_robust";
    case EstimatorTag::edge_g_plugin: return "edge_g_plugin";
    case EstimatorTag::closed_form:
      switch (*variant) {
        case ClosedFormVariant::linear_nde: return "closed_form_linear_nde";
        case ClosedFormVariant::logistic_or_nde: return "closed_form_logistic_or_nde";
        case ClosedFormVariant::chain_or_pse: return "closed_form_chain_or_pse";
      }
  }
  return "";
}

EstimatorKind EstimatorKind::parse(const std::string& name) {
  if (name == "plugin_mediation" || name == "plugin") return {EstimatorTag::plugin_mediation, {}};
  if (name == "ipw") return {EstimatorTag::ipw, {}};
  if (name == "triply_robust") return {EstimatorTag::triply_robust, {}};
  if (name == "edge_g_plugin" || name == "edge_g") return {EstimatorTag::edge_g_plugin, {}};
  if (name == "closed_form_linear_nde") return closed_form(ClosedFormVariant::linear_nde);
  if (name == "closed_form_logistic_or_nde") return closed_form(ClosedFormVariant::logistic_or_nde);
  if (name == "closed_form_chain_or_pse") return closed_form(ClosedFormVariant::chain_or_pse);
  throw ValidationError("unknown estimator '" + name + "'");
}

EffectScale estimator_scale(const EstimatorKind& kind) {
  if (kind.tag == EstimatorTag::closed_form &&
      (*kind.variant == ClosedFormVariant::logistic_or_nde ||
       *kind.variant == ClosedFormVariant::chain_or_pse))
    return EffectScale::odds_ratio;
  return EffectScale::mean_difference;
}

double counterfactual_mean_adjustment(const FittedGlm& y_model, const Dataset& data,
                                      const std::string& treatment, double a) {
  const auto predictors = y_model.spec.predictor_columns();
  if (std::find(predictors.begin(), predictors.end(), treatment) == predictors.end())
    throw ValidationError("treatment '" + treatment + "' is not a predictor of the outcome model");
  const Eigen::VectorXd mu =
      predict_mean(y_model, design_matrix(data, y_model.spec, {{treatment, a}}));
  std::vector<double> rows(mu.data(), mu.data() + mu.size());
  return pairwise_sum(rows) / static_cast<double>(mu.size());
}

EstimateReport nde_plugin(const FittedGlm& y_model, const FittedGlm& m_model,
                          const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc) {
  check_scale(spec, {EstimatorTag::plugin_mediation, {}});
  DesignCache cache(data);
  auto rows = plugin_rows(PluginTarget::nde, y_model, m_model, spec, cache, mc);
  return report_from_rows(rows, EstimatorTag::plugin_mediation,
                          {m_model.spec.response, spec.outcome});
}

EstimateReport nie_plugin(const FittedGlm& y_model, const FittedGlm& m_model,
                          const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc) {
  check_scale(spec, {EstimatorTag::plugin_mediation, {}});
  DesignCache cache(data);
  auto rows = plugin_rows(PluginTarget::nie, y_model, m_model, spec, cache, mc);
  return report_from_rows(rows, EstimatorTag::plugin_mediation,
                          {m_model.spec.response, spec.outcome});
}

EstimateReport ace_plugin(const FittedGlm& y_model, const FittedGlm& m_model,
                          const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc) {
  check_scale(spec, {EstimatorTag::plugin_mediation, {}});
  DesignCache cache(data);
  auto rows = plugin_rows(PluginTarget::ace, y_model, m_model, spec, cache, mc);
  return report_from_rows(rows, EstimatorTag::plugin_mediation,
                          {m_model.spec.response, spec.outcome});
}

EstimateReport nde_ipw(const FittedGlm& a_model, const FittedGlm& m_model,
                       const Dataset& data, const PseSpec& spec) {
  check_scale(spec, {EstimatorTag::ipw, {}});
  DesignCache cache(data);
  auto rows = ipw_rows(a_model, m_model, spec, cache);
  return report_from_rows(rows, EstimatorTag::ipw, {spec.treatment, m_model.spec.response});
}

EstimateReport nde_triply_robust(const FittedGlm& a_model, const FittedGlm& m_model,
                                 const FittedGlm& y_model, const Dataset& data,
                                 const PseSpec& spec, const std::optional<McConfig>& mc) {
  check_scale(spec, {EstimatorTag::triply_robust, {}});
  DesignCache cache(data);
  auto parts = tr_rows(a_model, m_model, y_model, spec, cache, mc);
  auto rep = report_from_rows(parts.rows, EstimatorTag::triply_robust,
                              {spec.treatment, m_model.spec.response, spec.outcome});
  rep.diagnostics["eta_active_baseline_mean"] = parts.eta_ab_mean;
  rep.diagnostics["eta_baseline_baseline_mean"] = parts.eta_bb_mean;
  return rep;
}

EstimateReport pse_edge_g(const ModelSet& models, const Dataset& data, const PseSpec& spec,
                          const std::optional<McConfig>& mc) {
  check_scale(spec, {EstimatorTag::edge_g_plugin, {}});
  DesignCache cache(data);
  std::vector<std::string> meds;
  auto rows = edge_g_rows(models, spec, cache, mc, &meds);
  meds.push_back(spec.outcome);
  return report_from_rows(rows, EstimatorTag::edge_g_plugin, std::move(meds));
}

EstimateReport pse_closed_form(const ModelSet& models, const PseSpec& spec,
                               ClosedFormVariant variant, const Dataset* data) {
  const EstimatorKind kind = EstimatorKind::closed_form(variant);
  check_scale(spec, kind);
  if (!models.count(spec.outcome))
    throw ValidationError("closed form needs a model of the outcome '" + spec.outcome + "'");
  const FittedGlm& y_model = models.at(spec.outcome);
  const double delta = spec.active_value - spec.baseline_value;

  EstimateReport rep;
  rep.estimator = kind;
  rep.scale = estimator_scale(kind);
  rep.n = data ? data->n_rows() : y_model.n_train;

  switch (variant) {
    case ClosedFormVariant::linear_nde: {
      if (y_model.spec.family != Family::gaussian_identity)
        throw ValidationError("linear_nde closed form needs a gaussian outcome model");
      forbid_treatment_interactions(y_model, spec.treatment);
      rep.value = y_model.coefficient(spec.treatment) * delta;
      rep.models_used = {spec.outcome};
      break;
    }
    case ClosedFormVariant::logistic_or_nde: {
      if (y_model.spec.family != Family::bernoulli_logit)
        throw ValidationError("logistic_or_nde closed form needs a logit outcome model");
      forbid_treatment_interactions(y_model, spec.treatment);
      for (const auto& [name, model] : models)
        if (name != spec.outcome && name != spec.treatment &&
            model.spec.family != Family::gaussian_identity)
          throw ValidationError("logistic_or_nde assumes gaussian mediator models");
      rep.value = std::exp(y_model.coefficient(spec.treatment) * delta);
      rep.models_used = {spec.outcome};
      break;
    }
    case ClosedFormVariant::chain_or_pse: {
      if (y_model.spec.family != Family::bernoulli_logit)
        throw ValidationError("chain_or_pse closed form needs a logit outcome model");
      forbid_any_interactions(y_model);
      for (const auto& [name, model] : models) {
        if (name == spec.outcome || name == spec.treatment) continue;
        if (model.spec.family != Family::gaussian_identity)
          throw ValidationError("chain_or_pse assumes gaussian mediator models");
        forbid_any_interactions(model);
      }
      // Sum over disallowed paths of the product of edge coefficients,
      // reading the coefficient of u in the model of v for each edge u -> v.
      double exponent = 0.0;
      std::set<std::string> used{spec.outcome};
      for (const auto& path : spec.disallowed_paths) {
        double prod = 1.0;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
          const std::string& tail = path[i];
          const std::string& head = path[i + 1];
          if (!models.count(head))
            throw ValidationError("chain closed form needs a model of '" + head + "'");
          prod *= models.at(head).coefficient(tail);
          if (head != spec.outcome) used.insert(head);
        }
        exponent += prod;
      }
      rep.value = std::exp(exponent * delta);
      rep.models_used.assign(used.begin(), used.end());
      rep.diagnostics["exponent"] = exponent * delta;
      break;
    }
  }

  if (rep.scale == EffectScale::odds_ratio && data && data->has_column(spec.outcome)) {
    const double prevalence = data->col(spec.outcome).mean();
    if (prevalence > 0.10)
      rep.warnings.push_back("outcome prevalence " + fmt(prevalence) +
                             " exceeds 10%; the odds-ratio closed form assumes a rare outcome");
  }
  return rep;
}

namespace {

const FittedGlm& need_model(const ModelSet& models, const std::string& v,
                            const EstimatorKind& kind) {
  auto it = models.find(v);
  if (it == models.end())
    throw ValidationError("estimator " + kind.name() + " needs a model of '" + v + "'");
  return it->second;
}

const FittedGlm& single_mediator_model(const ModelSet& models, const PseSpec& spec,
                                       const EstimatorKind& kind) {
  const FittedGlm* found = nullptr;
  for (const auto& [name, model] : models) {
    if (name == spec.outcome || name == spec.treatment) continue;
    if (found) throw ValidationError(kind.name() + " expects exactly one mediator model");
    found = &model;
  }
  if (!found) throw ValidationError(kind.name() + " needs a mediator model");
  return *found;
}

}  // namespace

EstimateReport estimate_pse(const EstimatorKind& kind, const ModelSet& models,
                            const Dataset& data, const PseSpec& spec,
                            const std::optional<McConfig>& mc) {
  switch (kind.tag) {
    case EstimatorTag::plugin_mediation:
      return nde_plugin(need_model(models, spec.outcome, kind),
                        single_mediator_model(models, spec, kind), data, spec, mc);
    case EstimatorTag::ipw:
      return nde_ipw(need_model(models, spec.treatment, kind),
                     single_mediator_model(models, spec, kind), data, spec);
    case EstimatorTag::triply_robust:
      return nde_triply_robust(need_model(models, spec.treatment, kind),
                               single_mediator_model(models, spec, kind),
                               need_model(models, spec.outcome, kind), data, spec, mc);
    case EstimatorTag::edge_g_plugin: {
      ModelSet without_a = models;
      without_a.erase(spec.treatment);
      return pse_edge_g(without_a, data, spec, mc);
    }
    case EstimatorTag::closed_form:
      return pse_closed_form(models, spec, *kind.variant, &data);
  }
  throw ValidationError("unknown estimator");
}

std::vector<std::string> models_in_g(const EstimatorKind& kind, const CausalGraph& graph,
                                     const PseSpec& spec) {
  const auto meds = mediators_of(graph, spec);
  auto require_single = [&]() {
    if (meds.size() != 1)
      throw ValidationError(kind.name() + " handles a single mediator; graph has " +
                            std::to_string(meds.size()));
  };
  switch (kind.tag) {
    case EstimatorTag::plugin_mediation:
      require_single();
      return {meds[0], spec.outcome};
    case EstimatorTag::ipw:
      require_single();
      return {spec.treatment, meds[0]};
    case EstimatorTag::triply_robust:
      require_single();
      return {spec.treatment, meds[0], spec.outcome};
    case EstimatorTag::edge_g_plugin: {
      std::vector<std::string> out = meds;
      out.push_back(spec.outcome);
      return out;
    }
    case EstimatorTag::closed_form: {
      if (*kind.variant == ClosedFormVariant::chain_or_pse) {
        std::set<std::string> on_paths;
        for (const auto& p : spec.disallowed_paths)
          for (const auto& v : p) on_paths.insert(v);
        std::vector<std::string> out;
        for (const auto& v : meds)
          if (on_paths.count(v)) out.push_back(v);
        out.push_back(spec.outcome);
        return out;
      }
      return {spec.outcome};
    }
  }
  throw ValidationError("unknown estimator");
}

struct PinnedEstimator::Impl {
  EstimatorKind kind;
  const Dataset& data;
  PseSpec spec;
  std::optional<McConfig> mc;
  mutable DesignCache cache;

  Impl(const EstimatorKind& k, const Dataset& d, const PseSpec& s,
       const std::optional<McConfig>& m)
      : kind(k), data(d), spec(s), mc(m), cache(d) {}
};

PinnedEstimator::PinnedEstimator(const EstimatorKind& kind, const Dataset& data,
                                 const PseSpec& spec, const std::optional<McConfig>& mc)
    : impl_(std::make_unique<Impl>(kind, data, spec, mc)) {}

PinnedEstimator::~PinnedEstimator() = default;
PinnedEstimator::PinnedEstimator(PinnedEstimator&&) noexcept = default;

double PinnedEstimator::value(const ModelSet& models) const {
  const PseSpec& spec = impl_->spec;
  const EstimatorKind& kind = impl_->kind;
  DesignCache& cache = impl_->cache;
  switch (kind.tag) {
    case EstimatorTag::plugin_mediation: {
      auto rows = plugin_rows(PluginTarget::nde, need_model(models, spec.outcome, kind),
                              single_mediator_model(models, spec, kind), spec, cache, impl_->mc);
      return pairwise_sum(rows) / static_cast<double>(rows.size());
    }
    case EstimatorTag::ipw: {
      auto rows = ipw_rows(need_model(models, spec.treatment, kind),
                           single_mediator_model(models, spec, kind), spec, cache);
      return pairwise_sum(rows) / static_cast<double>(rows.size());
    }
    case EstimatorTag::triply_robust: {
      auto parts = tr_rows(need_model(models, spec.treatment, kind),
                           single_mediator_model(models, spec, kind),
                           need_model(models, spec.outcome, kind), spec, cache, impl_->mc);
      return pairwise_sum(parts.rows) / static_cast<double>(parts.rows.size());
    }
    case EstimatorTag::edge_g_plugin: {
      ModelSet without_a = models;
      without_a.erase(spec.treatment);
      auto rows = edge_g_rows(without_a, spec, cache, impl_->mc);
      return pairwise_sum(rows) / static_cast<double>(rows.size());
    }
    case EstimatorTag::closed_form:
      return pse_closed_form(models, spec, *kind.variant, &impl_->data).value;
  }
  throw ValidationError("unknown estimator");
}

Eigen::VectorXd PinnedEstimator::gradient(const ModelSet& models,
                                          const std::vector<std::string>& order) const {
  const PseSpec& spec = impl_->spec;
  const EstimatorKind& kind = impl_->kind;
  DesignCache& cache = impl_->cache;

  GradMap grads;
  switch (kind.tag) {
    case EstimatorTag::plugin_mediation: {
      const FittedGlm& m = single_mediator_model(models, spec, kind);
      if (!mediator_is_exact(m)) return {};
      grads = plugin_nde_gradient(need_model(models, spec.outcome, kind), m, spec, cache);
      break;
    }
    case EstimatorTag::ipw: {
      const FittedGlm& m = single_mediator_model(models, spec, kind);
      if (!mediator_is_exact(m)) return {};
      grads = ipw_gradient(need_model(models, spec.treatment, kind), m, spec, cache);
      break;
    }
    case EstimatorTag::triply_robust: {
      const FittedGlm& m = single_mediator_model(models, spec, kind);
      if (!mediator_is_exact(m)) return {};
      grads = tr_gradient(need_model(models, spec.treatment, kind), m,
                          need_model(models, spec.outcome, kind), spec, cache);
      break;
    }
    case EstimatorTag::edge_g_plugin:
      return {};
    case EstimatorTag::closed_form: {
      const FittedGlm& y = need_model(models, spec.outcome, kind);
      const double delta = spec.active_value - spec.baseline_value;
      switch (*kind.variant) {
        case ClosedFormVariant::linear_nde: {
          Eigen::VectorXd gy = Eigen::VectorXd::Zero(y.coefficients.size());
          gy[1 + y.term_index(Term({spec.treatment}))] = delta;
          grads[spec.outcome] = gy;
          break;
        }
        case ClosedFormVariant::logistic_or_nde: {
          const double value = std::exp(y.coefficient(spec.treatment) * delta);
          Eigen::VectorXd gy = Eigen::VectorXd::Zero(y.coefficients.size());
          gy[1 + y.term_index(Term({spec.treatment}))] = delta * value;
          grads[spec.outcome] = gy;
          break;
        }
        case ClosedFormVariant::chain_or_pse: {
          const double value = pse_closed_form(models, spec, *kind.variant, nullptr).value;
          grads = chain_gradient(models, spec, value);
          break;
        }
      }
      break;
    }
  }

  Eigen::Index total = 0;
  for (const auto& name : order) total += models.at(name).coefficients.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(total);
  Eigen::Index pos = 0;
  for (const auto& name : order) {
    const Eigen::Index sz = models.at(name).coefficients.size();
    auto it = grads.find(name);
    if (it != grads.end()) out.segment(pos, sz) = it->second;
    pos += sz;
  }
  return out;
}

}  // namespace fairpse
