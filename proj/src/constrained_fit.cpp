#include "fairpse/constrained_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fairpse/errors.hpp"
#include "fairpse/fair_predict.hpp"
#include "fairpse/rng.hpp"

namespace fairpse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log1pexp(double eta) {
  if (eta > 35.0) return eta;
  if (eta < -35.0) return std::exp(eta);
  return std::log1p(std::exp(eta));
}

// One constrained model's slice of the concatenated coefficient vector.
struct GlmBlock {
  std::string name;
  ModelSpec spec;
  Family family;
  Eigen::MatrixXd X;    // observed design
  Eigen::MatrixXd XtX;  // cached for the gaussian curvature
  Eigen::VectorXd y;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

// Gaussian dispersions are profiled out: the likelihood below is the exact
// maximum over sigma^2 at the given coefficients.
double block_loglik(const GlmBlock& b, const Eigen::VectorXd& beta) {
  const Eigen::Index n = b.y.size();
  const Eigen::VectorXd eta = b.X * beta;
  if (b.family == Family::gaussian_identity) {
    const double rss = std::max((b.y - eta).squaredNorm(), 1e-300);
    return -0.5 * static_cast<double>(n) *
           (std::log(2.0 * std::numbers::pi * rss / static_cast<double>(n)) + 1.0);
  }
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) ll += b.y[i] * eta[i] - log1pexp(eta[i]);
  return ll;
}

Eigen::VectorXd block_loglik_grad(const GlmBlock& b, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = b.X * beta;
  if (b.family == Family::gaussian_identity) {
    const Eigen::VectorXd r = b.y - eta;
    const double rss = std::max(r.squaredNorm(), 1e-300);
    return (static_cast<double>(b.y.size()) / rss) * (b.X.transpose() * r);
  }
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu[i] = expit(eta[i]);
  return b.X.transpose() * (b.y - mu);
}

struct InnerResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
};

// Damped Newton with Armijo backtracking and Levenberg-style adaptation.
// The model Hessian (Gauss-Newton log-likelihood curvature plus the
// penalty's rank-one term) omits the multiplier-weighted constraint
// curvature, so full steps can overshoot; growing the damping on any step
// that fails to shrink either the value or the gradient restores progress.
// Within rounding noise of f the Armijo decrease is unmeasurable and steps
// are judged by the (exact) gradient norm instead. Objectives returning
// +inf (positivity violations inside an estimator) are out-of-bounds trial
// points.
template <typename Value, typename ValueGradHess>
InnerResult newton_minimize(const Value& value, const ValueGradHess& value_grad_hess,
                            Eigen::VectorXd x, double tol, int max_iter) {
  const Eigen::Index dim = x.size();
  double f = 0.0;
  Eigen::VectorXd g(dim);
  Eigen::MatrixXd H(dim, dim);
  value_grad_hess(x, f, g, H);

  InnerResult res;
  double tau = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter + 1;
    if (g.lpNorm<Eigen::Infinity>() <= tol) break;

    const double tau_floor = 1e-8 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
    Eigen::VectorXd d;
    bool descent = false;
    for (int damp = 0; damp < 60 && !descent; ++damp) {
      Eigen::MatrixXd Hd = H;
      if (tau > 0.0) Hd.diagonal().array() += tau;
      d = Hd.ldlt().solve(-g);
      descent = d.dot(g) < 0.0 && d.allFinite();
      if (!descent) tau = std::max(tau * 10.0, tau_floor);
    }
    if (!descent) break;

    double t = 1.0;
    double f_new = kInf;
    Eigen::VectorXd x_new;
    const double slope = g.dot(d);
    const double f_noise = 1e-12 * (1.0 + std::abs(f));
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + t * d;
      f_new = value(x_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope + f_noise) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      tau = std::max(tau * 10.0, tau_floor);
      if (tau > 1e15 * tau_floor) break;
      continue;
    }

    double f_next = 0.0;
    Eigen::VectorXd g_next(dim);
    Eigen::MatrixXd H_next(dim, dim);
    value_grad_hess(x_new, f_next, g_next, H_next);

    const bool in_noise = f_next > f - 16.0 * f_noise;
    if (in_noise && g_next.lpNorm<Eigen::Infinity>() > 0.99 * g.lpNorm<Eigen::Infinity>()) {
      // No measurable decrease and the gradient did not shrink: the local
      // model is off. Damp harder and retry from the same point.
      tau = std::max(tau * 10.0, tau_floor);
      if (tau > 1e15 * tau_floor) break;
      continue;
    }

    x = std::move(x_new);
    f = f_next;
    g = std::move(g_next);
    H = std::move(H_next);
    tau *= 0.25;
    if (tau < tau_floor) tau = 0.0;
  }
  res.x = x;
  res.f = f;
  res.grad = g;
  return res;
}

struct Problem {
  std::vector<GlmBlock> blocks;
  std::vector<std::string> g_order;  // block layout, for analytic gradients
  Eigen::Index dim = 0;
  PinnedEstimator pinned;
  ModelSet base_models;  // includes the models g never touches
  const Dataset& data;
  bool log_scale = false;
  double lo = 0.0, hi = 0.0;
  // Closed-form constraint gradient slot, when the constraint is one
  // coefficient of one model (the box-eligible cases).
  int linear_slot = -1;
  double linear_scale = 1.0;
  double fd_step = 1e-6;

  Problem(const EstimatorKind& kind, const Dataset& d, const PseSpec& spec,
          const std::optional<McConfig>& mc)
      : pinned(kind, d, spec, mc), data(d) {}

  Eigen::VectorXd pack(const ModelSet& models) const {
    Eigen::VectorXd alpha(dim);
    for (const auto& b : blocks) alpha.segment(b.offset, b.size) = models.at(b.name).coefficients;
    return alpha;
  }

  ModelSet unpack(const Eigen::VectorXd& alpha) const {
    ModelSet models = base_models;
    for (const auto& b : blocks) {
      FittedGlm& m = models[b.name];
      m.coefficients = alpha.segment(b.offset, b.size);
      if (b.family == Family::gaussian_identity) {
        const double rss = (b.y - b.X * m.coefficients).squaredNorm();
        m.dispersion = std::max(rss / static_cast<double>(b.y.size()),
                                std::numeric_limits<double>::min());
      }
    }
    return models;
  }

  double neg_loglik(const Eigen::VectorXd& alpha) const {
    double total = 0.0;
    for (const auto& b : blocks) total += block_loglik(b, alpha.segment(b.offset, b.size));
    return -total;
  }

  Eigen::VectorXd neg_loglik_grad(const Eigen::VectorXd& alpha) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (const auto& b : blocks)
      g.segment(b.offset, b.size) = -block_loglik_grad(b, alpha.segment(b.offset, b.size));
    return g;
  }

  // Gauss-Newton curvature of -loglik, block diagonal and positive definite.
  Eigen::MatrixXd neg_loglik_curvature(const Eigen::VectorXd& alpha) const {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& b : blocks) {
      const Eigen::VectorXd eta = b.X * alpha.segment(b.offset, b.size);
      if (b.family == Family::gaussian_identity) {
        const double rss = std::max((b.y - eta).squaredNorm(), 1e-300);
        H.block(b.offset, b.offset, b.size, b.size) =
            (static_cast<double>(b.y.size()) / rss) * b.XtX;
      } else {
        Eigen::VectorXd w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
          const double mu = expit(eta[i]);
          w[i] = mu * (1.0 - mu);
        }
        H.block(b.offset, b.offset, b.size, b.size) =
            b.X.transpose() * w.asDiagonal() * b.X;
      }
    }
    return H;
  }

  // Constraint value on the solver scale (log for odds ratios). NaN flags an
  // estimator-domain violation; the line search backs off from those.
  double constraint(const Eigen::VectorXd& alpha) const {
    double v;
    try {
      v = pinned.value(unpack(alpha));
    } catch (const PositivityError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    if (log_scale) {
      if (!(v > 0.0)) return std::numeric_limits<double>::quiet_NaN();
      return std::log(v);
    }
    return v;
  }

  Eigen::VectorXd constraint_grad(const Eigen::VectorXd& alpha) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    if (linear_slot >= 0) {
      g[linear_slot] = linear_scale;
      return g;
    }
    const ModelSet models = unpack(alpha);
    Eigen::VectorXd analytic = pinned.gradient(models, g_order);
    if (analytic.size() == dim) {
      if (log_scale) return Eigen::VectorXd(analytic / pinned.value(models));
      return analytic;
    }
    // Central finite differences for estimators without a closed-form
    // gradient (Monte Carlo mediators, edge-g products).
    Eigen::VectorXd x = alpha;
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double h = fd_step * (1.0 + std::abs(alpha[j]));
      x[j] = alpha[j] + h;
      const double up = constraint(x);
      x[j] = alpha[j] - h;
      const double dn = constraint(x);
      x[j] = alpha[j];
      g[j] = (up - dn) / (2.0 * h);
    }
    return g;
  }
};

struct Multipliers {
  bool equality = false;
  double eq = 0.0;
  double up = 0.0;
  double lo = 0.0;
};

// Powell-Hestenes-Rockafellar augmented Lagrangian terms.
double al_penalty(const Problem& p, double G, const Multipliers& m, double mu) {
  if (std::isnan(G)) return kInf;
  if (m.equality) {
    const double h = G - p.lo;
    return m.eq * h + 0.5 * mu * h * h;
  }
  const double tu = std::max(0.0, m.up + mu * (G - p.hi));
  const double tl = std::max(0.0, m.lo + mu * (p.lo - G));
  return (tu * tu - m.up * m.up + tl * tl - m.lo * m.lo) / (2.0 * mu);
}

double al_penalty_slope(const Problem& p, double G, const Multipliers& m, double mu) {
  if (m.equality) return m.eq + mu * (G - p.lo);
  const double tu = std::max(0.0, m.up + mu * (G - p.hi));
  const double tl = std::max(0.0, m.lo + mu * (p.lo - G));
  return tu - tl;
}

double al_penalty_curvature(const Problem& p, double G, const Multipliers& m, double mu) {
  if (m.equality) return mu;
  double c = 0.0;
  if (m.up + mu * (G - p.hi) > 0.0) c += mu;
  if (m.lo + mu * (p.lo - G) > 0.0) c += mu;
  return c;
}

}  // namespace

void validate_bounds(const Bounds& bounds) {
  if (!(bounds.lower <= bounds.upper))
    throw ValidationError("bounds must satisfy lower <= upper");
  if (bounds.scale == EffectScale::odds_ratio && !(bounds.lower > 0.0))
    throw ValidationError("odds-ratio bounds must be strictly positive");
  if (!std::isfinite(bounds.lower) || !std::isfinite(bounds.upper))
    throw ValidationError("bounds must be finite");
}

double evaluate_pse(const FairFitResult& fit, const Dataset& data) {
  return estimate_pse(fit.estimator, fit.constrained_models, data, fit.spec, fit.mc).value;
}

double g_models_loglik(const FairFitResult& fit, const Dataset& data) {
  double total = 0.0;
  for (const auto& name : fit.g_model_names)
    total += log_likelihood(fit.constrained_models.at(name), data);
  return total;
}

FairFitResult fit_fair(const Dataset& data, const CausalGraph& graph, const PseSpec& spec,
                       const EstimatorKind& estimator, const std::vector<ModelSpec>& model_specs,
                       const Bounds& bounds, const SolverOptions& options) {
  validate_graph(graph);
  validate_pse_spec(graph, spec);
  validate_bounds(bounds);
  if (bounds.scale != spec.scale)
    throw ValidationError("bounds scale and spec scale disagree");

  const IdVerdict verdict = check_identification(graph, spec);
  if (verdict.status != IdStatus::identified)
    throw NotIdentifiedError("refusing to fit a non-identified path-specific effect: " +
                                 verdict.reason,
                             verdict.witness);

  FairFitResult result;
  result.estimator = estimator;
  result.spec = spec;
  result.bounds = bounds;
  result.mc = options.mc;
  result.g_model_names = models_in_g(estimator, graph, spec);
  result.w_set = select_w(estimator, graph, spec);

  // Unconstrained MLE of everything. Models outside g stay at their MLE.
  ModelSet models;
  for (const auto& ms : model_specs) {
    if (models.count(ms.response))
      throw ValidationError("two model specs for '" + ms.response + "'");
    models[ms.response] = fit_glm(data, ms);
  }
  for (const auto& name : result.g_model_names)
    if (!models.count(name))
      throw ValidationError("estimator " + estimator.name() + " needs a model spec for '" +
                            name + "'");

  Problem prob(estimator, data, spec, options.mc);
  prob.base_models = models;
  prob.fd_step = options.fd_step;
  prob.g_order = result.g_model_names;
  for (const auto& name : result.g_model_names) {
    GlmBlock b;
    b.name = name;
    b.spec = models.at(name).spec;
    b.family = b.spec.family;
    b.X = design_matrix(data, b.spec);
    b.XtX = b.X.transpose() * b.X;
    b.y = data.col(name);
    b.offset = prob.dim;
    b.size = b.spec.n_coefficients();
    prob.dim += b.size;
    prob.blocks.push_back(std::move(b));
  }

  prob.log_scale = bounds.scale == EffectScale::odds_ratio;
  prob.lo = prob.log_scale ? std::log(bounds.lower) : bounds.lower;
  prob.hi = prob.log_scale ? std::log(bounds.upper) : bounds.upper;

  const bool box_eligible =
      estimator.tag == EstimatorTag::closed_form &&
      (*estimator.variant == ClosedFormVariant::linear_nde ||
       *estimator.variant == ClosedFormVariant::logistic_or_nde);

  if (box_eligible) {
    // On the solver scale both closed forms are linear in one coefficient:
    // G = beta_a * (active - baseline) (log-odds for the logistic case).
    const FittedGlm& y0 = models.at(spec.outcome);
    const int slot = y0.term_index(Term({spec.treatment}));
    if (slot >= 0) {
      for (const auto& b : prob.blocks)
        if (b.name == spec.outcome)
          prob.linear_slot = static_cast<int>(b.offset) + 1 + slot;
      prob.linear_scale = spec.active_value - spec.baseline_value;
    }
  }

  Eigen::VectorXd alpha = prob.pack(models);
  result.loglik_unconstrained = -prob.neg_loglik(alpha);

  const double g0 = prob.pinned.value(models);
  const double G0 = prob.log_scale ? std::log(g0) : g0;

  auto finalize = [&](ModelSet final_models, SolverInfo info) {
    result.achieved_pse = estimate_pse(estimator, final_models, data, spec, options.mc).value;
    result.constrained_models = std::move(final_models);
    result.loglik_constrained = -prob.neg_loglik(prob.pack(result.constrained_models));
    if (bounds.scale == EffectScale::odds_ratio)
      info.feasible = result.achieved_pse >= bounds.lower * (1.0 - kFeasibilityTol) &&
                      result.achieved_pse <= bounds.upper * (1.0 + kFeasibilityTol);
    else
      info.feasible = result.achieved_pse >= bounds.lower - kFeasibilityTol &&
                      result.achieved_pse <= bounds.upper + kFeasibilityTol;
    result.solver = std::move(info);
    return result;
  };

  const bool use_box = box_eligible && !options.force_general && prob.linear_slot >= 0;

  if (G0 >= prob.lo && G0 <= prob.hi) {
    SolverInfo info;
    info.strategy = use_box ? "box" : "augmented_lagrangian";
    info.iterations = 0;
    info.kkt_residual = prob.neg_loglik_grad(alpha).lpNorm<Eigen::Infinity>();
    info.constraint_violation = 0.0;
    return finalize(models, info);
  }

  if (use_box) {
    // Clamp the treatment coefficient into the interval, refit the rest with
    // it held fixed. Interval endpoints live on the raw coefficient scale.
    double c_lo = prob.lo / prob.linear_scale;
    double c_hi = prob.hi / prob.linear_scale;
    if (c_lo > c_hi) std::swap(c_lo, c_hi);
    const FittedGlm& y0 = models.at(spec.outcome);
    const Eigen::Index coef_idx = 1 + y0.term_index(Term({spec.treatment}));
    const double clamped = std::clamp(y0.coefficients[coef_idx], c_lo, c_hi);
    ModelSet final_models = models;
    final_models[spec.outcome] = fit_glm_fixed(data, y0.spec, {{coef_idx, clamped}});

    SolverInfo info;
    info.strategy = "box";
    info.iterations = 1;
    Eigen::VectorXd grad = prob.neg_loglik_grad(prob.pack(final_models));
    grad[prob.linear_slot] = 0.0;  // fixed coordinate
    info.kkt_residual = grad.lpNorm<Eigen::Infinity>();
    info.constraint_violation = 0.0;
    return finalize(std::move(final_models), info);
  }

  // Augmented Lagrangian over the concatenated coefficients.
  Multipliers mult;
  mult.equality = prob.lo == prob.hi;
  double mu = options.penalty_init;
  double omega = 1e-1;  // inner stationarity target, tightened per outer round
  double eta = 1e-2;    // violation target, tightened per outer round

  auto al_value = [&](const Eigen::VectorXd& x) {
    const double G = prob.constraint(x);
    const double pen = al_penalty(prob, G, mult, mu);
    if (!std::isfinite(pen)) return kInf;
    return prob.neg_loglik(x) + pen;
  };
  // Gradient and curvature once per iterate; the line search reuses values.
  auto al_value_grad_hess = [&](const Eigen::VectorXd& x, double& f, Eigen::VectorXd& g,
                                Eigen::MatrixXd& H) {
    const double G = prob.constraint(x);
    f = prob.neg_loglik(x) + al_penalty(prob, G, mult, mu);
    const Eigen::VectorXd Gg = prob.constraint_grad(x);
    g = prob.neg_loglik_grad(x);
    g += al_penalty_slope(prob, G, mult, mu) * Gg;
    H = prob.neg_loglik_curvature(x);
    H += al_penalty_curvature(prob, G, mult, mu) * (Gg * Gg.transpose());
  };

  SolverInfo info;
  info.strategy = "augmented_lagrangian";
  double stationarity = kInf;
  double viol = kInf;
  double viol_prev = kInf;
  for (int outer = 1; outer <= options.max_outer; ++outer) {
    info.iterations = outer;
    const InnerResult inner =
        newton_minimize(al_value, al_value_grad_hess, alpha,
                        std::max(omega, options.tol_stationarity), options.max_inner);
    alpha = inner.x;
    stationarity = inner.grad.lpNorm<Eigen::Infinity>();
    const double G = prob.constraint(alpha);
    viol = mult.equality ? std::abs(G - prob.lo)
                         : std::max({0.0, G - prob.hi, prob.lo - G});

    if (viol <= std::max(eta, options.tol_constraint)) {
      if (mult.equality) {
        mult.eq += mu * (G - prob.lo);
      } else {
        mult.up = std::max(0.0, mult.up + mu * (G - prob.hi));
        mult.lo = std::max(0.0, mult.lo + mu * (prob.lo - G));
      }
      const double slope = mult.equality ? mult.eq : mult.up - mult.lo;
      Eigen::VectorXd lag_grad = prob.neg_loglik_grad(alpha);
      lag_grad += slope * prob.constraint_grad(alpha);
      stationarity = lag_grad.lpNorm<Eigen::Infinity>();
      // Distance to whichever boundary carries a positive multiplier. The
      // log-likelihood is first-order sensitive to it (rate = multiplier),
      // so squeeze it to the machine floor rather than settling at the
      // feasibility tolerance.
      double gap = 0.0;
      if (mult.equality)
        gap = std::abs(G - prob.lo);
      else {
        if (mult.up > 0.0) gap = std::max(gap, std::abs(G - prob.hi));
        if (mult.lo > 0.0) gap = std::max(gap, std::abs(G - prob.lo));
      }
      if (viol <= options.tol_constraint && stationarity <= options.tol_stationarity) {
        if (gap <= 1e-12 * (1.0 + std::abs(G)) || mu >= 1e10) break;
        if (gap > 0.25 * viol_prev) mu *= options.penalty_growth;
      }
      viol_prev = gap;
      omega = std::max(omega * 0.2, options.tol_stationarity * 0.5);
      eta = std::max(eta * 0.2, options.tol_constraint * 0.5);
    } else {
      mu *= options.penalty_growth;
    }
  }
  info.kkt_residual = stationarity;
  info.constraint_violation = viol;
  return finalize(prob.unpack(alpha), info);
}

SelectionResult select_outcome_model(const std::vector<ModelSpec>& candidates,
                                     const Dataset& train, const Dataset& validate,
                                     const ModelSpec& a_spec, const ModelSpec& m_spec,
                                     const CausalGraph& graph, const PseSpec& spec,
                                     const EstimatorKind& estimator, const Bounds& bounds,
                                     const SolverOptions& options) {
  if (candidates.empty()) throw ValidationError("empty outcome-model candidate list");
  if (estimator.tag != EstimatorTag::triply_robust && estimator.tag != EstimatorTag::ipw)
    throw ValidationError("outcome-model selection needs an estimator robust to outcome "
                          "misspecification (triply_robust or ipw)");

  SelectionResult sel;
  bool have_choice = false;
  std::size_t chosen_idx = 0;

  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const std::vector<ModelSpec> specs{a_spec, m_spec, candidates[c]};
    FairFitResult fit = fit_fair(train, graph, spec, estimator, specs, bounds, options);

    ModelSet mle;
    for (const auto& ms : specs) mle[ms.response] = fit_glm(train, ms);
    const double unconstrained =
        estimate_pse(estimator, mle, train, spec, options.mc).value;

    Marginalization marg;
    if (options.mc) {
      marg.draws = options.mc->draws;
      marg.seed = options.mc->seed;
    }
    FairPredictor predictor(fit, marg);
    const BatchPredictResult batch = predictor.batch_predict(validate);
    if (!batch.rmse)
      throw ValidationError("validation split lacks the outcome column '" + spec.outcome + "'");

    CandidateReport rep;
    rep.spec = candidates[c];
    rep.rmse = *batch.rmse;
    rep.unconstrained_pse = unconstrained;
    rep.achieved_pse = fit.achieved_pse;
    rep.feasible = fit.solver.feasible;
    sel.reports.push_back(rep);

    const auto key = std::make_tuple(rep.rmse, candidates[c].terms.size(),
                                     candidates[c].formula());
    const auto best = have_choice
                          ? std::make_tuple(sel.rmse, candidates[chosen_idx].terms.size(),
                                            candidates[chosen_idx].formula())
                          : key;
    if (!have_choice || key < best) {
      have_choice = true;
      chosen_idx = c;
      sel.chosen = candidates[c];
      sel.rmse = rep.rmse;
      sel.fit = std::move(fit);
    }
  }
  return sel;
}

}  // namespace fairpse
