#include "fairpse/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fairpse/errors.hpp"
#include "fairpse/rng.hpp"

namespace fairpse {

std::vector<std::string> Sem::vertex_order() const {
  std::vector<std::string> out;
  for (const auto& eq : equations)
    for (const auto& v : eq.vertices) out.push_back(v);
  return out;
}

CausalGraph Sem::graph() const {
  CausalGraph g;
  g.vertices = vertex_order();
  std::set<std::pair<std::string, std::string>> edges;
  for (const auto& eq : equations) {
    std::set<std::string> parents;
    for (const auto& [term, coeff] : eq.terms)
      for (const auto& f : term.factors) parents.insert(f);
    for (const auto& child : eq.vertices)
      for (const auto& p : parents)
        if (edges.insert({p, child}).second) g.directed_edges.push_back({p, child});
  }
  return g;
}

void validate_sem(const Sem& sem) {
  std::set<std::string> declared;
  for (const auto& eq : sem.equations) {
    if (eq.vertices.empty()) throw ValidationError("SEM equation declares no vertex");
    for (const auto& [term, coeff] : eq.terms)
      for (const auto& f : term.factors)
        if (!declared.count(f))
          throw ValidationError("SEM equation for '" + eq.vertices.front() +
                                "' references '" + f + "' before it is defined");
    for (const auto& v : eq.vertices)
      if (!declared.insert(v).second)
        throw ValidationError("SEM defines '" + v + "' twice");

    switch (eq.noise.kind) {
      case NoiseSpec::Kind::bernoulli:
        if (eq.noise.p < 0.0 || eq.noise.p > 1.0)
          throw ValidationError("bernoulli p out of [0,1] for '" + eq.vertices.front() + "'");
        break;
      case NoiseSpec::Kind::normal:
        if (!(eq.noise.var >= 0.0) || !std::isfinite(eq.noise.var))
          throw ValidationError("invalid normal variance for '" + eq.vertices.front() + "'");
        break;
      case NoiseSpec::Kind::mvnormal: {
        const Eigen::Index k = static_cast<Eigen::Index>(eq.vertices.size());
        if (eq.noise.mv_mean.size() != k || eq.noise.mv_cov.rows() != k ||
            eq.noise.mv_cov.cols() != k)
          throw ValidationError("mvnormal block size mismatch for '" + eq.vertices.front() + "'");
        if (!eq.terms.empty())
          throw ValidationError("mvnormal blocks cannot have parents");
        Eigen::LLT<Eigen::MatrixXd> llt(eq.noise.mv_cov);
        if (llt.info() != Eigen::Success)
          throw ValidationError("mvnormal covariance is not positive definite");
        break;
      }
      case NoiseSpec::Kind::none:
        break;
    }
    if (eq.link == LinkKind::logit && eq.noise.kind != NoiseSpec::Kind::none)
      throw ValidationError("logit-link vertex '" + eq.vertices.front() +
                            "' draws its own Bernoulli; no noise spec allowed");
    if (eq.vertices.size() > 1 && eq.noise.kind != NoiseSpec::Kind::mvnormal)
      throw ValidationError("multi-vertex SEM blocks require mvnormal noise");
  }
}

namespace {

// Per-sample exogenous draws, one slot per equation, shared across
// counterfactual arms.
struct NoiseDraw {
  double u = 0.0;               // uniform for bernoulli / logit
  Eigen::VectorXd z;            // standard normals for normal / mvnormal
};

std::vector<NoiseDraw> draw_noise(const Sem& sem, std::uint64_t sample_seed) {
  std::vector<NoiseDraw> out(sem.equations.size());
  for (std::size_t e = 0; e < sem.equations.size(); ++e) {
    Rng rng(derive_seed(sample_seed, e));
    const auto& eq = sem.equations[e];
    if (eq.link == LinkKind::logit || eq.noise.kind == NoiseSpec::Kind::bernoulli) {
      out[e].u = rng.uniform();
    } else if (eq.noise.kind == NoiseSpec::Kind::normal) {
      out[e].z = Eigen::VectorXd::Constant(1, rng.normal());
    } else if (eq.noise.kind == NoiseSpec::Kind::mvnormal) {
      out[e].z.resize(static_cast<Eigen::Index>(eq.vertices.size()));
      for (Eigen::Index k = 0; k < out[e].z.size(); ++k) out[e].z[k] = rng.normal();
    }
  }
  return out;
}

double linear_part(const SemEquation& eq, const std::map<std::string, double>& inputs) {
  double lin = eq.intercept;
  for (const auto& [term, coeff] : eq.terms) {
    double prod = 1.0;
    for (const auto& f : term.factors) prod *= inputs.at(f);
    lin += coeff * prod;
  }
  return lin;
}

void evaluate_equation(const SemEquation& eq, const std::map<std::string, double>& inputs,
                       const NoiseDraw& noise, const Eigen::MatrixXd* chol,
                       std::map<std::string, double>& values) {
  if (eq.noise.kind == NoiseSpec::Kind::mvnormal) {
    Eigen::VectorXd v = eq.noise.mv_mean + (*chol) * noise.z;
    for (std::size_t k = 0; k < eq.vertices.size(); ++k)
      values[eq.vertices[k]] = v[static_cast<Eigen::Index>(k)];
    return;
  }
  const double lin = linear_part(eq, inputs);
  double value = 0.0;
  if (eq.link == LinkKind::logit) {
    value = noise.u < expit(lin) ? 1.0 : 0.0;
  } else {
    switch (eq.noise.kind) {
      case NoiseSpec::Kind::bernoulli:
        value = noise.u < eq.noise.p ? 1.0 : 0.0;
        break;
      case NoiseSpec::Kind::normal:
        value = lin + eq.noise.mean + std::sqrt(eq.noise.var) * noise.z[0];
        break;
      default:
        value = lin;
    }
  }
  values[eq.vertices.front()] = value;
}

std::vector<Eigen::MatrixXd> block_cholesky(const Sem& sem) {
  std::vector<Eigen::MatrixXd> chol(sem.equations.size());
  for (std::size_t e = 0; e < sem.equations.size(); ++e)
    if (sem.equations[e].noise.kind == NoiseSpec::Kind::mvnormal)
      chol[e] = Eigen::LLT<Eigen::MatrixXd>(sem.equations[e].noise.mv_cov).matrixL();
  return chol;
}

}  // namespace

Dataset generate(const Sem& sem, Eigen::Index n, std::uint64_t seed) {
  validate_sem(sem);
  if (n < 1) throw ValidationError("generate requires n >= 1");
  const auto order = sem.vertex_order();
  const auto chol = block_cholesky(sem);

  Dataset out;
  out.columns = order;
  out.values.resize(n, static_cast<Eigen::Index>(order.size()));

  std::map<std::string, double> values;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto noise = draw_noise(sem, derive_seed(seed, static_cast<std::uint64_t>(i)));
    values.clear();
    for (std::size_t e = 0; e < sem.equations.size(); ++e)
      evaluate_equation(sem.equations[e], values, noise[e], &chol[e], values);
    for (std::size_t j = 0; j < order.size(); ++j)
      out.values(i, static_cast<Eigen::Index>(j)) = values[order[j]];
  }
  return out;
}

namespace {

OracleResult contrast_by_simulation(
    const Sem& sem, const std::string& treatment, const std::string& outcome,
    double active, double baseline,
    const std::set<std::pair<std::string, std::string>>& active_edges,
    Eigen::Index n_mc, std::uint64_t seed) {
  validate_sem(sem);
  if (n_mc < 2) throw ValidationError("oracle requires n_mc >= 2");
  for (const auto& eq : sem.equations)
    if (eq.vertices.size() > 1 &&
        std::find(eq.vertices.begin(), eq.vertices.end(), treatment) != eq.vertices.end())
      throw ValidationError("treatment '" + treatment + "' cannot sit inside a joint noise block");
  const auto chol = block_cholesky(sem);

  double sum = 0.0, sumsq = 0.0;
  std::map<std::string, double> base_vals, act_vals, inputs;
  for (Eigen::Index i = 0; i < n_mc; ++i) {
    const auto noise = draw_noise(sem, derive_seed(seed, static_cast<std::uint64_t>(i)));

    // Baseline arm: the treatment is held at its baseline value everywhere.
    base_vals.clear();
    base_vals[treatment] = baseline;
    for (std::size_t e = 0; e < sem.equations.size(); ++e) {
      const auto& eq = sem.equations[e];
      if (eq.vertices.size() == 1 && eq.vertices[0] == treatment) continue;
      evaluate_equation(eq, base_vals, noise[e], &chol[e], base_vals);
    }

    // Active arm: each vertex reads, per incoming edge, either the active
    // version of its parent (edge on a disallowed path) or the baseline one.
    act_vals.clear();
    for (std::size_t e = 0; e < sem.equations.size(); ++e) {
      const auto& eq = sem.equations[e];
      if (eq.vertices.size() == 1 && eq.vertices[0] == treatment) continue;
      const std::string& child = eq.vertices.front();
      inputs.clear();
      for (const auto& [term, coeff] : eq.terms)
        for (const auto& f : term.factors) {
          if (inputs.count(f)) continue;
          const bool via_active = active_edges.count({f, child}) > 0;
          if (f == treatment)
            inputs[f] = via_active ? active : baseline;
          else
            inputs[f] = via_active ? act_vals.at(f) : base_vals.at(f);
        }
      evaluate_equation(eq, inputs, noise[e], &chol[e], act_vals);
    }

    const double d = act_vals.at(outcome) - base_vals.at(outcome);
    sum += d;
    sumsq += d * d;
  }

  OracleResult res;
  res.n_mc = n_mc;
  const double n = static_cast<double>(n_mc);
  res.value = sum / n;
  const double var = std::max(0.0, (sumsq - n * res.value * res.value) / (n - 1.0));
  res.std_error = std::sqrt(var / n);
  return res;
}

}  // namespace

OracleResult counterfactual_oracle(const Sem& sem, const PseSpec& spec,
                                   Eigen::Index n_mc, std::uint64_t seed) {
  const CausalGraph g = sem.graph();
  const EdgeLabeling lab = label_edges(g, spec);  // rejects impossible labelings
  return contrast_by_simulation(sem, spec.treatment, spec.outcome, spec.active_value,
                                spec.baseline_value, lab.active_edges, n_mc, seed);
}

OracleResult ace_oracle(const Sem& sem, const std::string& treatment,
                        const std::string& outcome, double active, double baseline,
                        Eigen::Index n_mc, std::uint64_t seed) {
  // Every edge out of the treatment is active: a plain do() contrast.
  std::set<std::pair<std::string, std::string>> all_edges;
  for (const auto& [tail, head] : sem.graph().directed_edges)
    all_edges.insert({tail, head});
  return contrast_by_simulation(sem, treatment, outcome, active, baseline, all_edges,
                                n_mc, seed);
}

}  // namespace fairpse
