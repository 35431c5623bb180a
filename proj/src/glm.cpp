#include "fairpse/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "fairpse/errors.hpp"

namespace fairpse {

namespace {

constexpr double kScoreTol = 1e-8;
constexpr double kSeparationNorm = 1e4;
constexpr int kMaxIrlsIter = 100;

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// log(1 + e^eta), stable for large |eta|
double log1pexp(double eta) {
  if (eta > 35.0) return eta;
  if (eta < -35.0) return std::exp(eta);
  return std::log1p(std::exp(eta));
}

}  // namespace

std::string family_name(Family f) {
  return f == Family::gaussian_identity ? "gaussian_identity" : "bernoulli_logit";
}

Family family_from_name(const std::string& name) {
  if (name == "gaussian_identity" || name == "gaussian") return Family::gaussian_identity;
  if (name == "bernoulli_logit" || name == "logit") return Family::bernoulli_logit;
  throw ValidationError("unknown GLM family '" + name + "'");
}

Term::Term(std::vector<std::string> f) : factors(std::move(f)) {
  std::sort(factors.begin(), factors.end());
}

std::string Term::name() const {
  std::string out;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (i) out += ':';
    out += factors[i];
  }
  return out;
}

std::string ModelSpec::formula() const {
  std::string out = response + " ~ ";
  if (terms.empty()) return out + "1";
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) out += " + ";
    out += terms[i].name();
  }
  return out;
}

std::vector<std::string> ModelSpec::predictor_columns() const {
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (const auto& t : terms)
    for (const auto& f : t.factors)
      if (seen.insert(f).second) out.push_back(f);
  return out;
}

ModelSpec parse_formula(const std::string& formula, Family family) {
  auto tilde = formula.find('~');
  if (tilde == std::string::npos)
    throw ValidationError("formula '" + formula + "' has no '~'");
  ModelSpec spec;
  spec.family = family;
  spec.response = trim(formula.substr(0, tilde));
  if (spec.response.empty())
    throw ValidationError("formula '" + formula + "' has no response");

  std::string rhs = formula.substr(tilde + 1);
  std::stringstream ss(rhs);
  std::string piece;
  while (std::getline(ss, piece, '+')) {
    piece = trim(piece);
    if (piece.empty())
      throw ValidationError("formula '" + formula + "' has an empty term");
    if (piece == "1") continue;  // intercept is implicit
    std::vector<std::string> factors;
    std::stringstream fs(piece);
    std::string factor;
    while (std::getline(fs, factor, ':')) {
      factor = trim(factor);
      if (factor.empty())
        throw ValidationError("formula '" + formula + "' has an empty interaction factor");
      factors.push_back(factor);
    }
    spec.terms.emplace_back(std::move(factors));
  }
  validate_spec(spec);
  return spec;
}

void validate_spec(const ModelSpec& spec) {
  if (spec.response.empty()) throw ValidationError("model spec has no response");
  std::set<std::string> seen;
  for (const auto& t : spec.terms) {
    if (t.factors.empty()) throw ValidationError("model spec has an empty term");
    if (!seen.insert(t.name()).second)
      throw ValidationError("duplicate term '" + t.name() + "' in model of " + spec.response);
    for (const auto& f : t.factors)
      if (f == spec.response)
        throw ValidationError("response '" + spec.response + "' appears among predictors");
  }
}

double FittedGlm::coefficient(const std::string& main_effect) const {
  int idx = term_index(Term({main_effect}));
  if (idx < 0)
    throw ValidationError("model of " + spec.response + " has no term '" + main_effect + "'");
  return coefficients[1 + idx];
}

int FittedGlm::term_index(const Term& term) const {
  for (std::size_t i = 0; i < spec.terms.size(); ++i)
    if (spec.terms[i] == term) return static_cast<int>(i);
  return -1;
}

Eigen::MatrixXd design_matrix(const Dataset& data, const ModelSpec& spec,
                              const std::map<std::string, double>& overrides) {
  const Eigen::Index n = data.n_rows();
  Eigen::MatrixXd X(n, spec.n_coefficients());
  X.col(0).setOnes();
  auto column = [&](const std::string& name) -> Eigen::VectorXd {
    auto it = overrides.find(name);
    if (it != overrides.end()) return Eigen::VectorXd::Constant(n, it->second);
    return data.col(name);
  };
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    Eigen::VectorXd prod = column(spec.terms[t].factors[0]);
    for (std::size_t f = 1; f < spec.terms[t].factors.size(); ++f)
      prod = prod.cwiseProduct(column(spec.terms[t].factors[f]));
    X.col(static_cast<Eigen::Index>(t) + 1) = prod;
  }
  return X;
}

namespace {

FittedGlm fit_impl(const Dataset& data, const ModelSpec& spec,
                   const std::map<Eigen::Index, double>& fixed) {
  validate_spec(spec);
  const Eigen::VectorXd y = data.col(spec.response);
  const Eigen::MatrixXd X = design_matrix(data, spec);
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n <= p)
    throw ValidationError("model of " + spec.response + " has " + std::to_string(p) +
                          " coefficients but only " + std::to_string(n) + " rows");

  // Free-column view; fixed coefficients enter through an offset.
  std::vector<Eigen::Index> free_cols;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!fixed.count(j)) free_cols.push_back(j);
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);
  for (const auto& [j, v] : fixed) {
    if (j < 0 || j >= p) throw ValidationError("fixed coefficient index out of range");
    offset += v * X.col(j);
  }
  Eigen::MatrixXd Xf(n, static_cast<Eigen::Index>(free_cols.size()));
  for (std::size_t k = 0; k < free_cols.size(); ++k) Xf.col(static_cast<Eigen::Index>(k)) = X.col(free_cols[k]);

  FittedGlm out;
  out.spec = spec;
  out.n_train = n;
  out.coefficients = Eigen::VectorXd::Zero(p);
  for (const auto& [j, v] : fixed) out.coefficients[j] = v;

  if (Xf.cols() > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xf);
    if (qr.rank() < Xf.cols())
      throw ValidationError("rank-deficient design in model of " + spec.response +
                            " (rank " + std::to_string(qr.rank()) + " of " +
                            std::to_string(Xf.cols()) + ")");
    if (spec.family == Family::gaussian_identity) {
      Eigen::VectorXd beta = qr.solve(y - offset);
      for (std::size_t k = 0; k < free_cols.size(); ++k)
        out.coefficients[free_cols[k]] = beta[static_cast<Eigen::Index>(k)];
    }
  }

  if (spec.family == Family::gaussian_identity) {
    const Eigen::VectorXd resid = y - X * out.coefficients;
    out.dispersion = std::max(resid.squaredNorm() / static_cast<double>(n),
                              std::numeric_limits<double>::min());
    return out;
  }

  // Bernoulli-logit: IRLS with step-halving on the log-likelihood.
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] != 0.0 && y[i] != 1.0)
      throw ValidationError("logit response '" + spec.response + "' must be binary 0/1");

  auto loglik_at = [&](const Eigen::VectorXd& beta_free) {
    Eigen::VectorXd eta = offset;
    if (Xf.cols() > 0) eta += Xf * beta_free;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
    return ll;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Xf.cols());
  double ll = loglik_at(beta);
  bool converged = Xf.cols() == 0;
  for (int iter = 0; iter < kMaxIrlsIter && !converged; ++iter) {
    Eigen::VectorXd eta = offset + Xf * beta;
    Eigen::VectorXd mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
    }
    Eigen::VectorXd grad = Xf.transpose() * (y - mu);
    if (grad.norm() < kScoreTol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd XtWX = Xf.transpose() * w.asDiagonal() * Xf;
    Eigen::VectorXd step = XtWX.ldlt().solve(grad);
    double scale = 1.0;
    Eigen::VectorXd cand = beta + step;
    double ll_new = loglik_at(cand);
    // Halve only on a decrease that exceeds rounding noise in ll; near the
    // optimum the quadratic improvement underflows and full steps must pass.
    const double noise = 1e-10 * (1.0 + std::abs(ll));
    int halvings = 0;
    while (ll_new < ll - noise && halvings < 40) {
      scale *= 0.5;
      cand = beta + scale * step;
      ll_new = loglik_at(cand);
      ++halvings;
    }
    beta = cand;
    ll = ll_new;
    if (beta.lpNorm<Eigen::Infinity>() > kSeparationNorm)
      throw ConvergenceError("separation detected fitting " + spec.response +
                             ": coefficient norm exceeded 1e4");
  }
  if (!converged) {
    Eigen::VectorXd eta = offset + Xf * beta;
    Eigen::VectorXd mu(n);
    for (Eigen::Index i = 0; i < n; ++i) mu[i] = expit(eta[i]);
    if ((Xf.transpose() * (y - mu)).norm() >= kScoreTol)
      throw ConvergenceError("logistic fit of " + spec.response + " did not converge in " +
                             std::to_string(kMaxIrlsIter) + " iterations");
  }
  for (std::size_t k = 0; k < free_cols.size(); ++k)
    out.coefficients[free_cols[k]] = beta[static_cast<Eigen::Index>(k)];
  out.dispersion = 1.0;
  return out;
}

}  // namespace

FittedGlm fit_glm(const Dataset& data, const ModelSpec& spec) {
  return fit_impl(data, spec, {});
}

FittedGlm fit_glm_fixed(const Dataset& data, const ModelSpec& spec,
                        const std::map<Eigen::Index, double>& fixed) {
  return fit_impl(data, spec, fixed);
}

double log_likelihood(const FittedGlm& model, const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& y) {
  const Eigen::Index n = y.size();
  const Eigen::VectorXd eta = design * model.coefficients;
  if (model.spec.family == Family::gaussian_identity) {
    const double rss = (y - eta).squaredNorm();
    return -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * model.dispersion) -
           rss / (2.0 * model.dispersion);
  }
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
  return ll;
}

double log_likelihood(const FittedGlm& model, const Dataset& data) {
  return log_likelihood(model, design_matrix(data, model.spec), data.col(model.spec.response));
}

Eigen::VectorXd score(const FittedGlm& model, const Dataset& data) {
  const Eigen::MatrixXd X = design_matrix(data, model.spec);
  const Eigen::VectorXd y = data.col(model.spec.response);
  const Eigen::VectorXd eta = X * model.coefficients;
  if (model.spec.family == Family::gaussian_identity)
    return X.transpose() * (y - eta) / model.dispersion;
  Eigen::VectorXd mu(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) mu[i] = expit(eta[i]);
  return X.transpose() * (y - mu);
}

Eigen::VectorXd std_errors(const FittedGlm& model, const Dataset& data) {
  const Eigen::MatrixXd X = design_matrix(data, model.spec);
  Eigen::MatrixXd info;
  if (model.spec.family == Family::gaussian_identity) {
    info = X.transpose() * X / model.dispersion;
  } else {
    const Eigen::VectorXd eta = X * model.coefficients;
    Eigen::VectorXd w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double mu = expit(eta[i]);
      w[i] = mu * (1.0 - mu);
    }
    info = X.transpose() * w.asDiagonal() * X;
  }
  return info.inverse().diagonal().cwiseSqrt();
}

double mean_from_linear(Family family, double eta) {
  return family == Family::gaussian_identity ? eta : expit(eta);
}

double predict_mean(const FittedGlm& model, const std::map<std::string, double>& row) {
  double eta = model.coefficients[0];
  for (std::size_t t = 0; t < model.spec.terms.size(); ++t) {
    double prod = 1.0;
    for (const auto& f : model.spec.terms[t].factors) {
      auto it = row.find(f);
      if (it == row.end())
        throw ValidationError("missing predictor value '" + f + "' for model of " +
                              model.spec.response);
      prod *= it->second;
    }
    eta += model.coefficients[static_cast<Eigen::Index>(t) + 1] * prod;
  }
  return mean_from_linear(model.spec.family, eta);
}

Eigen::VectorXd predict_mean(const FittedGlm& model, const Eigen::MatrixXd& design) {
  Eigen::VectorXd eta = design * model.coefficients;
  if (model.spec.family == Family::gaussian_identity) return eta;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = expit(eta[i]);
  return eta;
}

double density(const FittedGlm& model, double mean, double y) {
  if (model.spec.family == Family::bernoulli_logit) return y != 0.0 ? mean : 1.0 - mean;
  const double var = model.dispersion;
  return std::exp(-(y - mean) * (y - mean) / (2.0 * var)) /
         std::sqrt(2.0 * std::numbers::pi * var);
}

}  // namespace fairpse
