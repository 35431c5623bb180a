#include "fairpse/io.hpp"

#include <fstream>
#include <sstream>

#include "fairpse/errors.hpp"

namespace fairpse {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

json graph_to_json(const CausalGraph& graph) {
  json j;
  j["vertices"] = graph.vertices;
  j["edges"] = json::array();
  for (const auto& [tail, head] : graph.directed_edges)
    j["edges"].push_back(json::array({tail, head}));
  j["bidirected"] = json::array();
  for (const auto& [u, v] : graph.bidirected_edges)
    j["bidirected"].push_back(json::array({u, v}));
  return j;
}

CausalGraph graph_from_json(const json& j) {
  CausalGraph g;
  try {
    g.vertices = j.at("vertices").get<std::vector<std::string>>();
    for (const auto& e : j.at("edges"))
      g.directed_edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    if (j.contains("bidirected"))
      for (const auto& e : j.at("bidirected"))
        g.bidirected_edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed graph JSON: ") + e.what());
  }
  validate_graph(g);
  return g;
}

CausalGraph load_graph(const std::string& path) { return graph_from_json(load_json_file(path)); }

json pse_to_json(const PseSpec& spec) {
  json j;
  j["treatment"] = spec.treatment;
  j["outcome"] = spec.outcome;
  j["active"] = spec.active_value;
  j["baseline"] = spec.baseline_value;
  j["scale"] = scale_name(spec.scale);
  j["paths"] = spec.disallowed_paths;
  return j;
}

PseSpec pse_from_json(const json& j) {
  PseSpec spec;
  try {
    spec.treatment = j.at("treatment").get<std::string>();
    spec.outcome = j.at("outcome").get<std::string>();
    spec.active_value = j.at("active").get<double>();
    spec.baseline_value = j.at("baseline").get<double>();
    if (j.contains("scale")) spec.scale = scale_from_name(j.at("scale").get<std::string>());
    spec.disallowed_paths = j.at("paths").get<std::vector<Path>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed PSE JSON: ") + e.what());
  }
  return spec;
}

PseSpec load_pse(const std::string& path) { return pse_from_json(load_json_file(path)); }

Dataset load_dataset(const std::string& path, const ColumnRoles& roles) {
  Dataset data = load_csv(path);
  validate_roles(data, roles);
  return data;
}

json verdict_to_json(const IdVerdict& verdict) {
  json j;
  j["status"] = verdict.status == IdStatus::identified ? "identified" : "not_identified";
  if (verdict.strategy) j["strategy"] = strategy_name(*verdict.strategy);
  if (!verdict.witness.empty()) j["witness"] = verdict.witness;
  if (!verdict.reason.empty()) j["reason"] = verdict.reason;
  return j;
}

json report_to_json(const EstimateReport& report) {
  json j;
  j["estimator"] = report.estimator.name();
  j["scale"] = scale_name(report.scale);
  j["value"] = report.value;
  j["n"] = report.n;
  j["models_used"] = report.models_used;
  if (!report.diagnostics.empty()) j["diagnostics"] = report.diagnostics;
  if (!report.warnings.empty()) j["warnings"] = report.warnings;
  return j;
}

json model_to_json(const FittedGlm& model) {
  json j;
  j["response"] = model.spec.response;
  j["family"] = family_name(model.spec.family);
  json terms = json::array();
  for (const auto& t : model.spec.terms) terms.push_back(t.name());
  j["terms"] = terms;
  j["coefficients"] = std::vector<double>(
      model.coefficients.data(), model.coefficients.data() + model.coefficients.size());
  j["dispersion"] = model.dispersion;
  j["n_train"] = model.n_train;
  return j;
}

FittedGlm model_from_json(const json& j) {
  FittedGlm model;
  try {
    model.spec.response = j.at("response").get<std::string>();
    model.spec.family = family_from_name(j.at("family").get<std::string>());
    for (const auto& t : j.at("terms")) {
      std::vector<std::string> factors;
      std::stringstream ss(t.get<std::string>());
      std::string f;
      while (std::getline(ss, f, ':')) factors.push_back(f);
      model.spec.terms.emplace_back(std::move(factors));
    }
    const auto coeffs = j.at("coefficients").get<std::vector<double>>();
    model.coefficients = Eigen::Map<const Eigen::VectorXd>(coeffs.data(),
                                                           static_cast<Eigen::Index>(coeffs.size()));
    model.dispersion = j.at("dispersion").get<double>();
    if (j.contains("n_train")) model.n_train = j.at("n_train").get<Eigen::Index>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model JSON: ") + e.what());
  }
  validate_spec(model.spec);
  if (model.coefficients.size() != model.spec.n_coefficients())
    throw ValidationError("model JSON coefficient count mismatch");
  return model;
}

json fair_fit_to_json(const FairFitResult& fit) {
  json j;
  json models = json::object();
  for (const auto& [name, model] : fit.constrained_models) models[name] = model_to_json(model);
  j["constrained_models"] = models;
  j["g_models"] = fit.g_model_names;
  j["estimator"] = fit.estimator.name();
  j["spec"] = pse_to_json(fit.spec);
  j["bounds"] = {{"lower", fit.bounds.lower},
                 {"upper", fit.bounds.upper},
                 {"scale", scale_name(fit.bounds.scale)}};
  j["achieved_pse"] = fit.achieved_pse;
  j["w_set"] = fit.w_set;
  j["loglik_constrained"] = fit.loglik_constrained;
  j["loglik_unconstrained"] = fit.loglik_unconstrained;
  j["solver"] = {{"strategy", fit.solver.strategy},
                 {"iterations", fit.solver.iterations},
                 {"kkt_residual", fit.solver.kkt_residual},
                 {"feasible", fit.solver.feasible},
                 {"constraint_violation", fit.solver.constraint_violation}};
  if (fit.mc) j["mc"] = {{"draws", fit.mc->draws}, {"seed", fit.mc->seed}};
  return j;
}

FairFitResult fair_fit_from_json(const json& j) {
  FairFitResult fit;
  try {
    for (const auto& [name, mj] : j.at("constrained_models").items())
      fit.constrained_models[name] = model_from_json(mj);
    fit.g_model_names = j.at("g_models").get<std::vector<std::string>>();
    fit.estimator = EstimatorKind::parse(j.at("estimator").get<std::string>());
    fit.spec = pse_from_json(j.at("spec"));
    fit.bounds.lower = j.at("bounds").at("lower").get<double>();
    fit.bounds.upper = j.at("bounds").at("upper").get<double>();
    fit.bounds.scale = scale_from_name(j.at("bounds").at("scale").get<std::string>());
    fit.achieved_pse = j.at("achieved_pse").get<double>();
    fit.w_set = j.at("w_set").get<std::vector<std::string>>();
    fit.loglik_constrained = j.at("loglik_constrained").get<double>();
    fit.loglik_unconstrained = j.at("loglik_unconstrained").get<double>();
    const auto& s = j.at("solver");
    fit.solver.strategy = s.at("strategy").get<std::string>();
    fit.solver.iterations = s.at("iterations").get<int>();
    fit.solver.kkt_residual = s.at("kkt_residual").get<double>();
    fit.solver.feasible = s.at("feasible").get<bool>();
    if (s.contains("constraint_violation"))
      fit.solver.constraint_violation = s.at("constraint_violation").get<double>();
    if (j.contains("mc")) {
      McConfig mc;
      mc.draws = j.at("mc").at("draws").get<Eigen::Index>();
      mc.seed = j.at("mc").at("seed").get<std::uint64_t>();
      fit.mc = mc;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed fit JSON: ") + e.what());
  }
  return fit;
}

FairFitResult load_fair_fit(const std::string& path) {
  return fair_fit_from_json(load_json_file(path));
}

namespace {

NoiseSpec noise_from_json(const json& j) {
  NoiseSpec n;
  const std::string type = j.at("type").get<std::string>();
  if (type == "bernoulli") {
    n.kind = NoiseSpec::Kind::bernoulli;
    n.p = j.at("p").get<double>();
  } else if (type == "normal") {
    n.kind = NoiseSpec::Kind::normal;
    if (j.contains("mean")) n.mean = j.at("mean").get<double>();
    n.var = j.at("var").get<double>();
  } else if (type == "mvnormal") {
    n.kind = NoiseSpec::Kind::mvnormal;
    const auto mean = j.at("mean").get<std::vector<double>>();
    n.mv_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(),
                                                  static_cast<Eigen::Index>(mean.size()));
    const auto cov = j.at("cov").get<std::vector<std::vector<double>>>();
    n.mv_cov.resize(static_cast<Eigen::Index>(cov.size()), static_cast<Eigen::Index>(cov.size()));
    for (std::size_t r = 0; r < cov.size(); ++r) {
      if (cov[r].size() != cov.size()) throw ValidationError("mvnormal cov is not square");
      for (std::size_t c = 0; c < cov[r].size(); ++c)
        n.mv_cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cov[r][c];
    }
  } else if (type == "none") {
    n.kind = NoiseSpec::Kind::none;
  } else {
    throw ValidationError("unknown noise type '" + type + "'");
  }
  return n;
}

json noise_to_json(const NoiseSpec& n) {
  switch (n.kind) {
    case NoiseSpec::Kind::bernoulli:
      return {{"type", "bernoulli"}, {"p", n.p}};
    case NoiseSpec::Kind::normal:
      return {{"type", "normal"}, {"mean", n.mean}, {"var", n.var}};
    case NoiseSpec::Kind::mvnormal: {
      json cov = json::array();
      for (Eigen::Index r = 0; r < n.mv_cov.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < n.mv_cov.cols(); ++c) row.push_back(n.mv_cov(r, c));
        cov.push_back(row);
      }
      return {{"type", "mvnormal"},
              {"mean", std::vector<double>(n.mv_mean.data(), n.mv_mean.data() + n.mv_mean.size())},
              {"cov", cov}};
    }
    case NoiseSpec::Kind::none:
      return {{"type", "none"}};
  }
  return {};
}

}  // namespace

Sem sem_from_json(const json& j) {
  Sem sem;
  try {
    for (const auto& ej : j.at("equations")) {
      SemEquation eq;
      if (ej.contains("vertices"))
        eq.vertices = ej.at("vertices").get<std::vector<std::string>>();
      else
        eq.vertices = {ej.at("vertex").get<std::string>()};
      const std::string link = ej.value("link", "identity");
      if (link == "identity")
        eq.link = LinkKind::identity;
      else if (link == "logit")
        eq.link = LinkKind::logit;
      else
        throw ValidationError("unknown link '" + link + "'");
      if (ej.contains("terms"))
        for (const auto& [name, coeff] : ej.at("terms").items()) {
          if (name == "1") {
            eq.intercept = coeff.get<double>();
            continue;
          }
          std::vector<std::string> factors;
          std::stringstream ss(name);
          std::string f;
          while (std::getline(ss, f, ':')) factors.push_back(f);
          eq.terms.emplace_back(Term(std::move(factors)), coeff.get<double>());
        }
      if (ej.contains("noise")) eq.noise = noise_from_json(ej.at("noise"));
      sem.equations.push_back(std::move(eq));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed SEM JSON: ") + e.what());
  }
  validate_sem(sem);
  return sem;
}

json sem_to_json(const Sem& sem) {
  json eqs = json::array();
  for (const auto& eq : sem.equations) {
    json ej;
    ej["vertices"] = eq.vertices;
    ej["link"] = eq.link == LinkKind::identity ? "identity" : "logit";
    json terms = json::object();
    if (eq.intercept != 0.0) terms["1"] = eq.intercept;
    for (const auto& [term, coeff] : eq.terms) terms[term.name()] = coeff;
    ej["terms"] = terms;
    if (eq.noise.kind != NoiseSpec::Kind::none) ej["noise"] = noise_to_json(eq.noise);
    eqs.push_back(ej);
  }
  return json{{"equations", eqs}};
}

Sem load_sem(const std::string& path) { return sem_from_json(load_json_file(path)); }

}  // namespace fairpse
