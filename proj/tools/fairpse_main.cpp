// fairpse: identification, estimation, constrained fitting, and fair
// prediction of path-specific effects from tabular data.
//
// Exit codes: 0 success, 1 parse/validation error, 2 not-identified refusal,
// 3 solver infeasibility.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "fairpse/errors.hpp"
#include "fairpse/fair_predict.hpp"
#include "fairpse/io.hpp"
#include "fairpse/rng.hpp"

namespace {

using namespace fairpse;

struct CommonArgs {
  std::string graph_path, pse_path, data_path, out_path, roles;
  std::vector<std::string> model_strings;
  std::string estimator = "triply_robust";
  std::optional<double> lower, upper;
  std::string scale;
  std::uint64_t seed = 1;
  Eigen::Index mc_draws = 1000;
  int bootstrap = 0;
  int max_outer = 20;
};

json config_echo(const CommonArgs& a, const std::string& command) {
  json c;
  c["command"] = command;
  if (!a.graph_path.empty()) c["graph"] = a.graph_path;
  if (!a.pse_path.empty()) c["pse"] = a.pse_path;
  if (!a.data_path.empty()) c["data"] = a.data_path;
  if (!a.roles.empty()) c["roles"] = a.roles;
  if (!a.model_strings.empty()) c["models"] = a.model_strings;
  c["estimator"] = a.estimator;
  if (a.lower) c["lower"] = *a.lower;
  if (a.upper) c["upper"] = *a.upper;
  if (!a.scale.empty()) c["scale"] = a.scale;
  c["seed"] = a.seed;
  c["mc_draws"] = a.mc_draws;
  if (a.bootstrap > 0) c["bootstrap"] = a.bootstrap;
  if (!a.out_path.empty()) c["out"] = a.out_path;
  return c;
}

// "logit: M ~ A + C1" or "Y ~ A + M"; family defaults by response column.
ModelSpec parse_model_string(const std::string& s, const Dataset& data) {
  std::string body = s;
  std::optional<Family> family;
  const auto tilde = s.find('~');
  const auto colon = s.find(':');
  if (colon != std::string::npos && tilde != std::string::npos && colon < tilde) {
    family = family_from_name(s.substr(0, colon));
    body = s.substr(colon + 1);
  }
  ModelSpec probe = parse_formula(body, Family::gaussian_identity);
  if (!family)
    family = is_binary_column(data, probe.response) ? Family::bernoulli_logit
                                                    : Family::gaussian_identity;
  return parse_formula(body, *family);
}

ColumnRoles roles_from_graph(const CausalGraph& graph, const PseSpec& spec) {
  ColumnRoles roles;
  roles.treatment = spec.treatment;
  roles.outcome = spec.outcome;
  roles.mediators = mediators_of(graph, spec);
  std::set<std::string> taken(roles.mediators.begin(), roles.mediators.end());
  taken.insert(spec.treatment);
  taken.insert(spec.outcome);
  for (const auto& v : graph.vertices)
    if (!taken.count(v)) roles.baseline.push_back(v);
  return roles;
}

ColumnRoles parse_roles(const std::string& text) {
  ColumnRoles roles;
  std::stringstream ss(text);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    const auto colon = piece.find(':');
    if (colon == std::string::npos)
      throw ValidationError("role entry '" + piece + "' is not column:role");
    const std::string col = piece.substr(0, colon);
    const std::string role = piece.substr(colon + 1);
    if (role == "treatment")
      roles.treatment = col;
    else if (role == "outcome")
      roles.outcome = col;
    else if (role == "mediator")
      roles.mediators.push_back(col);
    else if (role == "baseline")
      roles.baseline.push_back(col);
    else
      throw ValidationError("unknown role '" + role + "'");
  }
  return roles;
}

void emit(const json& report, const std::string& out_path) {
  std::cout << report.dump(2) << std::endl;
  if (!out_path.empty()) write_json_file(report, out_path);
}

struct Loaded {
  CausalGraph graph;
  PseSpec spec;
  Dataset data;
  ModelSet models;
  std::vector<ModelSpec> model_specs;
};

Loaded load_common(const CommonArgs& a, bool need_data, bool fit_models) {
  Loaded l;
  l.graph = load_graph(a.graph_path);
  l.spec = load_pse(a.pse_path);
  validate_pse_spec(l.graph, l.spec);
  if (need_data) {
    const ColumnRoles roles =
        a.roles.empty() ? roles_from_graph(l.graph, l.spec) : parse_roles(a.roles);
    l.data = load_dataset(a.data_path, roles);
    for (const auto& s : a.model_strings) {
      l.model_specs.push_back(parse_model_string(s, l.data));
      if (fit_models) {
        const ModelSpec& ms = l.model_specs.back();
        if (l.models.count(ms.response))
          throw ValidationError("two models for '" + ms.response + "'");
        l.models[ms.response] = fit_glm(l.data, ms);
      }
    }
  }
  return l;
}

Bounds resolve_bounds(const CommonArgs& a, const PseSpec& spec) {
  Bounds b;
  b.scale = a.scale.empty() ? spec.scale : scale_from_name(a.scale);
  if (a.lower && a.upper) {
    b.lower = *a.lower;
    b.upper = *a.upper;
  } else if (!a.lower && !a.upper && b.scale == EffectScale::odds_ratio) {
    b.lower = 0.95;  // default tolerated band on the odds-ratio scale
    b.upper = 1.05;
  } else {
    throw ValidationError("fit-fair needs --lower and --upper (defaults exist only on the "
                          "odds-ratio scale)");
  }
  validate_bounds(b);
  return b;
}

std::vector<Eigen::Index> bootstrap_indices(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (auto& i : idx)
    i = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(n));
  return idx;
}

json percentile_ci(std::vector<double> values, int requested, int failed) {
  std::sort(values.begin(), values.end());
  json boot;
  boot["replicates"] = requested;
  boot["failed"] = failed;
  if (values.size() >= 4) {
    const auto q = [&](double p) {
      const double pos = p * (static_cast<double>(values.size()) - 1.0);
      const std::size_t k = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(k);
      return k + 1 < values.size() ? values[k] * (1.0 - frac) + values[k + 1] * frac : values[k];
    };
    boot["ci_lower"] = q(0.025);
    boot["ci_upper"] = q(0.975);
  }
  return boot;
}

int cmd_identify(const CommonArgs& a) {
  CausalGraph graph = load_graph(a.graph_path);
  PseSpec spec = load_pse(a.pse_path);
  validate_pse_spec(graph, spec);
  const IdVerdict verdict = check_identification(graph, spec);
  json report;
  report["config"] = config_echo(a, "identify");
  report["verdict"] = verdict_to_json(verdict);
  emit(report, a.out_path);
  if (verdict.status != IdStatus::identified) {
    std::cerr << "not identified; witness:";
    for (const auto& w : verdict.witness) std::cerr << ' ' << w;
    std::cerr << " (" << verdict.reason << ")\n";
    return 2;
  }
  return 0;
}

int cmd_estimate(const CommonArgs& a) {
  Loaded l = load_common(a, true, true);
  const EstimatorKind kind = EstimatorKind::parse(a.estimator);
  const IdVerdict verdict = check_identification(l.graph, l.spec);
  if (verdict.status != IdStatus::identified)
    throw NotIdentifiedError("estimation refused: " + verdict.reason, verdict.witness);

  const McConfig mc{a.mc_draws, a.seed};
  const EstimateReport rep = estimate_pse(kind, l.models, l.data, l.spec, mc);

  json report;
  report["config"] = config_echo(a, "estimate");
  report["report"] = report_to_json(rep);

  if (a.bootstrap > 0) {
    std::vector<double> values;
    int failed = 0;
    for (int b = 0; b < a.bootstrap; ++b) {
      const auto idx = bootstrap_indices(
          l.data.n_rows(), derive_seed(a.seed, 1000003 + static_cast<std::uint64_t>(b)));
      try {
        const Dataset resampled = l.data.rows(idx);
        ModelSet models;
        for (const auto& ms : l.model_specs) models[ms.response] = fit_glm(resampled, ms);
        const McConfig rep_mc{a.mc_draws, derive_seed(a.seed, static_cast<std::uint64_t>(b))};
        values.push_back(estimate_pse(kind, models, resampled, l.spec, rep_mc).value);
      } catch (const std::exception&) {
        ++failed;
      }
    }
    report["bootstrap"] = percentile_ci(std::move(values), a.bootstrap, failed);
  }

  emit(report, a.out_path);
  return 0;
}

int cmd_fit_fair(const CommonArgs& a) {
  Loaded l = load_common(a, true, false);
  const EstimatorKind kind = EstimatorKind::parse(a.estimator);
  const Bounds bounds = resolve_bounds(a, l.spec);
  SolverOptions options;
  options.mc = McConfig{a.mc_draws, a.seed};
  options.max_outer = a.max_outer;

  const FairFitResult fit = fit_fair(l.data, l.graph, l.spec, kind, l.model_specs, bounds, options);

  json report;
  report["config"] = config_echo(a, "fit-fair");
  report["result"] = fair_fit_to_json(fit);

  if (a.bootstrap > 0) {
    std::vector<double> values;
    int failed = 0;
    for (int b = 0; b < a.bootstrap; ++b) {
      const auto idx = bootstrap_indices(
          l.data.n_rows(), derive_seed(a.seed, 2000003 + static_cast<std::uint64_t>(b)));
      try {
        SolverOptions rep_options = options;
        rep_options.mc = McConfig{a.mc_draws, derive_seed(a.seed, static_cast<std::uint64_t>(b))};
        values.push_back(
            fit_fair(l.data.rows(idx), l.graph, l.spec, kind, l.model_specs, bounds, rep_options)
                .achieved_pse);
      } catch (const std::exception&) {
        ++failed;
      }
    }
    report["bootstrap"] = percentile_ci(std::move(values), a.bootstrap, failed);
  }

  emit(report, a.out_path);
  if (!fit.solver.feasible) {
    std::cerr << "solver could not reach the bounds; closest achieved PSE " << fit.achieved_pse
              << '\n';
    return 3;
  }
  return 0;
}

int cmd_predict(const std::string& fit_path, const std::string& data_path,
                const std::string& out_path, const std::string& format,
                const std::string& w_override, std::uint64_t seed, Eigen::Index draws,
                const std::string& out_report) {
  const FairFitResult fit = load_fair_fit(fit_path);
  const Dataset data = load_csv(data_path);
  const Marginalization marg{draws, seed};
  std::optional<std::vector<std::string>> w;
  if (!w_override.empty()) {
    std::vector<std::string> cols;
    std::stringstream ss(w_override);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    w = cols;
  }
  const FairPredictor predictor(fit, marg, w);
  const BatchPredictResult batch = predictor.batch_predict(data);

  if (format == "jsonl") {
    std::ofstream out(out_path);
    if (!out) throw ValidationError("cannot write '" + out_path + "'");
    for (Eigen::Index i = 0; i < batch.predictions.size(); ++i) {
      json line;
      line["row"] = i;
      line["fair_expectation"] = batch.predictions[i];
      if (batch.labels) line["label"] = (*batch.labels)[i];
      out << line.dump() << '\n';
    }
  } else {
    Dataset preds;
    Eigen::VectorXd row_ids(batch.predictions.size());
    for (Eigen::Index i = 0; i < row_ids.size(); ++i) row_ids[i] = static_cast<double>(i);
    preds.add_column("row", row_ids);
    preds.add_column("fair_expectation", batch.predictions);
    if (batch.labels) preds.add_column("label", *batch.labels);
    save_csv(preds, out_path);
  }

  json report;
  report["command"] = "predict";
  report["fit"] = fit_path;
  report["data"] = data_path;
  report["out"] = out_path;
  report["seed"] = seed;
  report["mc_draws"] = draws;
  report["n"] = batch.predictions.size();
  report["w_set"] = predictor.w_set();
  if (batch.rmse) report["rmse"] = *batch.rmse;
  if (batch.accuracy) report["accuracy"] = *batch.accuracy;
  emit(report, out_report);
  return 0;
}

int cmd_simulate(const std::string& sem_path, Eigen::Index n, std::uint64_t seed,
                 const std::string& out_path, const std::string& out_report) {
  const Sem sem = load_sem(sem_path);
  const Dataset data = generate(sem, n, seed);
  save_csv(data, out_path);
  json report;
  report["command"] = "simulate";
  report["sem"] = sem_path;
  report["n"] = n;
  report["seed"] = seed;
  report["out"] = out_path;
  report["columns"] = data.columns;
  emit(report, out_report);
  return 0;
}

int cmd_select_model(const CommonArgs& a, const std::string& validate_path) {
  Loaded l = load_common(a, true, false);
  const EstimatorKind kind = EstimatorKind::parse(a.estimator);
  const Bounds bounds = resolve_bounds(a, l.spec);
  const ColumnRoles roles =
      a.roles.empty() ? roles_from_graph(l.graph, l.spec) : parse_roles(a.roles);
  const Dataset validate = load_dataset(validate_path, roles);

  std::optional<ModelSpec> a_spec, m_spec;
  std::vector<ModelSpec> candidates;
  for (const auto& ms : l.model_specs) {
    if (ms.response == l.spec.treatment)
      a_spec = ms;
    else if (ms.response == l.spec.outcome)
      candidates.push_back(ms);
    else
      m_spec = ms;
  }
  if (!a_spec || !m_spec)
    throw ValidationError(
        "select-model needs fixed treatment and mediator models plus outcome candidates");

  SolverOptions options;
  options.mc = McConfig{a.mc_draws, a.seed};
  const SelectionResult sel = select_outcome_model(candidates, l.data, validate, *a_spec, *m_spec,
                                                   l.graph, l.spec, kind, bounds, options);

  json report;
  report["config"] = config_echo(a, "select-model");
  report["validate"] = validate_path;
  report["chosen"] = sel.chosen.formula();
  report["rmse"] = sel.rmse;
  json table = json::array();
  for (const auto& r : sel.reports) {
    json row;
    row["model"] = r.spec.formula();
    row["rmse"] = r.rmse;
    row["unconstrained_pse"] = r.unconstrained_pse;
    row["achieved_pse"] = r.achieved_pse;
    row["feasible"] = r.feasible;
    table.push_back(row);
  }
  report["candidates"] = table;
  emit(report, a.out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fair inference on outcomes via bounded path-specific effects"};
  app.require_subcommand(1);

  CommonArgs a;
  std::string validate_path, aux_path, format = "csv", w_override, out_report;
  Eigen::Index sim_n = 1000;

  auto add_common = [&](CLI::App* cmd, bool with_models) {
    cmd->add_option("--graph", a.graph_path, "causal graph JSON")->required();
    cmd->add_option("--pse", a.pse_path, "path-specific effect JSON")->required();
    cmd->add_option("--out", a.out_path, "write the JSON report here too");
    if (with_models) {
      cmd->add_option("--data", a.data_path, "CSV dataset")->required();
      cmd->add_option("--roles", a.roles, "column roles, e.g. A:treatment,M:mediator");
      cmd->add_option("--model", a.model_strings,
                      "model formula, e.g. \"Y ~ A + M + A:M\" or \"logit: M ~ A\"");
      cmd->add_option("--estimator", a.estimator,
                      "plugin_mediation | ipw | triply_robust | edge_g_plugin | "
                      "closed_form_{linear_nde,logistic_or_nde,chain_or_pse}");
      cmd->add_option("--seed", a.seed, "RNG seed (recorded in the report)");
      cmd->add_option("--mc-draws", a.mc_draws, "Monte Carlo draws per row");
      cmd->add_option("--bootstrap", a.bootstrap, "percentile bootstrap replicates");
    }
  };

  auto* identify = app.add_subcommand("identify", "decide identifiability of the PSE");
  add_common(identify, false);

  auto* estimate = app.add_subcommand("estimate", "estimate the PSE from data");
  add_common(estimate, true);

  auto* fitfair = app.add_subcommand("fit-fair", "constrained MLE bounding the PSE");
  add_common(fitfair, true);
  fitfair->add_option("--lower", a.lower, "lower bound for the PSE");
  fitfair->add_option("--upper", a.upper, "upper bound for the PSE");
  fitfair->add_option("--scale", a.scale, "mean_difference | odds_ratio");
  fitfair->add_option("--max-outer", a.max_outer, "augmented-Lagrangian outer iteration cap");

  auto* predict = app.add_subcommand("predict", "fair out-of-sample predictions");
  predict->add_option("--fit", aux_path, "fit-fair JSON result")->required();
  predict->add_option("--data", a.data_path, "CSV of new instances")->required();
  predict->add_option("--out", a.out_path, "prediction file")->required();
  predict->add_option("--format", format, "csv | jsonl");
  predict->add_option("--w-set", w_override, "override the readable columns, comma separated");
  predict->add_option("--seed", a.seed, "RNG seed");
  predict->add_option("--mc-draws", a.mc_draws, "draws per instance");
  predict->add_option("--report", out_report, "write the JSON report here too");

  auto* simulate = app.add_subcommand("simulate", "draw a dataset from a SEM");
  simulate->add_option("--sem", aux_path, "SEM JSON")->required();
  simulate->add_option("--n", sim_n, "rows to draw")->required();
  simulate->add_option("--seed", a.seed, "RNG seed");
  simulate->add_option("--out", a.out_path, "output CSV")->required();
  simulate->add_option("--report", out_report, "write the JSON report here too");

  auto* select = app.add_subcommand("select-model", "choose the outcome model by fair rMSE");
  add_common(select, true);
  select->add_option("--validate", validate_path, "validation CSV")->required();
  select->add_option("--lower", a.lower, "lower bound for the PSE");
  select->add_option("--upper", a.upper, "upper bound for the PSE");
  select->add_option("--scale", a.scale, "mean_difference | odds_ratio");

  CLI11_PARSE(app, argc, argv);

  try {
    if (identify->parsed()) return cmd_identify(a);
    if (estimate->parsed()) return cmd_estimate(a);
    if (fitfair->parsed()) return cmd_fit_fair(a);
    if (predict->parsed())
      return cmd_predict(aux_path, a.data_path, a.out_path, format, w_override, a.seed,
                         a.mc_draws, out_report);
    if (simulate->parsed()) return cmd_simulate(aux_path, sim_n, a.seed, a.out_path, out_report);
    if (select->parsed()) return cmd_select_model(a, validate_path);
  } catch (const fairpse::NotIdentifiedError& e) {
    std::cerr << "error: " << e.what() << "\nwitness:";
    for (const auto& w : e.witness) std::cerr << ' ' << w;
    std::cerr << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
