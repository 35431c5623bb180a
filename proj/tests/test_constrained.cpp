#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fairpse/constrained_fit.hpp"
#include "fairpse/errors.hpp"
#include "fairpse/fair_predict.hpp"
#include "fairpse/io.hpp"
#include "fairpse/simulate.hpp"

using namespace fairpse;

namespace {

const std::string kData = FAIRPSE_DATA_DIR;

struct Setup {
  CausalGraph graph;
  PseSpec spec;
  Dataset data;
  std::vector<ModelSpec> true_specs;
};

Setup sim_setup(Eigen::Index n, std::uint64_t seed) {
  Setup s;
  s.graph = load_graph(kData + "/sim1_graph.json");
  s.spec = load_pse(kData + "/sim1_nde.json");
  s.data = generate(load_sem(kData + "/sim1.json"), n, seed);
  s.true_specs = {
      parse_formula("A ~ 1", Family::bernoulli_logit),
      parse_formula("M ~ C1 + C2 + A + A:C1 + A:C2", Family::bernoulli_logit),
      parse_formula("Y ~ A + C1 + C2 + M + A:C1 + A:C2 + A:M + C1:C2 + C1:M + C2:M",
                    Family::gaussian_identity)};
  return s;
}

}  // namespace

TEST_CASE("an inactive constraint reproduces the unconstrained MLE") {
  const Setup s = sim_setup(1500, 41);
  const Bounds loose{-1e9, 1e9, EffectScale::mean_difference};
  const FairFitResult fit = fit_fair(s.data, s.graph, s.spec, {EstimatorTag::triply_robust, {}},
                                     s.true_specs, loose);
  CHECK(fit.solver.feasible);
  CHECK(fit.solver.iterations == 0);
  for (const auto& ms : s.true_specs) {
    const FittedGlm mle = fit_glm(s.data, ms);
    CHECK((fit.constrained_models.at(ms.response).coefficients - mle.coefficients)
              .lpNorm<Eigen::Infinity>() < 1e-6);
  }
  CHECK(fit.loglik_constrained == doctest::Approx(fit.loglik_unconstrained).epsilon(1e-12));
}

TEST_CASE("bounded triply robust fit is feasible, dominated, and self-consistent") {
  const Setup s = sim_setup(1500, 43);
  const Bounds b{-0.5, 0.5, EffectScale::mean_difference};
  const FairFitResult fit = fit_fair(s.data, s.graph, s.spec, {EstimatorTag::triply_robust, {}},
                                     s.true_specs, b);
  CHECK(fit.solver.feasible);
  const double recomputed = evaluate_pse(fit, s.data);
  CHECK(recomputed >= -0.5001);
  CHECK(recomputed <= 0.5001);
  CHECK(std::abs(recomputed - fit.achieved_pse) < 1e-8);
  CHECK(fit.loglik_constrained <= fit.loglik_unconstrained + 1e-8);
  CHECK(fit.solver.kkt_residual < 1e-5);
  CHECK(std::abs(g_models_loglik(fit, s.data) - fit.loglik_constrained) < 1e-6);
}

TEST_CASE("equality bounds pin the effect to a point") {
  const Setup s = sim_setup(1200, 47);
  const Bounds b{0.25, 0.25, EffectScale::mean_difference};
  const FairFitResult fit = fit_fair(s.data, s.graph, s.spec, {EstimatorTag::triply_robust, {}},
                                     s.true_specs, b);
  CHECK(fit.solver.feasible);
  CHECK(std::abs(fit.achieved_pse - 0.25) < 1e-4);
}

TEST_CASE("non-identified specs are refused outright") {
  const CausalGraph g = load_graph(kData + "/fig1c_graph.json");
  PseSpec spec;
  spec.treatment = "A";
  spec.outcome = "Y";
  spec.disallowed_paths = {{"A", "Y"}};
  Dataset d;
  d.add_column("C", Eigen::Vector4d(0, 1, 0, 1));
  d.add_column("A", Eigen::Vector4d(0, 1, 1, 0));
  d.add_column("M", Eigen::Vector4d(0, 0, 1, 1));
  d.add_column("Y", Eigen::Vector4d(1, 2, 3, 4));
  try {
    fit_fair(d, g, spec, {EstimatorTag::triply_robust, {}},
             {parse_formula("A ~ C", Family::bernoulli_logit),
              parse_formula("M ~ A + C", Family::bernoulli_logit),
              parse_formula("Y ~ A + M + C", Family::gaussian_identity)},
             {-0.5, 0.5, EffectScale::mean_difference});
    FAIL("expected NotIdentifiedError");
  } catch (const NotIdentifiedError& e) {
    CHECK(e.witness == std::vector<std::string>{"M", "Y"});
  }
}

TEST_CASE("unreachable bounds come back infeasible with the closest value") {
  Setup s = sim_setup(1200, 53);
  SolverOptions options;
  options.max_outer = 1;  // starve the solver so the interval stays out of reach
  options.max_inner = 3;
  const Bounds b{-40.0, -39.0, EffectScale::mean_difference};
  const FairFitResult fit = fit_fair(s.data, s.graph, s.spec, {EstimatorTag::triply_robust, {}},
                                     s.true_specs, b, options);
  CHECK(!fit.solver.feasible);
  CHECK(std::isfinite(fit.achieved_pse));
  CHECK(fit.achieved_pse > -39.0);  // reported closest achieved value
}

TEST_CASE("bounds validation") {
  CHECK_THROWS_AS(validate_bounds({1.0, -1.0, EffectScale::mean_difference}), ValidationError);
  CHECK_THROWS_AS(validate_bounds({-0.5, 0.5, EffectScale::odds_ratio}), ValidationError);
  CHECK_NOTHROW(validate_bounds({0.95, 1.05, EffectScale::odds_ratio}));
  const Setup s = sim_setup(600, 3);
  Bounds wrong_scale{0.95, 1.05, EffectScale::odds_ratio};
  CHECK_THROWS_AS(fit_fair(s.data, s.graph, s.spec, {EstimatorTag::triply_robust, {}},
                           s.true_specs, wrong_scale),
                  ValidationError);
}

TEST_CASE("missing model specs are reported") {
  const Setup s = sim_setup(600, 5);
  CHECK_THROWS_WITH_AS(
      fit_fair(s.data, s.graph, s.spec, {EstimatorTag::triply_robust, {}},
               {s.true_specs[0], s.true_specs[1]}, {-0.5, 0.5, EffectScale::mean_difference}),
      doctest::Contains("needs a model spec"), ValidationError);
}

TEST_CASE("box and general solver agree on the linear closed form") {
  Setup s = sim_setup(2000, 59);
  const std::vector<ModelSpec> specs{
      s.true_specs[0], s.true_specs[1],
      parse_formula("Y ~ A + C1 + C2 + M + C1:C2", Family::gaussian_identity)};
  const EstimatorKind kind = EstimatorKind::closed_form(ClosedFormVariant::linear_nde);
  const Bounds b{-0.25, 0.25, EffectScale::mean_difference};

  const FairFitResult box = fit_fair(s.data, s.graph, s.spec, kind, specs, b);
  CHECK(box.solver.strategy == "box");
  SolverOptions force;
  force.force_general = true;
  const FairFitResult al = fit_fair(s.data, s.graph, s.spec, kind, specs, b, force);
  CHECK(al.solver.strategy == "augmented_lagrangian");

  CHECK(std::abs(box.achieved_pse - al.achieved_pse) < 1e-6);
  CHECK(std::abs(box.loglik_constrained - al.loglik_constrained) < 1e-6);
}

TEST_CASE("zero-width zero bounds equal dropping the treatment from the outcome model") {
  const Setup s = sim_setup(2000, 61);
  const std::vector<ModelSpec> specs{
      s.true_specs[0], s.true_specs[1],
      parse_formula("Y ~ A + C1 + C2 + M", Family::gaussian_identity)};
  const EstimatorKind kind = EstimatorKind::closed_form(ClosedFormVariant::linear_nde);
  const FairFitResult fit =
      fit_fair(s.data, s.graph, s.spec, kind, specs, {0.0, 0.0, EffectScale::mean_difference});
  CHECK(fit.achieved_pse == 0.0);

  const FittedGlm dropped =
      fit_glm(s.data, parse_formula("Y ~ C1 + C2 + M", Family::gaussian_identity));
  const Eigen::VectorXd c = fit.constrained_models.at("Y").coefficients;
  CHECK(std::abs(c[1]) < 1e-12);  // treatment slope pinned at zero
  CHECK(std::abs(c[0] - dropped.coefficients[0]) < 1e-6);
  for (int j = 2; j <= 4; ++j)
    CHECK(std::abs(c[j] - dropped.coefficients[j - 1]) < 1e-6);
}

TEST_CASE("odds-ratio bounds constrain the logistic closed form on the log scale") {
  // Binary outcome SEM: sim1 shape with a logit outcome.
  Sem sem = load_sem(kData + "/sim1.json");
  sem.equations[3].link = LinkKind::logit;
  sem.equations[3].noise = {};
  sem.equations[3].intercept = -4.0;
  const Dataset d = generate(sem, 3000, 67);
  const CausalGraph g = load_graph(kData + "/sim1_graph.json");
  PseSpec spec = load_pse(kData + "/sim1_nde.json");
  spec.scale = EffectScale::odds_ratio;
  const std::vector<ModelSpec> specs{
      parse_formula("A ~ 1", Family::bernoulli_logit),
      parse_formula("M ~ C1 + C2 + A", Family::gaussian_identity),
      parse_formula("Y ~ A + C1 + C2 + M", Family::bernoulli_logit)};
  const EstimatorKind kind = EstimatorKind::closed_form(ClosedFormVariant::logistic_or_nde);
  const Bounds b{0.95, 1.05, EffectScale::odds_ratio};
  const FairFitResult fit = fit_fair(d, g, spec, kind, specs, b);
  CHECK(fit.solver.feasible);
  CHECK(fit.achieved_pse >= 0.95 * (1.0 - 1e-4));
  CHECK(fit.achieved_pse <= 1.05 * (1.0 + 1e-4));
  CHECK(fit.loglik_constrained <= fit.loglik_unconstrained + 1e-8);
}

TEST_CASE("chain closed form is constrained across several models at once") {
  const CausalGraph g = load_graph(kData + "/adult_graph.json");
  const PseSpec spec = load_pse(kData + "/adult_green.json");
  const Dataset d = load_csv(kData + "/adult_synth.csv");
  const std::vector<ModelSpec> specs{
      parse_formula("marital ~ gender + age + natl", Family::gaussian_identity),
      parse_formula("edu ~ gender + marital + age + natl", Family::gaussian_identity),
      parse_formula("occup ~ gender + marital + edu + age + natl", Family::gaussian_identity),
      parse_formula("hours ~ gender + marital + edu + age + natl", Family::gaussian_identity),
      parse_formula("workcls ~ gender + marital + edu + age + natl", Family::gaussian_identity),
      parse_formula("income ~ gender + marital + edu + occup + hours + workcls + age + natl",
                    Family::bernoulli_logit)};
  const EstimatorKind kind = EstimatorKind::closed_form(ClosedFormVariant::chain_or_pse);

  // Unconstrained value first, then the default tolerated band.
  ModelSet mle;
  for (const auto& ms : specs) mle[ms.response] = fit_glm(d, ms);
  const double unconstrained = pse_closed_form(mle, spec, ClosedFormVariant::chain_or_pse).value;
  CHECK(unconstrained > 0.0);

  const Bounds b{0.95, 1.05, EffectScale::odds_ratio};
  const FairFitResult fit = fit_fair(d, g, spec, kind, specs, b);
  CHECK(fit.solver.feasible);
  CHECK(fit.achieved_pse >= 0.95 * (1.0 - 1e-4));
  CHECK(fit.achieved_pse <= 1.05 * (1.0 + 1e-4));
  CHECK(fit.loglik_constrained <= fit.loglik_unconstrained + 1e-8);
  CHECK(std::abs(evaluate_pse(fit, d) - fit.achieved_pse) < 1e-8);
  CHECK(fit.w_set == std::vector<std::string>{"gender", "age", "natl"});
}

TEST_CASE("outcome model selection scores candidates by fair rMSE") {
  const Setup train = sim_setup(3000, 71);
  const Dataset validate = generate(load_sem(kData + "/sim1.json"), 1000, 72);
  const std::vector<ModelSpec> candidates{
      parse_formula("Y ~ A + M", Family::gaussian_identity),
      parse_formula("Y ~ A + C1 + C2 + M", Family::gaussian_identity),
      parse_formula("Y ~ A + C1 + C2 + M + A:C1 + A:C2 + A:M + C1:C2 + C1:M + C2:M",
                    Family::gaussian_identity)};
  const Bounds b{-0.5, 0.5, EffectScale::mean_difference};
  const SelectionResult sel = select_outcome_model(
      candidates, train.data, validate, train.true_specs[0], train.true_specs[1], train.graph,
      train.spec, {EstimatorTag::triply_robust, {}}, b);

  REQUIRE(sel.reports.size() == 3);
  for (const auto& rep : sel.reports) CHECK(sel.rmse <= rep.rmse);

  // Robust estimator: the unconstrained estimate barely moves across
  // candidate outcome models.
  for (const auto& rep : sel.reports)
    for (const auto& other : sel.reports)
      CHECK(std::abs(rep.unconstrained_pse - other.unconstrained_pse) < 0.1);

  // Re-scoring the chosen fit reproduces the reported rMSE.
  const FairPredictor predictor(sel.fit);
  const BatchPredictResult batch = predictor.batch_predict(validate);
  REQUIRE(batch.rmse.has_value());
  CHECK(std::abs(*batch.rmse - sel.rmse) < 1e-10);
}

TEST_CASE("selection rejects estimators that lean on the outcome model") {
  const Setup s = sim_setup(500, 83);
  CHECK_THROWS_AS(
      select_outcome_model({parse_formula("Y ~ A + M", Family::gaussian_identity)}, s.data,
                           s.data, s.true_specs[0], s.true_specs[1], s.graph, s.spec,
                           {EstimatorTag::plugin_mediation, {}},
                           {-0.5, 0.5, EffectScale::mean_difference}),
      ValidationError);
  CHECK_THROWS_AS(select_outcome_model({}, s.data, s.data, s.true_specs[0], s.true_specs[1],
                                       s.graph, s.spec, {EstimatorTag::triply_robust, {}},
                                       {-0.5, 0.5, EffectScale::mean_difference}),
                  ValidationError);
}

TEST_CASE("single candidate is returned as chosen") {
  const Setup s = sim_setup(800, 91);
  const Dataset validate = generate(load_sem(kData + "/sim1.json"), 400, 92);
  const ModelSpec only = parse_formula("Y ~ A + C1 + C2 + M", Family::gaussian_identity);
  const SelectionResult sel = select_outcome_model(
      {only}, s.data, validate, s.true_specs[0], s.true_specs[1], s.graph, s.spec,
      {EstimatorTag::ipw, {}}, {-0.5, 0.5, EffectScale::mean_difference});
  CHECK(sel.chosen.formula() == only.formula());
  CHECK(sel.reports.size() == 1);
}
