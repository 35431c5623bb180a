#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fairpse/errors.hpp"
#include "fairpse/estimators.hpp"
#include "fairpse/io.hpp"
#include "fairpse/simulate.hpp"
#include "oracles.hpp"

using namespace fairpse;

namespace {

const std::string kData = FAIRPSE_DATA_DIR;

PseSpec nde_spec() {
  PseSpec s;
  s.treatment = "A";
  s.outcome = "Y";
  s.disallowed_paths = {{"A", "Y"}};
  return s;
}

FittedGlm make_model(const std::string& formula, Family family,
                     const std::vector<double>& coeffs, double dispersion = 1.0) {
  FittedGlm m;
  m.spec = parse_formula(formula, family);
  m.coefficients = Eigen::Map<const Eigen::VectorXd>(coeffs.data(),
                                                     static_cast<Eigen::Index>(coeffs.size()));
  m.dispersion = dispersion;
  return m;
}

// Four rows, (a, m, y) = (1,1,4), (1,0,2), (0,1,1), (0,0,1).
Dataset four_rows() {
  Dataset d;
  d.add_column("A", Eigen::Vector4d(1, 1, 0, 0));
  d.add_column("M", Eigen::Vector4d(1, 0, 1, 0));
  d.add_column("Y", Eigen::Vector4d(4, 2, 1, 1));
  return d;
}

}  // namespace

TEST_CASE("plug-in NDE on the hand-worked toy") {
  // E[Y|1,1]=3, E[Y|1,0]=1, E[Y|0,1]=2, E[Y|0,0]=0 via a saturated model;
  // p(M=1|A=0)=0.5 via a zero-intercept logit.
  const FittedGlm y = make_model("Y ~ A + M + A:M", Family::gaussian_identity, {0, 1, 2, 0});
  const FittedGlm m = make_model("M ~ A", Family::bernoulli_logit, {0.0, 2.1972245773362196});
  const Dataset d = four_rows();
  const EstimateReport nde = nde_plugin(y, m, d, nde_spec());
  CHECK(nde.value == doctest::Approx(1.0).epsilon(1e-12));

  // p(M=1|A=1) = 0.9 through that slope: NIE = 3(.9-.5) + 1(.5-.9) = 0.8.
  const EstimateReport nie = nie_plugin(y, m, d, nde_spec());
  CHECK(nie.value == doctest::Approx(0.8).epsilon(1e-9));
}

TEST_CASE("outcome model constant in the treatment gives a zero NDE exactly") {
  const FittedGlm y = make_model("Y ~ M", Family::gaussian_identity, {0.7, 1.3});
  const FittedGlm m = make_model("M ~ A", Family::bernoulli_logit, {0.2, 0.4});
  const EstimateReport r = nde_plugin(y, m, four_rows(), nde_spec());
  CHECK(r.value == 0.0);
}

TEST_CASE("mediator model independent of the treatment gives a zero NIE exactly") {
  const FittedGlm y = make_model("Y ~ A + M", Family::gaussian_identity, {0.1, 0.9, 1.1});
  const FittedGlm m = make_model("M ~ 1", Family::bernoulli_logit, {0.3});
  const EstimateReport r = nie_plugin(y, m, four_rows(), nde_spec());
  CHECK(r.value == 0.0);
}

TEST_CASE("a linear outcome model without treatment interactions returns its slope") {
  const Sem sem = load_sem(kData + "/sim1.json");
  const Dataset d = generate(sem, 1000, 3);
  const FittedGlm y = fit_glm(d, parse_formula("Y ~ A + C1 + C2 + M", Family::gaussian_identity));
  const FittedGlm m = fit_glm(d, parse_formula("M ~ A + C1 + C2", Family::bernoulli_logit));
  const EstimateReport r = nde_plugin(y, m, d, nde_spec());
  CHECK(r.value == doctest::Approx(y.coefficient("A")).epsilon(1e-12));
}

TEST_CASE("telescoping: NDE + NIE equals the plug-in ACE") {
  for (int trial = 0; trial < 30; ++trial) {
    const Dataset d = oracles::random_binary_dataset({"A", "M", "C", "Y"}, 60, 500 + trial);
    const FittedGlm y = make_model("Y ~ A + M + C + A:M", Family::gaussian_identity,
                                   {0.1 * trial, 1.0, -0.5, 0.3, 0.7});
    const FittedGlm m = make_model("M ~ A + C", Family::bernoulli_logit, {0.1, 0.4, -0.2});
    const PseSpec s = nde_spec();
    const double nde = nde_plugin(y, m, d, s).value;
    const double nie = nie_plugin(y, m, d, s).value;
    const double ace = ace_plugin(y, m, d, s).value;
    CHECK(std::abs(nde + nie - ace) < 1e-10);
  }
}

TEST_CASE("IPW on the four-row example") {
  const FittedGlm a = make_model("A ~ 1", Family::bernoulli_logit, {0.0});
  const FittedGlm m = make_model("M ~ 1", Family::bernoulli_logit, {0.0});
  const EstimateReport r = nde_ipw(a, m, four_rows(), nde_spec());
  CHECK(r.value == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.models_used == std::vector<std::string>{"A", "M"});
}

TEST_CASE("IPW handles the swapped orientation active=0, baseline=1") {
  const FittedGlm a = make_model("A ~ 1", Family::bernoulli_logit, {0.0});
  const FittedGlm m = make_model("M ~ 1", Family::bernoulli_logit, {0.0});
  PseSpec spec = nde_spec();
  spec.active_value = 0.0;
  spec.baseline_value = 1.0;
  // Mirror of the four-row example: rows with A=0 carry the weighted term.
  CHECK(nde_ipw(a, m, four_rows(), spec).value == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("plug-in contrasts scale with non-unit treatment values") {
  const FittedGlm y = make_model("Y ~ A + M", Family::gaussian_identity, {1.0, 0.7, 0.4});
  const FittedGlm m = make_model("M ~ A", Family::bernoulli_logit, {0.0, 0.3});
  Dataset d = four_rows();
  PseSpec spec = nde_spec();
  spec.active_value = 2.0;
  spec.baseline_value = -1.0;
  // No treatment interactions: the NDE is the slope times (active - baseline).
  CHECK(nde_plugin(y, m, d, spec).value == doctest::Approx(0.7 * 3.0).epsilon(1e-12));
}

TEST_CASE("IPW is zero when every outcome is zero") {
  Dataset d = four_rows();
  const Eigen::Index y_col = d.require_column("Y");
  d.values.col(y_col).setZero();
  const FittedGlm a = make_model("A ~ 1", Family::bernoulli_logit, {0.0});
  const FittedGlm m = make_model("M ~ 1", Family::bernoulli_logit, {0.0});
  CHECK(nde_ipw(a, m, d, nde_spec()).value == 0.0);
}

TEST_CASE("positivity violations name the row") {
  // A fitted treatment model this lopsided pushes p(baseline|c) under 1e-6.
  const FittedGlm a = make_model("A ~ 1", Family::bernoulli_logit, {30.0});
  const FittedGlm m = make_model("M ~ 1", Family::bernoulli_logit, {0.0});
  Dataset d = four_rows();
  CHECK_THROWS_WITH_AS(nde_ipw(a, m, d, nde_spec()), doctest::Contains("row"),
                       PositivityError);
}

TEST_CASE("an all-treated dataset trips the positivity check end to end") {
  Dataset d;
  const Eigen::Index n = 200;
  d.add_column("A", Eigen::VectorXd::Ones(n));
  Eigen::VectorXd m(n), y(n);
  Rng rng(12);
  for (Eigen::Index i = 0; i < n; ++i) {
    m[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    y[i] = m[i] + rng.normal();
  }
  d.add_column("M", m);
  d.add_column("Y", y);
  const FittedGlm a = fit_glm(d, parse_formula("A ~ 1", Family::bernoulli_logit));
  const FittedGlm mm = fit_glm(d, parse_formula("M ~ 1", Family::bernoulli_logit));
  CHECK_THROWS_AS(nde_ipw(a, mm, d, nde_spec()), PositivityError);
  const FittedGlm yy = fit_glm(d, parse_formula("Y ~ A + M", Family::gaussian_identity));
  CHECK_THROWS_AS(nde_triply_robust(a, mm, yy, d, nde_spec()), PositivityError);
}

TEST_CASE("triply robust is near zero on a no-effect SEM") {
  Sem sem = load_sem(kData + "/sim1.json");
  for (auto& eq : sem.equations)
    for (auto& [term, coeff] : eq.terms)
      for (const auto& f : term.factors)
        if (f == "A") coeff = 0.0;
  const Dataset d = generate(sem, 4000, 21);
  const FittedGlm a = fit_glm(d, parse_formula("A ~ 1", Family::bernoulli_logit));
  const FittedGlm m = fit_glm(d, parse_formula("M ~ C1 + C2 + A + A:C1 + A:C2", Family::bernoulli_logit));
  const FittedGlm y = fit_glm(d, parse_formula("Y ~ A + C1 + C2 + M + A:C1 + A:C2 + A:M + C1:C2 + C1:M + C2:M",
                                               Family::gaussian_identity));
  const EstimateReport r = nde_triply_robust(a, m, y, d, nde_spec());
  CHECK(std::abs(r.value) < 2.0 * r.diagnostics.at("se_rows"));
  CHECK(r.diagnostics.count("eta_active_baseline_mean") == 1);
}

TEST_CASE("union-model robustness over replications") {
  // Mean of the triply robust estimate under a wrong outcome model (correct
  // treatment and mediator models) stays near the oracle value.
  const Sem sem = load_sem(kData + "/sim1.json");
  const PseSpec spec = [] {
    PseSpec s;
    s.treatment = "A";
    s.outcome = "Y";
    s.disallowed_paths = {{"A", "Y"}};
    return s;
  }();
  const OracleResult oracle = counterfactual_oracle(sem, spec, 300000, 1234);

  double mean = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const Dataset d = generate(sem, 4000, 40000 + static_cast<std::uint64_t>(r));
    const FittedGlm a = fit_glm(d, parse_formula("A ~ 1", Family::bernoulli_logit));
    const FittedGlm m = fit_glm(d, parse_formula("M ~ C1 + C2 + A + A:C1 + A:C2", Family::bernoulli_logit));
    const FittedGlm y = fit_glm(d, parse_formula("Y ~ A + C1 + C2 + M + A:C1:C1", Family::gaussian_identity));
    mean += nde_triply_robust(a, m, y, d, spec).value;
  }
  mean /= reps;
  CHECK(std::abs(mean - oracle.value) < 0.1);
}

TEST_CASE("edge g-formula vanishes when the W model ignores the treatment") {
  PseSpec spec = nde_spec();
  spec.disallowed_paths = {{"A", "W", "Y"}};
  ModelSet models;
  models["M"] = make_model("M ~ A + C", Family::bernoulli_logit, {0.1, 0.3, 0.2});
  models["W"] = make_model("W ~ M + C", Family::bernoulli_logit, {0.2, 0.5, -0.1});
  models["Y"] = make_model("Y ~ A + W + M + C", Family::gaussian_identity,
                           {0.5, 1.0, 0.7, 0.4, 0.2});
  const Dataset d = oracles::random_binary_dataset({"A", "M", "W", "C", "Y"}, 40, 77);
  const EstimateReport r = pse_edge_g(models, d, spec);
  CHECK(r.value == 0.0);
}

TEST_CASE("edge g-formula equals exhaustive enumeration on saturated binary models") {
  const Dataset d = oracles::random_binary_dataset({"C", "A", "M", "W", "Y"}, 400, 2025);
  PseSpec spec = nde_spec();
  spec.disallowed_paths = {{"A", "W", "Y"}};

  ModelSet models;
  models["M"] = fit_glm(d, parse_formula("M ~ A + C + A:C", Family::bernoulli_logit));
  models["W"] = fit_glm(d, parse_formula("W ~ A + M + C + A:M + A:C + M:C + A:M:C",
                                         Family::bernoulli_logit));
  models["Y"] = fit_glm(d, parse_formula("Y ~ A + W + M + C + A:W + A:M + W:M + A:C",
                                         Family::gaussian_identity));
  const EstimateReport r = pse_edge_g(models, d, spec);
  const double oracle = oracles::exhaustive_edge_g(
      models.at("Y"), models.at("M"), models.at("W"), d, spec,
      /*sub_m=*/spec.baseline_value, /*sub_w=*/spec.active_value,
      /*sub_y=*/spec.baseline_value);
  CHECK(r.value == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("plug-in NDE equals exhaustive enumeration on saturated models") {
  const Dataset d = oracles::random_binary_dataset({"C", "A", "M", "Y"}, 300, 808);
  const FittedGlm y = fit_glm(d, parse_formula("Y ~ A + M + C + A:M + A:C + M:C + A:M:C",
                                               Family::gaussian_identity));
  const FittedGlm m = fit_glm(d, parse_formula("M ~ A + C + A:C", Family::bernoulli_logit));
  const EstimateReport r = nde_plugin(y, m, d, nde_spec());
  const double oracle = oracles::exhaustive_nde_plugin(y, m, d, nde_spec());
  CHECK(r.value == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("closed forms") {
  PseSpec spec = nde_spec();

  SUBCASE("linear NDE returns the treatment slope") {
    ModelSet models;
    models["Y"] = make_model("Y ~ A + M + C", Family::gaussian_identity, {1.0, 2.5, 0.3, 0.1});
    const EstimateReport r = pse_closed_form(models, spec, ClosedFormVariant::linear_nde);
    CHECK(r.value == 2.5);
    CHECK(r.scale == EffectScale::mean_difference);
  }

  SUBCASE("logistic odds-ratio NDE exponentiates the treatment slope") {
    spec.scale = EffectScale::odds_ratio;
    ModelSet models;
    models["Y"] = make_model("Y ~ A + M + C", Family::bernoulli_logit, {-2.0, 0.4, 0.3, 0.1});
    models["M"] = make_model("M ~ A + C", Family::gaussian_identity, {0.0, 0.5, 0.2});
    const EstimateReport r = pse_closed_form(models, spec, ClosedFormVariant::logistic_or_nde);
    CHECK(r.value == doctest::Approx(std::exp(0.4)).epsilon(1e-14));
    CHECK(r.scale == EffectScale::odds_ratio);
  }

  SUBCASE("chain odds-ratio PSE multiplies coefficients along each path") {
    spec.scale = EffectScale::odds_ratio;
    spec.disallowed_paths = {{"A", "Y"}, {"A", "M", "Y"}, {"A", "M", "L", "Y"}};
    ModelSet models;
    models["Y"] = make_model("Y ~ A + M + L", Family::bernoulli_logit, {0.0, 0.1, 0.2, 0.3});
    models["M"] = make_model("M ~ A", Family::gaussian_identity, {0.0, 0.5});
    models["L"] = make_model("L ~ A + M", Family::gaussian_identity, {0.0, 0.0, 0.4});
    const EstimateReport r = pse_closed_form(models, spec, ClosedFormVariant::chain_or_pse);
    // 0.1 + 0.2*0.5 + 0.3*0.4*0.5 = 0.26
    CHECK(r.value == doctest::Approx(std::exp(0.26)).epsilon(1e-13));
  }

  SUBCASE("all-null chain is exactly one") {
    spec.scale = EffectScale::odds_ratio;
    spec.disallowed_paths = {{"A", "Y"}, {"A", "M", "Y"}};
    ModelSet models;
    models["Y"] = make_model("Y ~ A + M", Family::bernoulli_logit, {0.3, 0.0, 0.0});
    models["M"] = make_model("M ~ A", Family::gaussian_identity, {0.1, 0.0});
    CHECK(pse_closed_form(models, spec, ClosedFormVariant::chain_or_pse).value == 1.0);
  }

  SUBCASE("family and interaction preconditions") {
    ModelSet models;
    models["Y"] = make_model("Y ~ A + M", Family::bernoulli_logit, {0.0, 0.1, 0.2});
    CHECK_THROWS_AS(pse_closed_form(models, spec, ClosedFormVariant::linear_nde),
                    ValidationError);
    models["Y"] = make_model("Y ~ A + M + A:M", Family::gaussian_identity, {0, 1, 1, 1});
    CHECK_THROWS_WITH_AS(pse_closed_form(models, spec, ClosedFormVariant::linear_nde),
                         doctest::Contains("interaction"), ValidationError);
  }

  SUBCASE("prevalent outcomes draw a warning on the odds-ratio scale") {
    spec.scale = EffectScale::odds_ratio;
    ModelSet models;
    models["Y"] = make_model("Y ~ A + M", Family::bernoulli_logit, {0.0, 0.4, 0.1});
    models["M"] = make_model("M ~ A", Family::gaussian_identity, {0.0, 0.5});
    Dataset d = four_rows();  // outcome column far above 10% prevalence
    const EstimateReport r =
        pse_closed_form(models, spec, ClosedFormVariant::logistic_or_nde, &d);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("prevalence") != std::string::npos);
  }
}

TEST_CASE("odds-ratio requests are refused outside the closed forms") {
  PseSpec spec = nde_spec();
  spec.scale = EffectScale::odds_ratio;
  const FittedGlm y = make_model("Y ~ A + M", Family::gaussian_identity, {0, 1, 1});
  const FittedGlm m = make_model("M ~ A", Family::bernoulli_logit, {0, 0.1});
  CHECK_THROWS_WITH_AS(nde_plugin(y, m, four_rows(), spec), doctest::Contains("odds-ratio"),
                       ValidationError);
}

TEST_CASE("adjustment formula basics") {
  const FittedGlm y = make_model("Y ~ A + C", Family::gaussian_identity, {1.0, 2.0, 0.5});
  Dataset d;
  d.add_column("A", Eigen::Vector4d(0, 1, 0, 1));
  d.add_column("C", Eigen::Vector4d(0, 0, 1, 1));
  d.add_column("Y", Eigen::Vector4d(1, 3, 1.5, 3.5));
  CHECK(counterfactual_mean_adjustment(y, d, "A", 1.0) ==
        doctest::Approx(1.0 + 2.0 + 0.5 * 0.5).epsilon(1e-12));

  const FittedGlm no_adjust = make_model("Y ~ A", Family::gaussian_identity, {1.0, 2.0});
  CHECK(counterfactual_mean_adjustment(no_adjust, d, "A", 1.0) ==
        doctest::Approx(3.0).epsilon(1e-12));

  const FittedGlm no_treatment = make_model("Y ~ C", Family::gaussian_identity, {1.0, 0.5});
  CHECK_THROWS_AS(counterfactual_mean_adjustment(no_treatment, d, "A", 1.0), ValidationError);
}

TEST_CASE("continuous mediators need a Monte Carlo budget") {
  const Sem sem = load_sem(kData + "/fig1b_lingauss.json");
  const Dataset d = generate(sem, 300, 4);
  const FittedGlm y = fit_glm(d, parse_formula("Y ~ A + M + C", Family::gaussian_identity));
  const FittedGlm m = fit_glm(d, parse_formula("M ~ A + C", Family::gaussian_identity));
  CHECK_THROWS_WITH_AS(nde_plugin(y, m, d, nde_spec()), doctest::Contains("Monte Carlo"),
                       ValidationError);
  const McConfig mc{400, 9};
  CHECK_NOTHROW(nde_plugin(y, m, d, nde_spec(), mc));
}

TEST_CASE("Monte Carlo plug-in matches the exact linear reduction") {
  // Gaussian mediator, linear outcome with no treatment interactions: the
  // plug-in NDE is exactly the outcome model's treatment slope there too.
  const Sem sem = load_sem(kData + "/fig1b_lingauss.json");
  const Dataset d = generate(sem, 500, 14);
  const FittedGlm y = fit_glm(d, parse_formula("Y ~ A + M + C", Family::gaussian_identity));
  const FittedGlm m = fit_glm(d, parse_formula("M ~ A + C", Family::gaussian_identity));
  const McConfig mc{1000, 3};
  const EstimateReport r = nde_plugin(y, m, d, nde_spec(), mc);
  CHECK(r.value == doctest::Approx(y.coefficient("A")).epsilon(1e-9));
}

TEST_CASE("analytic estimator gradients match finite differences") {
  const Sem sem = load_sem(kData + "/sim1.json");
  const Dataset d = generate(sem, 800, 31);
  const PseSpec spec = nde_spec();
  ModelSet models;
  models["A"] = fit_glm(d, parse_formula("A ~ 1", Family::bernoulli_logit));
  models["M"] = fit_glm(d, parse_formula("M ~ C1 + C2 + A", Family::bernoulli_logit));
  models["Y"] = fit_glm(d, parse_formula("Y ~ A + C1 + C2 + M + A:M", Family::gaussian_identity));
  models["Y"].coefficients[1] -= 0.8;  // move off the MLE
  models["M"].coefficients[2] += 0.3;

  struct Case {
    EstimatorKind kind;
    std::vector<std::string> order;
  };
  const std::vector<Case> cases{
      {{EstimatorTag::plugin_mediation, {}}, {"M", "Y"}},
      {{EstimatorTag::ipw, {}}, {"A", "M"}},
      {{EstimatorTag::triply_robust, {}}, {"A", "M", "Y"}},
  };
  for (const auto& c : cases) {
    const PinnedEstimator pinned(c.kind, d, spec);
    const Eigen::VectorXd g = pinned.gradient(models, c.order);
    Eigen::Index pos = 0;
    for (const auto& name : c.order) {
      for (Eigen::Index j = 0; j < models[name].coefficients.size(); ++j) {
        const double h = 1e-6 * (1.0 + std::abs(models[name].coefficients[j]));
        ModelSet up = models, dn = models;
        up[name].coefficients[j] += h;
        dn[name].coefficients[j] -= h;
        const double fd = (pinned.value(up) - pinned.value(dn)) / (2.0 * h);
        CHECK(std::abs(fd - g[pos + j]) <
              1e-5 * std::max(1.0, std::max(std::abs(fd), std::abs(g[pos + j]))));
      }
      pos += models[name].coefficients.size();
    }
  }
}

TEST_CASE("estimate_pse dispatch and models_in_g") {
  const CausalGraph g = load_graph(kData + "/sim1_graph.json");
  const PseSpec spec = nde_spec();
  CHECK(models_in_g({EstimatorTag::ipw, {}}, g, spec) == std::vector<std::string>{"A", "M"});
  CHECK(models_in_g({EstimatorTag::triply_robust, {}}, g, spec) ==
        std::vector<std::string>{"A", "M", "Y"});
  CHECK(models_in_g(EstimatorKind::closed_form(ClosedFormVariant::linear_nde), g, spec) ==
        std::vector<std::string>{"Y"});

  const Dataset d = generate(load_sem(kData + "/sim1.json"), 600, 2);
  ModelSet models;
  models["A"] = fit_glm(d, parse_formula("A ~ 1", Family::bernoulli_logit));
  models["M"] = fit_glm(d, parse_formula("M ~ C1 + C2 + A", Family::bernoulli_logit));
  models["Y"] = fit_glm(d, parse_formula("Y ~ A + C1 + C2 + M", Family::gaussian_identity));
  const EstimateReport direct = nde_ipw(models.at("A"), models.at("M"), d, spec);
  const EstimateReport dispatched = estimate_pse({EstimatorTag::ipw, {}}, models, d, spec);
  CHECK(direct.value == dispatched.value);

  // IPW never touches the outcome model: replacing it changes nothing, bit
  // for bit.
  ModelSet mangled = models;
  mangled["Y"].coefficients.setConstant(1e6);
  CHECK(estimate_pse({EstimatorTag::ipw, {}}, mangled, d, spec).value == direct.value);

  ModelSet missing;
  missing["M"] = models.at("M");
  CHECK_THROWS_AS(estimate_pse({EstimatorTag::ipw, {}}, missing, d, spec), ValidationError);

  CHECK(EstimatorKind::parse("triply_robust").tag == EstimatorTag::triply_robust);
  CHECK(EstimatorKind::parse("closed_form_chain_or_pse").variant ==
        ClosedFormVariant::chain_or_pse);
  CHECK_THROWS_AS(EstimatorKind::parse("nope"), ValidationError);
}
