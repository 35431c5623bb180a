#pragma once

#include <json.hpp>
#include <string>

#include "fairpse/constrained_fit.hpp"
#include "fairpse/dataset.hpp"
#include "fairpse/estimators.hpp"
#include "fairpse/glm.hpp"
#include "fairpse/graph.hpp"
#include "fairpse/simulate.hpp"

namespace fairpse {

using nlohmann::json;

json graph_to_json(const CausalGraph& graph);
CausalGraph graph_from_json(const json& j);
CausalGraph load_graph(const std::string& path);

json pse_to_json(const PseSpec& spec);
PseSpec pse_from_json(const json& j);
PseSpec load_pse(const std::string& path);

/// load_csv plus role validation (binary treatment and friends).
Dataset load_dataset(const std::string& path, const ColumnRoles& roles);

json verdict_to_json(const IdVerdict& verdict);
json report_to_json(const EstimateReport& report);

json model_to_json(const FittedGlm& model);
FittedGlm model_from_json(const json& j);

json fair_fit_to_json(const FairFitResult& fit);
FairFitResult fair_fit_from_json(const json& j);
FairFitResult load_fair_fit(const std::string& path);

json sem_to_json(const Sem& sem);
Sem sem_from_json(const json& j);
Sem load_sem(const std::string& path);

json load_json_file(const std::string& path);
void write_json_file(const json& j, const std::string& path);

}  // namespace fairpse
