#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace fairpse {

/// A causal diagram: a DAG over named vertices plus bidirected edges that
/// stand for unobserved common causes of their endpoints.
struct CausalGraph {
  std::vector<std::string> vertices;
  std::vector<std::pair<std::string, std::string>> directed_edges;   // (tail, head)
  std::vector<std::pair<std::string, std::string>> bidirected_edges; // unordered

  bool has_vertex(const std::string& v) const;
  bool has_directed_edge(const std::string& tail, const std::string& head) const;
  std::vector<std::string> parents(const std::string& v) const;
  std::vector<std::string> children(const std::string& v) const;
};

/// Throws ValidationError unless the directed part is acyclic (naming a
/// cycle), every endpoint is declared, and there are no self-loops or
/// duplicate edges.
void validate_graph(const CausalGraph& graph);

using Path = std::vector<std::string>;

/// All directed paths from `from` to `to`, ordered lexicographically by
/// vertex sequence.
std::vector<Path> enumerate_causal_paths(const CausalGraph& graph,
                                         const std::string& from,
                                         const std::string& to);

enum class EffectScale { mean_difference, odds_ratio };
std::string scale_name(EffectScale s);
EffectScale scale_from_name(const std::string& name);

/// A path-specific effect request: the treatment's influence along the
/// disallowed paths is measured with the treatment at `active_value`,
/// everywhere else at `baseline_value`.
struct PseSpec {
  std::string treatment;
  std::string outcome;
  double active_value = 1.0;
  double baseline_value = 0.0;
  std::vector<Path> disallowed_paths;
  EffectScale scale = EffectScale::mean_difference;
};

void validate_pse_spec(const CausalGraph& graph, const PseSpec& spec);

enum class IdStatus { identified, not_identified };
enum class IdStrategy { adjustment, mediation_formula, edge_g_formula, general_pse_product };

std::string strategy_name(IdStrategy s);

struct IdVerdict {
  IdStatus status = IdStatus::not_identified;
  std::optional<IdStrategy> strategy;   // present iff identified
  std::vector<std::string> witness;     // offending vertex/district otherwise
  std::string reason;
};

/// Recanting-witness check on the observed DAG, extended to districts:
/// vertices joined by bidirected edges are merged before the witness test.
/// Patterns outside its reach come back not_identified, never a guess.
IdVerdict check_identification(const CausalGraph& graph, const PseSpec& spec);

/// Per-edge active/baseline labeling derived from the disallowed path set.
/// This is the internal currency of the estimators and the simulation oracle.
struct EdgeLabeling {
  std::set<std::pair<std::string, std::string>> active_edges;
  /// Treatment value each causal vertex (mediators + outcome) receives on its
  /// direct treatment edge: active_value when that edge is disallowed.
  std::map<std::string, double> substitution;
  std::vector<std::string> mediators;  // topological order
  std::vector<std::string> baseline;   // vertices off every treatment->outcome path
};

/// Throws ValidationError when the path set is not edge-consistent, i.e. when
/// some causal path outside the set would be forced active edge-by-edge (a
/// vertex would have to take two values on the same incoming edge).
EdgeLabeling label_edges(const CausalGraph& graph, const PseSpec& spec);

/// Bidirected-connected components, each sorted; singletons included.
std::vector<std::vector<std::string>> districts(const CausalGraph& graph);

/// Mediators of the requested effect: intermediate vertices of treatment->outcome paths.
std::vector<std::string> mediators_of(const CausalGraph& graph, const PseSpec& spec);

/// Topological order of the directed part (graph must be valid).
std::vector<std::string> topological_order(const CausalGraph& graph);

}  // namespace fairpse
