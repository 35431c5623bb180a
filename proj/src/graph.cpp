#include "fairpse/graph.hpp"

#include <algorithm>
#include <functional>

#include "fairpse/errors.hpp"

namespace fairpse {

namespace {

std::string path_str(const Path& p) {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out += "->";
    out += p[i];
  }
  return out;
}

}  // namespace

bool CausalGraph::has_vertex(const std::string& v) const {
  return std::find(vertices.begin(), vertices.end(), v) != vertices.end();
}

bool CausalGraph::has_directed_edge(const std::string& tail, const std::string& head) const {
  return std::find(directed_edges.begin(), directed_edges.end(),
                   std::make_pair(tail, head)) != directed_edges.end();
}

std::vector<std::string> CausalGraph::parents(const std::string& v) const {
  std::vector<std::string> out;
  for (const auto& [tail, head] : directed_edges)
    if (head == v) out.push_back(tail);
  return out;
}

std::vector<std::string> CausalGraph::children(const std::string& v) const {
  std::vector<std::string> out;
  for (const auto& [tail, head] : directed_edges)
    if (tail == v) out.push_back(head);
  return out;
}

void validate_graph(const CausalGraph& graph) {
  std::set<std::string> names;
  for (const auto& v : graph.vertices) {
    if (!names.insert(v).second)
      throw ValidationError("duplicate vertex '" + v + "'");
    if (v.empty()) throw ValidationError("empty vertex name");
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [tail, head] : graph.directed_edges) {
    if (!names.count(tail) || !names.count(head))
      throw ValidationError("edge (" + tail + ", " + head + ") references an undeclared vertex");
    if (tail == head) throw ValidationError("self-loop on '" + tail + "'");
    if (!seen.insert({tail, head}).second)
      throw ValidationError("duplicate edge (" + tail + ", " + head + ")");
  }
  std::set<std::pair<std::string, std::string>> seen_bi;
  for (const auto& [u, v] : graph.bidirected_edges) {
    if (!names.count(u) || !names.count(v))
      throw ValidationError("bidirected edge (" + u + ", " + v + ") references an undeclared vertex");
    if (u == v) throw ValidationError("bidirected self-loop on '" + u + "'");
    auto key = std::minmax(u, v);
    if (!seen_bi.insert({key.first, key.second}).second)
      throw ValidationError("duplicate bidirected edge (" + u + ", " + v + ")");
  }

  // Cycle check: DFS with an explicit color map; report the cycle found.
  std::map<std::string, int> color;  // 0 white, 1 on stack, 2 done
  std::vector<std::string> stack;
  std::function<void(const std::string&)> visit = [&](const std::string& v) {
    color[v] = 1;
    stack.push_back(v);
    for (const auto& c : graph.children(v)) {
      if (color[c] == 1) {
        auto it = std::find(stack.begin(), stack.end(), c);
        Path cycle(it, stack.end());
        cycle.push_back(c);
        throw ValidationError("cycle detected: " + path_str(cycle));
      }
      if (color[c] == 0) visit(c);
    }
    color[v] = 2;
    stack.pop_back();
  };
  for (const auto& v : graph.vertices)
    if (color[v] == 0) visit(v);
}

std::vector<std::string> topological_order(const CausalGraph& graph) {
  std::map<std::string, int> indeg;
  for (const auto& v : graph.vertices) indeg[v] = 0;
  for (const auto& [tail, head] : graph.directed_edges) ++indeg[head];
  std::vector<std::string> order;
  std::vector<std::string> ready;
  for (const auto& v : graph.vertices)
    if (indeg[v] == 0) ready.push_back(v);
  while (!ready.empty()) {
    std::string v = ready.front();
    ready.erase(ready.begin());
    order.push_back(v);
    for (const auto& c : graph.children(v))
      if (--indeg[c] == 0) ready.push_back(c);
  }
  if (order.size() != graph.vertices.size())
    throw ValidationError("graph is cyclic");
  return order;
}

std::vector<Path> enumerate_causal_paths(const CausalGraph& graph,
                                         const std::string& from,
                                         const std::string& to) {
  if (!graph.has_vertex(from)) throw ValidationError("unknown vertex '" + from + "'");
  if (!graph.has_vertex(to)) throw ValidationError("unknown vertex '" + to + "'");
  std::vector<Path> out;
  Path current{from};
  std::set<std::string> on_path{from};
  // Children visited in sorted order makes the output lexicographic.
  std::function<void(const std::string&)> dfs = [&](const std::string& v) {
    if (v == to) {
      out.push_back(current);
      return;
    }
    auto kids = graph.children(v);
    std::sort(kids.begin(), kids.end());
    for (const auto& c : kids) {
      if (on_path.count(c)) continue;
      current.push_back(c);
      on_path.insert(c);
      dfs(c);
      on_path.erase(c);
      current.pop_back();
    }
  };
  dfs(from);
  return out;
}

std::string scale_name(EffectScale s) {
  return s == EffectScale::mean_difference ? "mean_difference" : "odds_ratio";
}

EffectScale scale_from_name(const std::string& name) {
  if (name == "mean_difference") return EffectScale::mean_difference;
  if (name == "odds_ratio") return EffectScale::odds_ratio;
  throw ValidationError("unknown effect scale '" + name + "'");
}

std::string strategy_name(IdStrategy s) {
  switch (s) {
    case IdStrategy::adjustment: return "adjustment";
    case IdStrategy::mediation_formula: return "mediation_formula";
    case IdStrategy::edge_g_formula: return "edge_g_formula";
    case IdStrategy::general_pse_product: return "general_pse_product";
  }
  return "";
}

void validate_pse_spec(const CausalGraph& graph, const PseSpec& spec) {
  if (!graph.has_vertex(spec.treatment))
    throw ValidationError("treatment '" + spec.treatment + "' is not a graph vertex");
  if (!graph.has_vertex(spec.outcome))
    throw ValidationError("outcome '" + spec.outcome + "' is not a graph vertex");
  if (spec.treatment == spec.outcome)
    throw ValidationError("treatment and outcome must differ");
  if (spec.active_value == spec.baseline_value)
    throw ValidationError("active and baseline treatment values must differ");
  if (spec.disallowed_paths.empty())
    throw ValidationError("disallowed path set is empty");
  std::set<Path> seen;
  for (const auto& p : spec.disallowed_paths) {
    if (p.size() < 2 || p.front() != spec.treatment || p.back() != spec.outcome)
      throw ValidationError("path " + path_str(p) + " must run from " + spec.treatment +
                            " to " + spec.outcome);
    std::set<std::string> verts(p.begin(), p.end());
    if (verts.size() != p.size())
      throw ValidationError("path " + path_str(p) + " repeats a vertex");
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
      if (!graph.has_directed_edge(p[i], p[i + 1]))
        throw ValidationError("path " + path_str(p) + " uses missing edge (" + p[i] +
                              ", " + p[i + 1] + ")");
    if (!seen.insert(p).second)
      throw ValidationError("duplicate disallowed path " + path_str(p));
  }
}

std::vector<std::string> mediators_of(const CausalGraph& graph, const PseSpec& spec) {
  std::set<std::string> on_paths;
  for (const auto& p : enumerate_causal_paths(graph, spec.treatment, spec.outcome))
    for (const auto& v : p) on_paths.insert(v);
  on_paths.erase(spec.treatment);
  on_paths.erase(spec.outcome);
  std::vector<std::string> out;
  for (const auto& v : topological_order(graph))
    if (on_paths.count(v)) out.push_back(v);
  return out;
}

EdgeLabeling label_edges(const CausalGraph& graph, const PseSpec& spec) {
  validate_graph(graph);
  validate_pse_spec(graph, spec);

  EdgeLabeling lab;
  for (const auto& p : spec.disallowed_paths)
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
      lab.active_edges.insert({p[i], p[i + 1]});

  // Edge consistency: a causal path whose every edge is active transmits the
  // active treatment value, so it must itself be disallowed; otherwise some
  // vertex would need two values on the same incoming edge.
  const auto all_paths = enumerate_causal_paths(graph, spec.treatment, spec.outcome);
  std::set<Path> disallowed(spec.disallowed_paths.begin(), spec.disallowed_paths.end());
  for (const auto& p : all_paths) {
    bool all_active = true;
    for (std::size_t i = 0; i + 1 < p.size() && all_active; ++i)
      all_active = lab.active_edges.count({p[i], p[i + 1]}) > 0;
    if (all_active && !disallowed.count(p))
      throw ValidationError(
          "disallowed path set is not edge-consistent: path " + path_str(p) +
          " is forced active edge-by-edge but was not listed");
  }

  lab.mediators = mediators_of(graph, spec);
  std::set<std::string> causal(lab.mediators.begin(), lab.mediators.end());
  causal.insert(spec.outcome);
  for (const auto& v : causal)
    lab.substitution[v] = lab.active_edges.count({spec.treatment, v})
                              ? spec.active_value
                              : spec.baseline_value;
  for (const auto& v : graph.vertices)
    if (!causal.count(v) && v != spec.treatment) lab.baseline.push_back(v);
  return lab;
}

std::vector<std::vector<std::string>> districts(const CausalGraph& graph) {
  std::map<std::string, std::string> parent;
  std::function<std::string(const std::string&)> find = [&](const std::string& v) {
    if (parent[v] == v) return v;
    return parent[v] = find(parent[v]);
  };
  for (const auto& v : graph.vertices) parent[v] = v;
  for (const auto& [u, v] : graph.bidirected_edges) parent[find(u)] = find(v);

  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& v : graph.vertices) groups[find(v)].push_back(v);
  std::vector<std::vector<std::string>> out;
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end());
    out.push_back(members);
  }
  std::sort(out.begin(), out.end());
  return out;
}

IdVerdict check_identification(const CausalGraph& graph, const PseSpec& spec) {
  const EdgeLabeling lab = label_edges(graph, spec);
  const auto& active = lab.active_edges;
  const std::string& a = spec.treatment;
  const std::string& y = spec.outcome;

  std::set<std::string> causal(lab.mediators.begin(), lab.mediators.end());
  causal.insert(y);

  // Supported bidirected pattern: latent confounding among mediators and the
  // outcome only. Anything touching the treatment or a baseline covariate is
  // outside the recanting-district patterns handled here.
  for (const auto& [u, v] : graph.bidirected_edges) {
    if (!causal.count(u) || !causal.count(v)) {
      IdVerdict verdict;
      verdict.status = IdStatus::not_identified;
      verdict.witness = {std::min(u, v), std::max(u, v)};
      verdict.reason = "unsupported pattern: bidirected edge (" + u + ", " + v +
                       ") leaves the mediator/outcome set";
      return verdict;
    }
  }

  // Which counterfactual versions of each causal vertex the outcome consumes.
  // The active version of w reads parent u's active version exactly when the
  // edge (u, w) is active; its baseline version reads baseline parents only.
  std::map<std::string, bool> needed_act, needed_base;
  needed_act[y] = true;
  auto topo = topological_order(graph);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const std::string& w = *it;
    if (!causal.count(w)) continue;
    for (const auto& u : graph.parents(w)) {
      if (!causal.count(u) || u == y) continue;
      if (needed_act[w]) {
        if (active.count({u, w}))
          needed_act[u] = true;
        else
          needed_base[u] = true;
      }
      if (needed_base[w]) needed_base[u] = true;
    }
  }

  // A vertex is two-versioned when active treatment influence reaches it
  // through a chain of active edges.
  std::map<std::string, bool> two_versioned;
  for (const auto& v : topo) {
    if (!causal.count(v)) continue;
    bool tv = false;
    for (const auto& u : graph.parents(v)) {
      if (!active.count({u, v})) continue;
      if (u == a || two_versioned[u]) tv = true;
    }
    two_versioned[v] = tv;
  }

  // District-level witness test. Within one district all factors must be
  // evaluated under a single direct treatment assignment, and no member may
  // need both of its versions.
  for (const auto& district : districts(graph)) {
    std::vector<std::string> members;
    for (const auto& v : district)
      if (causal.count(v)) members.push_back(v);
    if (members.empty()) continue;

    bool wants_active = false, wants_baseline = false;
    for (const auto& v : members) {
      const bool direct = graph.has_directed_edge(a, v);
      if (!direct) continue;
      const bool edge_active = active.count({a, v}) > 0;
      if (needed_act.count(v) && needed_act.at(v)) (edge_active ? wants_active : wants_baseline) = true;
      if (needed_base.count(v) && needed_base.at(v)) wants_baseline = true;
    }
    if (wants_active && wants_baseline) {
      IdVerdict verdict;
      verdict.status = IdStatus::not_identified;
      verdict.witness = members;
      verdict.reason = "recanting district: members receive both active and baseline "
                       "direct treatment edges";
      return verdict;
    }
    for (const auto& v : members) {
      if (v == y) continue;
      if (needed_act.count(v) && needed_act.at(v) && needed_base.count(v) &&
          needed_base.at(v) && two_versioned[v]) {
        IdVerdict verdict;
        verdict.status = IdStatus::not_identified;
        verdict.witness = members;
        verdict.reason = "recanting witness '" + v +
                         "': both its active and baseline versions feed the outcome";
        return verdict;
      }
    }
  }

  IdVerdict verdict;
  verdict.status = IdStatus::identified;
  const auto all_paths = enumerate_causal_paths(graph, a, y);
  std::set<Path> disallowed(spec.disallowed_paths.begin(), spec.disallowed_paths.end());
  bool all = true;
  for (const auto& p : all_paths)
    if (!disallowed.count(p)) all = false;

  if (all) {
    verdict.strategy = IdStrategy::adjustment;
  } else if (disallowed.size() == 1 && disallowed.count({a, y}) && lab.mediators.size() == 1) {
    verdict.strategy = IdStrategy::mediation_formula;
  } else if (lab.mediators.size() <= 2) {
    verdict.strategy = IdStrategy::edge_g_formula;
  } else {
    verdict.strategy = IdStrategy::general_pse_product;
  }
  return verdict;
}

}  // namespace fairpse
