#include "hyperbert/hypergraph.hpp"

#include <algorithm>
#include <string>

namespace hyperbert {

IsolatedNodeError::IsolatedNodeError(NodeId node)
    : std::runtime_error("node " + std::to_string(node) + " belongs to no hyperedge"),
      node_(node) {}

Hypergraph::Hypergraph(Index num_nodes, std::vector<std::vector<NodeId>> hyperedges,
                       std::vector<double> weights)
    : num_nodes_(num_nodes), edges_(std::move(hyperedges)), weights_(std::move(weights)) {
  if (num_nodes_ < 0) throw HypergraphError("negative node count");
  if (weights_.empty()) weights_.assign(edges_.size(), 1.0);
  if (weights_.size() != edges_.size()) {
    throw HypergraphError("got " + std::to_string(weights_.size()) + " weights for " +
                          std::to_string(edges_.size()) + " hyperedges");
  }
  incidence_.assign(static_cast<std::size_t>(num_nodes_), {});
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& edge = edges_[e];
    if (edge.empty()) throw HypergraphError("hyperedge " + std::to_string(e) + " is empty");
    if (!(weights_[e] > 0.0)) {
      throw HypergraphError("hyperedge " + std::to_string(e) + " has non-positive weight");
    }
    std::vector<NodeId> sorted = edge;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw HypergraphError("hyperedge " + std::to_string(e) + " repeats a node");
    }
    for (NodeId v : edge) {
      if (v < 0 || v >= num_nodes_) {
        throw HypergraphError("hyperedge " + std::to_string(e) + " references node " +
                              std::to_string(v) + " outside [0, " + std::to_string(num_nodes_) +
                              ")");
      }
      incidence_[static_cast<std::size_t>(v)].push_back(static_cast<Index>(e));
    }
  }
}

void Hypergraph::check_node(NodeId v) const {
  if (v < 0 || v >= num_nodes_) {
    throw std::out_of_range("node id " + std::to_string(v) + " outside [0, " +
                            std::to_string(num_nodes_) + ")");
  }
}

const std::vector<Index>& Hypergraph::incident_edges(NodeId v) const {
  check_node(v);
  return incidence_[static_cast<std::size_t>(v)];
}

Matrix incidence_matrix(const Hypergraph& g) {
  Matrix h = Matrix::Zero(g.num_nodes(), g.num_hyperedges());
  for (Index e = 0; e < g.num_hyperedges(); ++e) {
    for (NodeId v : g.hyperedge(e)) h(v, e) = 1.0;
  }
  return h;
}

DegreeMatrices degree_matrices(const Hypergraph& g) {
  DegreeMatrices d;
  d.node_degrees = Eigen::VectorXd::Zero(g.num_nodes());
  d.edge_degrees = Eigen::VectorXd::Zero(g.num_hyperedges());
  for (Index e = 0; e < g.num_hyperedges(); ++e) {
    const auto& edge = g.hyperedge(e);
    d.edge_degrees(e) = static_cast<double>(edge.size());
    for (NodeId v : edge) d.node_degrees(v) += g.weight(e);
  }
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    if (d.node_degrees(v) == 0.0) throw IsolatedNodeError(v);
  }
  return d;
}

std::vector<NodeId> hyperedge_neighbors(const Hypergraph& g, NodeId i) {
  std::vector<NodeId> out;
  for (Index e : g.incident_edges(i)) {
    for (NodeId v : g.hyperedge(e)) {
      if (v != i) out.push_back(v);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ContextHypergraph context_hypergraph(const Hypergraph& g, NodeId i) {
  const auto& incident = g.incident_edges(i);
  if (incident.empty()) throw IsolatedNodeError(i);
  ContextHypergraph ctx;
  ctx.center = i;
  ctx.node_map.push_back(i);
  for (NodeId v : hyperedge_neighbors(g, i)) ctx.node_map.push_back(v);

  std::vector<std::vector<NodeId>> edges;
  std::vector<double> weights;
  for (Index e : incident) {
    std::vector<NodeId> local;
    for (NodeId v : g.hyperedge(e)) {
      if (v == i) {
        local.push_back(0);
      } else {
        auto it = std::lower_bound(ctx.node_map.begin() + 1, ctx.node_map.end(), v);
        local.push_back(static_cast<NodeId>(it - ctx.node_map.begin()));
      }
    }
    edges.push_back(std::move(local));
    weights.push_back(g.weight(e));
  }
  ctx.sub = Hypergraph(static_cast<Index>(ctx.node_map.size()), std::move(edges), std::move(weights));
  return ctx;
}

Matrix clique_expansion(const Hypergraph& g) {
  Matrix a = Matrix::Zero(g.num_nodes(), g.num_nodes());
  for (const auto& edge : g.hyperedges()) {
    for (NodeId u : edge) {
      for (NodeId v : edge) {
        if (u != v) a(u, v) = 1.0;
      }
    }
  }
  return a;
}

std::vector<NodeId> isolated_nodes(const Hypergraph& g) {
  std::vector<NodeId> out;
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    if (g.incident_edges(v).empty()) out.push_back(v);
  }
  return out;
}

Hypergraph with_singleton_edges(const Hypergraph& g) {
  auto edges = g.hyperedges();
  auto weights = g.weights();
  for (NodeId v : isolated_nodes(g)) {
    edges.push_back({v});
    weights.push_back(1.0);
  }
  return Hypergraph(g.num_nodes(), std::move(edges), std::move(weights));
}

}  // namespace hyperbert
