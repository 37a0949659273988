#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "hyperbert/tensor.hpp"

namespace hyperbert {

using NodeId = Index;

class HypergraphError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A node that belongs to no hyperedge, so D^-1 is undefined for it.
class IsolatedNodeError : public std::runtime_error {
 public:
  explicit IsolatedNodeError(NodeId node);
  NodeId node() const { return node_; }

 private:
  NodeId node_;
};

// Node set {0, ..., num_nodes-1} with weighted hyperedges. Hyperedges are
// nonempty, duplicate-free and in range; weights are positive. Identical
// hyperedges may repeat and count independently.
class Hypergraph {
 public:
  Hypergraph() = default;
  Hypergraph(Index num_nodes, std::vector<std::vector<NodeId>> hyperedges,
             std::vector<double> weights = {});

  Index num_nodes() const { return num_nodes_; }
  Index num_hyperedges() const { return static_cast<Index>(edges_.size()); }

  const std::vector<std::vector<NodeId>>& hyperedges() const { return edges_; }
  const std::vector<NodeId>& hyperedge(Index e) const { return edges_.at(static_cast<std::size_t>(e)); }
  const std::vector<double>& weights() const { return weights_; }
  double weight(Index e) const { return weights_.at(static_cast<std::size_t>(e)); }

  // Indices of the hyperedges containing v, ascending.
  const std::vector<Index>& incident_edges(NodeId v) const;
  void check_node(NodeId v) const;

 private:
  Index num_nodes_ = 0;
  std::vector<std::vector<NodeId>> edges_;
  std::vector<double> weights_;
  std::vector<std::vector<Index>> incidence_;
};

struct DegreeMatrices {
  Eigen::VectorXd node_degrees;  // diagonal of D: weighted count of incident edges
  Eigen::VectorXd edge_degrees;  // diagonal of B: hyperedge cardinalities
};

// Hypergraph restricted to the hyperedges that contain `center`, with nodes
// renumbered densely. Local node 0 is the center; the rest follow in ascending
// global order.
struct ContextHypergraph {
  NodeId center = 0;
  Hypergraph sub;
  std::vector<NodeId> node_map;  // local id -> global id
};

// H with H(v, e) = 1 iff v is in e.
Matrix incidence_matrix(const Hypergraph& g);

// Throws IsolatedNodeError for the first node with zero degree.
DegreeMatrices degree_matrices(const Hypergraph& g);

// Union of the hyperedges containing i, minus i, ascending.
std::vector<NodeId> hyperedge_neighbors(const Hypergraph& g, NodeId i);

ContextHypergraph context_hypergraph(const Hypergraph& g, NodeId i);

// Pairwise adjacency joining every two distinct nodes that share a hyperedge.
Matrix clique_expansion(const Hypergraph& g);

std::vector<NodeId> isolated_nodes(const Hypergraph& g);

// Copy of g with a unit-weight singleton hyperedge {v} appended for each
// isolated node v.
Hypergraph with_singleton_edges(const Hypergraph& g);

}  // namespace hyperbert
