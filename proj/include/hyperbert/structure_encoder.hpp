#pragma once

#include <span>
#include <vector>

#include "hyperbert/hypergraph.hpp"
#include "hyperbert/tensor.hpp"

namespace hyperbert {

enum class Activation { relu, identity };

enum class StructuralKind {
  hgnn,  // hypergraph convolution over the node-centered context hypergraph
  gnn,   // mean-aggregation graph convolution over the clique expansion
};

struct HgnnLayerParams {
  Tensor weight;  // d_in × d_out
  Activation activation = Activation::relu;
};

Tensor activate(const Tensor& x, Activation a);

// D^-1 H W B^-1 Hᵀ for a hypergraph whose nodes all have positive degree.
Matrix hgnn_propagation(const Hypergraph& g);

// D̂^-1 (A + I) for a symmetric 0/1 adjacency.
Matrix gnn_propagation(const Matrix& adjacency);

// σ(D^-1 H W B^-1 Hᵀ X Ψ) on a whole hypergraph; X has one row per node.
Tensor hgnn_forward(const Hypergraph& g, const Tensor& features, const HgnnLayerParams& params);

// Same on a context hypergraph; rows of `features` follow ctx.node_map and
// row 0 of the result is the center's structural representation.
Tensor hgnn_forward(const ContextHypergraph& ctx, const Tensor& features,
                    const HgnnLayerParams& params);

// σ(D̂^-1 Â X Ψ) with Â = A + I.
Tensor gnn_forward_ablation(const Matrix& adjacency, const Tensor& features,
                            const HgnnLayerParams& params);

// Nodes whose features a center's structural representation reads: the
// center first, then its hyperedge neighbors ascending. For an isolated
// center this is just the center (singleton fallback).
std::vector<NodeId> context_nodes(const Hypergraph& g, NodeId center);

struct StructuralOptions {
  StructuralKind kind = StructuralKind::hgnn;
  // Treat isolated centers as members of a singleton hyperedge instead of
  // throwing IsolatedNodeError.
  bool isolated_fallback = false;
};

// Structural representation of each center, evaluated on its own context.
// `features` holds input rows for a subset of nodes; feature_row[v] is the
// row of node v or -1 when absent. Every context node of every center must be
// present. `layers` lists the stacked convolutions (the hgnn depth).
Tensor structural_forward(const Hypergraph& g, std::span<const NodeId> centers,
                          const Tensor& features, std::span<const Index> feature_row,
                          std::span<const HgnnLayerParams> layers,
                          const StructuralOptions& options = {});

// structural_forward with `features` holding one row per node of g.
Tensor batch_structural_forward(const Hypergraph& g, std::span<const NodeId> node_ids,
                                const Tensor& features, std::span<const HgnnLayerParams> layers,
                                const StructuralOptions& options = {});

}  // namespace hyperbert
