#include "hyperbert/structure_encoder.hpp"

#include <algorithm>
#include <string>

namespace hyperbert {

namespace {

void check_features(const char* op, Index nodes, const Tensor& x, const HgnnLayerParams& p) {
  if (x.rows() != nodes) {
    throw DimensionError(std::string(op) + ": " + std::to_string(nodes) + " nodes but features " +
                         x.shape_string());
  }
  if (x.cols() != p.weight.rows()) {
    throw DimensionError(std::string(op) + ": features " + x.shape_string() +
                         " do not match weight " + p.weight.shape_string());
  }
}

Tensor propagate(const Matrix& propagation, const Tensor& x, const HgnnLayerParams& p) {
  return activate(matmul(matmul(Tensor(propagation), x), p.weight), p.activation);
}

// Induced clique-expansion adjacency among `nodes`.
Matrix induced_adjacency(const Hypergraph& g, const std::vector<NodeId>& nodes) {
  const Index n = static_cast<Index>(nodes.size());
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const auto neighbors = hyperedge_neighbors(g, nodes[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < n; ++j) {
      if (i != j && std::binary_search(neighbors.begin(), neighbors.end(),
                                       nodes[static_cast<std::size_t>(j)])) {
        a(i, j) = 1.0;
      }
    }
  }
  return a;
}

Index row_of(std::span<const Index> feature_row, NodeId v) {
  const Index r = v >= 0 && v < static_cast<Index>(feature_row.size())
                      ? feature_row[static_cast<std::size_t>(v)]
                      : -1;
  if (r < 0) {
    throw DimensionError("structural_forward: no input features for context node " +
                         std::to_string(v));
  }
  return r;
}

}  // namespace

Tensor activate(const Tensor& x, Activation a) {
  return a == Activation::relu ? relu(x) : x;
}

Matrix hgnn_propagation(const Hypergraph& g) {
  const DegreeMatrices deg = degree_matrices(g);
  Matrix p = Matrix::Zero(g.num_nodes(), g.num_nodes());
  for (Index e = 0; e < g.num_hyperedges(); ++e) {
    const auto& edge = g.hyperedge(e);
    const double w = g.weight(e) / deg.edge_degrees(e);
    for (NodeId u : edge) {
      for (NodeId v : edge) p(u, v) += w;
    }
  }
  for (NodeId u = 0; u < g.num_nodes(); ++u) p.row(u) /= deg.node_degrees(u);
  return p;
}

Matrix gnn_propagation(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw DimensionError("gnn_propagation: adjacency is not square");
  }
  Matrix p = adjacency + Matrix::Identity(adjacency.rows(), adjacency.cols());
  for (Index u = 0; u < p.rows(); ++u) p.row(u) /= p.row(u).sum();
  return p;
}

Tensor hgnn_forward(const Hypergraph& g, const Tensor& features, const HgnnLayerParams& params) {
  check_features("hgnn_forward", g.num_nodes(), features, params);
  return propagate(hgnn_propagation(g), features, params);
}

Tensor hgnn_forward(const ContextHypergraph& ctx, const Tensor& features,
                    const HgnnLayerParams& params) {
  return hgnn_forward(ctx.sub, features, params);
}

Tensor gnn_forward_ablation(const Matrix& adjacency, const Tensor& features,
                            const HgnnLayerParams& params) {
  check_features("gnn_forward_ablation", adjacency.rows(), features, params);
  return propagate(gnn_propagation(adjacency), features, params);
}

std::vector<NodeId> context_nodes(const Hypergraph& g, NodeId center) {
  std::vector<NodeId> nodes{center};
  for (NodeId v : hyperedge_neighbors(g, center)) nodes.push_back(v);
  return nodes;
}

Tensor structural_forward(const Hypergraph& g, std::span<const NodeId> centers,
                          const Tensor& features, std::span<const Index> feature_row,
                          std::span<const HgnnLayerParams> layers,
                          const StructuralOptions& options) {
  if (layers.empty()) throw ConfigError("structural_forward: at least one layer is required");
  if (features.cols() != layers.front().weight.rows()) {
    throw DimensionError("structural_forward: features " + features.shape_string() +
                         " do not match weight " + layers.front().weight.shape_string());
  }
  for (NodeId c : centers) {
    g.check_node(c);
    if (!options.isolated_fallback && g.incident_edges(c).empty()) throw IsolatedNodeError(c);
  }

  if (layers.size() == 1) {
    // Only the center row of the propagation operator is needed per node.
    Matrix rows = Matrix::Zero(static_cast<Index>(centers.size()), features.rows());
    for (std::size_t i = 0; i < centers.size(); ++i) {
      const NodeId c = centers[i];
      const auto r = static_cast<Index>(i);
      const auto& incident = g.incident_edges(c);
      if (incident.empty()) {
        rows(r, row_of(feature_row, c)) = 1.0;
      } else if (options.kind == StructuralKind::hgnn) {
        double degree = 0.0;
        for (Index e : incident) {
          const auto& edge = g.hyperedge(e);
          const double w = g.weight(e) / static_cast<double>(edge.size());
          for (NodeId v : edge) rows(r, row_of(feature_row, v)) += w;
          degree += g.weight(e);
        }
        rows.row(r) /= degree;
      } else {
        const auto nodes = context_nodes(g, c);
        const double w = 1.0 / static_cast<double>(nodes.size());
        for (NodeId v : nodes) rows(r, row_of(feature_row, v)) = w;
      }
    }
    return propagate(rows, features, layers.front());
  }

  std::vector<Tensor> outputs;
  outputs.reserve(centers.size());
  for (NodeId c : centers) {
    std::vector<NodeId> nodes;
    Matrix propagation;
    if (g.incident_edges(c).empty()) {
      nodes = {c};
      propagation = Matrix::Ones(1, 1);
    } else if (options.kind == StructuralKind::hgnn) {
      const ContextHypergraph ctx = context_hypergraph(g, c);
      nodes = ctx.node_map;
      propagation = hgnn_propagation(ctx.sub);
    } else {
      nodes = context_nodes(g, c);
      propagation = gnn_propagation(induced_adjacency(g, nodes));
    }
    std::vector<Index> rows;
    for (NodeId v : nodes) rows.push_back(row_of(feature_row, v));
    Tensor x = gather_rows(features, rows);
    for (const auto& layer : layers) x = propagate(propagation, x, layer);
    outputs.push_back(slice_rows(x, 0, 1));
  }
  return concat_rows(outputs);
}

Tensor batch_structural_forward(const Hypergraph& g, std::span<const NodeId> node_ids,
                                const Tensor& features, std::span<const HgnnLayerParams> layers,
                                const StructuralOptions& options) {
  if (features.rows() != g.num_nodes()) {
    throw DimensionError("batch_structural_forward: expected one feature row per node, got " +
                         features.shape_string());
  }
  std::vector<Index> identity(static_cast<std::size_t>(g.num_nodes()));
  for (Index v = 0; v < g.num_nodes(); ++v) identity[static_cast<std::size_t>(v)] = v;
  return structural_forward(g, node_ids, features, identity, layers, options);
}

}  // namespace hyperbert
