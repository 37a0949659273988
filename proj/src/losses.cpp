#include "hyperbert/losses.hpp"

#include <algorithm>
#include <cmath>

namespace hyperbert {

namespace {

void check_temperature(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("contrastive loss: temperature must be positive");
}

}  // namespace

ContrastiveBatch make_contrastive_batch(const Hypergraph& g, std::vector<NodeId> nodes,
                                        Tensor semantic, Tensor structural, double temperature,
                                        bool cosine) {
  check_temperature(temperature);
  const auto n = static_cast<Index>(nodes.size());
  if (semantic.rows() != n || structural.rows() != n || semantic.cols() != structural.cols()) {
    throw DimensionError("contrastive batch: " + std::to_string(n) + " nodes, semantic " +
                         semantic.shape_string() + ", structural " + structural.shape_string());
  }
  std::vector<Index> row_of(static_cast<std::size_t>(g.num_nodes()), -1);
  for (Index r = 0; r < n; ++r) {
    const NodeId v = nodes[static_cast<std::size_t>(r)];
    g.check_node(v);
    if (row_of[static_cast<std::size_t>(v)] >= 0) {
      throw ContractError("contrastive batch: node " + std::to_string(v) + " appears twice");
    }
    row_of[static_cast<std::size_t>(v)] = r;
  }
  ContrastiveBatch batch;
  batch.positives.resize(nodes.size());
  for (Index r = 0; r < n; ++r) {
    for (NodeId p : hyperedge_neighbors(g, nodes[static_cast<std::size_t>(r)])) {
      const Index pr = row_of[static_cast<std::size_t>(p)];
      if (pr >= 0) batch.positives[static_cast<std::size_t>(r)].push_back(pr);
    }
  }
  batch.nodes = std::move(nodes);
  batch.semantic = std::move(semantic);
  batch.structural = std::move(structural);
  batch.temperature = temperature;
  batch.cosine = cosine;
  return batch;
}

Index count_anchors(const ContrastiveBatch& batch) {
  return static_cast<Index>(std::count_if(batch.positives.begin(), batch.positives.end(),
                                          [](const auto& p) { return !p.empty(); }));
}

Tensor contrastive_loss(const Tensor& anchors, const Tensor& instances,
                        std::span<const std::vector<Index>> positives, double temperature,
                        bool include_self, bool cosine) {
  check_temperature(temperature);
  const Index n = anchors.rows();
  if (instances.rows() != n || anchors.cols() != instances.cols() ||
      static_cast<Index>(positives.size()) != n) {
    throw DimensionError("contrastive_loss: anchors " + anchors.shape_string() + ", instances " +
                         instances.shape_string() + ", " + std::to_string(positives.size()) +
                         " positive lists");
  }
  if (n < 2) throw ContractError("contrastive_loss: the denominator set needs at least 2 rows");

  Index anchor_count = 0;
  for (const auto& p : positives) anchor_count += p.empty() ? 0 : 1;
  if (anchor_count == 0) throw ContractError("contrastive_loss: no anchor has an in-batch positive");

  // loss = Σ_i Σ_{p∈P(i)} w_i (lse_i - logit_ip), w_i = 1 / (|P(i)| · anchors)
  Matrix positive_weights = Matrix::Zero(n, n);
  Matrix anchor_weights = Matrix::Zero(n, 1);
  for (Index i = 0; i < n; ++i) {
    const auto& p = positives[static_cast<std::size_t>(i)];
    if (p.empty()) continue;
    const auto count = static_cast<double>(p.size() + (include_self ? 1 : 0));
    const double w = 1.0 / (count * static_cast<double>(anchor_count));
    for (Index j : p) {
      if (j == i || j < 0 || j >= n) {
        throw ContractError("contrastive_loss: invalid positive " + std::to_string(j) +
                            " for anchor " + std::to_string(i));
      }
      positive_weights(i, j) += w;
    }
    if (include_self) positive_weights(i, i) += w;
    anchor_weights(i, 0) = 1.0;
  }
  Matrix denominator = Matrix::Ones(n, n);
  denominator.diagonal().setZero();

  const Tensor a = cosine ? l2_normalize_rows(anchors) : anchors;
  const Tensor b = cosine ? l2_normalize_rows(instances) : instances;
  Tensor logits = scale(matmul(a, transpose(b)), 1.0 / temperature);
  Tensor lse = masked_logsumexp_rows(logits, denominator);
  // Σ_i lse_i · Σ_p w_ip  -  Σ_ip w_ip · logit_ip
  Matrix lse_weights = positive_weights.rowwise().sum().cwiseProduct(anchor_weights);
  return sub(weighted_sum(lse, lse_weights), weighted_sum(logits, positive_weights));
}

Tensor semantic_loss(const ContrastiveBatch& batch) {
  return contrastive_loss(batch.semantic, batch.semantic, batch.positives, batch.temperature, false,
                          batch.cosine);
}

Tensor structural_loss(const ContrastiveBatch& batch) {
  return contrastive_loss(batch.structural, batch.structural, batch.positives, batch.temperature,
                          false, batch.cosine);
}

Tensor alignment_loss(const ContrastiveBatch& batch) {
  Tensor graph_to_text = contrastive_loss(batch.structural, batch.semantic, batch.positives,
                                          batch.temperature, true, batch.cosine);
  Tensor text_to_graph = contrastive_loss(batch.semantic, batch.structural, batch.positives,
                                          batch.temperature, true, batch.cosine);
  return scale(add(graph_to_text, text_to_graph), 0.5);
}

std::pair<Tensor, LossReport> total_loss(const ContrastiveBatch& batch, const LossWeights& weights) {
  for (double w : {weights.semantic, weights.structural, weights.alignment}) {
    if (!std::isfinite(w)) throw ConfigError("total_loss: loss weights must be finite");
  }
  LossReport report;
  report.weights = weights;
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  auto accumulate = [&](double weight, Tensor term, std::optional<double>& slot) {
    slot = term.item();
    Tensor weighted = scale(term, weight);
    total = first ? weighted : add(total, weighted);
    first = false;
  };
  if (weights.semantic != 0.0) accumulate(weights.semantic, semantic_loss(batch), report.semantic);
  if (weights.structural != 0.0) {
    accumulate(weights.structural, structural_loss(batch), report.structural);
  }
  if (weights.alignment != 0.0) {
    accumulate(weights.alignment, alignment_loss(batch), report.alignment);
  }
  report.total = total.item();
  return {total, report};
}

}  // namespace hyperbert
