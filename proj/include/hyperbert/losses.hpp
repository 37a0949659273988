#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "hyperbert/hypergraph.hpp"
#include "hyperbert/tensor.hpp"

namespace hyperbert {

// One mini-batch for the contrastive objectives. Row r of `semantic` and
// `structural` belongs to nodes[r]. positives[r] lists the batch rows of the
// hyperedge neighbors of nodes[r] (never r itself); the denominator set of
// every anchor is the whole batch minus the anchor.
struct ContrastiveBatch {
  std::vector<NodeId> nodes;
  std::vector<std::vector<Index>> positives;
  Tensor semantic;
  Tensor structural;
  double temperature = 0.2;
  bool cosine = false;  // compare L2-normalized rows instead of raw dot products
};

ContrastiveBatch make_contrastive_batch(const Hypergraph& g, std::vector<NodeId> nodes,
                                        Tensor semantic, Tensor structural, double temperature,
                                        bool cosine = false);

// Number of anchors with at least one in-batch positive.
Index count_anchors(const ContrastiveBatch& batch);

// Mean over anchors with in-batch positives of
//   -(1/|N(i)|) Σ_{p∈N(i)} log( exp(s_i·s_p/τ) / Σ_{j≠i} exp(s_i·s_j/τ) ).
Tensor semantic_loss(const ContrastiveBatch& batch);
// Same on the structural rows.
Tensor structural_loss(const ContrastiveBatch& batch);
// Cross-modal counterpart: structural anchors against semantic instances and
// semantic anchors against structural instances, averaged, with the anchor's
// own other-modality row added to its positives.
Tensor alignment_loss(const ContrastiveBatch& batch);

// Generic form shared by all three: anchors against instances, positives per
// anchor row, denominator over every instance row except the anchor's own.
// Rows without positives are skipped; `include_self` adds row i to the
// positives of anchor i.
Tensor contrastive_loss(const Tensor& anchors, const Tensor& instances,
                        std::span<const std::vector<Index>> positives, double temperature,
                        bool include_self = false, bool cosine = false);

struct LossWeights {
  double semantic = 1.0;
  double structural = 1.0;
  double alignment = 1.0;

  bool operator==(const LossWeights&) const = default;
};

// Components left unevaluated because their weight was zero are empty.
struct LossReport {
  std::optional<double> semantic;
  std::optional<double> structural;
  std::optional<double> alignment;
  double total = 0.0;
  LossWeights weights;
};

// λ1·L_semantic + λ2·L_structural + λ3·L_align; zero-weight terms are not
// evaluated, so they contribute no gradient at all.
std::pair<Tensor, LossReport> total_loss(const ContrastiveBatch& batch, const LossWeights& weights);

}  // namespace hyperbert
