#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hyperbert/losses.hpp"
#include "test_support.hpp"

namespace hyperbert {
namespace {

using testing::max_gradient_error;
using testing::random_hypergraph;
using testing::random_matrix;
using testing::random_tensor;

// Direct transcription with explicit loops: for every anchor with positives,
// average -log(exp(a_i·b_p/τ) / Σ_{j≠i} exp(a_i·b_j/τ)) over its positives,
// then average over anchors.
double loop_oracle(const Matrix& a, const Matrix& b, const std::vector<std::vector<Index>>& positives,
                   double tau, bool include_self) {
  const Index n = a.rows();
  double total = 0.0;
  int anchors = 0;
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> pos = positives[static_cast<std::size_t>(i)];
    if (pos.empty()) continue;
    if (include_self) pos.push_back(i);
    double denom = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (j != i) denom += std::exp(a.row(i).dot(b.row(j)) / tau);
    }
    double sum = 0.0;
    for (Index p : pos) sum += -std::log(std::exp(a.row(i).dot(b.row(p)) / tau) / denom);
    total += sum / static_cast<double>(pos.size());
    ++anchors;
  }
  return total / anchors;
}

ContrastiveBatch random_batch(std::uint64_t seed, Index n = 10, Index d = 4, double scale = 0.5) {
  Rng rng(seed);
  Hypergraph g = random_hypergraph(n + 4, 6, rng);
  std::vector<NodeId> nodes(static_cast<std::size_t>(n));
  std::iota(nodes.begin(), nodes.end(), 0);
  return make_contrastive_batch(g, nodes, random_tensor(n, d, rng, scale), random_tensor(n, d, rng, scale), 0.2);
}

TEST(Contrastive, BatchPositivesAreInBatchNeighbors) {
  Hypergraph g(5, {{0, 1, 2}, {2, 3}, {4}});
  const std::vector<NodeId> nodes{2, 0, 4};
  ContrastiveBatch b = make_contrastive_batch(g, nodes, Tensor(Matrix::Zero(3, 2)), Tensor(Matrix::Zero(3, 2)), 0.5);
  EXPECT_EQ(b.positives[0], std::vector<Index>{1});
  EXPECT_EQ(b.positives[1], std::vector<Index>{0});
  EXPECT_TRUE(b.positives[2].empty());
  EXPECT_EQ(count_anchors(b), 2);
}

TEST(Contrastive, MatchesLoopOracles) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ContrastiveBatch b = random_batch(seed);
    if (count_anchors(b) == 0) continue;
    const Matrix& s = b.semantic.value();
    const Matrix& h = b.structural.value();
    EXPECT_NEAR(semantic_loss(b).item(), loop_oracle(s, s, b.positives, 0.2, false), 1e-10);
    EXPECT_NEAR(structural_loss(b).item(), loop_oracle(h, h, b.positives, 0.2, false), 1e-10);
    const double align =
        0.5 * (loop_oracle(h, s, b.positives, 0.2, true) + loop_oracle(s, h, b.positives, 0.2, true));
    EXPECT_NEAR(alignment_loss(b).item(), align, 1e-10);
  }
}

TEST(Contrastive, CosineMatchesOracleOnNormalizedRows) {
  ContrastiveBatch b = random_batch(3);
  b.cosine = true;
  const Matrix s = b.semantic.value().rowwise().normalized();
  EXPECT_NEAR(semantic_loss(b).item(), loop_oracle(s, s, b.positives, 0.2, false), 1e-10);
}

TEST(Contrastive, IdenticalEmbeddingsGiveLogOfDenominatorSize) {
  const Index n = 6;
  Hypergraph g(n, {{0, 1, 2}, {3, 4, 5}, {2, 3}});
  std::vector<NodeId> nodes(static_cast<std::size_t>(n));
  std::iota(nodes.begin(), nodes.end(), 0);
  const Matrix same = Matrix::Constant(n, 3, 0.7);
  ContrastiveBatch b = make_contrastive_batch(g, nodes, Tensor(same), Tensor(same), 0.2);
  EXPECT_NEAR(semantic_loss(b).item(), std::log(n - 1.0), 1e-12);
  EXPECT_NEAR(structural_loss(b).item(), std::log(n - 1.0), 1e-12);
  EXPECT_NEAR(alignment_loss(b).item(), std::log(n - 1.0), 1e-12);
}

TEST(Contrastive, SaturatesWhenPositiveDominates) {
  Hypergraph g(4, {{0, 1}, {2}, {3}});
  const std::vector<NodeId> nodes{0, 1, 2, 3};
  Matrix s(4, 2);
  s << 10, 0, 10, 0, -10, 0, 0, 10;
  ContrastiveBatch b = make_contrastive_batch(g, nodes, Tensor(s), Tensor(s), 0.2);
  EXPECT_LT(semantic_loss(b).item(), 1e-12);
  EXPECT_GE(semantic_loss(b).item(), 0.0);
}

TEST(Contrastive, SemanticAndStructuralAreNonnegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ContrastiveBatch b = random_batch(seed, 10, 4, 3.0);
    if (count_anchors(b) == 0) continue;
    EXPECT_GE(semantic_loss(b).item(), 0.0);
    EXPECT_GE(structural_loss(b).item(), 0.0);
  }
}

TEST(Contrastive, BatchPermutationInvariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Hypergraph g = random_hypergraph(10, 5, rng);
    std::vector<NodeId> nodes(10);
    std::iota(nodes.begin(), nodes.end(), 0);
    const Matrix s = random_matrix(10, 3, rng);
    const Matrix h = random_matrix(10, 3, rng);
    std::vector<NodeId> perm = nodes;
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix ps(10, 3), ph(10, 3);
    for (Index r = 0; r < 10; ++r) {
      ps.row(r) = s.row(perm[static_cast<std::size_t>(r)]);
      ph.row(r) = h.row(perm[static_cast<std::size_t>(r)]);
    }
    ContrastiveBatch a = make_contrastive_batch(g, nodes, Tensor(s), Tensor(h), 0.3);
    ContrastiveBatch b = make_contrastive_batch(g, perm, Tensor(ps), Tensor(ph), 0.3);
    const LossWeights w{1.0, 0.5, 2.0};
    EXPECT_NEAR(total_loss(a, w).second.total, total_loss(b, w).second.total, 1e-12);
  }
}

TEST(Contrastive, MoreSimilarPositiveLowersLoss) {
  Hypergraph g(4, {{0, 1}, {2}, {3}});
  const std::vector<NodeId> nodes{0, 1, 2, 3};
  Rng rng(4);
  Matrix s = random_matrix(4, 3, rng);
  double previous = 1e300;
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    Matrix m = s;
    m.row(1) = (1.0 - t) * s.row(1) + t * s.row(0) * 3.0;
    Matrix anchor_only = m;
    ContrastiveBatch b = make_contrastive_batch(g, nodes, Tensor(anchor_only), Tensor(anchor_only), 0.5);
    // Only anchor 0 varies its positive logit monotonically, so measure it alone.
    b.positives[1].clear();
    const double loss = semantic_loss(b).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
}

TEST(Contrastive, Gradients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ContrastiveBatch b = random_batch(seed, 8, 3);
    if (count_anchors(b) == 0) continue;
    for (bool cosine : {false, true}) {
      b.cosine = cosine;
      EXPECT_LE(max_gradient_error([&] { return semantic_loss(b); }, {b.semantic}, 1e-5), 1e-6);
      EXPECT_LE(max_gradient_error([&] { return alignment_loss(b); }, {b.semantic, b.structural}, 1e-5), 1e-6);
    }
  }
}

TEST(TotalLoss, RecomposesWeightedTerms) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ContrastiveBatch b = random_batch(seed);
    if (count_anchors(b) == 0) continue;
    const LossWeights w{0.3, 1.7, 0.9};
    auto [total, report] = total_loss(b, w);
    const double expected = 0.3 * semantic_loss(b).item() + 1.7 * structural_loss(b).item() +
                            0.9 * alignment_loss(b).item();
    EXPECT_NEAR(total.item(), expected, 1e-12);
    EXPECT_EQ(report.total, total.item());
    EXPECT_EQ(*report.semantic, semantic_loss(b).item());
    EXPECT_EQ(report.weights, w);
  }
}

TEST(TotalLoss, SemanticOnly) {
  ContrastiveBatch b = random_batch(1);
  auto [total, report] = total_loss(b, LossWeights{1.0, 0.0, 0.0});
  EXPECT_EQ(total.item(), semantic_loss(b).item());
  EXPECT_FALSE(report.structural.has_value());
  EXPECT_FALSE(report.alignment.has_value());
}

TEST(TotalLoss, NullObjectiveIsZeroWithoutGradient) {
  ContrastiveBatch b = random_batch(2);
  b.semantic.zero_grad();
  b.structural.zero_grad();
  Tape tape;
  auto [total, report] = total_loss(b, LossWeights{0.0, 0.0, 0.0});
  EXPECT_EQ(total.item(), 0.0);
  EXPECT_EQ(report.total, 0.0);
  EXPECT_FALSE(report.semantic.has_value());
  tape.backward(total);
  EXPECT_EQ(b.semantic.grad(), Matrix::Zero(10, 4));
  EXPECT_EQ(b.structural.grad(), Matrix::Zero(10, 4));
}

TEST(TotalLoss, ZeroWeightTermsContributeNoGradient) {
  ContrastiveBatch b = random_batch(5);
  b.semantic.zero_grad();
  b.structural.zero_grad();
  Tape tape;
  auto [total, report] = total_loss(b, LossWeights{1.0, 0.0, 0.0});
  tape.backward(total);
  EXPECT_EQ(b.structural.grad(), Matrix::Zero(10, 4));
  EXPECT_GT(b.semantic.grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Contrastive, Errors) {
  ContrastiveBatch b = random_batch(0);
  EXPECT_THROW(contrastive_loss(b.semantic, b.semantic, b.positives, 0.0), ConfigError);
  EXPECT_THROW(contrastive_loss(b.semantic, b.semantic, b.positives, -1.0), ConfigError);
  std::vector<std::vector<Index>> none(10);
  EXPECT_THROW(contrastive_loss(b.semantic, b.semantic, none, 0.2), ContractError);
  std::vector<std::vector<Index>> self(10);
  self[0] = {0};
  EXPECT_THROW(contrastive_loss(b.semantic, b.semantic, self, 0.2), ContractError);
  EXPECT_THROW(total_loss(b, LossWeights{NAN, 1.0, 1.0}), ConfigError);
  Hypergraph g(2, {{0, 1}});
  const std::vector<NodeId> twice{0, 0};
  EXPECT_THROW(make_contrastive_batch(g, twice, Tensor(Matrix::Zero(2, 2)), Tensor(Matrix::Zero(2, 2)), 0.2),
               ContractError);
  const std::vector<NodeId> one{0};
  EXPECT_THROW(make_contrastive_batch(g, one, Tensor(Matrix::Zero(2, 2)), Tensor(Matrix::Zero(2, 2)), 0.2),
               DimensionError);
}

}  // namespace
}  // namespace hyperbert
