#include <gtest/gtest.h>

#include <numeric>

#include "hyperbert/structure_encoder.hpp"
#include "test_support.hpp"

namespace hyperbert {
namespace {

using testing::hgnn_loop_oracle;
using testing::max_gradient_error;
using testing::random_hypergraph;
using testing::random_matrix;
using testing::random_tensor;

HgnnLayerParams layer(Matrix psi, Activation a = Activation::relu) {
  return HgnnLayerParams{Tensor(std::move(psi), true), a};
}

TEST(Hgnn, MatchesLoopOracleOnRandomHypergraphs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Hypergraph g = random_hypergraph(12, 6, rng, seed % 2 == 1);
    const Matrix x = random_matrix(12, 5, rng);
    const Matrix psi = random_matrix(5, 4, rng);
    for (Activation a : {Activation::relu, Activation::identity}) {
      const Matrix got = hgnn_forward(g, Tensor(x), layer(psi, a)).value();
      const Matrix want = hgnn_loop_oracle(g, x, psi, a == Activation::relu);
      EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-10) << "seed " << seed;
    }
  }
}

TEST(Hgnn, PropagationRowsAreStochastic) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix p = hgnn_propagation(random_hypergraph(15, 7, rng, true));
    EXPECT_LE((p.rowwise().sum() - Matrix::Ones(15, 1)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(Hgnn, SingletonEdgesAreIdentity) {
  Rng rng(1);
  Hypergraph g(3, {{0}, {1}, {2}});
  const Matrix x = random_matrix(3, 4, rng);
  EXPECT_EQ(hgnn_forward(g, Tensor(x), layer(Matrix::Identity(4, 4), Activation::identity)).value(), x);
}

TEST(Hgnn, SingleEdgeGivesMean) {
  Rng rng(2);
  Hypergraph g(4, {{0, 1, 2, 3}}, {3.5});
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix out = hgnn_forward(g, Tensor(x), layer(Matrix::Identity(3, 3), Activation::identity)).value();
  for (Index v = 0; v < 4; ++v) {
    EXPECT_LE((out.row(v) - x.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Hgnn, OutputLiesInConvexHullOfInputs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Hypergraph g = random_hypergraph(10, 5, rng, true);
    const Matrix x = random_matrix(10, 3, rng);
    const Matrix out = hgnn_forward(g, Tensor(x), layer(Matrix::Identity(3, 3), Activation::identity)).value();
    for (Index c = 0; c < 3; ++c) {
      EXPECT_LE(out.col(c).maxCoeff(), x.col(c).maxCoeff() + 1e-12);
      EXPECT_GE(out.col(c).minCoeff(), x.col(c).minCoeff() - 1e-12);
    }
  }
}

TEST(Hgnn, RelabelingEquivariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Hypergraph g = random_hypergraph(9, 4, rng, true);
    std::vector<NodeId> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<NodeId>> edges;
    for (const auto& e : g.hyperedges()) {
      std::vector<NodeId> mapped;
      for (NodeId v : e) mapped.push_back(perm[static_cast<std::size_t>(v)]);
      edges.push_back(mapped);
    }
    Hypergraph relabeled(9, edges, g.weights());
    const Matrix x = random_matrix(9, 4, rng);
    Matrix px(9, 4);
    for (Index v = 0; v < 9; ++v) px.row(perm[static_cast<std::size_t>(v)]) = x.row(v);
    const Matrix psi = random_matrix(4, 4, rng);
    const Matrix a = hgnn_forward(g, Tensor(x), layer(psi)).value();
    const Matrix b = hgnn_forward(relabeled, Tensor(px), layer(psi)).value();
    for (Index v = 0; v < 9; ++v) {
      EXPECT_LE((a.row(v) - b.row(perm[static_cast<std::size_t>(v)])).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Hgnn, Gradient) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Hypergraph g = random_hypergraph(7, 4, rng, true);
    Tensor x = random_tensor(7, 3, rng);
    HgnnLayerParams p{random_tensor(3, 2, rng), Activation::identity};
    const Matrix w = random_matrix(7, 2, rng);
    EXPECT_LE(max_gradient_error([&] { return weighted_sum(hgnn_forward(g, x, p), w); }, {x, p.weight}), 1e-6);
  }
}

TEST(Hgnn, ContextForwardCenterRow) {
  Rng rng(3);
  Hypergraph g(5, {{0, 1}, {1, 2}, {3, 4}});
  ContextHypergraph ctx = context_hypergraph(g, 1);
  const Matrix x = random_matrix(3, 2, rng);
  const Matrix out = hgnn_forward(ctx, Tensor(x), layer(Matrix::Identity(2, 2), Activation::identity)).value();
  // Center averages the means of {1,0} and {1,2}.
  const Matrix want = 0.5 * (0.5 * (x.row(0) + x.row(1)) + 0.5 * (x.row(0) + x.row(2)));
  EXPECT_LE((out.row(0) - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Hgnn, DimensionMismatchThrows) {
  Hypergraph g(3, {{0, 1, 2}});
  EXPECT_THROW(hgnn_forward(g, Tensor(Matrix::Zero(2, 3)), layer(Matrix::Zero(3, 3))), DimensionError);
  EXPECT_THROW(hgnn_forward(g, Tensor(Matrix::Zero(3, 3)), layer(Matrix::Zero(2, 3))), DimensionError);
}

TEST(Gnn, EmptyGraphAppliesOnlyWeights) {
  Rng rng(4);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix psi = random_matrix(3, 2, rng);
  const Matrix out = gnn_forward_ablation(Matrix::Zero(4, 4), Tensor(x), layer(psi, Activation::identity)).value();
  EXPECT_LE((out - x * psi).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gnn, CompleteGraphGivesGlobalMean) {
  Rng rng(5);
  const Matrix adjacency = Matrix::Ones(5, 5) - Matrix::Identity(5, 5);
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix out =
      gnn_forward_ablation(adjacency, Tensor(x), layer(Matrix::Identity(3, 3), Activation::identity)).value();
  for (Index v = 0; v < 5; ++v) EXPECT_LE((out.row(v) - x.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gnn, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix a = clique_expansion(random_hypergraph(10, 4, rng));
    const Matrix x = random_matrix(10, 3, rng);
    const Matrix psi = random_matrix(3, 3, rng);
    Matrix want(10, 3);
    for (Index v = 0; v < 10; ++v) {
      Matrix sum = x.row(v);
      double count = 1.0;
      for (Index u = 0; u < 10; ++u) {
        if (a(v, u) != 0.0) {
          sum += x.row(u);
          count += 1.0;
        }
      }
      want.row(v) = (sum / count) * psi;
    }
    want = want.cwiseMax(0.0);
    EXPECT_LE((gnn_forward_ablation(a, Tensor(x), layer(psi)).value() - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Structural, ContextNodes) {
  Hypergraph g(5, {{0, 3}, {3, 1}, {2}});
  EXPECT_EQ(context_nodes(g, 3), (std::vector<NodeId>{3, 0, 1}));
  EXPECT_EQ(context_nodes(g, 2), std::vector<NodeId>{2});
  EXPECT_EQ(context_nodes(g, 4), std::vector<NodeId>{4});
}

TEST(Structural, BatchMatchesPerNodeContextLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Hypergraph g = random_hypergraph(12, 6, rng, true);
    const Matrix x = random_matrix(12, 4, rng);
    std::vector<HgnnLayerParams> layers{layer(random_matrix(4, 4, rng)), layer(random_matrix(4, 4, rng))};
    std::vector<NodeId> ids{3, 0, 11, 7};
    const Matrix got = batch_structural_forward(g, ids, Tensor(x), layers).value();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      ContextHypergraph ctx = context_hypergraph(g, ids[r]);
      Matrix local(static_cast<Index>(ctx.node_map.size()), 4);
      for (std::size_t i = 0; i < ctx.node_map.size(); ++i) local.row(static_cast<Index>(i)) = x.row(ctx.node_map[i]);
      Tensor h(local);
      for (const auto& l : layers) h = hgnn_forward(ctx, h, l);
      EXPECT_LE((got.row(static_cast<Index>(r)) - h.value().row(0)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Structural, SparseFeatureRowsMatchFullTable) {
  Rng rng(6);
  Hypergraph g = random_hypergraph(10, 5, rng);
  const Matrix x = random_matrix(10, 3, rng);
  std::vector<HgnnLayerParams> layers{layer(random_matrix(3, 3, rng))};
  const std::vector<NodeId> centers{4};
  const auto needed = context_nodes(g, 4);
  Matrix subset(static_cast<Index>(needed.size()), 3);
  std::vector<Index> rows(10, -1);
  for (std::size_t i = 0; i < needed.size(); ++i) {
    subset.row(static_cast<Index>(i)) = x.row(needed[i]);
    rows[static_cast<std::size_t>(needed[i])] = static_cast<Index>(i);
  }
  const Matrix a = structural_forward(g, centers, Tensor(subset), rows, layers).value();
  const Matrix b = batch_structural_forward(g, centers, Tensor(x), layers).value();
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-15);
  rows[static_cast<std::size_t>(needed.back())] = -1;
  if (needed.size() > 1) EXPECT_ANY_THROW(structural_forward(g, centers, Tensor(subset), rows, layers));
}

TEST(Structural, IsolatedCenterNeedsFallback) {
  Rng rng(7);
  Hypergraph g(3, {{0, 1}});
  const Matrix x = random_matrix(3, 2, rng);
  std::vector<HgnnLayerParams> layers{layer(Matrix::Identity(2, 2), Activation::identity)};
  const std::vector<NodeId> centers{2};
  EXPECT_THROW(batch_structural_forward(g, centers, Tensor(x), layers), IsolatedNodeError);
  StructuralOptions opts;
  opts.isolated_fallback = true;
  EXPECT_EQ(batch_structural_forward(g, centers, Tensor(x), layers, opts).value(), x.row(2));
}

TEST(Structural, GnnKindUsesContextCliqueExpansion) {
  Rng rng(8);
  Hypergraph g(4, {{0, 1, 2}, {2, 3}});
  const Matrix x = random_matrix(4, 2, rng);
  std::vector<HgnnLayerParams> layers{layer(Matrix::Identity(2, 2), Activation::identity)};
  StructuralOptions opts;
  opts.kind = StructuralKind::gnn;
  const std::vector<NodeId> centers{0};
  // Context of 0 is {0,1,2} fully connected by the first edge.
  const Matrix want = (x.row(0) + x.row(1) + x.row(2)) / 3.0;
  EXPECT_LE((batch_structural_forward(g, centers, Tensor(x), layers, opts).value() - want).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(Structural, Gradient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Hypergraph g = random_hypergraph(8, 4, rng, true);
    Tensor x = random_tensor(8, 3, rng);
    std::vector<HgnnLayerParams> layers{{random_tensor(3, 3, rng), Activation::identity},
                                        {random_tensor(3, 2, rng), Activation::identity}};
    const std::vector<NodeId> ids{0, 5, 2};
    const Matrix w = random_matrix(3, 2, rng);
    EXPECT_LE(max_gradient_error([&] { return weighted_sum(batch_structural_forward(g, ids, x, layers), w); },
                                 {x, layers[0].weight, layers[1].weight}),
              1e-6);
  }
}

}  // namespace
}  // namespace hyperbert
