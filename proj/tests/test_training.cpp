#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "hyperbert/config.hpp"
#include "hyperbert/training.hpp"
#include "test_support.hpp"

namespace hyperbert {
namespace {

using testing::random_matrix;

// Small end-to-end setting that runs in well under a second per run.
ExperimentConfig small_experiment() {
  ExperimentConfig c;
  c.model.layers = 1;
  c.model.d_model = 8;
  c.model.heads = 2;
  c.model.d_k = 4;
  c.model.d_v = 4;
  c.model.d_ff = 16;
  c.model.max_len = 8;
  c.model.dropout = 0.0;
  c.pretrain.batch_size = 12;
  c.pretrain.max_steps = 5;
  c.finetune.epochs = 20;
  c.finetune.eval_every = 5;
  c.finetune.width = 8;
  c.data.synthetic.nodes_per_class = 12;
  c.data.synthetic.edges_per_class = 4;
  c.data.synthetic.vocab_per_class = 10;
  c.data.synthetic.background_vocab = 10;
  c.runs = 2;
  return c;
}

struct Prepared {
  TahgDataset ds;
  Vocabulary vocab;
  HyperBertConfig model;
  TokenBatch tokens;
};

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p{generate_synthetic(cfg.data.synthetic), {}, cfg.model, {}};
  p.vocab = build_vocabulary(p.ds, cfg.data);
  p.model.vocab_size = static_cast<Index>(p.vocab.size());
  p.tokens = tokenize_all(p.ds.texts, p.vocab, p.model.max_len);
  return p;
}

bool same_bytes(const HyperBertParams& a, const HyperBertParams& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Matrix& x = pa[i].value();
    const Matrix& y = pb[i].value();
    if (x.size() != y.size() ||
        std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) {
      return false;
    }
  }
  return true;
}

// --- pretraining --------------------------------------------------------

TEST(Pretrain, SamplerDrawsDistinctNodesWithNeighbors) {
  Hypergraph g = generate_synthetic(SyntheticSpec{}).hypergraph;
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto nodes = sample_contrastive_nodes(g, 32, 4, rng);
    ASSERT_EQ(nodes.size(), 32u);
    EXPECT_EQ(std::set<NodeId>(nodes.begin(), nodes.end()).size(), 32u);
    ContrastiveBatch b = make_contrastive_batch(g, nodes, Tensor(Matrix::Zero(32, 1)), Tensor(Matrix::Zero(32, 1)), 0.2);
    EXPECT_GE(count_anchors(b), 24);
  }
  Hypergraph tiny(3, {{0, 1}, {2}});
  EXPECT_EQ(sample_contrastive_nodes(tiny, 10, 4, rng).size(), 3u);
}

TEST(Pretrain, ZeroStepsIsANoOp) {
  ExperimentConfig cfg = small_experiment();
  Prepared p = prepare(cfg);
  Rng rng(0);
  HyperBertParams params = init_params(p.model, rng);
  HyperBertParams before = params.clone();
  cfg.pretrain.max_steps = 0;
  EXPECT_TRUE(pretrain(p.ds.hypergraph, p.tokens, p.model, params, cfg.pretrain).empty());
  EXPECT_TRUE(same_bytes(params, before));
}

TEST(Pretrain, NullObjectiveLeavesParametersUnchanged) {
  ExperimentConfig cfg = small_experiment();
  Prepared p = prepare(cfg);
  Rng rng(0);
  HyperBertParams params = init_params(p.model, rng);
  HyperBertParams before = params.clone();
  cfg.pretrain.weights = LossWeights{0.0, 0.0, 0.0};
  const auto curve = pretrain(p.ds.hypergraph, p.tokens, p.model, params, cfg.pretrain);
  ASSERT_EQ(curve.size(), 5u);
  for (const auto& r : curve) EXPECT_EQ(r.report.total, 0.0);
  EXPECT_TRUE(same_bytes(params, before));
}

TEST(Pretrain, StepsChangeParametersDeterministically) {
  ExperimentConfig cfg = small_experiment();
  Prepared p = prepare(cfg);
  Rng r1(0), r2(0);
  HyperBertParams a = init_params(p.model, r1);
  HyperBertParams b = init_params(p.model, r2);
  HyperBertParams before = a.clone();
  const auto ca = pretrain(p.ds.hypergraph, p.tokens, p.model, a, cfg.pretrain);
  const auto cb = pretrain(p.ds.hypergraph, p.tokens, p.model, b, cfg.pretrain);
  EXPECT_FALSE(same_bytes(a, before));
  EXPECT_TRUE(same_bytes(a, b));
  ASSERT_EQ(ca.size(), cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i].report.total, cb[i].report.total);
}

TEST(Pretrain, LossDecreasesOnDeskSynthetic) {
  ExperimentConfig cfg = ExperimentConfig::desk();
  Prepared p = prepare(cfg);
  Rng rng(derive_seeds(cfg.seed, 0).init);
  HyperBertParams params = init_params(p.model, rng);
  cfg.pretrain.max_steps = 300;
  cfg.pretrain.seed = derive_seeds(cfg.seed, 0).pretrain;
  const auto curve = pretrain(p.ds.hypergraph, p.tokens, p.model, params, cfg.pretrain);
  ASSERT_GE(curve.size(), 20u);
  // Compare window means; single steps are noisy.
  auto window = [&](std::size_t begin) {
    double s = 0.0;
    for (std::size_t i = begin; i < begin + 10; ++i) s += curve[i].report.total;
    return s / 10.0;
  };
  EXPECT_LT(curve.back().report.total, curve.front().report.total);
  EXPECT_LT(window(curve.size() - 10), window(0));
}

TEST(Pretrain, RejectsGraphsWithoutMultiNodeEdges) {
  ExperimentConfig cfg = small_experiment();
  Hypergraph g(3, {{0}, {1}, {2}});
  HyperBertConfig m = cfg.model;
  m.vocab_size = 8;
  Rng rng(0);
  HyperBertParams params = init_params(m, rng);
  TokenBatch tokens = tokenize_all(std::vector<std::string>{"a", "b", "c"}, Vocabulary(), m.max_len);
  EXPECT_THROW(pretrain(g, tokens, m, params, cfg.pretrain), DataError);
}

TEST(Pretrain, LossCurveCsv) {
  std::vector<LossRecord> curve(2);
  curve[0].step = 1;
  curve[0].report.total = 1.5;
  curve[0].report.semantic = 1.5;
  curve[1].step = 2;
  std::ostringstream out;
  write_loss_curve_csv(out, curve);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "step,total,semantic,structural,alignment");
  EXPECT_NE(out.str().find("\n1,1.5,1.5,,\n"), std::string::npos) << out.str();
}

// --- classifier head ----------------------------------------------------

TEST(Head, ZeroHeadGivesLogC) {
  for (Index c : {2, 3, 7}) {
    Rng rng(0);
    ClassifierHead head = init_head(HeadKind::mlp, 4, 5, c, rng);
    for (Tensor t : head.parameters()) t.mutable_value().setZero();
    std::vector<int> labels{0, 1, 0};
    const Tensor logits = head.logits(Tensor(random_matrix(3, 4, rng)));
    EXPECT_NEAR(cross_entropy(logits, labels).item(), std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(Head, CrossEntropyMatchesDefinition) {
  Rng rng(1);
  const Matrix logits = random_matrix(4, 3, rng, 2.0);
  const std::vector<int> labels{2, 0, 1, 1};
  double want = 0.0;
  for (Index i = 0; i < 4; ++i) {
    const double z = logits.row(i).array().exp().sum();
    want -= std::log(std::exp(logits(i, labels[static_cast<std::size_t>(i)])) / z);
  }
  EXPECT_NEAR(cross_entropy(Tensor(logits), labels).item(), want / 4.0, 1e-12);
  EXPECT_THROW(cross_entropy(Tensor(logits), std::vector<int>{0, 1, 2, 3}), DataError);
}

TEST(Head, ShapesAndInit) {
  Rng rng(2);
  ClassifierHead mlp = init_head(HeadKind::mlp, 6, 5, 3, rng);
  EXPECT_EQ(mlp.parameters().size(), 4u);
  EXPECT_EQ(mlp.num_classes(), 3);
  EXPECT_EQ(mlp.hidden_bias.value(), Matrix::Zero(1, 5));
  ClassifierHead linear = init_head(HeadKind::linear, 6, 5, 3, rng);
  EXPECT_EQ(linear.parameters().size(), 2u);
  EXPECT_EQ(linear.output_weight.shape(), (std::array<Index, 2>{6, 3}));
}

TEST(Head, MemorizesSeparableData) {
  Rng rng(3);
  Matrix features = random_matrix(30, 4, rng);
  std::vector<int> labels(30);
  for (Index i = 0; i < 30; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<int>(i % 3);
    features(i, i % 3) += 4.0;
  }
  Splits splits;
  for (NodeId v = 0; v < 30; ++v) splits.train.push_back(v);
  splits.val = splits.train;
  FinetuneConfig cfg;
  cfg.epochs = 100;
  cfg.optimizer.lr = 1e-2;
  for (HeadKind kind : {HeadKind::mlp, HeadKind::linear}) {
    cfg.head = kind;
    FinetuneResult r = train_head(features, labels, 3, splits, cfg);
    EXPECT_EQ(r.best_val_accuracy, 1.0);
    EXPECT_EQ(evaluate(r.head, features, labels, splits.train), 1.0);
  }
}

TEST(Head, EvaluatePerfectAndInverted) {
  ClassifierHead head;
  head.kind = HeadKind::linear;
  head.output_weight = Tensor(Matrix::Identity(3, 3), true);
  head.output_bias = Tensor(Matrix::Zero(1, 3), true);
  const Matrix features = Matrix::Identity(3, 3);
  const std::vector<NodeId> all{0, 1, 2};
  EXPECT_EQ(evaluate(head, features, std::vector<int>{0, 1, 2}, all), 1.0);
  EXPECT_EQ(evaluate(head, features, std::vector<int>{1, 2, 0}, all), 0.0);
  EXPECT_THROW(evaluate(head, features, std::vector<int>{0, 1, 2}, std::vector<NodeId>{}), ContractError);
}

TEST(Head, RandomHeadIsNearChance) {
  Rng rng(4);
  ClassifierHead head = init_head(HeadKind::linear, 8, 1, 3, rng);
  const Matrix features = random_matrix(3000, 8, rng);
  std::uniform_int_distribution<int> label(0, 2);
  std::vector<int> labels(3000);
  for (auto& y : labels) y = label(rng);
  std::vector<NodeId> all(3000);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_NEAR(evaluate(head, features, labels, all), 1.0 / 3.0, 0.04);
}

TEST(Head, BestEpochTieKeepsEarliest) {
  // Constant features: every evaluation predicts one class, so validation
  // accuracy never changes after the first evaluation.
  const Matrix features = Matrix::Ones(6, 2);
  const std::vector<int> labels{0, 0, 0, 0, 0, 0};
  Splits splits{{0, 1, 2}, {3, 4, 5}, {}};
  FinetuneConfig cfg;
  cfg.epochs = 30;
  cfg.eval_every = 10;
  FinetuneResult r = train_head(features, labels, 2, splits, cfg);
  ASSERT_EQ(r.val_curve.size(), 3u);
  EXPECT_EQ(r.val_curve[0].second, r.val_curve[2].second);
  EXPECT_EQ(r.best_epoch, 10);
}

TEST(Head, EvaluationScheduleIncludesLastEpoch) {
  const Matrix features = Matrix::Ones(4, 2);
  const std::vector<int> labels{0, 1, 0, 1};
  Splits splits{{0, 1}, {2, 3}, {}};
  FinetuneConfig cfg;
  cfg.epochs = 25;
  cfg.eval_every = 10;
  FinetuneResult r = train_head(features, labels, 2, splits, cfg);
  std::vector<Index> epochs;
  for (const auto& [e, acc] : r.val_curve) epochs.push_back(e);
  EXPECT_EQ(epochs, (std::vector<Index>{10, 20, 25}));
}

TEST(Head, TrainHeadContracts) {
  const Matrix features = Matrix::Ones(4, 2);
  FinetuneConfig cfg;
  EXPECT_THROW(train_head(features, std::vector<int>{0, 1, 0, 1}, 2, Splits{{}, {1}, {}}, cfg), ContractError);
  EXPECT_THROW(train_head(features, std::vector<int>{0, 5, 0, 1}, 2, Splits{{0, 1}, {2}, {}}, cfg), DataError);
  cfg.eval_every = 0;
  EXPECT_THROW(train_head(features, std::vector<int>{0, 1, 0, 1}, 2, Splits{{0}, {1}, {}}, cfg), ConfigError);
}

TEST(Head, SaveLoadRoundTrip) {
  Rng rng(5);
  const auto path = std::filesystem::temp_directory_path() / "hyperbert_head_test.json";
  for (HeadKind kind : {HeadKind::mlp, HeadKind::linear}) {
    ClassifierHead head = init_head(kind, 4, 3, 2, rng);
    save_head(path, head);
    ClassifierHead back = load_head(path);
    EXPECT_EQ(back.kind, kind);
    const Matrix x = random_matrix(5, 4, rng);
    EXPECT_EQ(predict(back, x), predict(head, x));
    EXPECT_EQ(back.output_weight.value(), head.output_weight.value());
  }
  std::filesystem::remove(path);
}

TEST(Finetune, BackboneBytesUnchanged) {
  ExperimentConfig cfg = small_experiment();
  Prepared p = prepare(cfg);
  Rng rng(0);
  HyperBertParams params = init_params(p.model, rng);
  HyperBertParams before = params.clone();
  finetune(p.ds, p.tokens, p.model, params, cfg.finetune);
  EXPECT_TRUE(same_bytes(params, before));
}

// --- experiments --------------------------------------------------------

TEST(Experiment, SeedDerivation) {
  EXPECT_NE(run_seed(0, 0), run_seed(0, 1));
  EXPECT_NE(run_seed(0, 0), run_seed(1, 0));
  const RunSeeds s = derive_seeds(3, 2);
  EXPECT_EQ(s.run, run_seed(3, 2));
  EXPECT_EQ(std::set<std::uint64_t>({s.init, s.pretrain, s.finetune, s.run}).size(), 4u);
}

TEST(Experiment, VocabularyUsesTrainingTextsOnly) {
  TahgDataset ds = generate_synthetic(small_experiment().data.synthetic);
  ds.texts[static_cast<std::size_t>(ds.splits.test.front())] = "onlyintest";
  Vocabulary v = build_vocabulary(ds, DataConfig{});
  EXPECT_EQ(v.id("onlyintest"), Vocabulary::kUnk);
  ds.texts[static_cast<std::size_t>(ds.splits.train.front())] = "onlyintrain";
  EXPECT_NE(build_vocabulary(ds, DataConfig{}).id("onlyintrain"), Vocabulary::kUnk);
}

TEST(Experiment, SingleRunHasZeroStd) {
  ExperimentConfig cfg = small_experiment();
  cfg.runs = 1;
  TahgDataset ds = generate_synthetic(cfg.data.synthetic);
  RunReport r = run_experiment(ds, cfg);
  ASSERT_EQ(r.runs.size(), 1u);
  EXPECT_EQ(r.std, 0.0);
  EXPECT_EQ(r.mean, r.runs[0].test_accuracy);
  EXPECT_TRUE(r.runs[0].backbone_unchanged);
}

TEST(Experiment, DeterministicUnderMasterSeed) {
  ExperimentConfig cfg = small_experiment();
  cfg.seed = 7;
  TahgDataset ds = generate_synthetic(cfg.data.synthetic);
  std::ostringstream a, b;
  write_run_report_csv(a, run_experiment(ds, cfg));
  write_run_report_csv(b, run_experiment(ds, cfg));
  EXPECT_EQ(a.str(), b.str());
  cfg.seed = 8;
  std::ostringstream c;
  write_run_report_csv(c, run_experiment(ds, cfg));
  EXPECT_NE(a.str(), c.str());
}

TEST(Experiment, SummaryRecomputesMeanAndPopulationStd) {
  RunReport r;
  for (double acc : {0.5, 0.7, 0.9, 0.6}) {
    RunResult run;
    run.test_accuracy = acc;
    r.runs.push_back(run);
  }
  summarize(r);
  EXPECT_NEAR(r.mean, 0.675, 1e-15);
  const double var = (0.175 * 0.175 + 0.025 * 0.025 + 0.225 * 0.225 + 0.075 * 0.075) / 4.0;
  EXPECT_NEAR(r.std, std::sqrt(var), 1e-15);
}

TEST(Experiment, ReportCsvLayout) {
  ExperimentConfig cfg = small_experiment();
  TahgDataset ds = generate_synthetic(cfg.data.synthetic);
  RunReport r = run_experiment(ds, cfg);
  std::ostringstream out;
  write_run_report_csv(out, r);
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 1u + 2u + 2u);
  EXPECT_EQ(lines[0],
            "row,variant,config_hash,lambda_semantic,lambda_structural,lambda_alignment,seed,test_accuracy,"
            "val_accuracy,best_epoch,final_loss,backbone_unchanged");
  EXPECT_EQ(lines[3].substr(0, 5), "mean,");
  EXPECT_EQ(lines[4].substr(0, 4), "std,");
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  EXPECT_NE(lines[1].find(hash), std::string::npos);
}

TEST(Experiment, Variants) {
  const ExperimentConfig base = small_experiment();
  EXPECT_EQ(ablation_variants().size(), 6u);
  EXPECT_EQ(apply_variant(base, "full"), base);
  EXPECT_EQ(apply_variant(base, "no-semantic").pretrain.weights.semantic, 0.0);
  EXPECT_EQ(apply_variant(base, "no-structural").pretrain.weights.structural, 0.0);
  const ExperimentConfig na = apply_variant(base, "no-alignment");
  EXPECT_EQ(na.pretrain.weights.alignment, 0.0);
  EXPECT_EQ(na.pretrain.weights.semantic, 1.0);
  EXPECT_NE(config_hash(na), config_hash(base));
  EXPECT_EQ(apply_variant(base, "gnn-structural").model.structural, StructuralKind::gnn);
  EXPECT_EQ(apply_variant(base, "no-pretrain").pretrain.max_steps, 0);
  EXPECT_THROW(apply_variant(base, "no-such-variant"), ConfigError);
}

TEST(Experiment, AblationReportCarriesVariantWeights) {
  ExperimentConfig cfg = small_experiment();
  cfg.runs = 1;
  TahgDataset ds = generate_synthetic(cfg.data.synthetic);
  RunReport r = run_ablation(ds, cfg, "no-alignment");
  EXPECT_EQ(r.variant, "no-alignment");
  EXPECT_EQ(r.weights.alignment, 0.0);
  EXPECT_EQ(r.config_hash, config_hash(apply_variant(cfg, "no-alignment")));
  RunReport np = run_ablation(ds, cfg, "no-pretrain");
  EXPECT_EQ(np.runs[0].final_loss, 0.0);
}

}  // namespace
}  // namespace hyperbert
