#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hyperbert/dataset.hpp"
#include "hyperbert/losses.hpp"
#include "hyperbert/model.hpp"
#include "hyperbert/optim.hpp"

namespace hyperbert {

struct PretrainConfig {
  Index batch_size = 32;
  Index max_steps = 500;
  AdamOptions optimizer;
  double temperature = 0.2;
  LossWeights weights;
  bool cosine = false;
  // Up to this many members are taken from each sampled hyperedge.
  Index members_per_edge = 4;
  std::uint64_t seed = 0;  // experiments replace it with a per-run seed

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

enum class HeadKind { mlp, linear };

struct FinetuneConfig {
  Index epochs = 200;
  Index eval_every = 10;
  HeadKind head = HeadKind::mlp;
  Index width = 32;
  Index batch_size = 32;
  AdamOptions optimizer;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const FinetuneConfig&) const = default;
};

struct DataConfig {
  SyntheticSpec synthetic;
  std::size_t vocab_max_size = 20000;
  std::size_t vocab_min_count = 1;

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  HyperBertConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  DataConfig data;
  std::uint64_t seed = 0;
  Index runs = 10;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;

  static ExperimentConfig desk();
  static ExperimentConfig paper();
};

// Named profile: "desk" or "paper".
ExperimentConfig profile_config(const std::string& name);

// --- pretraining --------------------------------------------------------

// Batch for one contrastive step: members of randomly drawn multi-node
// hyperedges (at most `members_per_edge` each) until the batch is full, so that
// nearly every anchor has an in-batch positive. Falls back to uniform nodes
// when the hyperedges cannot fill it.
std::vector<NodeId> sample_contrastive_nodes(const Hypergraph& g, Index batch_size,
                                             Index members_per_edge, Rng& rng);

struct LossRecord {
  Index step = 0;
  LossReport report;
};

// Runs cfg.max_steps Adam steps on the weighted contrastive objective and
// updates `params` in place. `tokens` holds one row per node of g. When every
// loss weight is zero no step is taken.
std::vector<LossRecord> pretrain(const Hypergraph& g, const TokenBatch& tokens,
                                 const HyperBertConfig& config, HyperBertParams& params,
                                 const PretrainConfig& cfg);

void write_loss_curve_csv(std::ostream& out, std::span<const LossRecord> curve);

// --- fine-tuning --------------------------------------------------------

struct ClassifierHead {
  HeadKind kind = HeadKind::mlp;
  Tensor hidden_weight;  // mlp only
  Tensor hidden_bias;
  Tensor output_weight;
  Tensor output_bias;

  Tensor logits(const Tensor& features) const;
  std::vector<Tensor> parameters() const;
  Index num_classes() const { return output_weight.cols(); }
};

ClassifierHead init_head(HeadKind kind, Index d_in, Index width, Index num_classes, Rng& rng);

// Mean cross-entropy of softmax(logits) against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

std::vector<int> predict(const ClassifierHead& head, const Matrix& features);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct FinetuneResult {
  ClassifierHead head;  // parameters of the best evaluated epoch
  Index best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<std::pair<Index, double>> val_curve;  // (epoch, accuracy)
};

// Trains a head on fixed node features (one row per node). Validation runs
// every eval_every epochs and after the last; the first epoch reaching the
// best accuracy wins.
FinetuneResult train_head(const Matrix& features, std::span<const int> labels, Index num_classes,
                          const Splits& splits, const FinetuneConfig& cfg);

// Joint representations of every node from the frozen backbone.
Matrix node_features(const Hypergraph& g, const TokenBatch& tokens, const HyperBertConfig& config,
                     const HyperBertParams& params);

FinetuneResult finetune(const TahgDataset& ds, const TokenBatch& tokens,
                        const HyperBertConfig& config, const HyperBertParams& params,
                        const FinetuneConfig& cfg);

// Accuracy of the head on one split of precomputed features.
double evaluate(const ClassifierHead& head, const Matrix& features, std::span<const int> labels,
                std::span<const NodeId> split);

void save_head(const std::filesystem::path& path, const ClassifierHead& head);
ClassifierHead load_head(const std::filesystem::path& path);

// --- experiments --------------------------------------------------------

struct RunResult {
  Index run = 0;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double val_accuracy = 0.0;
  Index best_epoch = 0;
  double final_loss = 0.0;  // last logged pretraining loss, 0 without pretraining
  bool backbone_unchanged = false;
};

struct RunReport {
  std::string variant = "full";
  std::vector<RunResult> runs;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::uint64_t config_hash = 0;
  LossWeights weights;
};

// Seed of run r under a master seed, and the streams derived from it for
// initialization, pretraining and fine-tuning.
std::uint64_t run_seed(std::uint64_t master, Index run);

struct RunSeeds {
  std::uint64_t run = 0;
  std::uint64_t init = 0;
  std::uint64_t pretrain = 0;
  std::uint64_t finetune = 0;
};
RunSeeds derive_seeds(std::uint64_t master, Index run);

// Vocabulary over the training-split texts.
Vocabulary build_vocabulary(const TahgDataset& ds, const DataConfig& data);

RunResult run_once(const TahgDataset& ds, const ExperimentConfig& cfg, Index run);
RunReport run_experiment(const TahgDataset& ds, const ExperimentConfig& cfg);

// full, no-semantic, no-structural, no-alignment, gnn-structural, no-pretrain.
const std::vector<std::string>& ablation_variants();
ExperimentConfig apply_variant(ExperimentConfig cfg, const std::string& variant);
RunReport run_ablation(const TahgDataset& ds, const ExperimentConfig& cfg, const std::string& variant);

void summarize(RunReport& report);
void write_run_report_csv(std::ostream& out, const RunReport& report);

}  // namespace hyperbert
