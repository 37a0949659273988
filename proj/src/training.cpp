#include "hyperbert/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "hyperbert/config.hpp"
#include "hyperbert/errors.hpp"
#include "hyperbert/io.hpp"

namespace hyperbert {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Index uniform_index(Rng& rng, Index n) { return std::uniform_int_distribution<Index>(0, n - 1)(rng); }

std::vector<Matrix> snapshot(const HyperBertParams& params) {
  std::vector<Matrix> out;
  for (const auto& t : params.parameters()) out.push_back(t.value());
  return out;
}

bool bitwise_equal(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), sizeof(double) * static_cast<std::size_t>(a[i].size())) != 0) {
      return false;
    }
  }
  return true;
}

Tensor copy_of(const Tensor& t) { return t.node() ? Tensor(t.value(), true) : Tensor(); }

ClassifierHead copy_head(const ClassifierHead& h) {
  return ClassifierHead{h.kind, copy_of(h.hidden_weight), copy_of(h.hidden_bias),
                        copy_of(h.output_weight), copy_of(h.output_bias)};
}

void check_labels(std::span<const int> labels, Index num_classes, std::span<const NodeId> nodes) {
  for (NodeId v : nodes) {
    if (v < 0 || v >= static_cast<Index>(labels.size())) {
      throw DataError("node " + std::to_string(v) + " has no label");
    }
    const int y = labels[static_cast<std::size_t>(v)];
    if (y < 0 || y >= num_classes) {
      throw DataError("node " + std::to_string(v) + " has label " + std::to_string(y) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Matrix gather(const Matrix& features, std::span<const NodeId> nodes) {
  Matrix out(static_cast<Index>(nodes.size()), features.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) out.row(static_cast<Index>(i)) = features.row(nodes[i]);
  return out;
}

}  // namespace

// --- configuration ------------------------------------------------------

void PretrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("pretrain: batch_size must be at least 2");
  if (max_steps < 0) throw ConfigError("pretrain: max_steps must not be negative");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("pretrain: temperature must be positive");
  }
  if (members_per_edge < 2) throw ConfigError("pretrain: members_per_edge must be at least 2");
  for (double w : {weights.semantic, weights.structural, weights.alignment}) {
    if (!std::isfinite(w)) throw ConfigError("pretrain: loss weights must be finite");
  }
  optimizer.validate();
}

void FinetuneConfig::validate() const {
  if (eval_every < 1) throw ConfigError("finetune: eval_every must be positive");
  if (epochs < eval_every) throw ConfigError("finetune: epochs must be at least eval_every");
  if (width < 1) throw ConfigError("finetune: width must be positive");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be positive");
  optimizer.validate();
}

void ExperimentConfig::validate() const {
  HyperBertConfig m = model;
  if (m.vocab_size == 0) m.vocab_size = Vocabulary::kNumReserved;  // filled from the data later
  m.validate();
  pretrain.validate();
  finetune.validate();
  data.synthetic.validate();
  if (runs < 1) throw ConfigError("experiment: runs must be at least 1");
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.model = HyperBertConfig::desk();
  c.pretrain.batch_size = 64;
  c.finetune.optimizer.lr = 3e-3;
  return c;
}

ExperimentConfig ExperimentConfig::paper() {
  ExperimentConfig c;
  c.model = HyperBertConfig::paper();
  c.pretrain.max_steps = 20000;
  c.finetune.width = 512;
  return c;
}

ExperimentConfig profile_config(const std::string& name) {
  if (name == "desk") return ExperimentConfig::desk();
  if (name == "paper") return ExperimentConfig::paper();
  throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

// --- pretraining --------------------------------------------------------

std::vector<NodeId> sample_contrastive_nodes(const Hypergraph& g, Index batch_size,
                                             Index members_per_edge, Rng& rng) {
  const Index n = g.num_nodes();
  const Index want = std::min(batch_size, n);
  std::vector<std::size_t> multi;
  for (std::size_t e = 0; e < g.hyperedges().size(); ++e) {
    if (g.hyperedges()[e].size() >= 2) multi.push_back(e);
  }
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  std::vector<NodeId> nodes;
  for (Index attempt = 0; !multi.empty() && static_cast<Index>(nodes.size()) < want &&
                          attempt < 4 * want;
       ++attempt) {
    std::vector<NodeId> members = g.hyperedges()[multi[static_cast<std::size_t>(
        uniform_index(rng, static_cast<Index>(multi.size())))]];
    std::shuffle(members.begin(), members.end(), rng);
    Index added = 0;
    for (NodeId v : members) {
      if (added == members_per_edge || static_cast<Index>(nodes.size()) == want) break;
      if (taken[static_cast<std::size_t>(v)]) continue;
      taken[static_cast<std::size_t>(v)] = 1;
      nodes.push_back(v);
      ++added;
    }
  }
  while (static_cast<Index>(nodes.size()) < want) {
    const NodeId v = uniform_index(rng, n);
    if (taken[static_cast<std::size_t>(v)]) continue;
    taken[static_cast<std::size_t>(v)] = 1;
    nodes.push_back(v);
  }
  return nodes;
}

std::vector<LossRecord> pretrain(const Hypergraph& g, const TokenBatch& tokens,
                                 const HyperBertConfig& config, HyperBertParams& params,
                                 const PretrainConfig& cfg) {
  cfg.validate();
  config.validate();
  if (tokens.rows() != g.num_nodes()) {
    throw DimensionError("pretrain: token table has " + std::to_string(tokens.rows()) +
                         " rows for " + std::to_string(g.num_nodes()) + " nodes");
  }
  const bool feasible = std::any_of(g.hyperedges().begin(), g.hyperedges().end(),
                                    [](const auto& e) { return e.size() >= 2; });
  if (!feasible) {
    throw DataError("pretrain: contrastive training needs at least one hyperedge with two or more nodes");
  }
  std::vector<LossRecord> curve;
  if (cfg.max_steps == 0) return curve;

  const LossWeights& w = cfg.weights;
  const bool null_objective = w.semantic == 0.0 && w.structural == 0.0 && w.alignment == 0.0;
  Rng rng(cfg.seed);
  Adam optimizer(params.parameters(), cfg.optimizer);
  for (Index step = 1; step <= cfg.max_steps; ++step) {
    if (null_objective) {
      LossRecord record{step, {}};
      record.report.weights = w;
      curve.push_back(record);
      continue;
    }
    std::vector<NodeId> nodes = sample_contrastive_nodes(g, cfg.batch_size, cfg.members_per_edge, rng);
    Tape tape;
    NodeRepresentations reps = forward(g, nodes, tokens, config, params, ForwardOptions{true, &rng});
    ContrastiveBatch batch = make_contrastive_batch(g, std::move(nodes), reps.semantic, reps.structural,
                                                    cfg.temperature, cfg.cosine);
    if (count_anchors(batch) == 0) continue;  // nothing to contrast in this draw
    auto [loss, report] = total_loss(batch, w);
    if (!std::isfinite(report.total)) {
      throw NumericError("pretrain: loss became non-finite at step " + std::to_string(step));
    }
    tape.backward(loss);
    optimizer.step();
    optimizer.zero_grad();
    curve.push_back(LossRecord{step, report});
  }
  return curve;
}

void write_loss_curve_csv(std::ostream& out, std::span<const LossRecord> curve) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  out << "step,total,semantic,structural,alignment\n";
  for (const auto& r : curve) {
    out << r.step << ',' << format_double(r.report.total) << ',' << opt(r.report.semantic) << ','
        << opt(r.report.structural) << ',' << opt(r.report.alignment) << '\n';
  }
}

// --- classifier head ----------------------------------------------------

Tensor ClassifierHead::logits(const Tensor& features) const {
  Tensor x = features;
  if (kind == HeadKind::mlp) x = relu(add_row(matmul(x, hidden_weight), hidden_bias));
  return add_row(matmul(x, output_weight), output_bias);
}

std::vector<Tensor> ClassifierHead::parameters() const {
  if (kind == HeadKind::mlp) return {hidden_weight, hidden_bias, output_weight, output_bias};
  return {output_weight, output_bias};
}

ClassifierHead init_head(HeadKind kind, Index d_in, Index width, Index num_classes, Rng& rng) {
  if (d_in < 1 || width < 1 || num_classes < 1) throw ConfigError("classifier head: sizes must be positive");
  ClassifierHead h;
  h.kind = kind;
  Index d = d_in;
  if (kind == HeadKind::mlp) {
    h.hidden_weight = Tensor(xavier_uniform(d_in, width, rng), true);
    h.hidden_bias = Tensor(Matrix::Zero(1, width), true);
    d = width;
  }
  h.output_weight = Tensor(xavier_uniform(d, num_classes, rng), true);
  h.output_bias = Tensor(Matrix::Zero(1, num_classes), true);
  return h;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Index n = logits.rows();
  if (static_cast<Index>(labels.size()) != n || n == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         logits.shape_string());
  }
  Matrix w = Matrix::Zero(n, logits.cols());
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw DataError("cross_entropy: label " + std::to_string(y) + " out of range");
    w(i, y) = -1.0 / static_cast<double>(n);
  }
  return weighted_sum(log_softmax_rows(logits), w);
}

std::vector<int> predict(const ClassifierHead& head, const Matrix& features) {
  NoGradGuard no_grad;
  const Matrix logits = head.logits(Tensor(features)).value();
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || labels.empty()) {
    throw DimensionError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(const ClassifierHead& head, const Matrix& features, std::span<const int> labels,
                std::span<const NodeId> split) {
  if (split.empty()) throw ContractError("evaluate: empty split");
  std::vector<int> truth;
  for (NodeId v : split) {
    if (v < 0 || v >= features.rows() || v >= static_cast<Index>(labels.size())) {
      throw DimensionError("evaluate: node " + std::to_string(v) + " has no features");
    }
    truth.push_back(labels[static_cast<std::size_t>(v)]);
  }
  return accuracy(predict(head, gather(features, split)), truth);
}

// --- fine-tuning --------------------------------------------------------

FinetuneResult train_head(const Matrix& features, std::span<const int> labels, Index num_classes,
                          const Splits& splits, const FinetuneConfig& cfg) {
  cfg.validate();
  if (splits.train.empty() || splits.val.empty()) {
    throw ContractError("finetune: train and validation splits must be nonempty");
  }
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw DimensionError("finetune: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(features.rows()) + " feature rows");
  }
  check_labels(labels, num_classes, splits.train);
  check_labels(labels, num_classes, splits.val);

  Rng rng(cfg.seed);
  FinetuneResult result;
  ClassifierHead head = init_head(cfg.head, features.cols(), cfg.width, num_classes, rng);
  Adam optimizer(head.parameters(), cfg.optimizer);
  std::vector<NodeId> order = splits.train;
  result.best_val_accuracy = -1.0;
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::span<const NodeId> chunk(order.data() + begin, end - begin);
      std::vector<int> y;
      for (NodeId v : chunk) y.push_back(labels[static_cast<std::size_t>(v)]);
      Tape tape;
      Tensor loss = cross_entropy(head.logits(Tensor(gather(features, chunk))), y);
      tape.backward(loss);
      optimizer.step();
      optimizer.zero_grad();
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      const double acc = evaluate(head, features, labels, splits.val);
      result.val_curve.emplace_back(epoch, acc);
      if (acc > result.best_val_accuracy) {
        result.best_val_accuracy = acc;
        result.best_epoch = epoch;
        result.head = copy_head(head);
      }
    }
  }
  return result;
}

Matrix node_features(const Hypergraph& g, const TokenBatch& tokens, const HyperBertConfig& config,
                     const HyperBertParams& params) {
  std::vector<NodeId> all(static_cast<std::size_t>(g.num_nodes()));
  std::iota(all.begin(), all.end(), NodeId{0});
  return embed_nodes(g, all, tokens, config, params).joint.value();
}

FinetuneResult finetune(const TahgDataset& ds, const TokenBatch& tokens,
                        const HyperBertConfig& config, const HyperBertParams& params,
                        const FinetuneConfig& cfg) {
  return train_head(node_features(ds.hypergraph, tokens, config, params), ds.labels, ds.num_classes(),
                    ds.splits, cfg);
}

void save_head(const std::filesystem::path& path, const ClassifierHead& head) {
  nlohmann::json j;
  j["format"] = "hyperbert-head";
  j["kind"] = to_string(head.kind);
  nlohmann::json tensors = nlohmann::json::object();
  const std::pair<const char*, const Tensor*> named[] = {{"hidden_weight", &head.hidden_weight},
                                                          {"hidden_bias", &head.hidden_bias},
                                                          {"output_weight", &head.output_weight},
                                                          {"output_bias", &head.output_bias}};
  for (const auto& [name, t] : named) {
    if (!t->node()) continue;
    const Matrix& m = t->value();
    tensors[name] = {{"shape", {m.rows(), m.cols()}},
                     {"data", std::vector<double>(m.data(), m.data() + m.size())}};
  }
  j["tensors"] = std::move(tensors);
  write_file_atomically(path, j.dump() + "\n");
}

ClassifierHead load_head(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open head " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("head " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "hyperbert-head") throw ParseError(path.string() + ": not a classifier head");
  ClassifierHead h;
  const std::string kind = j.value("kind", "");
  if (kind == "mlp") h.kind = HeadKind::mlp;
  else if (kind == "linear") h.kind = HeadKind::linear;
  else throw ParseError(path.string() + ": unknown head kind '" + kind + "'");
  auto read = [&](const char* name) {
    const auto& t = j.at("tensors").at(name);
    const auto shape = t.at("shape").get<std::vector<Index>>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] * shape[1] != static_cast<Index>(data.size())) {
      throw ParseError(path.string() + ": tensor " + name + " has the wrong shape");
    }
    Matrix m(shape[0], shape[1]);
    std::copy(data.begin(), data.end(), m.data());
    return Tensor(std::move(m), true);
  };
  try {
    if (h.kind == HeadKind::mlp) {
      h.hidden_weight = read("hidden_weight");
      h.hidden_bias = read("hidden_bias");
    }
    h.output_weight = read("output_weight");
    h.output_bias = read("output_bias");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("head " + path.string() + ": " + e.what());
  }
  return h;
}

// --- experiments --------------------------------------------------------

std::uint64_t run_seed(std::uint64_t master, Index run) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(run)));
}

RunSeeds derive_seeds(std::uint64_t master, Index run) {
  const std::uint64_t seed = run_seed(master, run);
  return RunSeeds{seed, splitmix64(seed + 1), splitmix64(seed + 2), splitmix64(seed + 3)};
}

Vocabulary build_vocabulary(const TahgDataset& ds, const DataConfig& data) {
  const auto train_texts = ds.texts_of(ds.splits.train);
  return Vocabulary::build(train_texts, data.vocab_max_size, data.vocab_min_count);
}

RunResult run_once(const TahgDataset& ds, const ExperimentConfig& cfg, Index run) {
  RunResult result;
  result.run = run;
  const RunSeeds seeds = derive_seeds(cfg.seed, run);
  result.seed = seeds.run;

  const Vocabulary vocab = build_vocabulary(ds, cfg.data);
  HyperBertConfig model = cfg.model;
  model.vocab_size = static_cast<Index>(vocab.size());
  const TokenBatch tokens = tokenize_all(ds.texts, vocab, model.max_len);

  Rng init_rng(seeds.init);
  HyperBertParams params = init_params(model, init_rng);
  PretrainConfig pre = cfg.pretrain;
  pre.seed = seeds.pretrain;
  const auto curve = pretrain(ds.hypergraph, tokens, model, params, pre);
  if (!curve.empty()) result.final_loss = curve.back().report.total;

  const auto before = snapshot(params);
  FinetuneConfig fine = cfg.finetune;
  fine.seed = seeds.finetune;
  const Matrix features = node_features(ds.hypergraph, tokens, model, params);
  const FinetuneResult tuned = train_head(features, ds.labels, ds.num_classes(), ds.splits, fine);
  result.backbone_unchanged = bitwise_equal(before, snapshot(params));

  result.val_accuracy = tuned.best_val_accuracy;
  result.best_epoch = tuned.best_epoch;
  result.test_accuracy = evaluate(tuned.head, features, ds.labels, ds.splits.test);
  return result;
}

void summarize(RunReport& report) {
  std::sort(report.runs.begin(), report.runs.end(),
            [](const RunResult& a, const RunResult& b) { return a.run < b.run; });
  const auto n = static_cast<double>(report.runs.size());
  if (report.runs.empty()) {
    report.mean = report.std = 0.0;
    return;
  }
  double total = 0.0;
  for (const auto& r : report.runs) total += r.test_accuracy;
  report.mean = total / n;
  double sq = 0.0;
  for (const auto& r : report.runs) sq += (r.test_accuracy - report.mean) * (r.test_accuracy - report.mean);
  report.std = std::sqrt(sq / n);
}

RunReport run_experiment(const TahgDataset& ds, const ExperimentConfig& cfg) {
  cfg.validate();
  ds.validate();
  RunReport report;
  report.config_hash = config_hash(cfg);
  report.weights = cfg.pretrain.weights;
  for (Index r = 0; r < cfg.runs; ++r) report.runs.push_back(run_once(ds, cfg, r));
  summarize(report);
  return report;
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> variants = {"full",         "no-semantic",    "no-structural",
                                                    "no-alignment", "gnn-structural", "no-pretrain"};
  return variants;
}

ExperimentConfig apply_variant(ExperimentConfig cfg, const std::string& variant) {
  if (variant == "full") {
  } else if (variant == "no-semantic") {
    cfg.pretrain.weights.semantic = 0.0;
  } else if (variant == "no-structural") {
    cfg.pretrain.weights.structural = 0.0;
  } else if (variant == "no-alignment") {
    cfg.pretrain.weights.alignment = 0.0;
  } else if (variant == "gnn-structural") {
    cfg.model.structural = StructuralKind::gnn;
  } else if (variant == "no-pretrain") {
    cfg.pretrain.max_steps = 0;
  } else {
    throw ConfigError("unknown ablation variant '" + variant +
                      "' (expected full, no-semantic, no-structural, no-alignment, gnn-structural or "
                      "no-pretrain)");
  }
  return cfg;
}

RunReport run_ablation(const TahgDataset& ds, const ExperimentConfig& cfg, const std::string& variant) {
  RunReport report = run_experiment(ds, apply_variant(cfg, variant));
  report.variant = variant;
  return report;
}

void write_run_report_csv(std::ostream& out, const RunReport& report) {
  const std::string common = report.variant + ',' + hash_string(report.config_hash) + ',' +
                             format_double(report.weights.semantic) + ',' +
                             format_double(report.weights.structural) + ',' +
                             format_double(report.weights.alignment);
  out << "row,variant,config_hash,lambda_semantic,lambda_structural,lambda_alignment,seed,"
         "test_accuracy,val_accuracy,best_epoch,final_loss,backbone_unchanged\n";
  for (const auto& r : report.runs) {
    out << r.run << ',' << common << ',' << r.seed << ',' << format_double(r.test_accuracy) << ','
        << format_double(r.val_accuracy) << ',' << r.best_epoch << ',' << format_double(r.final_loss)
        << ',' << (r.backbone_unchanged ? "true" : "false") << '\n';
  }
  out << "mean," << common << ",," << format_double(report.mean) << ",,,,\n";
  out << "std," << common << ",," << format_double(report.std) << ",,,,\n";
}

}  // namespace hyperbert
