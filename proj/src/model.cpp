#include "hyperbert/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "hyperbert/config.hpp"
#include "hyperbert/io.hpp"
#include "json.hpp"

namespace hyperbert {

namespace {

constexpr const char* kCheckpointFormat = "hyperbert-checkpoint";
constexpr int kCheckpointVersion = 1;

struct PackedTokens {
  TokenBatch batch;
  Tensor embeddings;  // (n·T)×d_model
};

PackedTokens embed_tokens(TokenBatch batch, const HyperBertConfig& config,
                          const HyperBertParams& params, const ForwardOptions& options) {
  const Index n = batch.rows();
  const Index t = batch.length();
  if (t > config.max_len) throw DimensionError("sequence longer than max_len");
  std::vector<Index> ids(static_cast<std::size_t>(n * t));
  std::vector<Index> positions(ids.size());
  for (Index s = 0; s < n; ++s) {
    for (Index k = 0; k < t; ++k) {
      const TokenId id = batch.ids(s, k);
      if (id < 0 || id >= config.vocab_size) {
        throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(config.vocab_size));
      }
      ids[static_cast<std::size_t>(s * t + k)] = id;
      positions[static_cast<std::size_t>(s * t + k)] = k;
    }
  }
  Tensor x = add(gather_rows(params.token_embedding, ids),
                 gather_rows(params.position_embedding, positions));
  if (options.training && config.dropout > 0.0) {
    if (options.rng == nullptr) throw ContractError("forward: dropout in training mode needs an rng");
    x = dropout(x, config.dropout, true, *options.rng);
  }
  return PackedTokens{std::move(batch), std::move(x)};
}

BlockOptions block_options(const HyperBertConfig& config, const ForwardOptions& options) {
  BlockOptions b;
  b.norm = config.norm;
  b.dropout = config.dropout;
  b.training = options.training;
  b.ln_eps = config.ln_eps;
  b.rng = options.rng;
  return b;
}

Matrix mean_weights(const Matrix& mask) {
  Matrix w = mask;
  for (Index r = 0; r < w.rows(); ++r) w.row(r) /= w.row(r).sum();
  return w;
}

}  // namespace

// --- configuration ------------------------------------------------------

void HyperBertConfig::validate() const {
  if (layers < 1 || d_model < 1 || heads < 1 || d_k < 1 || d_v < 1 || d_ff < 1 || hgnn_depth < 1) {
    throw ConfigError("model: layer counts and widths must be positive");
  }
  if (heads * d_k != d_model) {
    throw ConfigError("model: heads * d_k must equal d_model (" + std::to_string(heads) + " * " +
                      std::to_string(d_k) + " != " + std::to_string(d_model) + ")");
  }
  if (max_len < 2) throw ConfigError("model: max_len must be at least 2");
  if (vocab_size <= Vocabulary::kNumReserved - 1) {
    throw ConfigError("model: vocab_size must cover the reserved tokens");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("model: ln_eps must be positive");
}

HyperBertConfig HyperBertConfig::desk() {
  HyperBertConfig c;
  c.dropout = 0.0;  // 150 training nodes; dropout only costs accuracy here
  return c;
}

HyperBertConfig HyperBertConfig::paper() {
  HyperBertConfig c;
  c.layers = 6;
  c.d_model = 512;
  c.heads = 8;
  c.d_k = 64;
  c.d_v = 64;
  c.d_ff = 2048;
  c.max_len = 128;
  c.dropout = 0.5;
  return c;
}

// --- parameters ---------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> HyperBertParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out{{"token_embedding", token_embedding},
                                                  {"position_embedding", position_embedding}};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    for (auto& [name, t] : blocks[l].named_parameters()) {
      out.emplace_back("layer" + std::to_string(l) + ".text." + name, t);
    }
  }
  for (std::size_t l = 0; l < structural.size(); ++l) {
    for (std::size_t k = 0; k < structural[l].size(); ++k) {
      out.emplace_back("layer" + std::to_string(l) + ".structural" + std::to_string(k) + ".weight",
                       structural[l][k].weight);
    }
  }
  return out;
}

std::vector<Tensor> HyperBertParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

HyperBertParams HyperBertParams::clone() const {
  HyperBertParams copy = *this;
  auto fresh = [](const Tensor& t) { return Tensor(t.value(), t.requires_grad()); };
  copy.token_embedding = fresh(token_embedding);
  copy.position_embedding = fresh(position_embedding);
  for (auto& b : copy.blocks) {
    for (Tensor* t : {&b.query, &b.key, &b.value, &b.output, &b.ff1_weight, &b.ff1_bias,
                      &b.ff2_weight, &b.ff2_bias, &b.ln_attn_gain, &b.ln_attn_bias, &b.ln_ffn_gain,
                      &b.ln_ffn_bias, &b.ln_out_gain, &b.ln_out_bias}) {
      *t = fresh(*t);
    }
  }
  for (auto& layer : copy.structural) {
    for (auto& s : layer) s.weight = fresh(s.weight);
  }
  return copy;
}

HyperBertParams init_params(const HyperBertConfig& config, Rng& rng) {
  config.validate();
  HyperBertParams p;
  p.token_embedding = Tensor(xavier_uniform(config.vocab_size, config.d_model, rng), true);
  p.position_embedding = Tensor(xavier_uniform(config.max_len, config.d_model, rng), true);
  for (Index l = 0; l < config.layers; ++l) {
    p.blocks.push_back(
        init_encoder_block(config.d_model, config.heads, config.d_k, config.d_v, config.d_ff, rng));
  }
  for (Index l = 0; l < config.layers; ++l) {
    std::vector<HgnnLayerParams> stack;
    for (Index k = 0; k < config.hgnn_depth; ++k) {
      stack.push_back(HgnnLayerParams{Tensor(xavier_uniform(config.d_model, config.d_model, rng), true),
                                      config.activation});
    }
    p.structural.push_back(std::move(stack));
  }
  return p;
}

// --- forward ------------------------------------------------------------

Tensor encode_text(const TokenBatch& tokens, const HyperBertConfig& config,
                   const HyperBertParams& params, const ForwardOptions& options) {
  std::vector<Index> rows(static_cast<std::size_t>(tokens.rows()));
  for (Index r = 0; r < tokens.rows(); ++r) rows[static_cast<std::size_t>(r)] = r;
  PackedTokens packed = embed_tokens(select_rows(tokens, rows), config, params, options);
  const BlockOptions opts = block_options(config, options);
  Tensor x = packed.embeddings;
  Tensor pooled;
  for (const auto& block : params.blocks) {
    BlockOutput out = encoder_block(x, block, packed.batch.mask, opts);
    x = out.tokens;
    pooled = out.pooled;
  }
  return pooled;
}

NodeRepresentations forward(const Hypergraph& g, std::span<const NodeId> batch,
                            const TokenBatch& tokens, const HyperBertConfig& config,
                            const HyperBertParams& params, const ForwardOptions& options) {
  config.validate();
  if (batch.empty()) throw ContractError("forward: empty batch");
  if (tokens.rows() != g.num_nodes()) {
    throw DimensionError("forward: token table has " + std::to_string(tokens.rows()) +
                         " rows for " + std::to_string(g.num_nodes()) + " nodes");
  }
  const auto layers = static_cast<std::size_t>(config.layers);
  if (params.blocks.size() != layers || params.structural.size() != layers) {
    throw DimensionError("forward: parameters do not match the configured layer count");
  }

  // Nodes in processing order. Layer l runs the text encoder on the prefix
  // order[0, prefix[l]); each prefix is closed under the contexts of the next.
  std::vector<Index> position(static_cast<std::size_t>(g.num_nodes()), -1);
  std::vector<NodeId> order;
  for (NodeId v : batch) {
    g.check_node(v);
    if (position[static_cast<std::size_t>(v)] >= 0) {
      throw ContractError("forward: node " + std::to_string(v) + " appears twice in the batch");
    }
    if (!config.isolated_fallback && g.incident_edges(v).empty()) throw IsolatedNodeError(v);
    position[static_cast<std::size_t>(v)] = static_cast<Index>(order.size());
    order.push_back(v);
  }
  auto close_over_contexts = [&](std::size_t upto) {
    for (std::size_t i = 0; i < upto; ++i) {
      for (NodeId v : context_nodes(g, order[i])) {
        if (position[static_cast<std::size_t>(v)] < 0) {
          position[static_cast<std::size_t>(v)] = static_cast<Index>(order.size());
          order.push_back(v);
        }
      }
    }
    return order.size();
  };
  std::vector<std::size_t> prefix(layers);
  prefix[layers - 1] = close_over_contexts(order.size());
  for (std::size_t l = layers - 1; l-- > 0;) {
    prefix[l] = config.inject_structure ? close_over_contexts(prefix[l + 1]) : prefix[l + 1];
  }

  PackedTokens packed = embed_tokens(select_rows(tokens, order), config, params, options);
  const Index t = packed.batch.length();
  const Matrix& mask = packed.batch.mask;
  const BlockOptions opts = block_options(config, options);
  StructuralOptions structural_opts;
  structural_opts.kind = config.structural;
  structural_opts.isolated_fallback = config.isolated_fallback;

  auto structural_at = [&](std::size_t l, const BlockOutput& out, std::span<const NodeId> centers) {
    const Index n = static_cast<Index>(prefix[l]);
    Tensor features = config.structural_input == StructuralInput::cls
                          ? out.pooled
                          : pool_sequences(out.tokens, mean_weights(mask.topRows(n)));
    std::vector<Index> rows(position.size(), -1);
    for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;
    return structural_forward(g, centers, features, rows, params.structural[l], structural_opts);
  };

  Tensor x = packed.embeddings;
  NodeRepresentations reps;
  for (std::size_t l = 0; l < layers; ++l) {
    const Index n = static_cast<Index>(prefix[l]);
    if (x.rows() != n * t) x = slice_rows(x, 0, n * t);
    BlockOutput out = encoder_block(x, params.blocks[l], mask.topRows(n), opts);
    if (l + 1 < layers) {
      const Index next = static_cast<Index>(prefix[l + 1]);
      x = next == n ? out.tokens : slice_rows(out.tokens, 0, next * t);
      if (config.inject_structure) {
        std::span<const NodeId> targets(order.data(), static_cast<std::size_t>(next));
        Tensor injected = structural_at(l, out, targets);
        x = add(x, expand_sequences(injected, mask.topRows(next)));
      }
    } else {
      const auto b = static_cast<Index>(batch.size());
      reps.semantic = b == n ? out.pooled : slice_rows(out.pooled, 0, b);
      reps.structural = structural_at(l, out, batch);
      reps.joint = add(reps.semantic, reps.structural);
    }
  }
  return reps;
}

NodeRepresentations embed_nodes(const Hypergraph& g, std::span<const NodeId> batch,
                                const TokenBatch& tokens, const HyperBertConfig& config,
                                const HyperBertParams& params) {
  NoGradGuard no_grad;
  return forward(g, batch, tokens, config, params, ForwardOptions{false, nullptr});
}

NodeRepresentations embed_nodes(const Hypergraph& g, std::span<const NodeId> batch,
                                std::span<const std::string> texts, const Vocabulary& vocab,
                                const HyperBertConfig& config, const HyperBertParams& params) {
  return embed_nodes(g, batch, tokenize_all(texts, vocab, config.max_len), config, params);
}

// --- checkpoints --------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const HyperBertConfig& config,
                     const HyperBertParams& params, const Vocabulary& vocab) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [key, value] : to_key_values(config)) cfg[key] = value;
  j["config"] = std::move(cfg);
  j["vocabulary"] = vocab.tokens();
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : params.named_parameters()) {
    const Matrix& m = t.value();
    tensors[name] = {{"shape", {m.rows(), m.cols()}},
                     {"data", std::vector<double>(m.data(), m.data() + m.size())}};
  }
  j["tensors"] = std::move(tensors);
  write_file_atomically(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) {
    throw ParseError("checkpoint " + path.string() + ": not a hyperbert checkpoint");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ParseError("checkpoint " + path.string() + ": unsupported version " +
                     j.value("version", nlohmann::json(0)).dump());
  }
  Checkpoint ck;
  for (const auto& [key, value] : j.at("config").items()) {
    apply_key_value(ck.config, key, value.get<std::string>());
  }
  ck.vocab = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
  Rng rng(0);
  ck.params = init_params(ck.config, rng);
  const auto& tensors = j.at("tensors");
  for (auto& [name, t] : ck.params.named_parameters()) {
    if (!tensors.contains(name)) throw ParseError("checkpoint is missing tensor " + name);
    const auto& entry = tensors.at(name);
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    const auto data = entry.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols() ||
        static_cast<Index>(data.size()) != t.size()) {
      throw ParseError("checkpoint tensor " + name + " has the wrong shape");
    }
    std::copy(data.begin(), data.end(), t.mutable_value().data());
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const HyperBertConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const auto stored = to_key_values(ck.config);
  const auto wanted = to_key_values(expected);
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (stored[i] != wanted[i]) {
      throw ConfigError("checkpoint " + path.string() + ": config mismatch on " + stored[i].first +
                        " (stored " + stored[i].second + ", expected " + wanted[i].second + ")");
    }
  }
  return ck;
}

}  // namespace hyperbert
