#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hyperbert/hypergraph.hpp"
#include "hyperbert/structure_encoder.hpp"
#include "hyperbert/tensor.hpp"
#include "hyperbert/text_encoder.hpp"

namespace hyperbert {

// Which per-node vector feeds the structural encoder at each layer.
enum class StructuralInput { cls, mean };

struct HyperBertConfig {
  Index layers = 2;
  Index d_model = 32;
  Index heads = 2;
  Index d_k = 16;
  Index d_v = 16;
  Index d_ff = 64;
  Index max_len = 32;
  Index vocab_size = 0;
  double dropout = 0.1;
  double ln_eps = 1e-5;
  NormStyle norm = NormStyle::pre;
  StructuralKind structural = StructuralKind::hgnn;
  Index hgnn_depth = 1;
  Activation activation = Activation::relu;
  StructuralInput structural_input = StructuralInput::cls;
  // Add each layer's structural vector to the node's tokens before the next layer.
  bool inject_structure = true;
  // Treat isolated nodes as members of a singleton hyperedge.
  bool isolated_fallback = true;

  void validate() const;
  bool operator==(const HyperBertConfig&) const = default;

  static HyperBertConfig desk();
  static HyperBertConfig paper();
};

struct HyperBertParams {
  Tensor token_embedding;     // vocab_size × d_model
  Tensor position_embedding;  // max_len × d_model
  std::vector<EncoderBlockParams> blocks;
  std::vector<std::vector<HgnnLayerParams>> structural;  // [layer][depth]

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  HyperBertParams clone() const;
};

HyperBertParams init_params(const HyperBertConfig& config, Rng& rng);

struct NodeRepresentations {
  Tensor semantic;    // final-layer [CLS] vectors, batch × d_model
  Tensor structural;  // final-layer structural center rows, batch × d_model
  Tensor joint;       // semantic + structural
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

// `tokens` holds one row per node of g. Batch nodes must be distinct.
NodeRepresentations forward(const Hypergraph& g, std::span<const NodeId> batch,
                            const TokenBatch& tokens, const HyperBertConfig& config,
                            const HyperBertParams& params, const ForwardOptions& options = {});

// Inference-mode forward without recording gradients.
NodeRepresentations embed_nodes(const Hypergraph& g, std::span<const NodeId> batch,
                                const TokenBatch& tokens, const HyperBertConfig& config,
                                const HyperBertParams& params);
NodeRepresentations embed_nodes(const Hypergraph& g, std::span<const NodeId> batch,
                                std::span<const std::string> texts, const Vocabulary& vocab,
                                const HyperBertConfig& config, const HyperBertParams& params);

// Final-layer [CLS] vectors from the text encoder alone (no structural path).
// `tokens` rows are the sequences to encode.
Tensor encode_text(const TokenBatch& tokens, const HyperBertConfig& config,
                   const HyperBertParams& params, const ForwardOptions& options = {});

struct Checkpoint {
  HyperBertConfig config;
  HyperBertParams params;
  Vocabulary vocab;
};

void save_checkpoint(const std::filesystem::path& path, const HyperBertConfig& config,
                     const HyperBertParams& params, const Vocabulary& vocab);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Throws ConfigError naming the first differing key when the stored config
// differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const HyperBertConfig& expected);

}  // namespace hyperbert
