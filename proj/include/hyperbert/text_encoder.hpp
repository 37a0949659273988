#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hyperbert/tensor.hpp"

namespace hyperbert {

using TokenId = std::int32_t;
using IdMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kMask = 3;
  static constexpr TokenId kNumReserved = 4;

  Vocabulary() = default;
  // `tokens` receive ids kNumReserved, kNumReserved + 1, ... in order.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Most frequent words of `texts` (ties broken lexicographically), keeping
  // at most max_size non-reserved tokens seen at least min_count times.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_size,
                          std::size_t min_count);

  // One token per line; line k holds id kNumReserved + k.
  static Vocabulary read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  TokenId id(std::string_view token) const;
  std::string token(TokenId id) const;
  std::size_t size() const { return tokens_.size() + kNumReserved; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Lowercases, splits on whitespace, and emits each punctuation character as
// its own word.
std::vector<std::string> split_words(std::string_view text);

// Rows of [CLS]-prefixed, padded token ids with a {0,1} attention mask.
struct TokenBatch {
  IdMatrix ids;
  Matrix mask;

  Index rows() const { return ids.rows(); }
  Index length() const { return ids.cols(); }
  // Number of real tokens (mask sum) in row r.
  Index real_length(Index r) const;
};

TokenBatch tokenize(std::string_view text, const Vocabulary& vocab, Index max_len);
TokenBatch tokenize_all(std::span<const std::string> texts, const Vocabulary& vocab, Index max_len);
// Rows `rows` of `batch`, truncated to the longest real length among them.
TokenBatch select_rows(const TokenBatch& batch, std::span<const Index> rows);
// Space-joined tokens of row r, skipping [CLS] and [PAD].
std::string detokenize(const TokenBatch& batch, Index r, const Vocabulary& vocab);

// Additive score offset for masked keys.
inline constexpr double kMaskedScore = -1e9;

// softmax(Q Kᵀ / sqrt(d_k) + mask) V for one query set. key_mask is 1×n with
// 1 for visible keys; an empty matrix means every key is visible.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Matrix& key_mask = {});

struct EncoderBlockParams {
  Index heads = 1;
  // Per-head projections stored side by side: columns [i·d_k, (i+1)·d_k) of
  // query belong to head i, likewise for key and value.
  Tensor query, key, value;  // d_m × h·d_k, d_m × h·d_k, d_m × h·d_v
  Tensor output;             // h·d_v × d_m
  Tensor ff1_weight, ff1_bias, ff2_weight, ff2_bias;
  Tensor ln_attn_gain, ln_attn_bias;
  Tensor ln_ffn_gain, ln_ffn_bias;
  Tensor ln_out_gain, ln_out_bias;

  Index d_model() const { return query.rows(); }
  Index d_k() const { return query.cols() / heads; }
  Index d_v() const { return value.cols() / heads; }
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// Xavier-uniform weights, zero biases, unit layer-norm gains.
EncoderBlockParams init_encoder_block(Index d_model, Index heads, Index d_k, Index d_v, Index d_ff,
                                      Rng& rng);
Matrix xavier_uniform(Index fan_in, Index fan_out, Rng& rng);

// Concat(head_1..head_h) W^U over a single sequence, composed from primitive
// ops. key_mask is 1×N.
Tensor multi_head_attention(const Tensor& x, const EncoderBlockParams& params,
                            const Matrix& key_mask = {});

// Fused attention over a packed batch: q, k, v are (n·T)×(h·d) with sequence s
// occupying rows [s·T, (s+1)·T); key_mask is n×T. Returns the concatenated
// head outputs, (n·T)×(h·d_v).
Tensor packed_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Matrix& key_mask,
                        Index heads);

Tensor packed_multi_head_attention(const Tensor& x, const EncoderBlockParams& params,
                                   const Matrix& key_mask);

enum class NormStyle {
  pre,   // LN before MHA and FFN, residual after each, then a final LN
  post,  // LN(x + MHA(x)), then LN(x̄ + FFN(x̄))
};

struct BlockOptions {
  NormStyle norm = NormStyle::pre;
  double dropout = 0.0;
  bool training = false;
  double ln_eps = 1e-5;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

struct BlockOutput {
  Tensor tokens;  // (n·T)×d_m
  Tensor pooled;  // n×d_m, the [CLS] row of each sequence
};

BlockOutput encoder_block(const Tensor& x, const EncoderBlockParams& params, const Matrix& key_mask,
                          const BlockOptions& options);

Tensor feed_forward(const Tensor& x, const EncoderBlockParams& params);

}  // namespace hyperbert
