#include "hyperbert/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

namespace hyperbert {

namespace {

const std::string kReservedNames[] = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};

Tensor constant(Matrix m) { return Tensor(std::move(m), false); }

}  // namespace

// --- vocabulary ---------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto [it, inserted] =
        index_.emplace(tokens_[i], static_cast<TokenId>(i) + kNumReserved);
    if (!inserted) throw ConfigError("vocabulary: duplicate token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size,
                             std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (const auto& [word, count] : ranked) {
    if (count < min_count) break;
    if (max_size != 0 && tokens.size() >= max_size) break;
    tokens.push_back(word);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::string Vocabulary::token(TokenId id) const {
  if (id >= 0 && id < kNumReserved) return kReservedNames[id];
  const auto k = static_cast<std::size_t>(id - kNumReserved);
  if (id < 0 || k >= tokens_.size()) throw std::out_of_range("token id " + std::to_string(id));
  return tokens_[k];
}

// --- tokenization -------------------------------------------------------

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, raw);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

Index TokenBatch::real_length(Index r) const {
  return static_cast<Index>(std::lround(mask.row(r).sum()));
}

TokenBatch tokenize(std::string_view text, const Vocabulary& vocab, Index max_len) {
  if (max_len < 2) throw ConfigError("tokenize: maximum length must be at least 2");
  TokenBatch row;
  row.ids = IdMatrix::Constant(1, max_len, Vocabulary::kPad);
  row.mask = Matrix::Zero(1, max_len);
  row.ids(0, 0) = Vocabulary::kCls;
  row.mask(0, 0) = 1.0;
  Index pos = 1;
  for (const auto& w : split_words(text)) {
    if (pos >= max_len) break;
    row.ids(0, pos) = vocab.id(w);
    row.mask(0, pos) = 1.0;
    ++pos;
  }
  return row;
}

TokenBatch tokenize_all(std::span<const std::string> texts, const Vocabulary& vocab, Index max_len) {
  TokenBatch batch;
  batch.ids.resize(static_cast<Index>(texts.size()), max_len);
  batch.mask.resize(static_cast<Index>(texts.size()), max_len);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const TokenBatch row = tokenize(texts[i], vocab, max_len);
    batch.ids.row(static_cast<Index>(i)) = row.ids.row(0);
    batch.mask.row(static_cast<Index>(i)) = row.mask.row(0);
  }
  return batch;
}

TokenBatch select_rows(const TokenBatch& batch, std::span<const Index> rows) {
  Index t = 1;
  for (Index r : rows) t = std::max(t, batch.real_length(r));
  TokenBatch out;
  out.ids.resize(static_cast<Index>(rows.size()), t);
  out.mask.resize(static_cast<Index>(rows.size()), t);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.ids.row(static_cast<Index>(i)) = batch.ids.row(rows[i]).head(t);
    out.mask.row(static_cast<Index>(i)) = batch.mask.row(rows[i]).head(t);
  }
  return out;
}

std::string detokenize(const TokenBatch& batch, Index r, const Vocabulary& vocab) {
  std::string out;
  for (Index j = 0; j < batch.length(); ++j) {
    const TokenId id = batch.ids(r, j);
    if (id == Vocabulary::kCls || id == Vocabulary::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

// --- attention ----------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Matrix& key_mask) {
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query width " + q.shape_string() + " differs from key width " +
                         k.shape_string());
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: " + k.shape_string() + " keys vs " + v.shape_string() +
                         " values");
  }
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (key_mask.size() != 0) {
    if (key_mask.rows() != 1 || key_mask.cols() != k.rows()) {
      throw DimensionError("attention: key mask must be 1x" + std::to_string(k.rows()));
    }
    Matrix offset(q.rows(), k.rows());
    for (Index j = 0; j < k.rows(); ++j) {
      offset.col(j).setConstant(key_mask(0, j) != 0.0 ? 0.0 : kMaskedScore);
    }
    scores = add(scores, constant(std::move(offset)));
  }
  return matmul(softmax_rows(scores), v);
}

Tensor multi_head_attention(const Tensor& x, const EncoderBlockParams& p, const Matrix& key_mask) {
  const Index h = p.heads;
  if (p.output.rows() != h * p.d_v()) {
    throw DimensionError("multi_head_attention: output projection " + p.output.shape_string() +
                         " does not take " + std::to_string(h) + " heads of width " +
                         std::to_string(p.d_v()));
  }
  Tensor q = matmul(x, p.query);
  Tensor k = matmul(x, p.key);
  Tensor v = matmul(x, p.value);
  std::vector<Tensor> heads;
  for (Index i = 0; i < h; ++i) {
    heads.push_back(attention(slice_cols(q, i * p.d_k(), p.d_k()), slice_cols(k, i * p.d_k(), p.d_k()),
                              slice_cols(v, i * p.d_v(), p.d_v()), key_mask));
  }
  return matmul(concat_cols(heads), p.output);
}

Tensor packed_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Matrix& key_mask,
                        Index heads) {
  const Index n = key_mask.rows();
  const Index t = key_mask.cols();
  if (q.rows() != n * t || k.rows() != n * t || v.rows() != n * t) {
    throw DimensionError("packed_attention: q " + q.shape_string() + ", k " + k.shape_string() +
                         ", v " + v.shape_string() + " do not pack " + std::to_string(n) +
                         " sequences of length " + std::to_string(t));
  }
  if (heads < 1 || q.cols() != k.cols() || q.cols() % heads != 0 || v.cols() % heads != 0) {
    throw DimensionError("packed_attention: widths q " + q.shape_string() + ", k " +
                         k.shape_string() + ", v " + v.shape_string() + " do not split into " +
                         std::to_string(heads) + " heads");
  }
  const Index dk = q.cols() / heads;
  const Index dv = v.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  // Only visible keys enter the products, so each sequence's result does not
  // depend on how much padding the pack carries. Lazy products keep the
  // summation order fixed by the operand sizes alone.
  std::vector<std::vector<Index>> visible(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s) {
    auto& keys = visible[static_cast<std::size_t>(s)];
    for (Index j = 0; j < t; ++j) {
      if (key_mask(s, j) != 0.0) keys.push_back(j);
    }
    if (keys.empty()) {
      for (Index j = 0; j < t; ++j) keys.push_back(j);
    }
  }

  // probs[s·h + i] is the T×L softmax of sequence s, head i over its L visible keys.
  std::vector<Matrix> probs(static_cast<std::size_t>(n * heads));
  Matrix out(n * t, heads * dv);
  for (Index s = 0; s < n; ++s) {
    const auto& keys = visible[static_cast<std::size_t>(s)];
    for (Index i = 0; i < heads; ++i) {
      const auto qs = q.value().block(s * t, i * dk, t, dk);
      const Matrix ks = k.value().block(s * t, i * dk, t, dk)(keys, Eigen::all);
      const Matrix vs = v.value().block(s * t, i * dv, t, dv)(keys, Eigen::all);
      Matrix& p = probs[static_cast<std::size_t>(s * heads + i)];
      p = qs.lazyProduct(ks.transpose()) * inv_sqrt;
      for (Index r = 0; r < t; ++r) {
        const double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp().matrix();
        p.row(r) /= p.row(r).sum();
      }
      out.block(s * t, i * dv, t, dv) = p.lazyProduct(vs);
    }
  }

  Tensor result(std::move(out));
  if (Tape* tape = recording_tape({&q, &k, &v})) {
    result.set_requires_grad(true);
    tape->record(result, [qn = q.node(), kn = k.node(), vn = v.node(), probs = std::move(probs),
                          visible = std::move(visible), n, t, heads, dk, dv, inv_sqrt](const Matrix& g) {
      Matrix dq = Matrix::Zero(qn->value.rows(), qn->value.cols());
      Matrix dkm = Matrix::Zero(kn->value.rows(), kn->value.cols());
      Matrix dvm = Matrix::Zero(vn->value.rows(), vn->value.cols());
      for (Index s = 0; s < n; ++s) {
        const auto& keys = visible[static_cast<std::size_t>(s)];
        for (Index i = 0; i < heads; ++i) {
          const Matrix& p = probs[static_cast<std::size_t>(s * heads + i)];
          const auto go = g.block(s * t, i * dv, t, dv);
          const auto qs = qn->value.block(s * t, i * dk, t, dk);
          const Matrix ks = kn->value.block(s * t, i * dk, t, dk)(keys, Eigen::all);
          const Matrix vs = vn->value.block(s * t, i * dv, t, dv)(keys, Eigen::all);
          Matrix dp = go * vs.transpose();
          for (Index r = 0; r < t; ++r) {
            const double dot = dp.row(r).dot(p.row(r));
            dp.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix()) * inv_sqrt;
          }
          dq.block(s * t, i * dk, t, dk).noalias() = dp * ks;
          const Matrix dks = dp.transpose() * qs;
          const Matrix dvs = p.transpose() * go;
          for (std::size_t c = 0; c < keys.size(); ++c) {
            const Index row = s * t + keys[c];
            dkm.block(row, i * dk, 1, dk) = dks.row(static_cast<Index>(c));
            dvm.block(row, i * dv, 1, dv) = dvs.row(static_cast<Index>(c));
          }
        }
      }
      if (qn->requires_grad) qn->accumulate(dq);
      if (kn->requires_grad) kn->accumulate(dkm);
      if (vn->requires_grad) vn->accumulate(dvm);
    });
  }
  return result;
}

Tensor packed_multi_head_attention(const Tensor& x, const EncoderBlockParams& p,
                                   const Matrix& key_mask) {
  if (p.output.rows() != p.heads * p.d_v()) {
    throw DimensionError("multi_head_attention: output projection " + p.output.shape_string() +
                         " does not take " + std::to_string(p.heads) + " heads of width " +
                         std::to_string(p.d_v()));
  }
  Tensor heads = packed_attention(matmul(x, p.query), matmul(x, p.key), matmul(x, p.value), key_mask,
                                  p.heads);
  return matmul(heads, p.output);
}

// --- encoder block ------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> EncoderBlockParams::named_parameters() const {
  return {{"query", query},           {"key", key},
          {"value", value},           {"output", output},
          {"ff1_weight", ff1_weight}, {"ff1_bias", ff1_bias},
          {"ff2_weight", ff2_weight}, {"ff2_bias", ff2_bias},
          {"ln_attn_gain", ln_attn_gain}, {"ln_attn_bias", ln_attn_bias},
          {"ln_ffn_gain", ln_ffn_gain},   {"ln_ffn_bias", ln_ffn_bias},
          {"ln_out_gain", ln_out_gain},   {"ln_out_bias", ln_out_bias}};
}

Matrix xavier_uniform(Index fan_in, Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(fan_in, fan_out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

EncoderBlockParams init_encoder_block(Index d_model, Index heads, Index d_k, Index d_v, Index d_ff,
                                      Rng& rng) {
  EncoderBlockParams p;
  p.heads = heads;
  p.query = Tensor(xavier_uniform(d_model, heads * d_k, rng), true);
  p.key = Tensor(xavier_uniform(d_model, heads * d_k, rng), true);
  p.value = Tensor(xavier_uniform(d_model, heads * d_v, rng), true);
  p.output = Tensor(xavier_uniform(heads * d_v, d_model, rng), true);
  p.ff1_weight = Tensor(xavier_uniform(d_model, d_ff, rng), true);
  p.ff1_bias = Tensor::zeros(1, d_ff, true);
  p.ff2_weight = Tensor(xavier_uniform(d_ff, d_model, rng), true);
  p.ff2_bias = Tensor::zeros(1, d_model, true);
  for (Tensor* gain : {&p.ln_attn_gain, &p.ln_ffn_gain, &p.ln_out_gain}) {
    *gain = Tensor(Matrix::Ones(1, d_model), true);
  }
  for (Tensor* bias : {&p.ln_attn_bias, &p.ln_ffn_bias, &p.ln_out_bias}) {
    *bias = Tensor::zeros(1, d_model, true);
  }
  return p;
}

Tensor feed_forward(const Tensor& x, const EncoderBlockParams& p) {
  Tensor hidden = relu(add_row(matmul(x, p.ff1_weight), p.ff1_bias));
  return add_row(matmul(hidden, p.ff2_weight), p.ff2_bias);
}

BlockOutput encoder_block(const Tensor& x, const EncoderBlockParams& p, const Matrix& key_mask,
                          const BlockOptions& options) {
  const bool use_dropout = options.training && options.dropout > 0.0;
  if (use_dropout && options.rng == nullptr) {
    throw ContractError("encoder_block: dropout in training mode needs an rng");
  }
  auto drop = [&](const Tensor& t) {
    return use_dropout ? dropout(t, options.dropout, true, *options.rng) : t;
  };
  const double eps = options.ln_eps;

  Tensor out;
  if (options.norm == NormStyle::pre) {
    Tensor attn = packed_multi_head_attention(
        layer_norm(x, p.ln_attn_gain, p.ln_attn_bias, eps), p, key_mask);
    Tensor mid = add(x, drop(attn));
    Tensor ff = feed_forward(layer_norm(mid, p.ln_ffn_gain, p.ln_ffn_bias, eps), p);
    out = layer_norm(add(mid, drop(ff)), p.ln_out_gain, p.ln_out_bias, eps);
  } else {
    Tensor mid = layer_norm(add(x, drop(packed_multi_head_attention(x, p, key_mask))),
                            p.ln_attn_gain, p.ln_attn_bias, eps);
    out = layer_norm(add(mid, drop(feed_forward(mid, p))), p.ln_out_gain, p.ln_out_bias, eps);
  }

  const Index t = key_mask.cols();
  std::vector<Index> cls_rows(static_cast<std::size_t>(key_mask.rows()));
  for (Index s = 0; s < key_mask.rows(); ++s) cls_rows[static_cast<std::size_t>(s)] = s * t;
  Tensor pooled = gather_rows(out, cls_rows);
  return BlockOutput{std::move(out), std::move(pooled)};
}

}  // namespace hyperbert
