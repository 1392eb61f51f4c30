#pragma once

// Encoder-decoder transformer with a selectable decoder sub-layer 1:
// causal self-attention (baseline) or the average-attention layer. Both
// share the teacher-forced parallel path (training) and an incremental
// decode path (one token per call against a per-layer cache).

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "aan/layers.hpp"
#include "aan/tensor.hpp"

namespace aan {

enum class DecoderKind { kSelfAttention, kAan };
enum class BaselineMode { kCached, kRecompute };

DecoderKind decoder_kind_from_name(const std::string& name);
std::string decoder_kind_name(DecoderKind kind);

inline DecoderKind decoder_kind_from_name(const std::string& name) {
  if (name == "self_attention") return DecoderKind::kSelfAttention;
  if (name == "aan") return DecoderKind::kAan;
  throw std::invalid_argument("unknown decoder '" + name +
                              "' (valid: self_attention, aan)");
}

inline std::string decoder_kind_name(DecoderKind kind) {
  return kind == DecoderKind::kAan ? "aan" : "self_attention";
}

struct ModelConfig {
  int d_model = 64;
  int d_ff = 256;
  int n_heads = 4;
  int n_layers = 2;
  int src_vocab = 64;
  int tgt_vocab = 64;
  int max_len = 256;
  float dropout = 0.1f;
  float label_smoothing = 0.1f;
  DecoderKind decoder_kind = DecoderKind::kAan;
  bool use_ffn = true;   // inner FFN of the average-attention layer
  bool use_gate = true;  // gating layer of the average-attention layer
  bool tie_target_embeddings = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (d_model < 2 || d_model % 2 != 0)
      throw std::invalid_argument("d_model must be even and >= 2");
    if (n_heads < 1 || d_model % n_heads != 0)
      throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
    if (d_ff < 1) throw std::invalid_argument("d_ff must be >= 1");
    if (src_vocab < 1 || tgt_vocab < 1) throw std::invalid_argument("vocab must be >= 1");
    if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
    if (dropout < 0.0f || dropout >= 1.0f)
      throw std::invalid_argument("dropout must be in [0, 1)");
    if (label_smoothing < 0.0f || label_smoothing >= 1.0f)
      throw std::invalid_argument("label_smoothing must be in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;

  // Working defaults for desk-scale runs.
  static ModelConfig desk() { return ModelConfig{}; }

  // The published dimensions; structure-only tests at this scale.
  static ModelConfig paper() {
    ModelConfig c;
    c.d_model = 512;
    c.d_ff = 2048;
    c.n_heads = 8;
    c.n_layers = 6;
    c.max_len = 512;
    return c;
  }
};

template <class T>
struct EncoderLayer {
  MhaParams<T> self_attn;
  LayerNormParams<T> ln_attn;
  FfnParams<T> ffn;
  LayerNormParams<T> ln_ffn;

  void collect(NamedParams<T>& out, const std::string& prefix) {
    self_attn.collect(out, prefix + ".self");
    ln_attn.collect(out, prefix + ".ln_self");
    ffn.collect(out, prefix + ".ffn");
    ln_ffn.collect(out, prefix + ".ln_ffn");
  }
};

template <class T>
struct DecoderLayer {
  // sub-layer 1, populated per decoder kind
  AanParams<T> aan;
  MhaParams<T> self_attn;
  LayerNormParams<T> ln_self;
  // sub-layers 2-3
  MhaParams<T> cross_attn;
  LayerNormParams<T> ln_cross;
  FfnParams<T> ffn;
  LayerNormParams<T> ln_ffn;

  void collect(NamedParams<T>& out, const std::string& prefix, DecoderKind kind) {
    if (kind == DecoderKind::kAan) {
      aan.collect(out, prefix + ".aan");
    } else {
      self_attn.collect(out, prefix + ".self");
      ln_self.collect(out, prefix + ".ln_self");
    }
    cross_attn.collect(out, prefix + ".cross");
    ln_cross.collect(out, prefix + ".ln_cross");
    ffn.collect(out, prefix + ".ffn");
    ln_ffn.collect(out, prefix + ".ln_ffn");
  }
};

template <class T>
struct CrossContext;
template <class T>
struct DecoderCache;
template <class T>
struct StepWorkspace;

template <class T>
class TransformerModel {
 public:
  explicit TransformerModel(const ModelConfig& config) : cfg_(config) {
    cfg_.validate();
    Rng rng = Rng::derive(cfg_.seed, /*tag=*/0);
    const T bound = T(1) / std::sqrt(static_cast<T>(cfg_.d_model));
    // Embeddings start at half the weight scale: with tying the same
    // table feeds the input (scaled by sqrt(d)) and the output logits,
    // and the smaller scale keeps the initial loss at ~ln(vocab).
    const T embed_bound = bound / T(2);
    src_embed_ = Tensor<T>::uniform({cfg_.src_vocab, cfg_.d_model}, -embed_bound,
                                    embed_bound, rng)
                     .set_requires_grad();
    tgt_embed_ = Tensor<T>::uniform({cfg_.tgt_vocab, cfg_.d_model}, -embed_bound,
                                    embed_bound, rng)
                     .set_requires_grad();
    if (!cfg_.tie_target_embeddings)
      out_proj_ = Tensor<T>::uniform({cfg_.tgt_vocab, cfg_.d_model}, -embed_bound,
                                     embed_bound, rng)
                      .set_requires_grad();
    pe_ = positional_encoding<T>(cfg_.max_len, cfg_.d_model);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      EncoderLayer<T> e;
      e.self_attn = MhaParams<T>::init(cfg_.d_model, cfg_.n_heads, bound, rng);
      e.ln_attn = LayerNormParams<T>::init(cfg_.d_model);
      e.ffn = FfnParams<T>::init(cfg_.d_model, cfg_.d_ff, bound, rng);
      e.ln_ffn = LayerNormParams<T>::init(cfg_.d_model);
      encoder_.push_back(std::move(e));
    }
    for (int l = 0; l < cfg_.n_layers; ++l) {
      DecoderLayer<T> d;
      if (cfg_.decoder_kind == DecoderKind::kAan) {
        d.aan = AanParams<T>::init(cfg_.d_model, cfg_.d_ff, bound, rng);
        d.aan.use_ffn = cfg_.use_ffn;
        d.aan.use_gate = cfg_.use_gate;
      } else {
        d.self_attn = MhaParams<T>::init(cfg_.d_model, cfg_.n_heads, bound, rng);
        d.ln_self = LayerNormParams<T>::init(cfg_.d_model);
      }
      d.cross_attn = MhaParams<T>::init(cfg_.d_model, cfg_.n_heads, bound, rng);
      d.ln_cross = LayerNormParams<T>::init(cfg_.d_model);
      d.ffn = FfnParams<T>::init(cfg_.d_model, cfg_.d_ff, bound, rng);
      d.ln_ffn = LayerNormParams<T>::init(cfg_.d_model);
      decoder_.push_back(std::move(d));
    }
  }

  const ModelConfig& config() const { return cfg_; }

  NamedParams<T> parameters() {
    NamedParams<T> out;
    out.emplace_back("src_embed", &src_embed_);
    out.emplace_back("tgt_embed", &tgt_embed_);
    if (!cfg_.tie_target_embeddings) out.emplace_back("out_proj", &out_proj_);
    for (std::size_t l = 0; l < encoder_.size(); ++l)
      encoder_[l].collect(out, "enc." + std::to_string(l));
    for (std::size_t l = 0; l < decoder_.size(); ++l)
      decoder_[l].collect(out, "dec." + std::to_string(l), cfg_.decoder_kind);
    return out;
  }

  std::vector<Tensor<T>*> parameter_tensors() {
    std::vector<Tensor<T>*> out;
    for (auto& [name, t] : parameters()) out.push_back(t);
    return out;
  }

  // The matrix whose transpose produces the output logits. Under tying
  // this *is* the target embedding table (same storage, both views).
  Tensor<T>& output_projection() {
    return cfg_.tie_target_embeddings ? tgt_embed_ : out_proj_;
  }
  Tensor<T>& target_embedding() { return tgt_embed_; }
  Tensor<T>& source_embedding() { return src_embed_; }
  const Tensor<T>& positional_table() const { return pe_; }
  std::vector<EncoderLayer<T>>& encoder_layers() { return encoder_; }
  std::vector<DecoderLayer<T>>& decoder_layers() { return decoder_; }

  // Embedding + positional encoding for a token sequence.
  Tensor<T> embed(const Tensor<T>& table, const std::vector<int>& tokens,
                  const char* what) const {
    const int n = static_cast<int>(tokens.size());
    if (n < 1) throw std::invalid_argument(std::string(what) + ": empty sequence");
    if (n > cfg_.max_len)
      throw std::invalid_argument(std::string(what) + ": length " + std::to_string(n) +
                                  " exceeds max_len " + std::to_string(cfg_.max_len));
    auto x = scale(embedding_rows(table, tokens),
                   static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_model))));
    Tensor<T> pe_slice({n, cfg_.d_model});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cfg_.d_model; ++j) pe_slice.at(i, j) = pe_.at(i, j);
    return add(x, pe_slice);
  }

  // Encoder stack: N layers of self-attention + FFN blocks, post-norm.
  Tensor<T> encode(const std::vector<int>& src_tokens,
                   const DropoutCtx<T>* ctx = nullptr) {
    auto h = embed(src_embed_, src_tokens, "encode");
    for (auto& layer : encoder_) {
      auto attn = multi_head_attention(h, h, layer.self_attn, /*causal=*/false, ctx);
      h = apply_layer_norm(add(h, maybe_dropout(attn, ctx)), layer.ln_attn);
      auto f = position_wise_ffn(h, layer.ffn);
      h = apply_layer_norm(add(h, maybe_dropout(f, ctx)), layer.ln_ffn);
    }
    return h;
  }

  // Teacher-forced pass over a whole target prefix; returns pre-softmax
  // logits [m x tgt_vocab].
  Tensor<T> decode_parallel(const std::vector<int>& tgt_tokens, const Tensor<T>& memory,
                            const DropoutCtx<T>* ctx = nullptr) {
    if (memory.ndim() != 2 || memory.cols() != cfg_.d_model)
      throw std::invalid_argument("decode_parallel: memory shape " +
                                  Tensor<T>::shape_str(memory.shape()));
    auto s = embed(tgt_embed_, tgt_tokens, "decode_parallel");
    for (auto& layer : decoder_) {
      if (cfg_.decoder_kind == DecoderKind::kAan) {
        s = aan_forward_masked(s, layer.aan, ctx);
      } else {
        auto attn = multi_head_attention(s, s, layer.self_attn, /*causal=*/true, ctx);
        s = apply_layer_norm(add(s, maybe_dropout(attn, ctx)), layer.ln_self);
      }
      auto cross = multi_head_attention(s, memory, layer.cross_attn, false, ctx);
      s = apply_layer_norm(add(s, maybe_dropout(cross, ctx)), layer.ln_cross);
      auto f = position_wise_ffn(s, layer.ffn);
      s = apply_layer_norm(add(s, maybe_dropout(f, ctx)), layer.ln_ffn);
    }
    return matmul_nt(s, output_projection());
  }

 private:
  static Tensor<T> maybe_dropout(const Tensor<T>& x, const DropoutCtx<T>* ctx) {
    return ctx ? dropout(x, ctx->rate, *ctx->rng, true) : x;
  }

  ModelConfig cfg_;
  Tensor<T> src_embed_, tgt_embed_, out_proj_, pe_;
  std::vector<EncoderLayer<T>> encoder_;
  std::vector<DecoderLayer<T>> decoder_;
};

// ---------------------------------------------------------------------
// Incremental decoding
// ---------------------------------------------------------------------

// Per-sentence encoder-side state shared read-only by every hypothesis:
// the memory itself plus each layer's cross-attention keys/values,
// projected once at cache creation for both decoder kinds.
template <class T>
struct CrossContext {
  int mem_len = 0;
  Tensor<T> memory;
  std::vector<std::vector<T>> keys;    // per layer, [mem_len * d]
  std::vector<std::vector<T>> values;  // per layer, [mem_len * d]
};

// Mutable per-hypothesis decode state. Average-attention layers carry a
// d-vector running sum + count; baseline layers carry the appended
// key/value history (or, in recompute mode, just the token prefix).
template <class T>
struct DecoderCache {
  DecoderKind kind = DecoderKind::kAan;
  BaselineMode mode = BaselineMode::kCached;
  int pos = 0;  // tokens consumed so far
  std::shared_ptr<const CrossContext<T>> cross;
  std::vector<AanState> aan_states;
  std::vector<std::vector<T>> k_hist;  // per layer, pos * d values
  std::vector<std::vector<T>> v_hist;
  std::vector<int> prefix;  // recompute mode only
};

// Scratch buffers reused across steps; never part of the per-hypothesis
// state, so beam forks copy only true state.
template <class T>
struct StepWorkspace {
  std::vector<T> x, sub_out, q, k, v, heads, probs, ffn_hidden, pre_ln;
  AanRowScratch<T> aan;

  void ensure(int d, int max_positions) {
    x.resize(static_cast<std::size_t>(d));
    sub_out.resize(static_cast<std::size_t>(d));
    q.resize(static_cast<std::size_t>(d));
    k.resize(static_cast<std::size_t>(d));
    v.resize(static_cast<std::size_t>(d));
    heads.resize(static_cast<std::size_t>(d));
    pre_ln.resize(static_cast<std::size_t>(d));
    probs.resize(static_cast<std::size_t>(max_positions));
  }
};

namespace detail {

// Single-query attention over len stored rows, one head slice at a time.
// K/V rows are row-major [len x d]; the query is a full d-vector whose
// head slices attend independently.
template <class T>
void attend_single_query(const T* q, const T* k_rows, const T* v_rows, int len,
                         int d, int n_heads, T* out, T* probs) {
  const int dk = d / n_heads;
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));
  for (int h = 0; h < n_heads; ++h) {
    const int off = h * dk;
    T mx = std::numeric_limits<T>::lowest();
    for (int j = 0; j < len; ++j) {
      const T* krow = k_rows + static_cast<std::size_t>(j) * d + off;
      T s = 0;
      for (int c = 0; c < dk; ++c) s += q[off + c] * krow[c];
      s *= inv_sqrt_dk;
      probs[j] = s;
      if (s > mx) mx = s;
    }
    T sum = 0;
    for (int j = 0; j < len; ++j) {
      const T e = std::exp(probs[j] - mx);
      probs[j] = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (int c = 0; c < dk; ++c) out[off + c] = T(0);
    for (int j = 0; j < len; ++j) {
      const T w = probs[j] * inv;
      const T* vrow = v_rows + static_cast<std::size_t>(j) * d + off;
      for (int c = 0; c < dk; ++c) out[off + c] += w * vrow[c];
    }
  }
}

}  // namespace detail

// Builds the decode cache for one encoded sentence: cross-attention
// keys/values are projected here, once, and shared by all hypotheses.
template <class T>
DecoderCache<T> make_decoder_cache(TransformerModel<T>& model, const Tensor<T>& memory,
                                   BaselineMode mode = BaselineMode::kCached) {
  const auto& cfg = model.config();
  if (memory.ndim() != 2 || memory.cols() != cfg.d_model)
    throw std::invalid_argument("decoder cache: memory shape " +
                                Tensor<T>::shape_str(memory.shape()));
  auto cross = std::make_shared<CrossContext<T>>();
  cross->mem_len = memory.rows();
  cross->memory = memory;
  const int d = cfg.d_model;
  for (auto& layer : model.decoder_layers()) {
    auto k = matmul(memory, layer.cross_attn.wk);
    auto v = matmul(memory, layer.cross_attn.wv);
    cross->keys.push_back(k.data());
    cross->values.push_back(v.data());
  }

  DecoderCache<T> cache;
  cache.kind = cfg.decoder_kind;
  cache.mode = mode;
  cache.cross = std::move(cross);
  if (cfg.decoder_kind == DecoderKind::kAan) {
    cache.aan_states.assign(static_cast<std::size_t>(cfg.n_layers), AanState(d));
  } else if (mode == BaselineMode::kCached) {
    cache.k_hist.assign(static_cast<std::size_t>(cfg.n_layers), {});
    cache.v_hist.assign(static_cast<std::size_t>(cfg.n_layers), {});
  }
  return cache;
}

// One decode step: consumes the previous token (BOS first) and returns
// the logits for the next position. Average-attention layers do O(1)
// state work per step; cached baseline layers append one key/value row
// and attend over the whole history.
template <class T>
std::vector<T> decode_step(TransformerModel<T>& model, DecoderCache<T>& cache,
                           int prev_token, StepWorkspace<T>& ws) {
  const auto& cfg = model.config();
  if (!cache.cross)
    throw std::invalid_argument("decode_step: cache has no encoder context");
  if (cache.kind != cfg.decoder_kind)
    throw std::invalid_argument("decode_step: cache kind does not match model");
  if (prev_token < 0 || prev_token >= cfg.tgt_vocab)
    throw std::out_of_range("decode_step: token " + std::to_string(prev_token) +
                            " out of range [0, " + std::to_string(cfg.tgt_vocab) + ")");
  if (cache.pos >= cfg.max_len)
    throw std::invalid_argument("decode_step: position " + std::to_string(cache.pos) +
                                " reached max_len " + std::to_string(cfg.max_len));

  // Recompute mode re-runs the teacher-forced pass over the whole prefix
  // each step; the bracketing worst case for the baseline.
  if (cache.kind == DecoderKind::kSelfAttention &&
      cache.mode == BaselineMode::kRecompute) {
    cache.prefix.push_back(prev_token);
    ++cache.pos;
    auto logits = model.decode_parallel(cache.prefix, cache.cross->memory);
    const int m = logits.rows(), v = logits.cols();
    std::vector<T> out(static_cast<std::size_t>(v));
    for (int c = 0; c < v; ++c) out[static_cast<std::size_t>(c)] = logits.at(m - 1, c);
    return out;
  }

  const int d = cfg.d_model;
  const int mem_len = cache.cross->mem_len;
  ws.ensure(d, std::max(cfg.max_len, mem_len));
  const int pos = cache.pos;  // 0-based position of the token being fed

  // ---- embedding + positional encoding
  const T sqrt_d = static_cast<T>(std::sqrt(static_cast<double>(d)));
  const auto& embed = model.target_embedding().data();
  const auto& pe = model.positional_table().data();
  T* x = ws.x.data();
  for (int c = 0; c < d; ++c)
    x[c] = embed[static_cast<std::size_t>(prev_token) * d + c] * sqrt_d +
           pe[static_cast<std::size_t>(pos) * d + c];

  auto& layers = model.decoder_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    // ---- sub-layer 1
    if (cache.kind == DecoderKind::kAan) {
      aan_step_incremental(cache.aan_states[l], x, layer.aan, d, ws.sub_out.data(), ws.aan);
      for (int c = 0; c < d; ++c) x[c] = ws.sub_out[static_cast<std::size_t>(c)];
    } else {
      detail::matvec_row(x, layer.self_attn.wq, ws.q.data());
      detail::matvec_row(x, layer.self_attn.wk, ws.k.data());
      detail::matvec_row(x, layer.self_attn.wv, ws.v.data());
      auto& kh = cache.k_hist[l];
      auto& vh = cache.v_hist[l];
      kh.insert(kh.end(), ws.k.begin(), ws.k.end());
      vh.insert(vh.end(), ws.v.begin(), ws.v.end());
      const int len = pos + 1;
      detail::attend_single_query(ws.q.data(), kh.data(), vh.data(), len, d,
                                  layer.self_attn.n_heads, ws.heads.data(),
                                  ws.probs.data());
      detail::matvec_row(ws.heads.data(), layer.self_attn.wo, ws.sub_out.data());
      for (int c = 0; c < d; ++c) ws.pre_ln[static_cast<std::size_t>(c)] = x[c] + ws.sub_out[static_cast<std::size_t>(c)];
      detail::layer_norm_row(ws.pre_ln.data(), layer.ln_self, d, x);
    }

    // ---- cross attention over the precomputed encoder keys/values
    detail::matvec_row(x, layer.cross_attn.wq, ws.q.data());
    detail::attend_single_query(ws.q.data(), cache.cross->keys[l].data(),
                                cache.cross->values[l].data(), mem_len, d,
                                layer.cross_attn.n_heads, ws.heads.data(),
                                ws.probs.data());
    detail::matvec_row(ws.heads.data(), layer.cross_attn.wo, ws.sub_out.data());
    for (int c = 0; c < d; ++c) ws.pre_ln[static_cast<std::size_t>(c)] = x[c] + ws.sub_out[static_cast<std::size_t>(c)];
    detail::layer_norm_row(ws.pre_ln.data(), layer.ln_cross, d, x);

    // ---- position-wise FFN
    detail::ffn_row(x, layer.ffn, ws.sub_out.data(), ws.ffn_hidden);
    for (int c = 0; c < d; ++c) ws.pre_ln[static_cast<std::size_t>(c)] = x[c] + ws.sub_out[static_cast<std::size_t>(c)];
    detail::layer_norm_row(ws.pre_ln.data(), layer.ln_ffn, d, x);
  }

  ++cache.pos;

  // ---- output projection (transposed embedding when tied)
  const auto& proj = model.output_projection().data();
  std::vector<T> logits(static_cast<std::size_t>(cfg.tgt_vocab));
  for (int tok = 0; tok < cfg.tgt_vocab; ++tok) {
    const T* row = proj.data() + static_cast<std::size_t>(tok) * d;
    T s = 0;
    for (int c = 0; c < d; ++c) s += x[c] * row[c];
    logits[static_cast<std::size_t>(tok)] = s;
  }
  return logits;
}

}  // namespace aan
