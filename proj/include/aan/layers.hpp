#pragma once

// Neural building blocks: multi-head attention, position-wise FFN,
// positional encodings, and the average-attention layer in its three
// equivalent forms:
//   - sequential: position-by-position cumulative means; the reference
//     oracle, written as plain loops off the tensor-op path;
//   - masked: one parallel pass through a prefix-average mask matrix,
//     differentiable, used for training;
//   - incremental: one position per call from a running sum + count,
//     used for decoding.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aan/rng.hpp"
#include "aan/tensor.hpp"

namespace aan {

inline constexpr double kLayerNormEps = 1e-6;
// Additive pre-softmax sentinel for masked attention pairs. Finite, so
// masked rows never produce (-inf) - (-inf) = NaN in the stabilizer.
inline constexpr double kMaskedScore = -1e9;

// Present only in training mode; null pointer means evaluation.
template <class T>
struct DropoutCtx {
  T rate;
  Rng* rng;
};

// ---------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>*>>;

template <class T>
struct LayerNormParams {
  Tensor<T> gain, bias;

  static LayerNormParams init(int d) {
    return {Tensor<T>::ones({d}).set_requires_grad(),
            Tensor<T>::zeros({d}).set_requires_grad()};
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".gain", &gain);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

template <class T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;  // d -> d_ff -> d, ReLU inside

  static FfnParams init(int d, int d_ff, T bound, Rng& rng) {
    return {Tensor<T>::uniform({d, d_ff}, -bound, bound, rng).set_requires_grad(),
            Tensor<T>::zeros({d_ff}).set_requires_grad(),
            Tensor<T>::uniform({d_ff, d}, -bound, bound, rng).set_requires_grad(),
            Tensor<T>::zeros({d}).set_requires_grad()};
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w1", &w1);
    out.emplace_back(prefix + ".b1", &b1);
    out.emplace_back(prefix + ".w2", &w2);
    out.emplace_back(prefix + ".b2", &b2);
  }
};

template <class T>
struct MhaParams {
  Tensor<T> wq, wk, wv, wo;  // all d x d, heads split by column range
  int n_heads = 1;

  static MhaParams init(int d, int n_heads, T bound, Rng& rng) {
    if (n_heads < 1 || d % n_heads != 0)
      throw std::invalid_argument("model dim " + std::to_string(d) +
                                  " not divisible by heads " + std::to_string(n_heads));
    MhaParams p;
    p.wq = Tensor<T>::uniform({d, d}, -bound, bound, rng).set_requires_grad();
    p.wk = Tensor<T>::uniform({d, d}, -bound, bound, rng).set_requires_grad();
    p.wv = Tensor<T>::uniform({d, d}, -bound, bound, rng).set_requires_grad();
    p.wo = Tensor<T>::uniform({d, d}, -bound, bound, rng).set_requires_grad();
    p.n_heads = n_heads;
    return p;
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".wq", &wq);
    out.emplace_back(prefix + ".wk", &wk);
    out.emplace_back(prefix + ".wv", &wv);
    out.emplace_back(prefix + ".wo", &wo);
  }
};

template <class T>
struct AanParams {
  FfnParams<T> ffn;       // the FFN applied to the cumulative mean
  Tensor<T> gate_w;       // 2d x 2d producing [input gate; forget gate]
  Tensor<T> gate_b;       // init 0 so gating starts at 0.5/0.5
  LayerNormParams<T> ln;
  bool use_ffn = true;
  bool use_gate = true;
  bool use_gate_bias = true;

  static AanParams init(int d, int d_ff, T bound, Rng& rng) {
    AanParams p;
    p.ffn = FfnParams<T>::init(d, d_ff, bound, rng);
    p.gate_w = Tensor<T>::uniform({2 * d, 2 * d}, -bound, bound, rng).set_requires_grad();
    p.gate_b = Tensor<T>::zeros({2 * d}).set_requires_grad();
    p.ln = LayerNormParams<T>::init(d);
    return p;
  }
  void collect(NamedParams<T>& out, const std::string& prefix) {
    if (use_ffn) ffn.collect(out, prefix + ".ffn");
    if (use_gate) {
      out.emplace_back(prefix + ".gate_w", &gate_w);
      if (use_gate_bias) out.emplace_back(prefix + ".gate_b", &gate_b);
    }
    ln.collect(out, prefix + ".ln");
  }
};

// ---------------------------------------------------------------------
// Shared blocks
// ---------------------------------------------------------------------

template <class T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, LayerNormParams<T>& p) {
  return layer_norm(x, p.gain, p.bias, static_cast<T>(kLayerNormEps));
}

template <class T>
Tensor<T> position_wise_ffn(const Tensor<T>& x, FfnParams<T>& p) {
  auto hidden = relu(add_row_vector(matmul(x, p.w1), p.b1));
  return add_row_vector(matmul(hidden, p.w2), p.b2);
}

// sin/cos table; row `pos` added to the scaled embedding at that position.
template <class T>
Tensor<T> positional_encoding(int n, int d) {
  if (d % 2 != 0)
    throw std::invalid_argument("positional encoding needs even dim, got " +
                                std::to_string(d));
  if (n < 1) throw std::invalid_argument("positional encoding length must be >= 1");
  Tensor<T> pe({n, d});
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d / 2; ++i) {
      const double angle = pos / std::pow(10000.0, (2.0 * i) / d);
      pe.at(pos, 2 * i) = static_cast<T>(std::sin(angle));
      pe.at(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

// Additive causal mask: 0 where key <= query position, large negative
// otherwise. Constant (never on the tape).
template <class T>
Tensor<T> causal_additive_mask(int m, int n) {
  Tensor<T> mask({m, n});
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < n; ++k)
      mask.at(i, k) = k <= i ? T(0) : static_cast<T>(kMaskedScore);
  return mask;
}

// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, output
// projected. Self-attention passes memory == queries; cross-attention
// attends over the encoder states. causal masks pairs (i, k > i).
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& queries, const Tensor<T>& memory,
                               MhaParams<T>& p, bool causal,
                               const DropoutCtx<T>* ctx = nullptr) {
  const int d = queries.cols();
  if (memory.cols() != d)
    throw std::invalid_argument("attention: query dim " + std::to_string(d) +
                                " vs memory dim " + std::to_string(memory.cols()));
  if (d % p.n_heads != 0)
    throw std::invalid_argument("attention: dim " + std::to_string(d) +
                                " not divisible by " + std::to_string(p.n_heads) + " heads");
  const int dk = d / p.n_heads;
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));

  auto q = matmul(queries, p.wq);
  auto k = matmul(memory, p.wk);
  auto v = matmul(memory, p.wv);

  Tensor<T> mask;
  if (causal) mask = causal_additive_mask<T>(q.rows(), k.rows());

  Tensor<T> heads;
  for (int h = 0; h < p.n_heads; ++h) {
    auto qh = slice_cols(q, h * dk, (h + 1) * dk);
    auto kh = slice_cols(k, h * dk, (h + 1) * dk);
    auto vh = slice_cols(v, h * dk, (h + 1) * dk);
    auto scores = scale(matmul_nt(qh, kh), inv_sqrt_dk);
    if (causal) scores = add(scores, mask);
    auto attn = softmax_rows(scores);
    if (ctx) attn = dropout(attn, ctx->rate, *ctx->rng, true);
    auto head = matmul(attn, vh);
    heads = h == 0 ? head : concat_last(heads, head);
  }
  return matmul(heads, p.wo);
}

// ---------------------------------------------------------------------
// Average attention
// ---------------------------------------------------------------------

// Lower-triangular matrix whose row j holds 1/j in its first j columns;
// multiplying it against the input gives every prefix mean at once.
template <class T>
Tensor<T> build_prefix_average_mask(int n) {
  if (n < 1)
    throw std::invalid_argument("prefix average mask needs n >= 1, got " +
                                std::to_string(n));
  Tensor<T> mask({n, n});
  for (int j = 0; j < n; ++j) {
    const T w = T(1) / static_cast<T>(j + 1);
    for (int k = 0; k <= j; ++k) mask.at(j, k) = w;
  }
  return mask;
}

// Context half of the layer: prefix means of Y through the mask product,
// then the inner FFN (identity when disabled).
template <class T>
Tensor<T> aan_cumulative_context(const Tensor<T>& y, AanParams<T>& p) {
  auto means = matmul(build_prefix_average_mask<T>(y.rows()), y);
  return p.use_ffn ? position_wise_ffn(means, p.ffn) : means;
}

// Pre-split sigmoid gates sigma(W [y; g] + b), shape [n x 2d]:
// columns [0, d) are the input gate, [d, 2d) the forget gate.
template <class T>
Tensor<T> aan_gates(const Tensor<T>& y, const Tensor<T>& g, AanParams<T>& p) {
  auto packed = matmul(concat_last(y, g), p.gate_w);
  if (p.use_gate_bias) packed = add_row_vector(packed, p.gate_b);
  return sigmoid(packed);
}

// Gating + residual + layer norm over precomputed context rows.
template <class T>
Tensor<T> aan_combine(const Tensor<T>& y, const Tensor<T>& g, AanParams<T>& p,
                      const DropoutCtx<T>* ctx = nullptr) {
  const int d = y.cols();
  Tensor<T> blended;
  if (p.use_gate) {
    auto gates = aan_gates(y, g, p);
    auto input_gate = slice_cols(gates, 0, d);
    auto forget_gate = slice_cols(gates, d, 2 * d);
    blended = add(mul(input_gate, y), mul(forget_gate, g));
  } else {
    blended = g;
  }
  if (ctx) blended = dropout(blended, ctx->rate, *ctx->rng, true);
  return apply_layer_norm(add(y, blended), p.ln);
}

// Parallel (training) form: all positions at once via the mask matrix.
template <class T>
Tensor<T> aan_forward_masked(const Tensor<T>& y, AanParams<T>& p,
                             const DropoutCtx<T>* ctx = nullptr) {
  return aan_combine(y, aan_cumulative_context(y, p), p, ctx);
}

namespace detail {

// row = x * W + b for row-major W[in x out]; plain loops, off the tape.
template <class T>
void affine_row(const T* x, const Tensor<T>& w, const Tensor<T>* b, T* out) {
  const int in = w.dim(0), cols = w.dim(1);
  for (int c = 0; c < cols; ++c) out[c] = b ? b->data()[static_cast<std::size_t>(c)] : T(0);
  for (int r = 0; r < in; ++r) {
    const T xv = x[r];
    const T* wr = w.data().data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) out[c] += xv * wr[c];
  }
}

template <class T>
void matvec_row(const T* x, const Tensor<T>& w, T* out) {
  affine_row(x, w, static_cast<const Tensor<T>*>(nullptr), out);
}

template <class T>
void ffn_row(const T* x, FfnParams<T>& p, T* out, std::vector<T>& hidden_scratch) {
  const int d_ff = p.w1.dim(1);
  hidden_scratch.resize(static_cast<std::size_t>(d_ff));
  affine_row(x, p.w1, &p.b1, hidden_scratch.data());
  for (auto& h : hidden_scratch) h = h > T(0) ? h : T(0);
  affine_row(hidden_scratch.data(), p.w2, &p.b2, out);
}

}  // namespace detail

// Reusable per-row workspace for the loop-based (non-tape) layer paths.
template <class T>
struct AanRowScratch {
  std::vector<T> context, packed, gates, blended, pre_ln, ffn_hidden, mean;

  void ensure(int d) {
    context.resize(static_cast<std::size_t>(d));
    packed.resize(static_cast<std::size_t>(2 * d));
    gates.resize(static_cast<std::size_t>(2 * d));
    blended.resize(static_cast<std::size_t>(d));
    pre_ln.resize(static_cast<std::size_t>(d));
    mean.resize(static_cast<std::size_t>(d));
  }
};

namespace detail {

template <class T>
void layer_norm_row(const T* x, const LayerNormParams<T>& p, int d, T* out) {
  T mean = 0;
  for (int j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<T>(d);
  T var = 0;
  for (int j = 0; j < d; ++j) {
    const T c = x[j] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
  for (int j = 0; j < d; ++j)
    out[j] = (x[j] - mean) * inv * p.gain.data()[static_cast<std::size_t>(j)] +
             p.bias.data()[static_cast<std::size_t>(j)];
}

// One position given its input row and already-averaged context: gate,
// residual, layer norm.
template <class T>
void aan_combine_row(const T* y_row, const T* mean_row, AanParams<T>& p, int d,
                     T* out, AanRowScratch<T>& ws) {
  ws.ensure(d);
  T* g_row = ws.context.data();
  if (p.use_ffn)
    ffn_row(mean_row, p.ffn, g_row, ws.ffn_hidden);
  else
    for (int j = 0; j < d; ++j) g_row[j] = mean_row[j];

  T* blended = ws.blended.data();
  if (p.use_gate) {
    T* packed = ws.packed.data();
    T* gates = ws.gates.data();
    for (int j = 0; j < d; ++j) packed[j] = y_row[j];
    for (int j = 0; j < d; ++j) packed[d + j] = g_row[j];
    affine_row(packed, p.gate_w, p.use_gate_bias ? &p.gate_b : nullptr, gates);
    for (int j = 0; j < 2 * d; ++j) gates[j] = kernels::stable_sigmoid(gates[j]);
    for (int j = 0; j < d; ++j)
      blended[j] = gates[j] * y_row[j] + gates[d + j] * g_row[j];
  } else {
    for (int j = 0; j < d; ++j) blended[j] = g_row[j];
  }

  T* pre_ln = ws.pre_ln.data();
  for (int j = 0; j < d; ++j) pre_ln[j] = y_row[j] + blended[j];
  layer_norm_row(pre_ln, p.ln, d, out);
}

}  // namespace detail

// Sequential reference: walks positions in order, averaging explicitly.
// Kept as the oracle the masked and incremental forms are tested against.
template <class T>
Tensor<T> aan_forward_sequential(const Tensor<T>& y, AanParams<T>& p) {
  const int n = y.rows(), d = y.cols();
  if (n < 1) throw std::invalid_argument("aan_forward_sequential: empty input");
  Tensor<T> out({n, d});
  std::vector<T> running_sum(static_cast<std::size_t>(d), T(0));
  AanRowScratch<T> ws;
  for (int j = 0; j < n; ++j) {
    const T* y_row = y.data().data() + static_cast<std::size_t>(j) * d;
    ws.ensure(d);
    for (int c = 0; c < d; ++c) {
      running_sum[static_cast<std::size_t>(c)] += y_row[c];
      ws.mean[static_cast<std::size_t>(c)] =
          running_sum[static_cast<std::size_t>(c)] / static_cast<T>(j + 1);
    }
    detail::aan_combine_row(y_row, ws.mean.data(), p, d,
                            out.data().data() + static_cast<std::size_t>(j) * d, ws);
  }
  return out;
}

// Decode-time state: the exact sum of the inputs seen so far plus their
// count. The sum is kept in double even in f32 mode to bound drift of
// long summations against the masked form.
struct AanState {
  std::vector<double> running_sum;
  long count = 0;

  explicit AanState(int d = 0) : running_sum(static_cast<std::size_t>(d), 0.0) {}
  void reset() {
    std::fill(running_sum.begin(), running_sum.end(), 0.0);
    count = 0;
  }
};

// One decode step: fold y_j into the state and emit h_j. O(d^2 + d*d_ff)
// work and O(d) state regardless of position.
template <class T>
void aan_step_incremental(AanState& state, const T* y_row, AanParams<T>& p, int d,
                          T* out, AanRowScratch<T>& ws) {
  if (static_cast<int>(state.running_sum.size()) != d)
    throw std::invalid_argument("aan state dim " +
                                std::to_string(state.running_sum.size()) +
                                " does not match input dim " + std::to_string(d));
  ++state.count;
  ws.ensure(d);
  for (int c = 0; c < d; ++c) {
    state.running_sum[static_cast<std::size_t>(c)] += static_cast<double>(y_row[c]);
    ws.mean[static_cast<std::size_t>(c)] =
        static_cast<T>(state.running_sum[static_cast<std::size_t>(c)] /
                       static_cast<double>(state.count));
  }
  detail::aan_combine_row(y_row, ws.mean.data(), p, d, out, ws);
}

template <class T>
std::vector<T> aan_step_incremental(AanState& state, const std::vector<T>& y_row,
                                    AanParams<T>& p) {
  const int d = static_cast<int>(y_row.size());
  std::vector<T> out(static_cast<std::size_t>(d));
  AanRowScratch<T> ws;
  aan_step_incremental(state, y_row.data(), p, d, out.data(), ws);
  return out;
}

}  // namespace aan
