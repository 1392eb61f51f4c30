#pragma once

// Invariant suite behind the `selfcheck` subcommand: one pass/fail line
// per property, nonzero exit on any failure. The sabotage mode flips one
// prefix-mask entry to prove the harness actually detects faults.

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "aan/decoding.hpp"
#include "aan/kernels.hpp"
#include "aan/layers.hpp"
#include "aan/model.hpp"
#include "aan/training.hpp"

namespace aan {

enum class Sabotage { kNone, kMask };

struct SelfcheckContext {
  Sabotage sabotage = Sabotage::kNone;
  std::uint64_t seed = 1;
};

namespace selfcheck_detail {

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(double(a[i]) - double(b[i])));
  return m;
}

inline bool check_mask_identity(const SelfcheckContext& ctx) {
  auto mask = build_prefix_average_mask<float>(4);
  if (ctx.sabotage == Sabotage::kMask) mask.at(1, 0) += 0.25f;  // injected fault
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k) {
      const float want = k <= j ? 1.0f / float(j + 1) : 0.0f;
      if (mask.at(j, k) != want) return false;
    }
  // mask * Y against brute-force prefix means, f64, lengths up to 128
  Rng rng = Rng::derive(ctx.seed, 101);
  for (int n : {3, 17, 128}) {
    auto big = build_prefix_average_mask<double>(n);
    if (ctx.sabotage == Sabotage::kMask) big.at(n / 2, 0) += 0.25;
    auto y = Tensor<double>::uniform({n, 8}, -2, 2, rng);
    auto prod = matmul(big, y);
    for (int j = 0; j < n; ++j)
      for (int c = 0; c < 8; ++c) {
        double s = 0;
        for (int k = 0; k <= j; ++k) s += y.at(k, c);
        if (std::fabs(prod.at(j, c) - s / (j + 1)) > 1e-6) return false;
      }
  }
  return true;
}

inline bool check_three_way_equivalence(const SelfcheckContext& ctx) {
  Rng rng = Rng::derive(ctx.seed, 102);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 1 + rng.uniform_int(48);
    const int d = 2 * (1 + rng.uniform_int(12));
    auto p = AanParams<float>::init(d, 2 * d, 1.0f / std::sqrt(float(d)), rng);
    auto y = Tensor<float>::uniform({n, d}, -1, 1, rng);
    auto seq = aan_forward_sequential(y, p);
    auto masked = aan_forward_masked(y, p);
    if (max_abs_diff(seq.data(), masked.data()) >= 1e-5) return false;
    AanState st(d);
    AanRowScratch<float> ws;
    std::vector<float> h(static_cast<std::size_t>(d));
    for (int j = 0; j < n; ++j) {
      aan_step_incremental(st, y.data().data() + std::size_t(j) * d, p, d, h.data(), ws);
      for (int c = 0; c < d; ++c)
        if (std::fabs(double(h[std::size_t(c)]) - double(masked.at(j, c))) >= 1e-5)
          return false;
    }
  }
  return true;
}

template <class T>
ModelConfig selfcheck_config(DecoderKind kind, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.src_vocab = 12;
  cfg.tgt_vocab = 12;
  cfg.max_len = 48;
  cfg.dropout = 0.0f;
  cfg.decoder_kind = kind;
  cfg.seed = seed;
  return cfg;
}

inline bool check_causality(DecoderKind kind, const SelfcheckContext& ctx) {
  Rng rng = Rng::derive(ctx.seed, 103);
  TransformerModel<float> model(selfcheck_config<float>(kind, ctx.seed + 7));
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> src, tgt;
    for (int i = 0; i < 6; ++i) src.push_back(rng.uniform_int(12));
    for (int i = 0; i < 10; ++i) tgt.push_back(rng.uniform_int(12));
    auto memory = model.encode(src);
    auto base = model.decode_parallel(tgt, memory);
    const int cut = 2 + rng.uniform_int(6);
    auto tgt2 = tgt;
    for (std::size_t p = std::size_t(cut) + 1; p < tgt2.size(); ++p)
      tgt2[p] = (tgt2[p] + 1) % 12;
    auto pert = model.decode_parallel(tgt2, memory);
    for (int r = 0; r <= cut; ++r)
      for (int c = 0; c < base.cols(); ++c)
        if (base.at(r, c) != pert.at(r, c)) return false;
  }
  return true;
}

inline bool check_gradients(const SelfcheckContext& ctx) {
  Rng rng = Rng::derive(ctx.seed, 104);
  // a few primitive ops against central differences
  {
    auto x0 = Tensor<double>::uniform({3, 4}, -1.5, 1.5, rng);
    auto w = Tensor<double>::uniform({4, 2}, -1, 1, rng);
    auto f = [&](const Tensor<double>& x) { return sum_all(softmax_rows(matmul(x, w))).value(); };
    Tensor<double> x(x0.shape(), x0.data());
    x.set_requires_grad();
    {
      TapeScope<double> scope;
      auto loss = sum_all(softmax_rows(matmul(x, w)));
      backward(loss);
    }
    auto fd = finite_difference_grad<double>(f, x0);
    for (std::size_t i = 0; i < fd.numel(); ++i) {
      const double denom = std::max({std::fabs(fd.data()[i]), std::fabs(x.grad()[i]), 1e-4});
      if (std::fabs(fd.data()[i] - x.grad()[i]) / denom > 1e-4) return false;
    }
  }
  // full average-attention layer
  {
    auto p = AanParams<double>::init(6, 12, 0.4, rng);
    auto y = Tensor<double>::uniform({4, 6}, -1, 1, rng);
    NamedParams<double> params;
    p.collect(params, "aan");
    {
      TapeScope<double> scope;
      auto loss = sum_all(aan_forward_masked(y, p));
      backward(loss);
    }
    for (auto& [name, t] : params) {
      Tensor<double> snapshot(t->shape(), t->data());
      auto f = [&](const Tensor<double>& x) {
        auto saved = t->data();
        t->data() = x.data();
        const double v = sum_all(aan_forward_masked(y, p)).value();
        t->data() = saved;
        return v;
      };
      auto fd = finite_difference_grad<double>(f, snapshot);
      for (std::size_t i = 0; i < fd.numel(); ++i) {
        const double denom =
            std::max({std::fabs(fd.data()[i]), std::fabs(t->grad()[i]), 1e-4});
        if (std::fabs(fd.data()[i] - t->grad()[i]) / denom > 1e-4) return false;
      }
    }
  }
  return true;
}

inline bool check_beam_exactness(const SelfcheckContext& ctx) {
  Rng rng = Rng::derive(ctx.seed, 105);
  for (int trial = 0; trial < 10; ++trial) {
    const int vocab = 3 + rng.uniform_int(2);
    const int max_len = 2 + rng.uniform_int(2);
    ModelConfig cfg = selfcheck_config<float>(
        trial % 2 ? DecoderKind::kAan : DecoderKind::kSelfAttention, ctx.seed + trial);
    cfg.src_vocab = vocab;
    cfg.tgt_vocab = vocab;
    TransformerModel<float> model(cfg);
    std::vector<int> src = {rng.uniform_int(vocab), rng.uniform_int(vocab)};

    // exhaustive best over EOS-terminated sequences (beam covers them all)
    auto memory = model.encode(src);
    double best_finished = -std::numeric_limits<double>::infinity();
    double best_cut = -std::numeric_limits<double>::infinity();
    std::function<void(std::vector<int>&, double)> recurse = [&](std::vector<int>& prefix,
                                                                 double score) {
      std::vector<int> tin = {kBosId};
      tin.insert(tin.end(), prefix.begin(), prefix.end());
      auto logits = model.decode_parallel(tin, memory);
      std::vector<float> row(static_cast<std::size_t>(logits.cols()));
      for (int k = 0; k < logits.cols(); ++k)
        row[static_cast<std::size_t>(k)] = logits.at(logits.rows() - 1, k);
      auto logp = detail::log_softmax_vec(row);
      for (int tok = 0; tok < vocab; ++tok) {
        const double s = score + logp[static_cast<std::size_t>(tok)];
        if (tok == kEosId) {
          best_finished = std::max(best_finished, s);
        } else if (static_cast<int>(prefix.size()) + 1 == max_len) {
          best_cut = std::max(best_cut, s);
        } else {
          prefix.push_back(tok);
          recurse(prefix, s);
          prefix.pop_back();
        }
      }
    };
    std::vector<int> prefix;
    recurse(prefix, 0.0);
    const double want = std::isfinite(best_finished) ? best_finished : best_cut;

    DecodeOptions opt;
    opt.max_len = max_len;
    opt.beam = 1;
    for (int k = 0; k < max_len; ++k) opt.beam *= vocab;
    auto got = beam_decode(model, src, opt);
    if (std::fabs(got.score - want) >= 1e-4) return false;
  }
  return true;
}

inline bool check_kernel_bit_identity(const SelfcheckContext& ctx) {
  Rng rng = Rng::derive(ctx.seed, 106);
  const int m = 96, k = 64, n = 48;
  std::vector<float> a(std::size_t(m) * k), b(std::size_t(k) * n);
  for (auto& v : a) v = float(rng.uniform(-2, 2));
  for (auto& v : b) v = float(rng.uniform(-2, 2));
  std::vector<float> serial(std::size_t(m) * n), parallel(std::size_t(m) * n);
  kernels::matmul_serial(a.data(), b.data(), serial.data(), m, k, n);
  {
    kernels::ThreadGuard guard(8);
    kernels::matmul(a.data(), b.data(), parallel.data(), m, k, n);
  }
  return serial == parallel;
}

}  // namespace selfcheck_detail

struct SelfcheckItem {
  std::string name;
  std::function<bool(const SelfcheckContext&)> run;
};

inline std::vector<SelfcheckItem> selfcheck_items() {
  using namespace selfcheck_detail;
  return {
      {"mask_identity", check_mask_identity},
      {"aan_three_way_equivalence", check_three_way_equivalence},
      {"causality_aan",
       [](const SelfcheckContext& c) { return check_causality(DecoderKind::kAan, c); }},
      {"causality_self_attention",
       [](const SelfcheckContext& c) {
         return check_causality(DecoderKind::kSelfAttention, c);
       }},
      {"gradient_checks", check_gradients},
      {"beam_exactness", check_beam_exactness},
      {"kernel_bit_identity", check_kernel_bit_identity},
  };
}

// Runs every check, printing one line each; returns the failure count.
inline int run_selfcheck(const SelfcheckContext& ctx) {
  int failures = 0;
  for (const auto& item : selfcheck_items()) {
    const bool ok = item.run(ctx);
    std::printf("%s: %s\n", ok ? "PASS" : "FAIL", item.name.c_str());
    if (!ok) ++failures;
  }
  return failures;
}

}  // namespace aan
