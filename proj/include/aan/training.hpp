#pragma once

// Optimization: label-smoothed cross-entropy, the warmup/decay learning
// rate schedule, bias-corrected Adam, the training loop over synthetic
// tasks, and checkpoint averaging.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "aan/checkpoint.hpp"
#include "aan/model.hpp"
#include "aan/tasks.hpp"
#include "aan/tensor.hpp"

namespace aan {

// ---------------------------------------------------------------------
// Label-smoothed negative log-likelihood
// ---------------------------------------------------------------------

// Cross-entropy of softmax(logits) against
//   q = (1 - eps) * onehot(gold) + eps * uniform over the non-pad vocab,
// averaged over non-pad positions (rows whose gold is pad_id are
// skipped). Differentiable: d(loss)/d(logits) = (softmax - q) / n.
template <class T>
Tensor<T> label_smoothed_nll(const Tensor<T>& logits, const std::vector<int>& gold,
                             T eps_ls, int pad_id) {
  if (logits.ndim() != 2 || logits.rows() != static_cast<int>(gold.size()))
    throw std::invalid_argument("label_smoothed_nll: logits " +
                                Tensor<T>::shape_str(logits.shape()) + " vs " +
                                std::to_string(gold.size()) + " gold ids");
  if (eps_ls < T(0) || eps_ls >= T(1))
    throw std::invalid_argument("label_smoothed_nll: eps_ls must be in [0, 1)");
  const int m = logits.rows(), vocab = logits.cols();
  for (int g : gold)
    if (g < 0 || g >= vocab)
      throw std::out_of_range("label_smoothed_nll: gold id " + std::to_string(g) +
                              " out of range [0, " + std::to_string(vocab) + ")");

  int n_real = 0;
  for (int g : gold)
    if (g != pad_id) ++n_real;
  if (n_real == 0) return Tensor<T>::zeros({1});  // all-pad convention

  const T uniform = eps_ls / static_cast<T>(vocab - 1);  // pad excluded
  auto probs = std::make_shared<std::vector<T>>(logits.data().size());
  double total = 0;
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * vocab;
    if (gold[static_cast<std::size_t>(i)] == pad_id) continue;
    // log-softmax, stabilized
    T mx = logits.data()[off];
    for (int k = 1; k < vocab; ++k) mx = std::max(mx, logits.data()[off + k]);
    T sum = 0;
    for (int k = 0; k < vocab; ++k) {
      const T e = std::exp(logits.data()[off + k] - mx);
      (*probs)[off + k] = e;
      sum += e;
    }
    const T lse = mx + std::log(sum);
    const T inv = T(1) / sum;
    double row_loss = 0;
    for (int k = 0; k < vocab; ++k) {
      (*probs)[off + k] *= inv;
      if (k == pad_id) continue;
      T q = uniform;
      if (k == gold[static_cast<std::size_t>(i)]) q += T(1) - eps_ls;
      row_loss -= static_cast<double>(q) *
                  static_cast<double>(logits.data()[off + k] - lse);
    }
    total += row_loss;
  }

  Tensor<T> out({1});
  out.data()[0] = static_cast<T>(total / n_real);
  if (!std::isfinite(static_cast<double>(out.data()[0])))
    throw std::runtime_error("label_smoothed_nll: non-finite loss");

  if (auto* tape = detail::prep_out(out, logits.requires_grad())) {
    auto li = logits.impl();
    auto oi = out.impl();
    const T inv_n = T(1) / static_cast<T>(n_real);
    auto gold_copy = gold;
    tape->record([li, oi, probs, gold_copy, m, vocab, pad_id, uniform, eps_ls, inv_n] {
      detail::ensure_grad(li);
      const T g_out = oi->grad[0];
      for (int i = 0; i < m; ++i) {
        if (gold_copy[static_cast<std::size_t>(i)] == pad_id) continue;
        const std::size_t off = static_cast<std::size_t>(i) * vocab;
        for (int k = 0; k < vocab; ++k) {
          T q = k == pad_id ? T(0) : uniform;
          if (k == gold_copy[static_cast<std::size_t>(i)]) q += T(1) - eps_ls;
          li->grad[off + k] += g_out * inv_n * ((*probs)[off + k] - q);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------
// Learning rate schedule and Adam
// ---------------------------------------------------------------------

// d^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warmup to the knee
// at `warmup`, then inverse-sqrt decay.
inline double lr_schedule(long step, int d_model, long warmup) {
  if (step < 1) throw std::invalid_argument("lr_schedule: step must be >= 1");
  if (warmup < 1) throw std::invalid_argument("lr_schedule: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  long t = 0;
  std::vector<std::vector<T>> m, v;  // first/second moments per parameter

  void init(const std::vector<Tensor<T>*>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.emplace_back(p->numel(), T(0));
      v.emplace_back(p->numel(), T(0));
    }
    t = 0;
  }
};

// One bias-corrected Adam update over all parameters. Any non-finite
// gradient aborts the step before touching the parameters.
template <class T>
void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state not initialized for these parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->has_grad()) continue;
    for (const T g : params[i]->grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                 std::to_string(i) + "; aborting the step");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (!p->has_grad()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& data = p->data();
    const auto& grad = p->grad();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = static_cast<double>(grad[k]);
      const double mk = state.beta1 * static_cast<double>(m[k]) + (1.0 - state.beta1) * g;
      const double vk = state.beta2 * static_cast<double>(v[k]) + (1.0 - state.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / bc1;
      const double v_hat = vk / bc2;
      data[k] = static_cast<T>(static_cast<double>(data[k]) -
                               lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

// ---------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------

struct TrainOptions {
  SyntheticTaskSpec task;
  long steps = 2000;
  int batch_size = 32;
  long warmup = 400;
  int log_every = 10;
  long checkpoint_every = 0;  // 0 = initial + final only
  std::string out_dir;        // empty = keep everything in memory
};

struct TrainRecord {
  long step;
  double loss;
  double lr;
  double tokens_per_sec;
};

struct TrainResult {
  std::vector<TrainRecord> log;        // one row per log interval
  std::vector<double> step_losses;     // every step, for curve analysis
  std::vector<std::string> checkpoints;

  // Mean loss over the trailing window; the "final loss" of a run.
  double final_loss(std::size_t window = 50) const {
    if (step_losses.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = std::min(window, step_losses.size());
    double s = 0;
    for (std::size_t i = step_losses.size() - n; i < step_losses.size(); ++i)
      s += step_losses[i];
    return s / static_cast<double>(n);
  }
};

inline void write_train_log(const std::string& path, const std::vector<TrainRecord>& log) {
  std::ofstream os(path, std::ios::binary);  // binary: LF endings everywhere
  if (!os) throw std::runtime_error("cannot write training log: " + path);
  os << "step,loss,lr,tokens_per_sec\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.6f,%.8f,%.1f\n", r.step, r.loss, r.lr,
                  r.tokens_per_sec);
    os << buf;
  }
}

// Teacher-forced training with label smoothing, Adam, and the warmup
// schedule. The loop is identical for both decoder kinds so their curves
// are directly comparable.
template <class T>
TrainResult train(TransformerModel<T>& model, const TrainOptions& opt) {
  opt.task.validate();
  const auto& cfg = model.config();
  if (opt.task.vocab > cfg.src_vocab || opt.task.vocab > cfg.tgt_vocab)
    throw std::invalid_argument("task vocab exceeds model vocab");
  if (opt.task.len_max + 1 > cfg.max_len)
    throw std::invalid_argument("task length range exceeds model max_len");

  Rng data_rng = Rng::derive(opt.task.seed, /*tag=*/1);
  Rng dropout_rng = Rng::derive(opt.task.seed, /*tag=*/2);

  auto params = model.parameter_tensors();
  AdamState<T> adam;
  adam.init(params);

  TrainResult result;
  const bool emit_files = !opt.out_dir.empty();
  auto checkpoint_path = [&](long step) {
    return (std::filesystem::path(opt.out_dir) / ("ckpt-" + std::to_string(step) + ".aant"))
        .string();
  };
  if (emit_files) {
    std::filesystem::create_directories(opt.out_dir);
    save_checkpoint(model, checkpoint_path(0));
    result.checkpoints.push_back(checkpoint_path(0));
  }

  using Clock = std::chrono::steady_clock;
  auto window_start = Clock::now();
  long window_tokens = 0;

  for (long step = 1; step <= opt.steps; ++step) {
    Batch batch = generate_batch(opt.task, opt.batch_size, data_rng);

    long total_positions = 0;
    std::vector<std::vector<int>> srcs, tgt_ins, tgt_outs;
    for (int i = 0; i < batch.size; ++i) {
      srcs.push_back(batch.src_seq(i));
      tgt_ins.push_back(batch.tgt_in_seq(i));
      tgt_outs.push_back(batch.tgt_out_seq(i));
      total_positions += static_cast<long>(tgt_outs.back().size());
    }

    zero_grads(params);
    double batch_loss = 0;
    DropoutCtx<T> ctx{static_cast<T>(cfg.dropout), &dropout_rng};
    const DropoutCtx<T>* ctx_ptr = cfg.dropout > 0.0f ? &ctx : nullptr;
    for (int i = 0; i < batch.size; ++i) {
      TapeScope<T> scope;
      auto memory = model.encode(srcs[static_cast<std::size_t>(i)], ctx_ptr);
      auto logits = model.decode_parallel(tgt_ins[static_cast<std::size_t>(i)], memory, ctx_ptr);
      auto nll = label_smoothed_nll(logits, tgt_outs[static_cast<std::size_t>(i)],
                                    static_cast<T>(cfg.label_smoothing), kPadId);
      const double count = static_cast<double>(tgt_outs[static_cast<std::size_t>(i)].size());
      const double weight = count / static_cast<double>(total_positions);
      batch_loss += static_cast<double>(nll.value()) * weight;
      auto weighted = scale(nll, static_cast<T>(weight));
      backward(weighted);
    }
    if (!std::isfinite(batch_loss))
      throw std::runtime_error("training diverged: non-finite loss at step " +
                               std::to_string(step));

    const double lr = lr_schedule(step, cfg.d_model, opt.warmup);
    adam_step(params, adam, lr);
    result.step_losses.push_back(batch_loss);
    window_tokens += total_positions;

    if (step % opt.log_every == 0 || step == opt.steps) {
      const double secs =
          std::chrono::duration<double>(Clock::now() - window_start).count();
      result.log.push_back({step, batch_loss, lr,
                            secs > 0 ? static_cast<double>(window_tokens) / secs : 0.0});
      window_start = Clock::now();
      window_tokens = 0;
    }
    if (emit_files && opt.checkpoint_every > 0 && step % opt.checkpoint_every == 0 &&
        step != opt.steps) {
      save_checkpoint(model, checkpoint_path(step));
      result.checkpoints.push_back(checkpoint_path(step));
    }
    if (emit_files && step == opt.steps) {
      save_checkpoint(model, checkpoint_path(step));
      result.checkpoints.push_back(checkpoint_path(step));
    }
  }

  if (emit_files)
    write_train_log((std::filesystem::path(opt.out_dir) / "log.csv").string(), result.log);
  return result;
}

// ---------------------------------------------------------------------
// Checkpoint averaging and evaluation helpers
// ---------------------------------------------------------------------

// Arithmetic mean of each parameter across checkpoints with identical
// configs.
template <class T>
TransformerModel<T> average_checkpoints(const std::vector<std::string>& paths) {
  if (paths.empty())
    throw std::invalid_argument("average_checkpoints: need at least one path");
  auto model = load_checkpoint<T>(paths[0]);
  auto params = model.parameters();
  std::vector<std::vector<double>> sums;
  for (auto& [name, t] : params)
    sums.emplace_back(t->data().begin(), t->data().end());
  for (std::size_t i = 1; i < paths.size(); ++i) {
    auto other = load_checkpoint<T>(paths[i]);
    if (!(other.config() == model.config()))
      throw CheckpointError(CheckpointError::Kind::kConfigMismatch,
                            "checkpoint configs differ: " + paths[0] + " vs " + paths[i]);
    auto other_params = other.parameters();
    for (std::size_t k = 0; k < sums.size(); ++k) {
      const auto& src = other_params[k].second->data();
      for (std::size_t j = 0; j < src.size(); ++j)
        sums[k][j] += static_cast<double>(src[j]);
    }
  }
  const double inv = 1.0 / static_cast<double>(paths.size());
  for (std::size_t k = 0; k < sums.size(); ++k) {
    auto& dst = params[k].second->data();
    for (std::size_t j = 0; j < dst.size(); ++j)
      dst[j] = static_cast<T>(sums[k][j] * inv);
  }
  return model;
}

// Fraction of teacher-forced positions whose argmax matches the gold
// token, over freshly sampled sentences.
template <class T>
double teacher_forced_accuracy(TransformerModel<T>& model, const SyntheticTaskSpec& task,
                               int n_sentences, Rng& rng) {
  long hits = 0, total = 0;
  for (int s = 0; s < n_sentences; ++s) {
    const auto src = sample_source(task, rng);
    const auto tgt = task_target(task, src);
    std::vector<int> tgt_in = {kBosId};
    tgt_in.insert(tgt_in.end(), tgt.begin(), tgt.end());
    std::vector<int> tgt_out = tgt;
    tgt_out.push_back(kEosId);
    auto memory = model.encode(src);
    auto logits = model.decode_parallel(tgt_in, memory);
    for (int i = 0; i < logits.rows(); ++i) {
      int best = 0;
      for (int k = 1; k < logits.cols(); ++k)
        if (logits.at(i, k) > logits.at(i, best)) best = k;
      if (best == tgt_out[static_cast<std::size_t>(i)]) ++hits;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace aan
