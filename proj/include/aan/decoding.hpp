#pragma once

// Autoregressive decoding over the incremental cache: greedy and beam
// search. Scores are raw sums of chosen-token log-probabilities; no
// length normalization by default (length_penalty exponent 0).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "aan/model.hpp"
#include "aan/tasks.hpp"

namespace aan {

struct DecodeResult {
  std::vector<int> tokens;  // no BOS/EOS
  double score = 0;
  int steps = 0;
  double seconds = 0;
  bool reached_max_len = false;  // returned a live hypothesis at cutoff
};

template <class T>
struct BeamHypothesis {
  std::vector<int> tokens;  // BOS-prefixed
  double score = 0;
  DecoderCache<T> cache;
  bool finished = false;
};

struct DecodeOptions {
  int max_len = 256;
  int beam = 4;
  double length_penalty = 0;  // score / len^p for ranking; 0 = off
  bool suppress_eos = false;  // benchmark mode: force exactly max_len tokens
  BaselineMode baseline_mode = BaselineMode::kCached;
};

namespace detail {

// log softmax of raw logits, accumulated in double.
template <class T>
std::vector<double> log_softmax_vec(const std::vector<T>& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0;
  for (const T v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

inline double ranking_score(double score, std::size_t emitted, double length_penalty) {
  if (length_penalty == 0 || emitted == 0) return score;
  return score / std::pow(static_cast<double>(emitted), length_penalty);
}

}  // namespace detail

// Argmax decoding; ties break toward the lowest token id.
template <class T>
DecodeResult greedy_decode(TransformerModel<T>& model, const std::vector<int>& src_tokens,
                           const DecodeOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  auto memory = model.encode(src_tokens);
  auto cache = make_decoder_cache(model, memory, opt.baseline_mode);
  StepWorkspace<T> ws;
  DecodeResult res;
  int prev = kBosId;
  const int limit = std::min(opt.max_len, model.config().max_len);
  for (int t = 0; t < limit; ++t) {
    auto logits = decode_step(model, cache, prev, ws);
    auto logp = detail::log_softmax_vec(logits);
    if (opt.suppress_eos) logp[kEosId] = -std::numeric_limits<double>::infinity();
    int best = 0;
    for (std::size_t k = 1; k < logp.size(); ++k)
      if (logp[k] > logp[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    res.score += logp[static_cast<std::size_t>(best)];
    ++res.steps;
    if (best == kEosId) {
      res.reached_max_len = false;
      res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return res;
    }
    res.tokens.push_back(best);
    prev = best;
  }
  res.reached_max_len = !opt.suppress_eos;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// Standard beam search. Finished hypotheses are frozen and compete by
// raw score; the search stops once the best finished hypothesis cannot
// be beaten by any live one (scores only decrease) or max_len is hit.
template <class T>
DecodeResult beam_decode(TransformerModel<T>& model, const std::vector<int>& src_tokens,
                         const DecodeOptions& opt = {}) {
  if (opt.beam < 1)
    throw std::invalid_argument("beam_decode: beam must be >= 1, got " +
                                std::to_string(opt.beam));
  const auto start = std::chrono::steady_clock::now();
  auto memory = model.encode(src_tokens);

  std::vector<BeamHypothesis<T>> beam;
  beam.push_back({{kBosId}, 0.0, make_decoder_cache(model, memory, opt.baseline_mode), false});

  const int limit = std::min(opt.max_len, model.config().max_len);
  StepWorkspace<T> ws;
  int steps = 0;

  struct Candidate {
    std::size_t parent;
    int token;     // -1: carry the (finished) parent through unchanged
    double score;
    double rank;
  };

  for (int t = 0; t < limit; ++t) {
    bool any_live = false;
    std::vector<Candidate> candidates;
    std::vector<std::vector<double>> logps(beam.size());
    for (std::size_t h = 0; h < beam.size(); ++h) {
      auto& hyp = beam[h];
      const std::size_t emitted = hyp.tokens.size() - 1;
      if (hyp.finished) {
        candidates.push_back({h, -1, hyp.score,
                              detail::ranking_score(hyp.score, emitted, opt.length_penalty)});
        continue;
      }
      any_live = true;
      auto logits = decode_step(model, hyp.cache, hyp.tokens.back(), ws);
      logps[h] = detail::log_softmax_vec(logits);
      if (opt.suppress_eos)
        logps[h][kEosId] = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < static_cast<int>(logps[h].size()); ++k) {
        const double s = hyp.score + logps[h][static_cast<std::size_t>(k)];
        if (!std::isfinite(s)) continue;  // suppressed continuation
        candidates.push_back(
            {h, k, s, detail::ranking_score(s, emitted + 1, opt.length_penalty)});
      }
    }
    if (!any_live) break;
    ++steps;

    // deterministic top-k: rank desc, then token id, then parent index
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                       if (a.rank != b.rank) return a.rank > b.rank;
                       if (a.token != b.token) return a.token < b.token;
                       return a.parent < b.parent;
                     });
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(opt.beam),
                                                   candidates.size());

    std::vector<BeamHypothesis<T>> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = candidates[i];
      if (c.token < 0) {
        next.push_back(std::move(beam[c.parent]));
        continue;
      }
      BeamHypothesis<T> child;
      child.tokens = beam[c.parent].tokens;
      child.tokens.push_back(c.token);
      child.score = c.score;
      child.cache = beam[c.parent].cache;  // copy: forks share the parent state
      child.finished = c.token == kEosId;
      next.push_back(std::move(child));
    }
    beam = std::move(next);

    // all-finished, or the leader is finished and scores only decrease
    bool leader_finished = beam.front().finished;
    if (leader_finished) break;
  }

  // best finished, otherwise best live flagged as cut off
  const BeamHypothesis<T>* best_finished = nullptr;
  const BeamHypothesis<T>* best_live = nullptr;
  for (const auto& h : beam) {
    auto*& slot = h.finished ? best_finished : best_live;
    if (!slot || h.score > slot->score) slot = &h;
  }
  const BeamHypothesis<T>* pick = best_finished ? best_finished : best_live;

  DecodeResult res;
  res.steps = steps;
  res.score = pick->score;
  res.reached_max_len = best_finished == nullptr;
  res.tokens.assign(pick->tokens.begin() + 1, pick->tokens.end());  // drop BOS
  if (!res.tokens.empty() && res.tokens.back() == kEosId) res.tokens.pop_back();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// Teacher-forced re-score of an emitted sequence: the summed log
// probability decode_parallel assigns to it. Consistency oracle for the
// stepwise scores.
template <class T>
double rescore_sequence(TransformerModel<T>& model, const std::vector<int>& src_tokens,
                        const std::vector<int>& out_tokens, bool ended_with_eos) {
  std::vector<int> tgt_in = {kBosId};
  tgt_in.insert(tgt_in.end(), out_tokens.begin(), out_tokens.end());
  std::vector<int> gold = out_tokens;
  if (ended_with_eos)
    gold.push_back(kEosId);
  else
    tgt_in.pop_back();  // the last input token produced no scored output
  if (gold.empty()) return 0;
  auto memory = model.encode(src_tokens);
  auto logits = model.decode_parallel(tgt_in, memory);
  double total = 0;
  for (int i = 0; i < static_cast<int>(gold.size()); ++i) {
    std::vector<T> row(static_cast<std::size_t>(logits.cols()));
    for (int k = 0; k < logits.cols(); ++k) row[static_cast<std::size_t>(k)] = logits.at(i, k);
    auto logp = detail::log_softmax_vec(row);
    total += logp[static_cast<std::size_t>(gold[static_cast<std::size_t>(i)])];
  }
  return total;
}

}  // namespace aan
