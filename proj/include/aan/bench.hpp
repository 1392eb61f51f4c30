#pragma once

// Decode-latency benchmark harness: a beam sweep at fixed length and a
// length sweep at fixed beam, each cell the median of repeated runs with
// warmup excluded, plus per-position step timings for slope fits.
// Decoding is forced to emit exactly src_len tokens (EOS suppressed) so
// timing is length-controlled, and runs pinned to one thread.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aan/decoding.hpp"
#include "aan/kernels.hpp"
#include "aan/model.hpp"

namespace aan {

struct BenchRecord {
  std::string decoder_kind;
  int beam_size = 0;
  int src_len = 0;
  int sentences = 0;
  double total_seconds = 0;
  double seconds_per_sentence = 0;
  double tokens_per_second = 0;
};

inline constexpr const char* kBenchCsvHeader =
    "decoder_kind,beam_size,src_len,sentences,total_seconds,seconds_per_sentence,"
    "tokens_per_second";

inline std::string bench_csv(const std::vector<BenchRecord>& records) {
  std::ostringstream os;
  os << kBenchCsvHeader << "\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%.9f,%.9f,%.3f\n",
                  r.decoder_kind.c_str(), r.beam_size, r.src_len, r.sentences,
                  r.total_seconds, r.seconds_per_sentence, r.tokens_per_second);
    os << buf;
  }
  return os.str();
}

inline std::vector<BenchRecord> parse_bench_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kBenchCsvHeader)
    throw std::invalid_argument("bench csv: bad header line");
  std::vector<BenchRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    BenchRecord r;
    std::string field;
    std::getline(row, r.decoder_kind, ',');
    std::getline(row, field, ',');
    r.beam_size = std::stoi(field);
    std::getline(row, field, ',');
    r.src_len = std::stoi(field);
    std::getline(row, field, ',');
    r.sentences = std::stoi(field);
    std::getline(row, field, ',');
    r.total_seconds = std::stod(field);
    std::getline(row, field, ',');
    r.seconds_per_sentence = std::stod(field);
    if (!std::getline(row, field))
      throw std::invalid_argument("bench csv: short row: " + line);
    r.tokens_per_second = std::stod(field);
    out.push_back(std::move(r));
  }
  return out;
}

struct BenchOptions {
  std::vector<int> beams = {4, 8, 12, 16, 20};
  std::vector<int> lengths = {8, 16, 32, 64, 128, 256};
  int reps = 5;
  int sentences = 2;
  int fixed_len = 256;  // beam sweep runs at this source length
  int fixed_beam = 4;   // length sweep runs at this beam
  BaselineMode baseline_mode = BaselineMode::kCached;
  std::uint64_t seed = 1;
};

namespace bench_detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<std::vector<int>> bench_sources(int count, int len, int src_vocab,
                                                   std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0xBE);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < count; ++s) {
    std::vector<int> src(static_cast<std::size_t>(len));
    for (auto& t : src) t = kFirstContentId + rng.uniform_int(src_vocab - kFirstContentId);
    out.push_back(std::move(src));
  }
  return out;
}

}  // namespace bench_detail

inline double clock_resolution_seconds() {
  using Clock = std::chrono::steady_clock;
  double best = 1.0;
  for (int i = 0; i < 64; ++i) {
    auto t0 = Clock::now();
    auto t1 = Clock::now();
    while (t1 == t0) t1 = Clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

// Ordinary least squares slope of y against its index.
inline double fitted_slope(const std::vector<double>& y) {
  const std::size_t n = y.size();
  if (n < 2) throw std::invalid_argument("fitted_slope: need at least 2 points");
  double xbar = (static_cast<double>(n) - 1.0) / 2.0, ybar = 0;
  for (const double v : y) ybar += v;
  ybar /= static_cast<double>(n);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xbar;
    num += dx * (y[i] - ybar);
    den += dx * dx;
  }
  return num / den;
}

// Full translation time (encode + exact-length beam decode) for a batch
// of sentences; one cell of the sweep, median over reps, warmup excluded.
template <class T>
BenchRecord bench_cell(TransformerModel<T>& model, int beam, int src_len,
                       const BenchOptions& opt, std::vector<std::string>* warnings) {
  kernels::ThreadGuard single_thread(1);
  const auto& cfg = model.config();
  if (src_len + 1 > cfg.max_len)
    throw std::invalid_argument("bench: src_len " + std::to_string(src_len) +
                                " needs max_len > it, model has " +
                                std::to_string(cfg.max_len));
  auto sources =
      bench_detail::bench_sources(opt.sentences, src_len, cfg.src_vocab, opt.seed);

  DecodeOptions dopt;
  dopt.max_len = src_len;
  dopt.beam = beam;
  dopt.suppress_eos = true;
  dopt.baseline_mode = opt.baseline_mode;

  auto run_all = [&] {
    for (const auto& src : sources) {
      auto res = beam_decode(model, src, dopt);
      if (static_cast<int>(res.tokens.size()) != src_len)
        throw std::runtime_error("bench: expected exactly " + std::to_string(src_len) +
                                 " tokens, got " + std::to_string(res.tokens.size()));
    }
  };

  run_all();  // warmup, untimed
  std::vector<double> totals;
  using Clock = std::chrono::steady_clock;
  for (int rep = 0; rep < opt.reps; ++rep) {
    const auto t0 = Clock::now();
    run_all();
    totals.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }

  BenchRecord r;
  r.decoder_kind = decoder_kind_name(cfg.decoder_kind);
  r.beam_size = beam;
  r.src_len = src_len;
  r.sentences = opt.sentences;
  r.total_seconds = bench_detail::median(totals);
  r.seconds_per_sentence = r.total_seconds / opt.sentences;
  r.tokens_per_second =
      static_cast<double>(opt.sentences) * src_len / r.total_seconds;
  if (warnings && r.total_seconds < 20.0 * clock_resolution_seconds())
    warnings->push_back("cell " + r.decoder_kind + " beam=" + std::to_string(beam) +
                        " len=" + std::to_string(src_len) +
                        " unreliable: fewer than 20 timer ticks");
  return r;
}

// (a) beam sweep at fixed length, (b) length sweep at fixed beam, both
// models interleaved per cell so drift hits both kinds equally.
template <class T>
std::vector<BenchRecord> run_bench(TransformerModel<T>& aan_model,
                                   TransformerModel<T>& baseline_model,
                                   const BenchOptions& opt,
                                   std::vector<std::string>* warnings = nullptr) {
  if (aan_model.config().decoder_kind != DecoderKind::kAan ||
      baseline_model.config().decoder_kind != DecoderKind::kSelfAttention)
    throw std::invalid_argument("run_bench: need one model per decoder kind");
  std::vector<BenchRecord> records;
  for (const int beam : opt.beams) {
    records.push_back(bench_cell(baseline_model, beam, opt.fixed_len, opt, warnings));
    records.push_back(bench_cell(aan_model, beam, opt.fixed_len, opt, warnings));
  }
  for (const int len : opt.lengths) {
    records.push_back(bench_cell(baseline_model, opt.fixed_beam, len, opt, warnings));
    records.push_back(bench_cell(aan_model, opt.fixed_beam, len, opt, warnings));
  }
  return records;
}

// Wall time of each emitted position during an exact-length beam decode:
// all live expansions, candidate selection, and cache forks. Median over
// reps; the series the per-step slope is fitted on.
template <class T>
std::vector<double> median_step_times(TransformerModel<T>& model,
                                      const std::vector<int>& src, int beam, int reps,
                                      BaselineMode mode = BaselineMode::kCached) {
  kernels::ThreadGuard single_thread(1);
  const int len = static_cast<int>(src.size());
  auto memory = model.encode(src);
  std::vector<std::vector<double>> samples(static_cast<std::size_t>(len));
  using Clock = std::chrono::steady_clock;

  for (int rep = 0; rep <= reps; ++rep) {  // rep 0 is warmup
    std::vector<BeamHypothesis<T>> hyps;
    hyps.push_back({{kBosId}, 0.0, make_decoder_cache(model, memory, mode), false});
    StepWorkspace<T> ws;
    struct Cand {
      std::size_t parent;
      int token;
      double score;
    };
    for (int t = 0; t < len; ++t) {
      const auto t0 = Clock::now();
      std::vector<Cand> cands;
      for (std::size_t h = 0; h < hyps.size(); ++h) {
        auto logits = decode_step(model, hyps[h].cache, hyps[h].tokens.back(), ws);
        auto logp = detail::log_softmax_vec(logits);
        logp[kEosId] = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < static_cast<int>(logp.size()); ++k) {
          if (!std::isfinite(logp[static_cast<std::size_t>(k)])) continue;
          cands.push_back({h, k, hyps[h].score + logp[static_cast<std::size_t>(k)]});
        }
      }
      std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.token != b.token) return a.token < b.token;
        return a.parent < b.parent;
      });
      const std::size_t keep =
          std::min<std::size_t>(static_cast<std::size_t>(beam), cands.size());
      std::vector<BeamHypothesis<T>> next;
      next.reserve(keep);
      for (std::size_t i = 0; i < keep; ++i) {
        BeamHypothesis<T> child;
        child.tokens = hyps[cands[i].parent].tokens;
        child.tokens.push_back(cands[i].token);
        child.score = cands[i].score;
        child.cache = hyps[cands[i].parent].cache;  // fork copies the state
        next.push_back(std::move(child));
      }
      hyps = std::move(next);
      const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
      if (rep > 0) samples[static_cast<std::size_t>(t)].push_back(dt);
    }
  }

  std::vector<double> medians(static_cast<std::size_t>(len));
  for (int t = 0; t < len; ++t)
    medians[static_cast<std::size_t>(t)] = bench_detail::median(samples[static_cast<std::size_t>(t)]);
  return medians;
}

}  // namespace aan
