// Command-line surface: train, decode, bench, selfcheck.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aan/bench.hpp"
#include "aan/bleu.hpp"
#include "aan/checkpoint.hpp"
#include "aan/decoding.hpp"
#include "aan/selfcheck.hpp"
#include "aan/training.hpp"

namespace {

using namespace aan;

struct TrainArgs {
  std::string task = "copy";
  std::string decoder = "aan";
  bool no_aan_ffn = false;
  bool no_aan_gate = false;
  long steps = 2000;
  int batch_size = 32;
  long warmup = 400;
  long checkpoint_every = 0;
  int d = 64, dff = 256, heads = 4, layers = 2;
  float dropout = 0.1f, label_smoothing = 0.1f;
  int vocab = 20, len_min = 3, len_max = 12, max_len = 256;
  std::uint64_t seed = 1;
  std::string out = "run";
};

template <class T>
int do_train(const TrainArgs& a) {
  ModelConfig cfg;
  cfg.d_model = a.d;
  cfg.d_ff = a.dff;
  cfg.n_heads = a.heads;
  cfg.n_layers = a.layers;
  cfg.src_vocab = a.vocab;
  cfg.tgt_vocab = a.vocab;
  cfg.max_len = a.max_len;
  cfg.dropout = a.dropout;
  cfg.label_smoothing = a.label_smoothing;
  cfg.decoder_kind = decoder_kind_from_name(a.decoder);
  cfg.use_ffn = !a.no_aan_ffn;
  cfg.use_gate = !a.no_aan_gate;
  cfg.seed = a.seed;

  SyntheticTaskSpec task;
  task.kind = task_kind_from_name(a.task);
  task.vocab = a.vocab;
  task.len_min = a.len_min;
  task.len_max = a.len_max;
  task.seed = a.seed;

  TransformerModel<T> model(cfg);
  TrainOptions opt;
  opt.task = task;
  opt.steps = a.steps;
  opt.batch_size = a.batch_size;
  opt.warmup = a.warmup;
  opt.checkpoint_every = a.checkpoint_every;
  opt.out_dir = a.out;
  auto result = train(model, opt);
  if (!result.log.empty())
    std::fprintf(stderr, "trained %ld steps, final loss %.4f; artifacts in %s\n",
                 a.steps, result.final_loss(), a.out.c_str());
  return 0;
}

struct DecodeArgs {
  std::string ckpt;
  std::string input;
  std::string decoder;  // optional expectation
  int beam = 4;
  int max_len = 256;
  bool scores = false;
  std::string bleu_ref;
  std::string baseline_mode = "cached";
  double length_penalty = 0;
  std::uint64_t seed = 1;
};

std::vector<std::vector<int>> read_token_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open input file: " + path);
  std::vector<std::vector<int>> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream row(line);
    std::vector<int> tokens;
    std::string field;
    while (row >> field) {
      try {
        std::size_t used = 0;
        const int tok = std::stoi(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        tokens.push_back(tok);
      } catch (const std::exception&) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": malformed token '" + field + "'");
      }
    }
    if (tokens.empty())
      throw std::runtime_error("line " + std::to_string(line_no) + ": empty line");
    lines.push_back(std::move(tokens));
  }
  return lines;
}

template <class T>
int do_decode(const DecodeArgs& a) {
  auto model = load_checkpoint<T>(a.ckpt);
  if (!a.decoder.empty() &&
      decoder_kind_from_name(a.decoder) != model.config().decoder_kind)
    throw CheckpointError(CheckpointError::Kind::kConfigMismatch,
                          "checkpoint is '" +
                              decoder_kind_name(model.config().decoder_kind) +
                              "' but the run is configured '" + a.decoder + "'");
  const auto inputs = read_token_lines(a.input);

  DecodeOptions opt;
  opt.beam = a.beam;
  opt.max_len = a.max_len;
  opt.length_penalty = a.length_penalty;
  opt.baseline_mode =
      a.baseline_mode == "recompute" ? BaselineMode::kRecompute : BaselineMode::kCached;

  std::vector<std::vector<int>> outputs;
  for (const auto& src : inputs) {
    auto res = a.beam == 1 ? greedy_decode(model, src, opt) : beam_decode(model, src, opt);
    std::ostringstream os;
    for (std::size_t i = 0; i < res.tokens.size(); ++i)
      os << (i ? " " : "") << res.tokens[i];
    if (a.scores) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", res.score);
      os << "\t" << buf;
    }
    std::printf("%s\n", os.str().c_str());
    outputs.push_back(std::move(res.tokens));
  }

  if (!a.bleu_ref.empty()) {
    const auto refs = read_token_lines(a.bleu_ref);
    if (refs.size() != outputs.size())
      throw std::runtime_error("reference count " + std::to_string(refs.size()) +
                               " does not match input count " +
                               std::to_string(outputs.size()));
    std::fprintf(stderr, "BLEU = %.4f\n", corpus_bleu(outputs, refs));
  }
  return 0;
}

struct BenchArgs {
  std::vector<int> beams = {4, 8, 12, 16, 20};
  std::vector<int> lengths = {8, 16, 32, 64, 128, 256};
  int reps = 5;
  int sentences = 2;
  int fixed_len = 256;
  int fixed_beam = 4;
  bool random_weights = false;
  std::string ckpt_aan, ckpt_self;
  std::string baseline_mode = "cached";
  int d = 64, dff = 256, heads = 4, layers = 2, vocab = 64;
  std::uint64_t seed = 1;
  std::string out;
};

template <class T>
int do_bench(const BenchArgs& a) {
  int need_len = a.fixed_len;
  for (int l : a.lengths) need_len = std::max(need_len, l);

  ModelConfig cfg;
  cfg.d_model = a.d;
  cfg.d_ff = a.dff;
  cfg.n_heads = a.heads;
  cfg.n_layers = a.layers;
  cfg.src_vocab = a.vocab;
  cfg.tgt_vocab = a.vocab;
  cfg.max_len = need_len + 1;
  cfg.seed = a.seed;

  std::unique_ptr<TransformerModel<T>> aan_model, base_model;
  if (a.random_weights) {
    cfg.decoder_kind = DecoderKind::kAan;
    aan_model = std::make_unique<TransformerModel<T>>(cfg);
    cfg.decoder_kind = DecoderKind::kSelfAttention;
    base_model = std::make_unique<TransformerModel<T>>(cfg);
  } else {
    if (a.ckpt_aan.empty() || a.ckpt_self.empty())
      throw std::runtime_error(
          "bench needs --ckpt-aan and --ckpt-self, or --random-weights");
    aan_model = std::make_unique<TransformerModel<T>>(load_checkpoint<T>(a.ckpt_aan));
    base_model = std::make_unique<TransformerModel<T>>(load_checkpoint<T>(a.ckpt_self));
    if (aan_model->config().decoder_kind != DecoderKind::kAan)
      throw std::runtime_error("--ckpt-aan does not hold an aan-decoder model");
    if (base_model->config().decoder_kind != DecoderKind::kSelfAttention)
      throw std::runtime_error("--ckpt-self does not hold a self-attention model");
    if (aan_model->config().max_len <= need_len || base_model->config().max_len <= need_len)
      throw std::runtime_error("checkpoint max_len too small for the requested lengths");
  }

  BenchOptions opt;
  opt.beams = a.beams;
  opt.lengths = a.lengths;
  opt.reps = a.reps;
  opt.sentences = a.sentences;
  opt.fixed_len = a.fixed_len;
  opt.fixed_beam = a.fixed_beam;
  opt.baseline_mode =
      a.baseline_mode == "recompute" ? BaselineMode::kRecompute : BaselineMode::kCached;
  opt.seed = a.seed;

  std::vector<std::string> warnings;
  auto records = run_bench(*aan_model, *base_model, opt, &warnings);
  const std::string csv = bench_csv(records);
  if (a.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream os(a.out, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + a.out);
    os << csv;
  }
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequence-to-sequence transformer with an average-attention decoder"};
  app.require_subcommand(1);

  std::string precision = "f32";

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model on a synthetic task");
  train_cmd->set_config("--config");
  train_cmd->add_option("--task", train_args.task, "synthetic task")
      ->check(CLI::IsMember({"copy", "reverse", "lexswap"}));
  train_cmd->add_option("--decoder", train_args.decoder, "decoder kind")
      ->check(CLI::IsMember({"self_attention", "aan"}));
  train_cmd->add_flag("--no-aan-ffn", train_args.no_aan_ffn,
                      "drop the FFN inside the average-attention layer");
  train_cmd->add_flag("--no-aan-gate", train_args.no_aan_gate,
                      "drop the gating inside the average-attention layer");
  train_cmd->add_option("--steps", train_args.steps);
  train_cmd->add_option("--batch-size", train_args.batch_size);
  train_cmd->add_option("--warmup", train_args.warmup);
  train_cmd->add_option("--checkpoint-every", train_args.checkpoint_every);
  train_cmd->add_option("--d", train_args.d, "model dimension");
  train_cmd->add_option("--dff", train_args.dff, "FFN inner dimension");
  train_cmd->add_option("--heads", train_args.heads);
  train_cmd->add_option("--layers", train_args.layers);
  train_cmd->add_option("--dropout", train_args.dropout);
  train_cmd->add_option("--label-smoothing", train_args.label_smoothing);
  train_cmd->add_option("--vocab", train_args.vocab);
  train_cmd->add_option("--len-min", train_args.len_min);
  train_cmd->add_option("--len-max", train_args.len_max);
  train_cmd->add_option("--max-len", train_args.max_len);
  train_cmd->add_option("--seed", train_args.seed);
  train_cmd->add_option("--out", train_args.out, "output directory");
  train_cmd->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));

  DecodeArgs decode_args;
  auto* decode_cmd = app.add_subcommand("decode", "translate token-id lines");
  decode_cmd->set_config("--config");
  decode_cmd->add_option("--ckpt", decode_args.ckpt, "checkpoint file")->required();
  decode_cmd->add_option("--input", decode_args.input, "file of token-id lines")->required();
  decode_cmd->add_option("--decoder", decode_args.decoder,
                         "require the checkpoint to hold this decoder kind")
      ->check(CLI::IsMember({"self_attention", "aan"}));
  decode_cmd->add_option("--beam", decode_args.beam)->check(CLI::PositiveNumber);
  decode_cmd->add_option("--max-len", decode_args.max_len);
  decode_cmd->add_flag("--scores", decode_args.scores, "append tab + score per line");
  decode_cmd->add_option("--bleu", decode_args.bleu_ref,
                         "reference file; corpus BLEU printed to stderr");
  decode_cmd->add_option("--baseline-mode", decode_args.baseline_mode)
      ->check(CLI::IsMember({"cached", "recompute"}));
  decode_cmd->add_option("--length-penalty", decode_args.length_penalty);
  decode_cmd->add_option("--seed", decode_args.seed);
  decode_cmd->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "decode-latency sweeps, CSV output");
  bench_cmd->set_config("--config");
  bench_cmd->add_option("--beams", bench_args.beams)->delimiter(',');
  bench_cmd->add_option("--lengths", bench_args.lengths)->delimiter(',');
  bench_cmd->add_option("--reps", bench_args.reps)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--sentences", bench_args.sentences)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--fixed-len", bench_args.fixed_len);
  bench_cmd->add_option("--fixed-beam", bench_args.fixed_beam);
  bench_cmd->add_flag("--random-weights", bench_args.random_weights,
                      "benchmark fresh random models (latency is weight-independent)");
  bench_cmd->add_option("--ckpt-aan", bench_args.ckpt_aan);
  bench_cmd->add_option("--ckpt-self", bench_args.ckpt_self);
  bench_cmd->add_option("--baseline-mode", bench_args.baseline_mode)
      ->check(CLI::IsMember({"cached", "recompute"}));
  bench_cmd->add_option("--d", bench_args.d);
  bench_cmd->add_option("--dff", bench_args.dff);
  bench_cmd->add_option("--heads", bench_args.heads);
  bench_cmd->add_option("--layers", bench_args.layers);
  bench_cmd->add_option("--vocab", bench_args.vocab);
  bench_cmd->add_option("--seed", bench_args.seed);
  bench_cmd->add_option("--out", bench_args.out, "write CSV here instead of stdout");
  bench_cmd->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));

  bool selfcheck_list = false;
  std::string sabotage = "none";
  std::uint64_t selfcheck_seed = 1;
  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "run the invariant suite");
  selfcheck_cmd->set_config("--config");
  selfcheck_cmd->add_flag("--list", selfcheck_list, "list check names without running");
  selfcheck_cmd->add_option("--sabotage", sabotage,
                            "inject a fault to prove the harness catches it")
      ->check(CLI::IsMember({"none", "mask"}));
  selfcheck_cmd->add_option("--seed", selfcheck_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd)
      return precision == "f64" ? do_train<double>(train_args) : do_train<float>(train_args);
    if (*decode_cmd)
      return precision == "f64" ? do_decode<double>(decode_args)
                                : do_decode<float>(decode_args);
    if (*bench_cmd)
      return precision == "f64" ? do_bench<double>(bench_args) : do_bench<float>(bench_args);
    if (*selfcheck_cmd) {
      if (selfcheck_list) {
        for (const auto& item : selfcheck_items()) std::printf("%s\n", item.name.c_str());
        return 0;
      }
      SelfcheckContext ctx;
      ctx.sabotage = sabotage == "mask" ? Sabotage::kMask : Sabotage::kNone;
      ctx.seed = selfcheck_seed;
      const int failures = run_selfcheck(ctx);
      return failures == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
