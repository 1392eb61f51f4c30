// Drives the installed binary end to end: artifact contracts, usage
// errors, determinism of logged columns, decode I/O, bench CSV format,
// config-file precedence, and the selfcheck sabotage mode.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aan/bench.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using testutil::check;

namespace {

std::string g_binary;
fs::path g_dir;

struct RunResult {
  int exit_code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RunResult run(const std::string& args) {
  const auto out_path = g_dir / "stdout.txt";
  const auto err_path = g_dir / "stderr.txt";
  const std::string cmd =
      g_binary + " " + args + " > " + out_path.string() + " 2> " + err_path.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = raw == -1 ? -1 : WEXITSTATUS(raw);
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

// step,loss,lr columns only; tokens_per_sec is wall clock
std::string deterministic_columns(const std::string& csv) {
  std::istringstream is(csv);
  std::ostringstream os;
  std::string line;
  while (std::getline(is, line)) {
    const auto last_comma = line.rfind(',');
    os << line.substr(0, last_comma) << "\n";
  }
  return os.str();
}

const char* kTinyTrain =
    " --steps 40 --d 32 --dff 64 --heads 2 --layers 1 --vocab 12 --len-min 2"
    " --len-max 4 --warmup 10 --batch-size 4";

void train_artifacts_and_determinism() {
  auto r1 = run("train --task copy --decoder aan" + std::string(kTinyTrain) +
                " --seed 7 --out " + (g_dir / "run_a").string());
  check(r1.exit_code == 0, "train exits 0: " + r1.err);
  check(fs::exists(g_dir / "run_a" / "log.csv"), "log.csv exists");
  check(fs::exists(g_dir / "run_a" / "ckpt-0.aant"), "initial checkpoint exists");
  check(fs::exists(g_dir / "run_a" / "ckpt-40.aant"), "final checkpoint exists");

  const std::string log1 = slurp(g_dir / "run_a" / "log.csv");
  check(log1.rfind("step,loss,lr,tokens_per_sec\n", 0) == 0, "train log header");

  auto r2 = run("train --task copy --decoder aan" + std::string(kTinyTrain) +
                " --seed 7 --out " + (g_dir / "run_b").string());
  check(r2.exit_code == 0, "second train exits 0");
  const std::string log2 = slurp(g_dir / "run_b" / "log.csv");
  check(deterministic_columns(log1) == deterministic_columns(log2),
        "same seed: identical step/loss/lr columns");

  check(slurp(g_dir / "run_a" / "ckpt-40.aant") == slurp(g_dir / "run_b" / "ckpt-40.aant"),
        "same seed: bit-identical final checkpoints");

  // unknown decoder kind: usage error naming the valid ones
  auto bad = run("train --task copy --decoder rnn" + std::string(kTinyTrain) +
                 " --out " + (g_dir / "run_c").string());
  check(bad.exit_code != 0, "unknown decoder rejected");
  check(bad.err.find("self_attention") != std::string::npos &&
            bad.err.find("aan") != std::string::npos,
        "error names the valid decoder kinds");
}

void decode_io() {
  const auto ckpt = (g_dir / "run_a" / "ckpt-40.aant").string();

  std::ofstream(g_dir / "in.txt") << "5 7 9\n6 4\n";
  auto r = run("decode --ckpt " + ckpt + " --input " + (g_dir / "in.txt").string() +
               " --beam 4");
  check(r.exit_code == 0, "decode exits 0: " + r.err);
  int lines = 0;
  for (char c : r.out)
    if (c == '\n') ++lines;
  check(lines == 2, "one output line per input line");

  // --scores appends tab + score
  auto rs = run("decode --ckpt " + ckpt + " --input " + (g_dir / "in.txt").string() +
                " --beam 2 --scores");
  check(rs.exit_code == 0, "decode --scores exits 0");
  std::istringstream ss(rs.out);
  std::string line;
  while (std::getline(ss, line))
    check(line.find('\t') != std::string::npos, "score column present");

  // --bleu prints to stderr
  auto rb = run("decode --ckpt " + ckpt + " --input " + (g_dir / "in.txt").string() +
                " --bleu " + (g_dir / "in.txt").string());
  check(rb.exit_code == 0, "decode --bleu exits 0");
  check(rb.err.find("BLEU") != std::string::npos, "BLEU reported on stderr");

  // empty input file: no output, exit 0
  std::ofstream(g_dir / "empty.txt");
  auto re = run("decode --ckpt " + ckpt + " --input " + (g_dir / "empty.txt").string());
  check(re.exit_code == 0 && re.out.empty(), "empty input gives empty output, exit 0");

  // malformed token: error names the line
  std::ofstream(g_dir / "badin.txt") << "5 7\n6 x 4\n";
  auto rm = run("decode --ckpt " + ckpt + " --input " + (g_dir / "badin.txt").string());
  check(rm.exit_code != 0, "malformed input rejected");
  check(rm.err.find("line 2") != std::string::npos, "error names line 2: " + rm.err);

  // decoder-kind expectation mismatch
  auto rk = run("decode --ckpt " + ckpt + " --input " + (g_dir / "in.txt").string() +
                " --decoder self_attention");
  check(rk.exit_code != 0 && rk.err.find("self_attention") != std::string::npos,
        "checkpoint kind mismatch rejected");
}

void bench_csv_contract() {
  auto r = run(
      "bench --random-weights --beams 1,2 --lengths 4,8 --reps 2 --sentences 1"
      " --fixed-len 8 --fixed-beam 1 --d 32 --dff 64 --heads 2 --layers 1 --vocab 16"
      " --seed 3");
  check(r.exit_code == 0, "bench exits 0: " + r.err);
  check(r.out.rfind(std::string(aan::kBenchCsvHeader) + "\n", 0) == 0,
        "bench CSV header exact");
  auto records = aan::parse_bench_csv(r.out);
  check(records.size() == 2 * 2 + 2 * 2, "one record per kind per cell");
  for (const auto& rec : records) {
    check(rec.decoder_kind == "aan" || rec.decoder_kind == "self_attention",
          "decoder kind column");
    check(rec.total_seconds > 0 && rec.seconds_per_sentence > 0, "positive timings");
    check(std::abs(rec.seconds_per_sentence - rec.total_seconds / rec.sentences) < 1e-12,
          "per-sentence column consistent");
  }
  // round-trip: parse -> emit -> identical bytes
  check(aan::bench_csv(records) == r.out, "bench CSV round-trips losslessly");

  // missing checkpoint flags
  auto rmiss = run("bench --lengths 4 --beams 1 --reps 1");
  check(rmiss.exit_code != 0 && rmiss.err.find("random-weights") != std::string::npos,
        "bench without checkpoints or --random-weights rejected");
}

void config_file_precedence() {
  std::ofstream(g_dir / "train.cfg") << "# tiny run\n"
                                     << "steps=6\n"
                                     << "seed=9\n"
                                     << "batch-size=2\n"
                                     << "d=32\ndff=64\nheads=2\nlayers=1\n"
                                     << "vocab=12\nlen-min=2\nlen-max=3\nwarmup=5\n";
  // flag overrides config: seed 11 beats seed 9; steps comes from the file
  auto r = run("train --task copy --config " + (g_dir / "train.cfg").string() +
               " --seed 11 --out " + (g_dir / "run_cfg").string());
  check(r.exit_code == 0, "config-file train exits 0: " + r.err);
  const std::string log = slurp(g_dir / "run_cfg" / "log.csv");
  check(log.find("\n6,") != std::string::npos, "steps taken from config file");
  check(fs::exists(g_dir / "run_cfg" / "ckpt-6.aant"), "final checkpoint at config steps");

  auto r2 = run("train --task copy --config " + (g_dir / "train.cfg").string() +
                " --seed 11 --out " + (g_dir / "run_cfg2").string());
  check(slurp(g_dir / "run_cfg" / "ckpt-6.aant") == slurp(g_dir / "run_cfg2" / "ckpt-6.aant"),
        "flag seed override applied consistently");
}

void selfcheck_cli() {
  auto rl = run("selfcheck --list");
  check(rl.exit_code == 0, "selfcheck --list exits 0");
  check(rl.out.find("mask_identity") != std::string::npos, "--list names checks");
  check(rl.out.find("PASS") == std::string::npos, "--list does not run checks");

  auto rs = run("selfcheck");
  check(rs.exit_code == 0, "fresh selfcheck passes");
  check(rs.out.find("FAIL") == std::string::npos, "no failures reported");

  auto rb = run("selfcheck --sabotage mask");
  check(rb.exit_code != 0, "sabotaged selfcheck exits nonzero");
  check(rb.out.find("FAIL: mask_identity") != std::string::npos,
        "sabotage trips the mask check");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: test_cli <path-to-aan-binary>\n");
    return 2;
  }
  g_binary = argv[1];
  g_dir = fs::temp_directory_path() / "aan_cli_test";
  fs::remove_all(g_dir);
  fs::create_directories(g_dir);

  train_artifacts_and_determinism();
  decode_io();
  bench_csv_contract();
  config_file_precedence();
  selfcheck_cli();

  fs::remove_all(g_dir);
  return testutil::summarize("test_cli");
}
