// Training pieces: the smoothed loss (values, gradient, pad handling),
// the warmup schedule, Adam, batch generation rules, checkpoint
// averaging, and short training-loop contracts.

#include "aan/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace aan;
using testutil::check;
using testutil::check_near;

namespace {

void nll_examples() {
  const int v = 7;
  // uniform logits, no smoothing: loss = ln V
  auto logits = Tensor<double>::zeros({3, v});
  auto loss = label_smoothed_nll(logits, {1, 2, 3}, 0.0, kPadId);
  check_near(loss.value(), std::log(double(v)), 1e-9, "uniform logits -> ln V");

  // logits = log q: loss equals the entropy of q and the gradient is ~0
  const double eps = 0.1;
  const double uniform = eps / (v - 1);
  const int gold = 3;
  Tensor<double> lq({1, v});
  double entropy = 0;
  for (int k = 0; k < v; ++k) {
    double q = k == kPadId ? 1e-12 : uniform;  // pad gets (numerically) nothing
    if (k == gold) q += 1.0 - eps;
    lq.at(0, k) = std::log(q);
    if (k != kPadId) {
      double qq = uniform + (k == gold ? 1.0 - eps : 0.0);
      entropy -= qq * std::log(qq);
    }
  }
  auto l2 = label_smoothed_nll(lq, {gold}, eps, kPadId);
  check_near(l2.value(), entropy, 1e-6, "loss at log q is the entropy of q");

  lq.set_requires_grad();
  {
    TapeScope<double> scope;
    auto l3 = label_smoothed_nll(lq, {gold}, eps, kPadId);
    backward(l3);
  }
  for (int k = 0; k < v; ++k)
    if (k != kPadId)
      check(std::fabs(lq.grad()[size_t(k)]) < 1e-6, "gradient ~0 at the minimum");

  // all positions pad: zero loss, nothing recorded
  auto lp = Tensor<double>::zeros({2, v}).set_requires_grad();
  {
    TapeScope<double> scope;
    auto l4 = label_smoothed_nll(lp, {kPadId, kPadId}, eps, kPadId);
    check(l4.value() == 0.0, "all-pad loss is 0");
    check(!l4.requires_grad(), "all-pad loss carries no gradient");
  }

  check(testutil::throws([&] { label_smoothed_nll(logits, {1, 2, v}, 0.0, kPadId); }),
        "gold id out of range rejected");
}

void nll_pad_perturbation() {
  Rng rng(8);
  auto logits = Tensor<double>::uniform({4, 9}, -1, 1, rng);
  const std::vector<int> gold = {4, kPadId, 6, kPadId};
  auto base = label_smoothed_nll(logits, gold, 0.1, kPadId).value();
  auto pert = Tensor<double>(logits.shape(), logits.data());
  for (int k = 0; k < 9; ++k) {
    pert.at(1, k) += rng.uniform(-5, 5);
    pert.at(3, k) += rng.uniform(-5, 5);
  }
  auto same = label_smoothed_nll(pert, gold, 0.1, kPadId).value();
  check(base == same, "pad-position logits do not affect the loss");
}

void nll_gradient_check() {
  Rng rng(9);
  auto x0 = Tensor<double>::uniform({5, 8}, -1.5, 1.5, rng);
  const std::vector<int> gold = {4, 2, kPadId, 7, 5};
  auto f = [&](const Tensor<double>& x) {
    return label_smoothed_nll(x, gold, 0.1, kPadId).value();
  };
  Tensor<double> x(x0.shape(), x0.data());
  x.set_requires_grad();
  {
    TapeScope<double> scope;
    auto loss = label_smoothed_nll(x, gold, 0.1, kPadId);
    backward(loss);
  }
  auto fd = finite_difference_grad<double>(f, x0);
  const double err = testutil::max_rel_diff(x.grad(), fd.data(), 1e-5);
  check(err < 1e-4, "smoothed loss gradient vs finite differences, rel err " +
                        std::to_string(err));
}

void schedule_examples() {
  // the two min-arms meet at the knee
  const double at_knee = lr_schedule(400, 64, 400);
  check_near(at_knee, 0.125 * 0.05, 1e-12, "d=64 warmup=400 knee value");
  check_near(std::pow(64.0, -0.5) * std::pow(400.0, -0.5), at_knee, 1e-15,
             "knee equals d^-1/2 * warmup^-1/2");

  // strictly increasing before, strictly decreasing after, max at knee
  double prev = 0;
  for (long s = 1; s <= 400; ++s) {
    const double lr = lr_schedule(s, 64, 400);
    check(lr > prev, "schedule strictly increasing in warmup");
    prev = lr;
  }
  for (long s = 401; s <= 800; ++s) {
    const double lr = lr_schedule(s, 64, 400);
    check(lr < prev, "schedule strictly decreasing after warmup");
    prev = lr;
  }
  for (long s : {1L, 10L, 399L, 401L, 4000L})
    check(lr_schedule(s, 64, 400) <= at_knee, "knee is the maximum");

  check(testutil::throws([] { lr_schedule(0, 64, 400); }), "step 0 rejected");
}

void adam_examples() {
  // zero grads leave parameters untouched
  auto w = Tensor<float>({3}, {1, 2, 3}).set_requires_grad();
  std::vector<Tensor<float>*> params = {&w};
  AdamState<float> st;
  st.init(params);
  adam_step(params, st, 0.1);
  check(w.at(0) == 1 && w.at(1) == 2 && w.at(2) == 3, "zero gradient, no movement");

  // first step with grad 1: update ~= -lr
  auto w2 = Tensor<double>({1}, {0.5}).set_requires_grad();
  std::vector<Tensor<double>*> p2 = {&w2};
  AdamState<double> st2;
  st2.init(p2);
  w2.grad()[0] = 1.0;
  adam_step(p2, st2, 0.01);
  check_near(w2.at(0), 0.5 - 0.01, 1e-8, "t=1 bias-corrected step is ~ -lr");
  check(st2.t == 1, "step counter advanced");

  // determinism: identical runs give identical parameters
  auto run = [] {
    Rng rng(4);
    auto w3 = Tensor<float>::uniform({8}, -1, 1, rng).set_requires_grad();
    std::vector<Tensor<float>*> p3 = {&w3};
    AdamState<float> s;
    s.init(p3);
    for (int i = 0; i < 20; ++i) {
      for (size_t k = 0; k < 8; ++k)
        w3.grad()[k] = 0.1f * w3.at(int(k)) + 0.01f * float(i);
      adam_step(p3, s, 1e-3);
      w3.zero_grad();
    }
    return w3;
  };
  auto r1 = run(), r2 = run();
  check(testutil::max_abs_diff(r1.data(), r2.data()) == 0, "adam is deterministic");

  // non-finite gradient aborts before mutating anything
  auto w4 = Tensor<float>({2}, {1, 1}).set_requires_grad();
  std::vector<Tensor<float>*> p4 = {&w4};
  AdamState<float> s4;
  s4.init(p4);
  w4.grad()[0] = std::numeric_limits<float>::quiet_NaN();
  check(testutil::throws([&] { adam_step(p4, s4, 0.1); }), "NaN gradient aborts step");
  check(w4.at(0) == 1.0f && s4.t == 0, "aborted step leaves state untouched");
}

void batch_examples() {
  SyntheticTaskSpec spec;
  spec.vocab = 14;  // content ids 4..13, count 10
  spec.len_min = 3;
  spec.len_max = 3;

  spec.kind = TaskKind::kCopy;
  check(task_target(spec, {5, 7, 9}) == std::vector<int>({5, 7, 9}), "copy rule");
  spec.kind = TaskKind::kReverse;
  check(task_target(spec, {5, 7, 9}) == std::vector<int>({9, 7, 5}), "reverse rule");
  spec.kind = TaskKind::kLexswap;
  check(task_target(spec, {5, 7, 9}) == std::vector<int>({10, 8, 6}),
        "lexswap rule: reverse then shift");
  // cipher wraps around the content range
  check(task_target(spec, {13}) == std::vector<int>({4}), "lexswap wraps to the base id");

  // batch layout: BOS-prefixed input, EOS-suffixed output, masks align
  spec.kind = TaskKind::kCopy;
  spec.len_min = 2;
  spec.len_max = 5;
  Rng rng(17);
  auto b = generate_batch(spec, 6, rng);
  check(b.size == 6, "batch size");
  for (int i = 0; i < b.size; ++i) {
    auto src = b.src_seq(i);
    auto tin = b.tgt_in_seq(i);
    auto tout = b.tgt_out_seq(i);
    check(!src.empty() && int(src.size()) >= 2 && int(src.size()) <= 5, "length range");
    check(tin.size() == tout.size(), "shifted pair same length");
    check(tin[0] == kBosId, "target input starts with BOS");
    check(tout.back() == kEosId, "target output ends with EOS");
    for (size_t j = 1; j < tin.size(); ++j)
      check(tin[j] == tout[j - 1], "input is output shifted right");
    for (int t : src) check(t >= kFirstContentId && t < spec.vocab, "content range");
    // pad mask matches pad ids
    for (int j = 0; j < b.src_cols; ++j)
      check((b.src[size_t(i) * b.src_cols + j] == kPadId) ==
                (b.src_mask[size_t(i) * b.src_cols + j] == 0),
            "src mask marks exactly the pads");
  }

  // determinism
  Rng r1(5), r2(5);
  auto b1 = generate_batch(spec, 4, r1);
  auto b2 = generate_batch(spec, 4, r2);
  check(b1.src == b2.src && b1.tgt_in == b2.tgt_in && b1.tgt_out == b2.tgt_out,
        "same seed, same batch");

  SyntheticTaskSpec bad;
  bad.vocab = 5;  // fewer than specials + 2
  check(testutil::throws([&] { generate_batch(bad, 2, r1); }), "impossible spec rejected");
}

ModelConfig tiny_train_config(DecoderKind kind) {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.d_ff = 64;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.src_vocab = 12;
  cfg.tgt_vocab = 12;
  cfg.max_len = 16;
  cfg.decoder_kind = kind;
  cfg.dropout = 0.0f;
  cfg.seed = 11;
  return cfg;
}

void train_contracts() {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "aan_train_test";
  fs::remove_all(dir);

  SyntheticTaskSpec task;
  task.kind = TaskKind::kCopy;
  task.vocab = 12;
  task.len_min = 2;
  task.len_max = 5;
  task.seed = 3;

  // steps=0: initial checkpoint only, empty log body
  {
    TransformerModel<float> model(tiny_train_config(DecoderKind::kAan));
    TrainOptions opt;
    opt.task = task;
    opt.steps = 0;
    opt.out_dir = (dir / "zero").string();
    auto res = train(model, opt);
    check(res.log.empty(), "steps=0 empty log");
    check(fs::exists(dir / "zero" / "ckpt-0.aant"), "initial checkpoint written");
    std::ifstream is(dir / "zero" / "log.csv");
    std::string header, extra;
    std::getline(is, header);
    check(header == "step,loss,lr,tokens_per_sec", "log header");
    check(!std::getline(is, extra), "no data rows");
  }

  // short run: loss starts near ln V and decreases
  {
    TransformerModel<float> model(tiny_train_config(DecoderKind::kAan));
    TrainOptions opt;
    opt.task = task;
    opt.steps = 60;
    opt.batch_size = 8;
    opt.warmup = 20;
    auto res = train(model, opt);
    check(res.step_losses.size() == 60, "one loss per step");
    const double init_loss = res.step_losses[0];
    const double lnv = std::log(12.0);
    check(std::fabs(init_loss - lnv) < 0.1 * lnv,
          "initial loss within 10% of ln V, got " + std::to_string(init_loss));
    check(res.final_loss(10) < init_loss - 0.3,
          "loss decreased after 60 steps: " + std::to_string(res.final_loss(10)));
  }

  // determinism: identical options give identical loss traces and params
  {
    auto once = [&] {
      TransformerModel<float> model(tiny_train_config(DecoderKind::kAan));
      TrainOptions opt;
      opt.task = task;
      opt.steps = 12;
      opt.batch_size = 4;
      opt.warmup = 10;
      auto res = train(model, opt);
      std::vector<float> flat;
      for (auto* t : model.parameter_tensors())
        flat.insert(flat.end(), t->data().begin(), t->data().end());
      return std::make_pair(res.step_losses, flat);
    };
    auto a = once(), b = once();
    check(a.first == b.first, "same seed: identical loss sequence");
    check(a.second == b.second, "same seed: bit-identical parameters");
  }

  fs::remove_all(dir);
}

void averaging_examples() {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "aan_avg_test";
  fs::create_directories(dir);
  auto cfg = tiny_train_config(DecoderKind::kAan);

  // single checkpoint: identical model
  TransformerModel<float> base(cfg);
  const std::string p0 = (dir / "a.aant").string();
  save_checkpoint(base, p0);
  auto one = average_checkpoints<float>({p0});
  auto pa = base.parameters(), pb = one.parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    check(pa[i].second->data() == pb[i].second->data(), "single-file average is identity");

  // p and -p average to zero
  TransformerModel<float> neg(cfg);
  for (auto* t : neg.parameter_tensors())
    for (auto& v : t->data()) v = -v;
  const std::string p1 = (dir / "b.aant").string();
  save_checkpoint(neg, p1);
  auto zero = average_checkpoints<float>({p0, p1});
  for (auto* t : zero.parameter_tensors())
    for (float v : t->data()) check(v == 0.0f, "p and -p average to zero");

  // five random checkpoints against a brute-force mean
  std::vector<std::string> paths;
  std::vector<std::vector<double>> sums;
  Rng rng(33);
  for (int c = 0; c < 5; ++c) {
    TransformerModel<float> m(cfg);
    auto params = m.parameters();
    if (sums.empty()) sums.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      auto& data = params[i].second->data();
      if (sums[i].empty()) sums[i].assign(data.size(), 0.0);
      for (auto& v : data) v = float(rng.uniform(-1, 1));
      for (size_t k = 0; k < data.size(); ++k) sums[i][k] += data[k];
    }
    const std::string p = (dir / ("r" + std::to_string(c) + ".aant")).string();
    save_checkpoint(m, p);
    paths.push_back(p);
  }
  auto avg = average_checkpoints<float>(paths);
  auto pavg = avg.parameters();
  double worst = 0;
  for (size_t i = 0; i < pavg.size(); ++i) {
    const auto& data = pavg[i].second->data();
    for (size_t k = 0; k < data.size(); ++k)
      worst = std::max(worst, std::fabs(double(data[k]) - sums[i][k] / 5.0));
  }
  check(worst < 1e-7, "five-way average matches brute force, worst " + std::to_string(worst));

  // config mismatch across files
  auto cfg2 = cfg;
  cfg2.decoder_kind = DecoderKind::kSelfAttention;
  TransformerModel<float> other(cfg2);
  const std::string p2 = (dir / "other.aant").string();
  save_checkpoint(other, p2);
  check(testutil::throws([&] { average_checkpoints<float>({p0, p2}); }),
        "averaging across configs rejected");

  fs::remove_all(dir);
}

}  // namespace

int main() {
  nll_examples();
  nll_pad_perturbation();
  nll_gradient_check();
  schedule_examples();
  adam_examples();
  batch_examples();
  train_contracts();
  averaging_examples();
  return testutil::summarize("test_training");
}
