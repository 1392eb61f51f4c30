// Whole-model contracts: encode/decode shapes and determinism, causality
// through the full decoder stack, parallel-vs-incremental equivalence for
// both decoder kinds, checkpoint round trips and error paths, tied
// embeddings, and a whole-model gradient check.

#include "aan/model.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "aan/checkpoint.hpp"
#include "test_util.hpp"

using namespace aan;
using testutil::check;
using testutil::check_near;

namespace {

ModelConfig small_config(DecoderKind kind) {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.src_vocab = 13;
  cfg.tgt_vocab = 11;
  cfg.max_len = 40;
  cfg.decoder_kind = kind;
  cfg.seed = 99;
  return cfg;
}

std::vector<int> random_tokens(int n, int vocab, Rng& rng) {
  std::vector<int> t(static_cast<size_t>(n));
  for (auto& x : t) x = rng.uniform_int(vocab);
  return t;
}

void encode_contracts() {
  auto cfg = small_config(DecoderKind::kAan);
  TransformerModel<float> model(cfg);

  auto one = model.encode({5});
  check(one.rows() == 1 && one.cols() == cfg.d_model, "encode n=1 shape");
  check(all_finite(one), "encode n=1 finite");

  Rng rng(1);
  auto tokens = random_tokens(9, cfg.src_vocab, rng);
  auto a = model.encode(tokens);
  auto b = model.encode(tokens);
  check(testutil::max_abs_diff(a.data(), b.data()) == 0, "encode deterministic in eval");

  // positional encodings break permutation symmetry
  auto perm = tokens;
  std::swap(perm[0], perm[5]);
  if (perm != tokens) {
    auto c = model.encode(perm);
    check(testutil::max_abs_diff(a.data(), c.data()) > 1e-6,
          "permuting source tokens changes the encoding");
  }

  check(testutil::throws([&] { model.encode({cfg.src_vocab}); }),
        "out-of-range source id rejected");
  check(testutil::throws([&] {
          model.encode(std::vector<int>(static_cast<size_t>(cfg.max_len + 1), 1));
        }),
        "over-long source rejected");
  check(testutil::throws([&] { model.encode({}); }), "empty source rejected");
}

void decode_parallel_contracts() {
  for (auto kind : {DecoderKind::kAan, DecoderKind::kSelfAttention}) {
    auto cfg = small_config(kind);
    TransformerModel<float> model(cfg);
    Rng rng(2);
    auto src = random_tokens(7, cfg.src_vocab, rng);
    auto memory = model.encode(src);

    auto tgt = random_tokens(8, cfg.tgt_vocab, rng);
    auto logits = model.decode_parallel(tgt, memory);
    check(logits.rows() == 8 && logits.cols() == cfg.tgt_vocab, "logits shape");

    // rows of softmax(logits) are distributions
    auto probs = softmax_rows(logits);
    for (int i = 0; i < probs.rows(); ++i) {
      double s = 0;
      for (int j = 0; j < probs.cols(); ++j) s += probs.at(i, j);
      check(std::fabs(s - 1.0) < 1e-5, "softmaxed logits row sums to 1");
    }

    // causality: changing tokens after position j leaves rows <= j
    // bit-identical through the whole stack
    const int j = 3;
    auto tgt2 = tgt;
    for (size_t p = j + 1; p < tgt2.size(); ++p)
      tgt2[p] = (tgt2[p] + 1 + static_cast<int>(p)) % cfg.tgt_vocab;
    auto logits2 = model.decode_parallel(tgt2, memory);
    for (int r = 0; r <= j; ++r)
      for (int c = 0; c < cfg.tgt_vocab; ++c)
        check(logits.at(r, c) == logits2.at(r, c),
              "decoder causality exact (" + decoder_kind_name(kind) + ")");
  }
}

void decode_step_contracts() {
  for (auto kind : {DecoderKind::kAan, DecoderKind::kSelfAttention}) {
    auto cfg = small_config(kind);
    TransformerModel<float> model(cfg);
    Rng rng(3);
    auto src = random_tokens(6, cfg.src_vocab, rng);
    auto memory = model.encode(src);
    auto tgt = random_tokens(20, cfg.tgt_vocab, rng);

    // m=1: one step from a fresh cache equals the parallel single-token pass
    {
      auto cache = make_decoder_cache(model, memory);
      StepWorkspace<float> ws;
      auto step_logits = decode_step(model, cache, tgt[0], ws);
      auto par = model.decode_parallel({tgt[0]}, memory);
      double worst = 0;
      for (int c = 0; c < cfg.tgt_vocab; ++c)
        worst = std::max(worst, std::fabs(double(step_logits[size_t(c)]) - double(par.at(0, c))));
      check(worst < 1e-5, "first step equals single-token parallel pass");
    }

    // 20 steps match the teacher-forced rows
    auto parallel = model.decode_parallel(tgt, memory);
    auto cache = make_decoder_cache(model, memory);
    StepWorkspace<float> ws;
    double worst = 0;
    for (int j = 0; j < 20; ++j) {
      auto logits = decode_step(model, cache, tgt[size_t(j)], ws);
      for (int c = 0; c < cfg.tgt_vocab; ++c)
        worst = std::max(worst, std::fabs(double(logits[size_t(c)]) - double(parallel.at(j, c))));
      if (kind == DecoderKind::kAan) {
        for (const auto& st : cache.aan_states) {
          check(static_cast<int>(st.running_sum.size()) == cfg.d_model,
                "aan state stays one d-vector");
          check(st.count == j + 1, "aan state count tracks position");
        }
      }
    }
    check(worst < 1e-4,
          "stepwise logits match parallel (" + decoder_kind_name(kind) + "), worst " +
              std::to_string(worst));
    check(cache.pos == 20, "cache position advanced");

    // recompute-mode baseline brackets the same outputs
    if (kind == DecoderKind::kSelfAttention) {
      auto rc = make_decoder_cache(model, memory, BaselineMode::kRecompute);
      StepWorkspace<float> ws2;
      double worst2 = 0;
      for (int j = 0; j < 8; ++j) {
        auto logits = decode_step(model, rc, tgt[size_t(j)], ws2);
        for (int c = 0; c < cfg.tgt_vocab; ++c)
          worst2 = std::max(worst2, std::fabs(double(logits[size_t(c)]) - double(parallel.at(j, c))));
      }
      check(worst2 < 1e-5, "recompute baseline matches parallel");
    }

    check(testutil::throws([&] {
            auto c2 = make_decoder_cache(model, memory);
            StepWorkspace<float> w2;
            decode_step(model, c2, cfg.tgt_vocab, w2);
          }),
          "decode_step rejects out-of-range token");
  }

  // cache/model kind mismatch
  {
    TransformerModel<float> aan_model(small_config(DecoderKind::kAan));
    TransformerModel<float> base_model(small_config(DecoderKind::kSelfAttention));
    Rng rng(5);
    auto src = random_tokens(4, 13, rng);
    auto cache = make_decoder_cache(aan_model, aan_model.encode(src));
    StepWorkspace<float> ws;
    check(testutil::throws([&] { decode_step(base_model, cache, 1, ws); }),
          "cache kind mismatch rejected");
  }
}

void determinism_and_tying() {
  auto cfg = small_config(DecoderKind::kAan);
  TransformerModel<float> m1(cfg), m2(cfg);
  auto p1 = m1.parameters(), p2 = m2.parameters();
  check(p1.size() == p2.size(), "same parameter count");
  for (size_t i = 0; i < p1.size(); ++i)
    check(testutil::max_abs_diff(p1[i].second->data(), p2[i].second->data()) == 0,
          "same seed gives bit-identical init: " + p1[i].first);

  // tied: output projection *is* the target embedding
  check(&m1.output_projection() == &m1.target_embedding() ||
            m1.output_projection().impl() == m1.target_embedding().impl(),
        "tied projection shares storage");
  m1.output_projection().data()[0] += 1.0f;
  check(m1.target_embedding().data()[0] == m2.target_embedding().data()[0] + 1.0f,
        "mutation through one view is visible through the other");

  // untied: separate parameter appears
  auto cfg_untied = cfg;
  cfg_untied.tie_target_embeddings = false;
  TransformerModel<float> mu(cfg_untied);
  check(mu.parameters().size() == p1.size() + 1, "untied model has an extra tensor");
  check(mu.output_projection().impl() != mu.target_embedding().impl(),
        "untied projection is separate storage");
}

// Gradient of sum(logits) for a tiny model, every parameter vs central
// differences.
void whole_model_gradient_check() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.src_vocab = 11;
  cfg.tgt_vocab = 11;
  cfg.max_len = 16;
  cfg.seed = 7;
  for (auto kind : {DecoderKind::kAan, DecoderKind::kSelfAttention}) {
    cfg.decoder_kind = kind;
    TransformerModel<double> model(cfg);
    const std::vector<int> src = {4, 7, 2, 9};
    const std::vector<int> tgt = {1, 5, 6};

    auto forward = [&]() {
      auto memory = model.encode(src);
      return sum_all(model.decode_parallel(tgt, memory));
    };

    zero_grads(model.parameter_tensors());
    {
      TapeScope<double> scope;
      auto loss = forward();
      backward(loss);
    }
    for (auto& [name, t] : model.parameters()) {
      Tensor<double> snapshot(t->shape(), t->data());
      auto f = [&](const Tensor<double>& x) {
        auto saved = t->data();
        t->data() = x.data();
        const double v = forward().value();
        t->data() = saved;
        return v;
      };
      auto fd = finite_difference_grad<double>(f, snapshot, 1e-5);
      const double err = testutil::max_rel_diff(t->grad(), fd.data(), 1e-4);
      check(err < 1e-3, "whole-model grad " + decoder_kind_name(kind) + " " + name +
                            " rel err " + std::to_string(err));
    }
  }
}

void checkpoint_round_trip() {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "aan_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.aant").string();

  auto cfg = small_config(DecoderKind::kAan);
  TransformerModel<float> model(cfg);
  // make the parameters distinguishable from a fresh init
  Rng rng(123);
  for (auto* t : model.parameter_tensors())
    for (auto& v : t->data()) v += float(rng.uniform(-0.05, 0.05));
  save_checkpoint(model, path);

  auto loaded = load_checkpoint<float>(path);
  check(loaded.config() == cfg, "config survives the round trip");
  auto pa = model.parameters(), pb = loaded.parameters();
  for (size_t i = 0; i < pa.size(); ++i) {
    const auto& a = pa[i].second->data();
    const auto& b = pb[i].second->data();
    bool same = a.size() == b.size();
    for (size_t k = 0; same && k < a.size(); ++k) same = a[k] == b[k];
    check(same, "bitwise round trip: " + pa[i].first);
  }

  // corrupt the magic
  {
    std::string bytes;
    {
      std::ifstream is(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(is), {});
    }
    auto bad = bytes;
    bad[0] = 'X';
    const std::string bad_path = (dir / "bad_magic.aant").string();
    std::ofstream(bad_path, std::ios::binary).write(bad.data(), long(bad.size()));
    try {
      load_checkpoint<float>(bad_path);
      check(false, "bad magic should throw");
    } catch (const CheckpointError& e) {
      check(e.kind() == CheckpointError::Kind::kBadMagic, "bad magic kind");
    }

    // version mismatch
    auto badv = bytes;
    badv[4] = 9;
    const std::string badv_path = (dir / "bad_version.aant").string();
    std::ofstream(badv_path, std::ios::binary).write(badv.data(), long(badv.size()));
    try {
      load_checkpoint<float>(badv_path);
      check(false, "bad version should throw");
    } catch (const CheckpointError& e) {
      check(e.kind() == CheckpointError::Kind::kBadVersion, "bad version kind");
    }

    // truncated file
    auto trunc = bytes.substr(0, bytes.size() / 2);
    const std::string trunc_path = (dir / "trunc.aant").string();
    std::ofstream(trunc_path, std::ios::binary).write(trunc.data(), long(trunc.size()));
    try {
      load_checkpoint<float>(trunc_path);
      check(false, "truncated file should throw");
    } catch (const CheckpointError& e) {
      check(e.kind() == CheckpointError::Kind::kTruncated, "truncated kind");
    }

    // shape disagreement: corrupt the first tensor's first dim (it sits
    // right after the tensor count, name, and rank)
    auto bads = bytes;
    // find the first tensor name ("src_embed") and clobber the dim after it
    const auto name_pos = bads.find("src_embed");
    check(name_pos != std::string::npos, "found first tensor name");
    const size_t dim_pos = name_pos + std::string("src_embed").size() + 1;  // + rank u8
    bads[dim_pos] = char(bads[dim_pos] + 1);
    const std::string bads_path = (dir / "bad_shape.aant").string();
    std::ofstream(bads_path, std::ios::binary).write(bads.data(), long(bads.size()));
    try {
      load_checkpoint<float>(bads_path);
      check(false, "shape disagreement should throw");
    } catch (const CheckpointError& e) {
      check(e.kind() == CheckpointError::Kind::kBadShape, "bad shape kind");
    }
  }

  // decoder-kind mismatch against a configured run
  auto other = small_config(DecoderKind::kSelfAttention);
  try {
    require_config_match(peek_checkpoint_config(path), other);
    check(false, "kind mismatch should throw");
  } catch (const CheckpointError& e) {
    check(e.kind() == CheckpointError::Kind::kConfigMismatch, "config mismatch kind");
  }

  fs::remove_all(dir);
}

void config_validation() {
  ModelConfig cfg = small_config(DecoderKind::kAan);
  cfg.n_heads = 3;  // 16 % 3 != 0
  check(testutil::throws([&] { TransformerModel<float> m(cfg); }),
        "indivisible heads rejected");
  auto cfg2 = small_config(DecoderKind::kAan);
  cfg2.d_model = 15;
  check(testutil::throws([&] { TransformerModel<float> m(cfg2); }), "odd d rejected");
  auto paper = ModelConfig::paper();
  paper.validate();
  check(paper.d_model == 512 && paper.d_ff == 2048 && paper.n_heads == 8 &&
            paper.n_layers == 6,
        "paper preset dimensions");
}

}  // namespace

int main() {
  encode_contracts();
  decode_parallel_contracts();
  decode_step_contracts();
  determinism_and_tying();
  whole_model_gradient_check();
  checkpoint_round_trip();
  config_validation();
  return testutil::summarize("test_model");
}
