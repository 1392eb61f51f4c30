#include "aan/tasks.hpp"

#include <algorithm>
#include <stdexcept>

namespace aan {

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::kCopy;
  if (name == "reverse") return TaskKind::kReverse;
  if (name == "lexswap") return TaskKind::kLexswap;
  throw std::invalid_argument("unknown task '" + name +
                              "' (valid: copy, reverse, lexswap)");
}

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kLexswap: return "lexswap";
  }
  return "?";
}

void SyntheticTaskSpec::validate() const {
  if (vocab < kFirstContentId + 2)
    throw std::invalid_argument("task vocab must be at least " +
                                std::to_string(kFirstContentId + 2) +
                                " (specials + 2 content tokens), got " +
                                std::to_string(vocab));
  if (len_min < 1 || len_min > len_max)
    throw std::invalid_argument("bad length range [" + std::to_string(len_min) +
                                ", " + std::to_string(len_max) + "]");
}

std::vector<int> task_target(const SyntheticTaskSpec& spec,
                             const std::vector<int>& source) {
  const int m = static_cast<int>(source.size());
  std::vector<int> target(source.size());
  switch (spec.kind) {
    case TaskKind::kCopy:
      target = source;
      break;
    case TaskKind::kReverse:
      for (int i = 0; i < m; ++i) target[i] = source[m - 1 - i];
      break;
    case TaskKind::kLexswap: {
      // reversal + shift-by-one cipher over the content ids
      const int count = spec.content_count();
      for (int i = 0; i < m; ++i) {
        const int s = source[m - 1 - i];
        target[i] = (s - kFirstContentId + 1) % count + kFirstContentId;
      }
      break;
    }
  }
  return target;
}

std::vector<int> sample_source(const SyntheticTaskSpec& spec, Rng& rng) {
  const int len = spec.len_min + rng.uniform_int(spec.len_max - spec.len_min + 1);
  std::vector<int> src(static_cast<std::size_t>(len));
  for (auto& t : src) t = kFirstContentId + rng.uniform_int(spec.content_count());
  return src;
}

Batch generate_batch(const SyntheticTaskSpec& spec, int batch_size, Rng& rng) {
  spec.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

  std::vector<std::vector<int>> sources, targets;
  sources.reserve(static_cast<std::size_t>(batch_size));
  int max_src = 0, max_tgt = 0;
  for (int i = 0; i < batch_size; ++i) {
    auto src = sample_source(spec, rng);
    auto tgt = task_target(spec, src);
    max_src = std::max(max_src, static_cast<int>(src.size()));
    max_tgt = std::max(max_tgt, static_cast<int>(tgt.size()) + 1);
    sources.push_back(std::move(src));
    targets.push_back(std::move(tgt));
  }

  Batch b;
  b.size = batch_size;
  b.src_cols = max_src;
  b.tgt_cols = max_tgt;
  b.src.assign(static_cast<std::size_t>(batch_size) * max_src, kPadId);
  b.tgt_in.assign(static_cast<std::size_t>(batch_size) * max_tgt, kPadId);
  b.tgt_out.assign(static_cast<std::size_t>(batch_size) * max_tgt, kPadId);
  b.src_mask.assign(b.src.size(), 0);
  b.tgt_mask.assign(b.tgt_in.size(), 0);

  for (int i = 0; i < batch_size; ++i) {
    const auto& src = sources[static_cast<std::size_t>(i)];
    const auto& tgt = targets[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < src.size(); ++j) {
      b.src[static_cast<std::size_t>(i) * max_src + j] = src[j];
      b.src_mask[static_cast<std::size_t>(i) * max_src + j] = 1;
    }
    // tgt_in = BOS + tgt; tgt_out = tgt + EOS (shifted by one)
    b.tgt_in[static_cast<std::size_t>(i) * max_tgt] = kBosId;
    b.tgt_mask[static_cast<std::size_t>(i) * max_tgt] = 1;
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      b.tgt_in[static_cast<std::size_t>(i) * max_tgt + j + 1] = tgt[j];
      b.tgt_out[static_cast<std::size_t>(i) * max_tgt + j] = tgt[j];
      b.tgt_mask[static_cast<std::size_t>(i) * max_tgt + j + 1] = 1;
    }
    b.tgt_out[static_cast<std::size_t>(i) * max_tgt + tgt.size()] = kEosId;
  }
  return b;
}

namespace {
std::vector<int> unpadded_row(const std::vector<int>& m, int cols, int row) {
  std::vector<int> out;
  for (int j = 0; j < cols; ++j) {
    const int t = m[static_cast<std::size_t>(row) * cols + j];
    if (t == kPadId) break;
    out.push_back(t);
  }
  return out;
}
}  // namespace

std::vector<int> Batch::src_seq(int i) const { return unpadded_row(src, src_cols, i); }
std::vector<int> Batch::tgt_in_seq(int i) const { return unpadded_row(tgt_in, tgt_cols, i); }

std::vector<int> Batch::tgt_out_seq(int i) const {
  // same true length as tgt_in; the row ends with EOS, not PAD
  const auto in = tgt_in_seq(i);
  std::vector<int> out(in.size());
  for (std::size_t j = 0; j < in.size(); ++j)
    out[j] = tgt_out[static_cast<std::size_t>(i) * tgt_cols + j];
  return out;
}

}  // namespace aan
