#pragma once

// Synthetic sequence tasks used in place of a parallel corpus: copy,
// reverse, and lexswap (reversal composed with a substitution cipher over
// the content vocabulary). All three are deterministic and exactly
// learnable, so convergence and decode quality can be asserted.

#include <cstdint>
#include <string>
#include <vector>

#include "aan/rng.hpp"

namespace aan {

// Reserved token ids shared by every task.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kFirstContentId = 4;

enum class TaskKind { kCopy, kReverse, kLexswap };

TaskKind task_kind_from_name(const std::string& name);
std::string task_kind_name(TaskKind kind);

struct SyntheticTaskSpec {
  TaskKind kind = TaskKind::kCopy;
  int vocab = 20;
  int len_min = 3;
  int len_max = 12;
  std::uint64_t seed = 1;

  int content_count() const { return vocab - kFirstContentId; }
  void validate() const;
};

// Target for a given source under the task's deterministic rule.
std::vector<int> task_target(const SyntheticTaskSpec& spec,
                             const std::vector<int>& source);

// Random source: length uniform in [len_min, len_max], tokens uniform
// over the content range.
std::vector<int> sample_source(const SyntheticTaskSpec& spec, Rng& rng);

// Padded batch matrices. Target input is BOS-prefixed, target output is
// EOS-suffixed; pad positions are zero and masked out of the loss.
struct Batch {
  int size = 0;
  int src_cols = 0;
  int tgt_cols = 0;                // includes the BOS/EOS slot
  std::vector<int> src;            // [size x src_cols]
  std::vector<int> tgt_in;         // [size x tgt_cols]
  std::vector<int> tgt_out;        // [size x tgt_cols]
  std::vector<std::uint8_t> src_mask;  // 1 = real token
  std::vector<std::uint8_t> tgt_mask;

  // Unpadded views for per-sentence processing.
  std::vector<int> src_seq(int i) const;
  std::vector<int> tgt_in_seq(int i) const;
  std::vector<int> tgt_out_seq(int i) const;
};

Batch generate_batch(const SyntheticTaskSpec& spec, int batch_size, Rng& rng);

}  // namespace aan
