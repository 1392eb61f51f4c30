#include "aan/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>

namespace aan {

namespace {
using NgramCounts = std::map<std::vector<int>, long>;

NgramCounts count_ngrams(const std::vector<int>& seq, int n) {
  NgramCounts counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++counts[std::vector<int>(seq.begin() + static_cast<long>(i),
                              seq.begin() + static_cast<long>(i) + n)];
  return counts;
}
}  // namespace

std::vector<double> bleu_precisions(const std::vector<std::vector<int>>& candidates,
                                    const std::vector<std::vector<int>>& references,
                                    int max_n) {
  if (candidates.empty() || candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: corpus empty or list lengths differ");
  std::vector<double> precisions;
  for (int n = 1; n <= max_n; ++n) {
    long matched = 0, total = 0;
    for (std::size_t s = 0; s < candidates.size(); ++s) {
      auto cand = count_ngrams(candidates[s], n);
      auto ref = count_ngrams(references[s], n);
      for (const auto& [gram, c] : cand) {
        total += c;
        auto it = ref.find(gram);
        if (it != ref.end()) matched += std::min(c, it->second);  // clipped
      }
    }
    precisions.push_back(total == 0 ? 0.0
                                    : static_cast<double>(matched) /
                                          static_cast<double>(total));
  }
  return precisions;
}

double corpus_bleu(const std::vector<std::vector<int>>& candidates,
                   const std::vector<std::vector<int>>& references,
                   int max_n) {
  const auto precisions = bleu_precisions(candidates, references, max_n);

  double log_sum = 0;
  for (const double p : precisions) {
    if (p <= 0.0) return 0.0;  // unsmoothed: one zero precision zeroes BLEU
    log_sum += std::log(p);
  }

  long cand_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    cand_len += static_cast<long>(candidates[s].size());
    ref_len += static_cast<long>(references[s].size());
  }
  double brevity = 1.0;
  if (cand_len < ref_len && cand_len > 0)
    brevity = std::exp(1.0 - static_cast<double>(ref_len) /
                                 static_cast<double>(cand_len));
  if (cand_len == 0) return 0.0;

  return brevity * std::exp(log_sum / max_n);
}

}  // namespace aan
