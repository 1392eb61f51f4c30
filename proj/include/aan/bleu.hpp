#pragma once

// Corpus-level BLEU over token-id sequences: geometric mean of modified
// n-gram precisions (n = 1..max_n) times the brevity penalty, with no
// smoothing — any zero n-gram precision zeroes the score.

#include <vector>

namespace aan {

double corpus_bleu(const std::vector<std::vector<int>>& candidates,
                   const std::vector<std::vector<int>>& references,
                   int max_n = 4);

// The per-order modified precisions, exposed for tests.
std::vector<double> bleu_precisions(const std::vector<std::vector<int>>& candidates,
                                    const std::vector<std::vector<int>>& references,
                                    int max_n = 4);

}  // namespace aan
