#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace tmt {

using Words = std::vector<std::string>;

struct ScoredPair {
  Words hypothesis;
  std::vector<Words> references;
};

/// Whitespace tokenization.
Words split_words(const std::string& text);

/// Clipped n-gram matches and hypothesis n-gram totals for n = 1..4, plus the
/// hypothesis length and the closest reference length (ties: shorter).
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const ScoredPair& pair);
/// Geometric mean of the four precisions times the brevity penalty.  Any
/// precision with no matches (or no hypothesis n-grams) gives 0.
double bleu_from_stats(const BleuStats& s);

double bleu4(const ScoredPair& pair);
/// Counts summed over the corpus before the precisions are formed.
double corpus_bleu4(const std::vector<ScoredPair>& corpus);

inline constexpr double kRougeBeta = 1.2;

std::size_t lcs_length(const Words& a, const Words& b);
/// LCS F-measure, maximum over references.
double rouge_l(const ScoredPair& pair);

/// Per-pair CIDEr with corpus idf over the reference sets; ×10 scale.
std::vector<double> cider(const std::vector<ScoredPair>& corpus);

std::size_t edit_distance(const Words& a, const Words& b);
/// Edit distance to the first reference over its length.
double wer(const ScoredPair& pair);
/// Total edits over total reference words.
double corpus_wer(const std::vector<ScoredPair>& corpus);

}  // namespace tmt
