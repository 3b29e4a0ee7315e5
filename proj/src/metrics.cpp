#include "tmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "tmt/common.hpp"

namespace tmt {

namespace {

using NgramCounts = std::map<Words, std::size_t>;

NgramCounts ngrams(const Words& w, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[Words(w.begin() + i, w.begin() + i + n)];
  return out;
}

void check_pair(const ScoredPair& pair) {
  if (pair.references.empty()) fail(ErrorCode::InvalidArgument, "a scored pair needs at least one reference");
}

}  // namespace

Words split_words(const std::string& text) {
  std::istringstream in(text);
  Words out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats bleu_stats(const ScoredPair& pair) {
  check_pair(pair);
  BleuStats s;
  s.hyp_len = pair.hypothesis.size();
  s.ref_len = pair.references.front().size();
  for (const auto& r : pair.references) {
    const auto dist = [&](std::size_t len) { return len > s.hyp_len ? len - s.hyp_len : s.hyp_len - len; };
    if (dist(r.size()) < dist(s.ref_len) || (dist(r.size()) == dist(s.ref_len) && r.size() < s.ref_len)) {
      s.ref_len = r.size();
    }
  }
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts hyp = ngrams(pair.hypothesis, n);
    NgramCounts max_ref;
    for (const auto& r : pair.references) {
      for (const auto& [g, c] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : hyp) {
      s.totals[n - 1] += c;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) s.matches[n - 1] += std::min(c, it->second);
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_p = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.matches[n] == 0) return 0.0;
    log_p += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
  }
  const double bp = std::min(0.0, 1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  return std::exp(bp + log_p / 4.0);
}

double bleu4(const ScoredPair& pair) { return bleu_from_stats(bleu_stats(pair)); }

double corpus_bleu4(const std::vector<ScoredPair>& corpus) {
  BleuStats total;
  for (const auto& p : corpus) total += bleu_stats(p);
  return bleu_from_stats(total);
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const ScoredPair& pair) {
  check_pair(pair);
  if (pair.hypothesis.empty()) return 0.0;
  double best = 0;
  const double b2 = kRougeBeta * kRougeBeta;
  for (const auto& r : pair.references) {
    const auto lcs = static_cast<double>(lcs_length(pair.hypothesis, r));
    if (lcs == 0 || r.empty()) continue;
    const double p = lcs / static_cast<double>(pair.hypothesis.size());
    const double rec = lcs / static_cast<double>(r.size());
    best = std::max(best, (1 + b2) * rec * p / (rec + b2 * p));
  }
  return best;
}

std::vector<double> cider(const std::vector<ScoredPair>& corpus) {
  const double n_docs = static_cast<double>(corpus.size());
  std::vector<double> scores(corpus.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    // document frequency over each pair's reference set
    std::map<Words, std::size_t> df;
    for (const auto& pair : corpus) {
      check_pair(pair);
      std::map<Words, bool> seen;
      for (const auto& r : pair.references) {
        for (const auto& kv : ngrams(r, n)) seen[kv.first] = true;
      }
      for (const auto& kv : seen) ++df[kv.first];
    }
    auto vec = [&](const Words& w) {
      std::map<Words, double> v;
      const NgramCounts c = ngrams(w, n);
      std::size_t total = 0;
      for (const auto& kv : c) total += kv.second;
      for (const auto& [g, cnt] : c) {
        const auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : static_cast<double>(std::max<std::size_t>(1, it->second));
        v[g] = static_cast<double>(cnt) / static_cast<double>(total) * (std::log(n_docs) - std::log(d));
      }
      return v;
    };
    auto cosine = [](const std::map<Words, double>& a, const std::map<Words, double>& b) {
      double dot = 0, na = 0, nb = 0;
      for (const auto& [g, x] : a) {
        na += x * x;
        const auto it = b.find(g);
        if (it != b.end()) dot += x * it->second;
      }
      for (const auto& kv : b) nb += kv.second * kv.second;
      if (na == 0 || nb == 0) return 0.0;
      return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto h = vec(corpus[i].hypothesis);
      double sum = 0;
      for (const auto& r : corpus[i].references) sum += cosine(h, vec(r));
      scores[i] += sum / static_cast<double>(corpus[i].references.size());
    }
  }
  for (double& s : scores) s = 10.0 * s / 4.0;
  return scores;
}

std::size_t edit_distance(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double wer(const ScoredPair& pair) {
  check_pair(pair);
  const Words& ref = pair.references.front();
  if (ref.empty()) fail(ErrorCode::InvalidArgument, "WER needs a non-empty reference");
  return static_cast<double>(edit_distance(ref, pair.hypothesis)) / static_cast<double>(ref.size());
}

double corpus_wer(const std::vector<ScoredPair>& corpus) {
  std::size_t edits = 0, words = 0;
  for (const auto& p : corpus) {
    check_pair(p);
    const Words& ref = p.references.front();
    if (ref.empty()) fail(ErrorCode::InvalidArgument, "WER needs a non-empty reference");
    edits += edit_distance(ref, p.hypothesis);
    words += ref.size();
  }
  if (words == 0) fail(ErrorCode::InvalidArgument, "WER over an empty corpus");
  return static_cast<double>(edits) / static_cast<double>(words);
}

}  // namespace tmt
