#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.  They favor directness over speed.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "tmt/codebook.hpp"
#include "tmt/metrics.hpp"
#include "tmt/seq2seq.hpp"

namespace tmt::oracle {

// ---- metrics ----

inline Words random_words(std::mt19937_64& rng, int alphabet, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len), sym(0, alphabet - 1);
  Words w(static_cast<std::size_t>(len(rng)));
  for (auto& s : w) s = std::string(1, static_cast<char>('a' + sym(rng)));
  return w;
}

inline ScoredPair random_pair(std::mt19937_64& rng, int alphabet, int max_refs) {
  ScoredPair p;
  p.hypothesis = random_words(rng, alphabet, 1, 8);
  const int refs = std::uniform_int_distribution<int>(1, max_refs)(rng);
  for (int r = 0; r < refs; ++r) p.references.push_back(random_words(rng, alphabet, 1, 8));
  return p;
}

// Every occurrence of an n-gram, in order.
inline std::vector<Words> occurrences(const Words& w, std::size_t n) {
  std::vector<Words> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) out.emplace_back(w.begin() + i, w.begin() + i + n);
  return out;
}

inline std::size_t count_in(const std::vector<Words>& occ, const Words& g) {
  return static_cast<std::size_t>(std::count(occ.begin(), occ.end(), g));
}

inline std::vector<Words> distinct(std::vector<Words> occ) {
  std::vector<Words> out;
  for (auto& g : occ) {
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(std::move(g));
  }
  return out;
}

struct BrutePrecision {
  std::size_t matches = 0, total = 0;
};

inline BrutePrecision brute_precision(const ScoredPair& p, std::size_t n) {
  BrutePrecision out;
  const auto hyp = occurrences(p.hypothesis, n);
  out.total = hyp.size();
  for (const auto& g : distinct(hyp)) {
    std::size_t ref_max = 0;
    for (const auto& r : p.references) ref_max = std::max(ref_max, count_in(occurrences(r, n), g));
    out.matches += std::min(count_in(hyp, g), ref_max);
  }
  return out;
}

inline std::size_t closest_ref_len(const ScoredPair& p) {
  const long c = static_cast<long>(p.hypothesis.size());
  long best = static_cast<long>(p.references.front().size());
  for (const auto& r : p.references) {
    const long len = static_cast<long>(r.size());
    if (std::labs(len - c) < std::labs(best - c) || (std::labs(len - c) == std::labs(best - c) && len < best)) {
      best = len;
    }
  }
  return static_cast<std::size_t>(best);
}

// Corpus BLEU from summed brute-force counts; a one-pair corpus gives
// sentence BLEU.
inline double brute_bleu4(const std::vector<ScoredPair>& corpus) {
  std::size_t m[4] = {}, t[4] = {}, c = 0, r = 0;
  for (const auto& p : corpus) {
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto bp = brute_precision(p, n);
      m[n - 1] += bp.matches;
      t[n - 1] += bp.total;
    }
    c += p.hypothesis.size();
    r += closest_ref_len(p);
  }
  if (c == 0) return 0.0;
  double prod = 1;
  for (int n = 0; n < 4; ++n) {
    if (m[n] == 0) return 0.0;
    prod *= static_cast<double>(m[n]) / static_cast<double>(t[n]);
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::pow(prod, 0.25);
}

inline std::size_t recursive_lcs(const Words& a, std::size_t i, const Words& b, std::size_t j) {
  if (i == a.size() || j == b.size()) return 0;
  if (a[i] == b[j]) return 1 + recursive_lcs(a, i + 1, b, j + 1);
  return std::max(recursive_lcs(a, i + 1, b, j), recursive_lcs(a, i, b, j + 1));
}

inline double brute_rouge_l(const ScoredPair& p) {
  double best = 0;
  for (const auto& r : p.references) {
    const double lcs = static_cast<double>(recursive_lcs(p.hypothesis, 0, r, 0));
    if (lcs == 0) continue;
    const double prec = lcs / static_cast<double>(p.hypothesis.size());
    const double rec = lcs / static_cast<double>(r.size());
    const double b2 = 1.2 * 1.2;
    best = std::max(best, (1 + b2) * rec * prec / (rec + b2 * prec));
  }
  return best;
}

inline std::size_t recursive_edit(const Words& a, std::size_t i, const Words& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t sub = recursive_edit(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  return std::min({sub, recursive_edit(a, i + 1, b, j) + 1, recursive_edit(a, i, b, j + 1) + 1});
}

inline double brute_wer(const ScoredPair& p) {
  const Words& ref = p.references.front();
  return static_cast<double>(recursive_edit(ref, 0, p.hypothesis, 0)) / static_cast<double>(ref.size());
}

// Dense tf-idf vectors over the list of every n-gram in the corpus, with
// document frequency floored at 1.
inline std::vector<double> brute_cider(const std::vector<ScoredPair>& corpus) {
  const double N = static_cast<double>(corpus.size());
  std::vector<double> out(corpus.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    std::vector<Words> all;
    for (const auto& p : corpus) {
      for (auto& g : occurrences(p.hypothesis, n)) all.push_back(g);
      for (const auto& r : p.references) {
        for (auto& g : occurrences(r, n)) all.push_back(g);
      }
    }
    all = distinct(all);
    std::vector<double> idf(all.size());
    for (std::size_t k = 0; k < all.size(); ++k) {
      std::size_t df = 0;
      for (const auto& p : corpus) {
        bool in = false;
        for (const auto& r : p.references) in = in || count_in(occurrences(r, n), all[k]) > 0;
        df += in ? 1 : 0;
      }
      idf[k] = std::log(N / static_cast<double>(std::max<std::size_t>(df, 1)));
    }
    auto vec = [&](const Words& w) {
      const auto occ = occurrences(w, n);
      std::vector<double> v(all.size(), 0.0);
      for (std::size_t k = 0; k < all.size(); ++k) {
        if (!occ.empty()) v[k] = static_cast<double>(count_in(occ, all[k])) / static_cast<double>(occ.size()) * idf[k];
      }
      return v;
    };
    auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
      }
      return na == 0 || nb == 0 ? 0.0 : dot / std::sqrt(na * nb);
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto h = vec(corpus[i].hypothesis);
      double s = 0;
      for (const auto& r : corpus[i].references) s += cos(h, vec(r));
      out[i] += s / static_cast<double>(corpus[i].references.size()) / 4.0;
    }
  }
  for (double& x : out) x *= 10.0;
  return out;
}

// Largest |ours - oracle| over `cases` random instances of each metric.
struct MetricDiffs {
  double bleu = 0, corpus_bleu = 0, rouge = 0, wer = 0, cider = 0;
};

inline MetricDiffs metric_oracle_diffs(std::uint64_t seed, int cases) {
  std::mt19937_64 rng(seed);
  MetricDiffs d;
  for (int c = 0; c < cases; ++c) {
    // a small alphabet makes higher-order matches common
    const int alphabet = 2 + c % 4;
    const ScoredPair p = random_pair(rng, alphabet, 3);
    d.bleu = std::max(d.bleu, std::abs(bleu4(p) - brute_bleu4({p})));
    d.rouge = std::max(d.rouge, std::abs(rouge_l(p) - brute_rouge_l(p)));
    d.wer = std::max(d.wer, std::abs(wer(p) - brute_wer(p)));
    std::vector<ScoredPair> corpus;
    const int size = 1 + c % 5;
    for (int i = 0; i < size; ++i) corpus.push_back(random_pair(rng, alphabet, 3));
    d.corpus_bleu = std::max(d.corpus_bleu, std::abs(corpus_bleu4(corpus) - brute_bleu4(corpus)));
    const auto ours = cider(corpus), ref = brute_cider(corpus);
    for (std::size_t i = 0; i < ours.size(); ++i) d.cider = std::max(d.cider, std::abs(ours[i] - ref[i]));
  }
  return d;
}

// ---- model ----

inline Vocabulary small_vocab() { return Vocabulary::build(6, 5, 7); }

inline ModelConfig small_model(const Vocabulary& v) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.max_len = 16;
  c.vocab_total = v.total();
  return c;
}

inline std::vector<TokenId> random_tokens(std::mt19937_64& rng, const Vocabulary& v, Modality m, int min_len,
                                          int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<TokenId> tok(v.range(m).begin, v.range(m).end - 1);
  std::vector<TokenId> out(static_cast<std::size_t>(len(rng)));
  for (auto& t : out) t = tok(rng);
  return out;
}

inline Batch random_batch(std::mt19937_64& rng, const Vocabulary& v, Direction d, std::size_t n, int max_len = 5) {
  std::vector<std::vector<TokenId>> src, tgt;
  for (std::size_t i = 0; i < n; ++i) {
    src.push_back(random_tokens(rng, v, d.source, 1, max_len));
    // an empty target still trains EOS
    tgt.push_back(random_tokens(rng, v, d.target, 0, max_len));
  }
  return Batch::from_pairs(d, src, tgt);
}

struct GradCheck {
  double max_rel = 0;
  std::string worst;
  std::size_t entries = 0;
};

// Central differences on every parameter entry.  The relative error of an
// entry is |a - n| / max(|a|, |n|, floor).  The floor keeps gradients that
// are zero in exact arithmetic (attention key biases: a shift shared by all
// scores cancels in the softmax) from turning rounding noise, about
// eps * loss / h ~ 1e-11, into O(1) relative error.
inline GradCheck gradient_check(const ModelParams<double>& p, const ModelConfig& cfg, const Batch& batch,
                                double h = 1e-4, double floor = 1e-6) {
  const PackedBatch packed = pack(batch);
  const auto analytic = sequence_loss(p, cfg, packed, true).grad;
  ModelParams<double> probe = p;
  GradCheck out;
  zip_tensors(probe, analytic, [&](const std::string& name, Matrix<double>& t, const Matrix<double>& g) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double x = t.data()[i];
      t.data()[i] = x + h;
      const double up = sequence_loss(probe, cfg, packed, false).loss;
      t.data()[i] = x - h;
      const double down = sequence_loss(probe, cfg, packed, false).loss;
      t.data()[i] = x;
      const double num = (up - down) / (2 * h), a = g.data()[i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      ++out.entries;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  });
  return out;
}

// |tmt_loss - sum of independent per-direction losses| on one random batch set.
inline double tmt_loss_decomposition_gap(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Vocabulary v = small_vocab();
  const ModelConfig cfg = small_model(v);
  const auto p = init_params<double>(cfg, seed);
  std::vector<Batch> batches;
  const auto& dirs = all_directions();
  // a shuffled direction order must not matter
  std::vector<Direction> order(dirs.begin(), dirs.end());
  std::shuffle(order.begin(), order.end(), rng);
  for (const auto& d : order) batches.push_back(random_batch(rng, v, d, 1 + rng() % 3));
  const double joint = tmt_loss(p, cfg, std::span<const Batch>(batches)).loss;
  double sum = 0;
  for (const auto& b : batches) sum += sequence_loss(p, cfg, b, false).loss;
  return std::abs(joint - sum);
}

// ---- k-means ----

// Number of datasets (out of `count`) whose objective trace ever rises.
inline int kmeans_monotone_violations(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  int bad = 0;
  for (int c = 0; c < count; ++c) {
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng() % 200);
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng() % 6);
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng() % 8);
    std::normal_distribution<double> g(0.0, 1.0);
    RowMatrix x(n, dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) + 5.0 * static_cast<double>(i % 3);
    const auto r = train_codebook(x, k, 50, rng());
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      if (r.objective_trace[i] > r.objective_trace[i - 1]) {
        ++bad;
        break;
      }
    }
  }
  return bad;
}

}  // namespace tmt::oracle
