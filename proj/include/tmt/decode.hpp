#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "tmt/seq2seq.hpp"
#include "tmt/tokenizers.hpp"
#include "tmt/vocab.hpp"

namespace tmt {

struct DecodeConfig {
  int beam_width = 5;
  int image_length = 32;     // image decoding is fixed-length
  int speech_max_len = 385;  // 384-token cap + EOS
  int text_max_len = 64;
  double length_norm_alpha = 0.0;

  /// Maximum generated tokens (EOS included) for a target modality.
  int max_len(Modality m) const {
    switch (m) {
      case Modality::Image: return image_length + 1;
      case Modality::Speech: return speech_max_len;
      case Modality::Text: return text_max_len;
    }
    return text_max_len;
  }
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // starts with BOS; ends with EOS when finished
  double logprob = 0.0;
  bool finished = false;
  double score = 0.0;  // logprob / length^alpha

  /// Generated tokens without BOS/EOS.
  std::vector<TokenId> body() const;
};

/// Masks logits outside the target modality (plus EOS) to -inf.  Image
/// targets allow exactly `image_length` image tokens, then only EOS.
template <class Scalar>
void constrain_logits(RowVector<Scalar>& logits, const Vocabulary& vocab, Modality target, int generated,
                      const DecodeConfig& cfg) {
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  const TokenRange r = vocab.range(target);
  const bool image = target == Modality::Image;
  const bool allow_body = !image || generated < cfg.image_length;
  const bool allow_eos = !image || generated >= cfg.image_length;
  for (Eigen::Index t = 0; t < logits.size(); ++t) {
    const auto id = static_cast<TokenId>(t);
    const bool ok = (allow_body && r.contains(id)) || (allow_eos && id == kEos);
    if (!ok) logits(t) = neg_inf;
  }
}

/// Log-softmax that tolerates -inf entries.
inline Eigen::RowVectorXd masked_log_softmax(const Eigen::RowVectorXd& logits) {
  const double mx = logits.maxCoeff();
  if (!std::isfinite(mx)) fail(ErrorCode::NoFinish, "every token is masked");
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

/// KV-cached decoder for one encoded source.  `step` consumes one token and
/// returns the next-token logits.
template <class Scalar>
class IncrementalDecoder {
 public:
  struct State {
    std::vector<Matrix<Scalar>> keys, values;  // per layer, one row per position
    int length = 0;
  };

  IncrementalDecoder(const ModelParams<Scalar>& p, const ModelConfig& cfg, const EncodedSource<Scalar>& src,
                     Modality target)
      : p_(p), cfg_(cfg), key_valid_(src.key_valid), target_(target) {
    for (const auto& layer : p.decoder) {
      Matrix<Scalar> k = src.context * layer.cross_attn.wk;
      k.rowwise() += layer.cross_attn.bk.row(0);
      Matrix<Scalar> v = src.context * layer.cross_attn.wv;
      v.rowwise() += layer.cross_attn.bv.row(0);
      cross_k_.push_back(std::move(k));
      cross_v_.push_back(std::move(v));
    }
  }

  State initial() const {
    State s;
    s.keys.resize(p_.decoder.size());
    s.values.resize(p_.decoder.size());
    for (std::size_t l = 0; l < p_.decoder.size(); ++l) {
      s.keys[l].resize(0, cfg_.d_model);
      s.values[l].resize(0, cfg_.d_model);
    }
    return s;
  }

  RowVector<Scalar> step(State& s, TokenId token) const {
    if (s.length >= cfg_.max_len) {
      fail(ErrorCode::Length, "decoder prefix exceeds max_len " + std::to_string(cfg_.max_len));
    }
    if (token < 0 || token >= cfg_.vocab_total) fail(ErrorCode::Range, "token outside the model vocabulary");
    Matrix<Scalar> x = p_.token_embedding.row(token) + p_.positional_embedding.row(s.length) +
                       p_.modal_type_embedding.row(static_cast<Eigen::Index>(target_));
    nn::LayerNormCache<Scalar> ln;
    nn::FeedForwardCache<Scalar> ffn;
    for (std::size_t l = 0; l < p_.decoder.size(); ++l) {
      const auto& lp = p_.decoder[l];
      Matrix<Scalar> h = nn::layer_norm(lp.ln_self, x, ln);
      append_row(s.keys[l], project(h, lp.self_attn.wk, lp.self_attn.bk));
      append_row(s.values[l], project(h, lp.self_attn.wv, lp.self_attn.bv));
      x += attend(lp.self_attn, h, s.keys[l], s.values[l], {});
      h = nn::layer_norm(lp.ln_cross, x, ln);
      x += attend(lp.cross_attn, h, cross_k_[l], cross_v_[l], key_valid_);
      h = nn::layer_norm(lp.ln_ffn, x, ln);
      x += nn::feed_forward(lp.ffn, h, ffn);
    }
    ++s.length;
    const Matrix<Scalar> hidden = nn::layer_norm(p_.decoder_norm, x, ln);
    return output_logits(p_, hidden).row(0);
  }

 private:
  static Matrix<Scalar> project(const Matrix<Scalar>& h, const Matrix<Scalar>& w, const Matrix<Scalar>& b) {
    Matrix<Scalar> out = h * w;
    out += b;
    return out;
  }

  static void append_row(Matrix<Scalar>& m, const Matrix<Scalar>& row) {
    m.conservativeResize(m.rows() + 1, Eigen::NoChange);
    m.row(m.rows() - 1) = row.row(0);
  }

  Matrix<Scalar> attend(const AttentionParams<Scalar>& a, const Matrix<Scalar>& h, const Matrix<Scalar>& keys,
                        const Matrix<Scalar>& values, const std::vector<std::uint8_t>& valid) const {
    const int heads = cfg_.n_heads;
    const Eigen::Index dh = cfg_.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    const Matrix<Scalar> q = project(h, a.wq, a.bq);
    Matrix<Scalar> o(1, cfg_.d_model);
    Matrix<Scalar> scores;
    for (int hd = 0; hd < heads; ++hd) {
      scores.noalias() = q.block(0, hd * dh, 1, dh) * keys.middleCols(hd * dh, dh).transpose();
      scores *= scale;
      for (std::size_t j = 0; j < valid.size(); ++j) {
        if (!valid[j]) scores(0, static_cast<Eigen::Index>(j)) = -std::numeric_limits<Scalar>::infinity();
      }
      nn::softmax_rows(scores);
      o.block(0, hd * dh, 1, dh).noalias() = scores * values.middleCols(hd * dh, dh);
    }
    return project(o, a.wo, a.bo);
  }

  const ModelParams<Scalar>& p_;
  const ModelConfig& cfg_;
  std::vector<Matrix<Scalar>> cross_k_, cross_v_;
  std::vector<std::uint8_t> key_valid_;
  Modality target_;
};

/// Adapts a model to the stepper interface used by the search routines:
/// `initial()`, and `next(state, token)` returning next-token logits as doubles.
template <class Scalar>
class ModelStepper {
 public:
  using State = typename IncrementalDecoder<Scalar>::State;

  ModelStepper(const ModelParams<Scalar>& p, const ModelConfig& cfg, const TokenSequence& source, Modality target)
      : src_(encode(p, cfg, std::span<const TokenId>(source.tokens), source.modality)),
        decoder_(p, cfg, src_, target) {}

  State initial() const { return decoder_.initial(); }
  Eigen::RowVectorXd next(State& s, TokenId token) const { return decoder_.step(s, token).template cast<double>(); }

 private:
  EncodedSource<Scalar> src_;
  IncrementalDecoder<Scalar> decoder_;
};

/// Constraint applied by the search at each step: (logits, tokens generated so far).
struct TargetConstraint {
  const Vocabulary* vocab = nullptr;  // null: no masking
  Modality target = Modality::Text;
  DecodeConfig cfg;

  void apply(Eigen::RowVectorXd& logits, int generated) const {
    if (vocab) constrain_logits(logits, *vocab, target, generated, cfg);
  }
};

/// Greedy decoding: masked argmax, ties to the lowest id.  Returns nullopt if
/// EOS is not produced within `max_len` tokens.
template <class Stepper>
std::optional<Hypothesis> greedy_search(const Stepper& stepper, const TargetConstraint& constraint, int max_len) {
  auto state = stepper.initial();
  Hypothesis h;
  h.tokens.push_back(kBos);
  Eigen::RowVectorXd logits = stepper.next(state, kBos);
  for (int generated = 0; generated < max_len; ++generated) {
    constraint.apply(logits, generated);
    const Eigen::RowVectorXd logp = masked_log_softmax(logits);
    Eigen::Index best = 0;
    logp.maxCoeff(&best);  // first maximal index
    h.tokens.push_back(static_cast<TokenId>(best));
    h.logprob += logp(best);
    if (best == kEos) {
      h.finished = true;
      h.score = h.logprob;
      return h;
    }
    if (generated + 1 < max_len) logits = stepper.next(state, static_cast<TokenId>(best));
  }
  return std::nullopt;
}

/// Beam search over masked log-probabilities.  Each step keeps the best
/// `beam_width` (hypothesis, token) extensions; those ending in EOS are set
/// aside as finished.  Stops once `beam_width` hypotheses have finished, the
/// beam empties, or `max_len` tokens were generated.  Results are sorted by
/// score, best first; empty when nothing finished.
template <class Stepper>
std::vector<Hypothesis> beam_search(const Stepper& stepper, const TargetConstraint& constraint, int beam_width,
                                    int max_len, double alpha = 0.0) {
  if (beam_width < 1) fail(ErrorCode::InvalidArgument, "beam width must be >= 1");
  struct Live {
    Hypothesis hyp;
    typename Stepper::State state;
    Eigen::RowVectorXd logp;
  };
  auto score_of = [alpha](const Hypothesis& h) {
    const double len = static_cast<double>(h.tokens.size() - 1);
    return alpha == 0.0 ? h.logprob : h.logprob / std::pow(len, alpha);
  };

  std::vector<Live> live;
  {
    Live root{Hypothesis{{kBos}, 0.0, false, 0.0}, stepper.initial(), {}};
    Eigen::RowVectorXd logits = stepper.next(root.state, kBos);
    constraint.apply(logits, 0);
    root.logp = masked_log_softmax(logits);
    live.push_back(std::move(root));
  }

  std::vector<Hypothesis> finished;
  struct Candidate {
    double logprob;
    std::size_t hyp;
    TokenId token;
  };
  std::vector<Candidate> cands;
  for (int generated = 0; generated < max_len && !live.empty(); ++generated) {
    cands.clear();
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto& lp = live[i].logp;
      for (Eigen::Index t = 0; t < lp.size(); ++t) {
        if (std::isfinite(lp(t))) cands.push_back({live[i].hyp.logprob + lp(t), i, static_cast<TokenId>(t)});
      }
    }
    const std::size_t keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(beam_width));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.logprob != b.logprob) return a.logprob > b.logprob;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });

    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      Hypothesis h = live[cand.hyp].hyp;
      h.tokens.push_back(cand.token);
      h.logprob = cand.logprob;
      if (cand.token == kEos) {
        h.finished = true;
        h.score = score_of(h);
        finished.push_back(std::move(h));
        continue;
      }
      if (generated + 1 >= max_len) continue;  // out of room, never finishes
      Live l{std::move(h), live[cand.hyp].state, {}};
      Eigen::RowVectorXd logits = stepper.next(l.state, cand.token);
      constraint.apply(logits, generated + 1);
      l.logp = masked_log_softmax(logits);
      next.push_back(std::move(l));
    }
    live = std::move(next);
    if (finished.size() >= static_cast<std::size_t>(beam_width)) break;
  }

  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  if (finished.size() > static_cast<std::size_t>(beam_width)) finished.resize(static_cast<std::size_t>(beam_width));
  return finished;
}

/// Model-level greedy decode; nullopt when no EOS within the modality's max_len.
template <class Scalar>
std::optional<TokenSequence> greedy_decode(const ModelParams<Scalar>& p, const ModelConfig& cfg,
                                           const Vocabulary& vocab, const TokenSequence& source, Modality target,
                                           const DecodeConfig& dcfg) {
  if (vocab.total() != cfg.vocab_total) fail(ErrorCode::Config, "model and vocabulary sizes disagree");
  ModelStepper<Scalar> stepper(p, cfg, source, target);
  auto h = greedy_search(stepper, TargetConstraint{&vocab, target, dcfg}, dcfg.max_len(target));
  if (!h) return std::nullopt;
  return TokenSequence{target, h->body()};
}

template <class Scalar>
std::vector<Hypothesis> beam_decode(const ModelParams<Scalar>& p, const ModelConfig& cfg, const Vocabulary& vocab,
                                    const TokenSequence& source, Modality target, const DecodeConfig& dcfg) {
  if (vocab.total() != cfg.vocab_total) fail(ErrorCode::Config, "model and vocabulary sizes disagree");
  ModelStepper<Scalar> stepper(p, cfg, source, target);
  return beam_search(stepper, TargetConstraint{&vocab, target, dcfg}, dcfg.beam_width, dcfg.max_len(target),
                     dcfg.length_norm_alpha);
}

/// Sum of masked log-probabilities of `hyp` recomputed with full-prefix
/// `decode_step` calls (independent of the KV cache).
template <class Scalar>
double rescore(const ModelParams<Scalar>& p, const ModelConfig& cfg, const Vocabulary& vocab,
               const TokenSequence& source, Modality target, const DecodeConfig& dcfg, const Hypothesis& hyp) {
  const auto src = encode(p, cfg, std::span<const TokenId>(source.tokens), source.modality);
  double total = 0;
  for (std::size_t i = 1; i < hyp.tokens.size(); ++i) {
    Eigen::RowVectorXd logits =
        decode_step(p, cfg, src, std::span<const TokenId>(hyp.tokens.data(), i), target).template cast<double>();
    constrain_logits(logits, vocab, target, static_cast<int>(i - 1), dcfg);
    total += masked_log_softmax(logits)(hyp.tokens[i]);
  }
  return total;
}

/// Raw input -> tokens -> best beam hypothesis -> raw output.
template <class Scalar>
RawData translate(const ModelParams<Scalar>& p, const ModelConfig& cfg, const Tokenizers& tok, const RawData& input,
                  Modality target, const DecodeConfig& dcfg) {
  const Modality source = raw_modality(input);
  if (source == target) fail(ErrorCode::InvalidArgument, "source and target modality are both " + modality_name(source));
  if (tok.vocab.total() != cfg.vocab_total) fail(ErrorCode::Config, "tokenizer and model vocabulary sizes disagree");
  const TokenSequence src = tok.tokenize(input);
  const auto hyps = beam_decode(p, cfg, tok.vocab, src, target, dcfg);
  if (hyps.empty()) {
    fail(ErrorCode::NoFinish, "no hypothesis reached EOS within " + std::to_string(dcfg.max_len(target)) + " tokens");
  }
  return tok.detokenize(TokenSequence{target, hyps.front().body()});
}

}  // namespace tmt
