#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tmt/decode.hpp"
#include "tmt/metrics.hpp"
#include "tmt/tokenizers.hpp"

namespace tmt {

struct DirectionReport {
  Direction direction{Modality::Image, Modality::Text};
  std::size_t examples = 0;
  std::size_t failures = 0;  // decodes that never reached EOS
  // text and speech targets
  std::optional<double> bleu4, rouge_l, cider, wer;
  // image targets; the cosine is over codebook patch vectors, not a CLIP score
  std::optional<double> token_exact, patch_cosine;
  std::vector<std::string> dump;  // `<id> TAB <k2m> TAB <output>`
};

/// Text form of a decoded sequence as written to the prediction dump: text
/// as decoded, speech transcribed back to characters, images as global ids.
std::string render_prediction(const Tokenizers& tok, const TokenSequence& seq);

/// Reference string for a target modality: the caption for text, the
/// caption with repeated characters collapsed for speech, global ids for images.
std::string render_reference(const Tokenizers& tok, const TokenizedExample& ex, Modality target);

/// Scores rendered predictions (empty string for a failed decode) against
/// the test examples.
DirectionReport score_predictions(const Tokenizers& tok, Direction d, const std::vector<TokenizedExample>& test,
                                  const std::vector<std::optional<std::string>>& rendered);

template <class Scalar>
DirectionReport evaluate_direction(const ModelParams<Scalar>& p, const ModelConfig& cfg, const Tokenizers& tok,
                                   const std::vector<TokenizedExample>& test, Direction d, const DecodeConfig& dcfg) {
  direction_index(d);
  if (tok.vocab.total() != cfg.vocab_total) fail(ErrorCode::Config, "tokenizer and model vocabulary sizes disagree");
  std::vector<std::optional<std::string>> rendered;
  rendered.reserve(test.size());
  for (const auto& ex : test) {
    const auto& src = ex.view(d.source);
    if (!src || !ex.view(d.target)) fail(ErrorCode::InvalidArgument, "test example " + ex.id + " lacks a view");
    std::optional<TokenSequence> out;
    if (dcfg.beam_width == 1) {
      out = greedy_decode(p, cfg, tok.vocab, *src, d.target, dcfg);
    } else {
      const auto hyps = beam_decode(p, cfg, tok.vocab, *src, d.target, dcfg);
      if (!hyps.empty()) out = TokenSequence{d.target, hyps.front().body()};
    }
    rendered.push_back(out ? std::optional<std::string>(render_prediction(tok, *out)) : std::nullopt);
  }
  return score_predictions(tok, d, test, rendered);
}

template <class Scalar>
std::vector<DirectionReport> evaluate_all(const ModelParams<Scalar>& p, const ModelConfig& cfg, const Tokenizers& tok,
                                          const std::vector<TokenizedExample>& test, const DecodeConfig& dcfg) {
  std::vector<DirectionReport> out;
  for (const auto& d : all_directions()) out.push_back(evaluate_direction(p, cfg, tok, test, d, dcfg));
  return out;
}

/// Aligned table (one row per report) followed by `<k2m>.<metric>=<value>` lines.
std::string format_report(const std::vector<DirectionReport>& reports);

/// Unified model against one single-direction model per row.
std::string format_comparison(const std::vector<DirectionReport>& unified, const std::vector<DirectionReport>& single);

/// Headline metric of a row: BLEU-4 into text, WER into speech, token
/// exact-match into images.
double primary_metric(const DirectionReport& r);
std::string primary_metric_name(Direction d);

}  // namespace tmt
