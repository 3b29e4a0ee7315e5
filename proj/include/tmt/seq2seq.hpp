#pragma once

#include <array>
#include <span>
#include <vector>

#include "tmt/model.hpp"
#include "tmt/transformer.hpp"
#include "tmt/vocab.hpp"

namespace tmt {

using TokenMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One translation direction's worth of (source, target) pairs, padded with
/// PAD (0).  Targets exclude BOS/EOS; the model adds them.
struct Batch {
  Modality source_modality = Modality::Image;
  Modality target_modality = Modality::Text;
  TokenMatrix source;
  std::vector<int> source_lengths;
  TokenMatrix target;
  std::vector<int> target_lengths;

  std::size_t size() const { return source_lengths.size(); }
  Direction direction() const { return {source_modality, target_modality}; }

  static Batch from_pairs(Direction dir, std::span<const std::vector<TokenId>> sources,
                          std::span<const std::vector<TokenId>> targets);
};

/// Checks shapes, padding, and token ranges against a vocabulary.
void validate_batch(const Batch& batch, const Vocabulary& vocab);

/// Pad-free packed view of a batch.
struct PackedBatch {
  Modality source_modality;
  Modality target_modality;
  std::vector<TokenId> source;
  Segments source_segments;
  std::vector<TokenId> decoder_input;   // BOS y1 .. yn
  std::vector<TokenId> decoder_target;  // y1 .. yn EOS
  Segments target_segments;
};

PackedBatch pack(const Batch& batch);

template <class Scalar>
struct LossResult {
  Scalar loss = 0;
  std::size_t positions = 0;
  ModelParams<Scalar> grad;
};

/// Mean token cross-entropy under teacher forcing, plus the full gradient when
/// `with_grad` is set.
template <class Scalar>
LossResult<Scalar> sequence_loss(const ModelParams<Scalar>& p, const ModelConfig& cfg, const PackedBatch& batch,
                                 bool with_grad = true) {
  EncoderCache<Scalar> enc_cache;
  DecoderCache<Scalar> dec_cache;
  const Matrix<Scalar> context = run_encoder(p, cfg, std::span<const TokenId>(batch.source),
                                             batch.source_segments, batch.source_modality, {}, enc_cache);
  const Matrix<Scalar> hidden =
      run_decoder(p, cfg, std::span<const TokenId>(batch.decoder_input), batch.target_segments,
                  batch.target_modality, context, batch.source_segments, {}, dec_cache);
  Matrix<Scalar> logits = output_logits(p, hidden);

  LossResult<Scalar> out;
  out.positions = batch.decoder_target.size();
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(out.positions);
  // logits become d(loss)/d(logits) in place
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const Scalar mx = row.maxCoeff();
    row.array() = (row.array() - mx).exp();
    const Scalar sum = row.sum();
    const TokenId gold = batch.decoder_target[static_cast<std::size_t>(r)];
    out.loss -= std::log(row(gold) / sum);
    row /= sum;
    row(gold) -= Scalar(1);
    row *= inv_n;
  }
  out.loss *= inv_n;
  if (!with_grad) return out;

  out.grad = zeros_like(p);
  const Matrix<Scalar> dhidden = output_logits_backward(p, out.grad, hidden, logits);
  const Matrix<Scalar> dcontext = run_decoder_backward(
      p, cfg, out.grad, std::span<const TokenId>(batch.decoder_input), batch.target_segments,
      batch.target_modality, context, batch.source_segments, dec_cache, dhidden);
  run_encoder_backward(p, cfg, out.grad, std::span<const TokenId>(batch.source), batch.source_segments,
                       batch.source_modality, enc_cache, dcontext);
  return out;
}

template <class Scalar>
LossResult<Scalar> sequence_loss(const ModelParams<Scalar>& p, const ModelConfig& cfg, const Batch& batch,
                                 bool with_grad = true) {
  return sequence_loss(p, cfg, pack(batch), with_grad);
}

/// g += other, tensor by tensor in the fixed visiting order.
template <class Scalar>
void accumulate(ModelParams<Scalar>& g, const ModelParams<Scalar>& other) {
  zip_tensors(g, other, [](const std::string&, Matrix<Scalar>& a, const Matrix<Scalar>& b) { a += b; });
}

/// Throws InvalidArgument unless the batches cover each ordered pair once.
void check_direction_cover(std::span<const Direction> directions);

template <class Scalar>
struct TmtLossResult {
  Scalar loss = 0;
  std::array<Scalar, 6> per_direction{};  // indexed by direction_index
  ModelParams<Scalar> grad;
};

/// Sum of the six per-direction mean losses; per-direction gradients are
/// added in direction order.  `active[i] == false` zeroes direction i's
/// gradient contribution (its loss is still reported).
template <class Scalar>
TmtLossResult<Scalar> tmt_loss(const ModelParams<Scalar>& p, const ModelConfig& cfg,
                               std::span<const PackedBatch> batches,
                               std::array<bool, 6> active = {true, true, true, true, true, true}) {
  if (batches.size() != 6) {
    fail(ErrorCode::InvalidArgument, "tmt_loss needs exactly six batches, got " +
                                         std::to_string(batches.size()));
  }
  std::vector<Direction> dirs;
  for (const auto& b : batches) dirs.push_back({b.source_modality, b.target_modality});
  check_direction_cover(dirs);

  std::array<const PackedBatch*, 6> ordered{};
  for (const auto& b : batches) ordered[direction_index({b.source_modality, b.target_modality})] = &b;

  TmtLossResult<Scalar> out;
  out.grad = zeros_like(p);
  for (std::size_t i = 0; i < 6; ++i) {
    auto r = sequence_loss(p, cfg, *ordered[i], active[i]);
    out.per_direction[i] = r.loss;
    out.loss += r.loss;
    if (active[i]) accumulate(out.grad, r.grad);
  }
  return out;
}

template <class Scalar>
TmtLossResult<Scalar> tmt_loss(const ModelParams<Scalar>& p, const ModelConfig& cfg, std::span<const Batch> batches) {
  std::vector<PackedBatch> packed;
  for (const auto& b : batches) packed.push_back(pack(b));
  return tmt_loss(p, cfg, std::span<const PackedBatch>(packed));
}

/// Encoder output for one source sequence plus its key validity (PAD masked).
template <class Scalar>
struct EncodedSource {
  Matrix<Scalar> context;
  std::vector<std::uint8_t> key_valid;
};

template <class Scalar>
EncodedSource<Scalar> encode(const ModelParams<Scalar>& p, const ModelConfig& cfg, std::span<const TokenId> tokens,
                             Modality modality) {
  if (tokens.empty()) fail(ErrorCode::InvalidArgument, "cannot encode an empty sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_len) {
    fail(ErrorCode::Length, "source length " + std::to_string(tokens.size()) + " exceeds max_len " +
                                std::to_string(cfg.max_len));
  }
  EncodedSource<Scalar> out;
  Segments seg;
  seg.push(static_cast<Eigen::Index>(tokens.size()));
  bool any_pad = false;
  for (TokenId t : tokens) {
    out.key_valid.push_back(t != kPad);
    any_pad |= t == kPad;
  }
  if (!any_pad) out.key_valid.clear();
  EncoderCache<Scalar> cache;
  out.context = run_encoder(p, cfg, tokens, seg, modality, std::span<const std::uint8_t>(out.key_valid), cache);
  return out;
}

/// Next-token logits after `prefix` (which starts with BOS), recomputing the
/// whole decoder over the prefix.
template <class Scalar>
RowVector<Scalar> decode_step(const ModelParams<Scalar>& p, const ModelConfig& cfg, const EncodedSource<Scalar>& src,
                              std::span<const TokenId> prefix, Modality target) {
  if (prefix.empty() || prefix.front() != kBos) fail(ErrorCode::InvalidArgument, "prefix must start with BOS");
  if (static_cast<int>(prefix.size()) > cfg.max_len) {
    fail(ErrorCode::Length, "prefix length " + std::to_string(prefix.size()) + " exceeds max_len " +
                                std::to_string(cfg.max_len));
  }
  Segments seg, cseg;
  seg.push(static_cast<Eigen::Index>(prefix.size()));
  cseg.push(src.context.rows());
  DecoderCache<Scalar> cache;
  const Matrix<Scalar> hidden = run_decoder(p, cfg, prefix, seg, target, src.context, cseg,
                                            std::span<const std::uint8_t>(src.key_valid), cache);
  const Matrix<Scalar> last = hidden.bottomRows(1);
  return output_logits(p, last).row(0);
}

}  // namespace tmt
