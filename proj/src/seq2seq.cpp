#include "tmt/seq2seq.hpp"

#include <set>

namespace tmt {

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    fail(ErrorCode::InvalidArgument, "d_model must be a positive multiple of n_heads");
  }
  if (ffn_dim < 1 || enc_layers < 0 || dec_layers < 0 || max_len < 2 || vocab_total <= kSpecialCount) {
    fail(ErrorCode::InvalidArgument, "invalid model configuration");
  }
  if (dropout != 0.0) fail(ErrorCode::InvalidArgument, "dropout is not supported; set dropout=0");
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t f = static_cast<std::size_t>(cfg.ffn_dim);
  const std::size_t v = static_cast<std::size_t>(cfg.vocab_total);
  const std::size_t ln = 2 * d;
  const std::size_t attn = 4 * d * d + 4 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t enc_layer = 2 * ln + attn + ffn;
  const std::size_t dec_layer = 3 * ln + 2 * attn + ffn;
  std::size_t n = v * d + static_cast<std::size_t>(cfg.max_len) * d + 3 * d;
  n += static_cast<std::size_t>(cfg.enc_layers) * enc_layer + ln;
  n += static_cast<std::size_t>(cfg.dec_layers) * dec_layer + ln;
  if (!cfg.tie_embeddings) n += d * v;
  n += v;
  return n;
}

Batch Batch::from_pairs(Direction dir, std::span<const std::vector<TokenId>> sources,
                        std::span<const std::vector<TokenId>> targets) {
  if (sources.size() != targets.size()) fail(ErrorCode::Shape, "source/target count mismatch");
  Batch b;
  b.source_modality = dir.source;
  b.target_modality = dir.target;
  std::size_t max_s = 0, max_t = 0;
  for (const auto& s : sources) max_s = std::max(max_s, s.size());
  for (const auto& t : targets) max_t = std::max(max_t, t.size());
  const auto n = static_cast<Eigen::Index>(sources.size());
  b.source = TokenMatrix::Constant(n, static_cast<Eigen::Index>(max_s), kPad);
  b.target = TokenMatrix::Constant(n, static_cast<Eigen::Index>(max_t), kPad);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = sources[static_cast<std::size_t>(i)];
    const auto& t = targets[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < s.size(); ++j) b.source(i, static_cast<Eigen::Index>(j)) = s[j];
    for (std::size_t j = 0; j < t.size(); ++j) b.target(i, static_cast<Eigen::Index>(j)) = t[j];
    b.source_lengths.push_back(static_cast<int>(s.size()));
    b.target_lengths.push_back(static_cast<int>(t.size()));
  }
  return b;
}

void validate_batch(const Batch& batch, const Vocabulary& vocab) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (batch.source.rows() != n || batch.target.rows() != n || batch.target_lengths.size() != batch.size()) {
    fail(ErrorCode::Shape, "batch rows disagree with lengths");
  }
  auto check = [&](const TokenMatrix& m, const std::vector<int>& lengths, Modality mod, const char* side) {
    const TokenRange r = vocab.range(mod);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int len = lengths[static_cast<std::size_t>(i)];
      if (len < 0 || len > m.cols()) fail(ErrorCode::Shape, std::string(side) + " length out of bounds");
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const TokenId t = m(i, j);
        if (j >= len) {
          if (t != kPad) fail(ErrorCode::Shape, std::string(side) + " has non-pad token beyond its length");
        } else if (!r.contains(t) && !(t == kUnk && mod == Modality::Text)) {
          fail(ErrorCode::Range, std::string(side) + " token " + std::to_string(t) + " outside the " +
                                     modality_name(mod) + " range");
        }
      }
    }
  };
  check(batch.source, batch.source_lengths, batch.source_modality, "source");
  check(batch.target, batch.target_lengths, batch.target_modality, "target");
}

PackedBatch pack(const Batch& batch) {
  if (batch.size() == 0) fail(ErrorCode::InvalidArgument, "empty batch");
  PackedBatch p{batch.source_modality, batch.target_modality, {}, {}, {}, {}, {}};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const int sl = batch.source_lengths[i];
    const int tl = batch.target_lengths[i];
    if (sl < 1) fail(ErrorCode::InvalidArgument, "source sequence must be non-empty");
    for (int j = 0; j < sl; ++j) p.source.push_back(batch.source(row, j));
    p.source_segments.push(sl);
    p.decoder_input.push_back(kBos);
    for (int j = 0; j < tl; ++j) {
      p.decoder_input.push_back(batch.target(row, j));
      p.decoder_target.push_back(batch.target(row, j));
    }
    p.decoder_target.push_back(kEos);
    p.target_segments.push(tl + 1);
  }
  return p;
}

void check_direction_cover(std::span<const Direction> directions) {
  std::set<std::size_t> seen;
  for (const auto& d : directions) {
    if (!seen.insert(direction_index(d)).second) {
      fail(ErrorCode::InvalidArgument, "direction " + d.name() + " supplied twice");
    }
  }
  if (seen.size() != 6) {
    fail(ErrorCode::InvalidArgument, "all six directions are required, got " + std::to_string(seen.size()));
  }
}

}  // namespace tmt
