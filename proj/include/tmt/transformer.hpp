#pragma once

// Pre-norm encoder-decoder transformer with hand-written reverse mode.
//
// Activations are packed: the tokens of every sequence in a batch are stacked
// row-wise into one (tokens x d_model) matrix and `Segments` records where each
// sequence starts.  Attention runs per segment, so padding never enters the
// computation.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "tmt/model.hpp"
#include "tmt/vocab.hpp"

namespace tmt {

struct Segments {
  std::vector<Eigen::Index> offsets{0};

  Eigen::Index count() const { return static_cast<Eigen::Index>(offsets.size()) - 1; }
  Eigen::Index begin(Eigen::Index s) const { return offsets[static_cast<std::size_t>(s)]; }
  Eigen::Index length(Eigen::Index s) const {
    return offsets[static_cast<std::size_t>(s) + 1] - offsets[static_cast<std::size_t>(s)];
  }
  Eigen::Index total() const { return offsets.back(); }
  void push(Eigen::Index len) { offsets.push_back(offsets.back() + len); }
};

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

template <class Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------- layer norm

template <class Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  ColVector<Scalar> inv_std;
};

template <class Scalar>
Matrix<Scalar> layer_norm(const LayerNormParams<Scalar>& p, const Matrix<Scalar>& x,
                          LayerNormCache<Scalar>& c) {
  const ColVector<Scalar> mean = x.rowwise().mean();
  Matrix<Scalar> centered = x.colwise() - mean;
  const ColVector<Scalar> var = centered.array().square().rowwise().mean();
  c.inv_std = (var.array() + Scalar(kLayerNormEps)).rsqrt();
  c.xhat = centered.array().colwise() * c.inv_std.array();
  Matrix<Scalar> y = c.xhat.array().rowwise() * p.gain.row(0).array();
  y.rowwise() += p.bias.row(0);
  return y;
}

template <class Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormParams<Scalar>& p, LayerNormParams<Scalar>& g,
                                   const LayerNormCache<Scalar>& c, const Matrix<Scalar>& dy) {
  g.gain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.bias.row(0) += dy.colwise().sum();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * p.gain.row(0).array();
  const ColVector<Scalar> mean_d = dxhat.rowwise().mean();
  const ColVector<Scalar> mean_dx = (dxhat.array() * c.xhat.array()).rowwise().mean();
  Matrix<Scalar> dx = (dxhat.colwise() - mean_d) - (c.xhat.array().colwise() * mean_dx.array()).matrix();
  return dx.array().colwise() * c.inv_std.array();
}

// ------------------------------------------------------------ feed-forward

inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC = 0.044715;

/// tanh-approximated GELU, scalar form (used by tests and incremental decode).
template <class Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(Scalar(kGeluK) * (x + Scalar(kGeluC) * x * x * x)));
}

template <class Scalar>
struct FeedForwardCache {
  Matrix<Scalar> pre;   // x W1 + b1
  Matrix<Scalar> tanh;  // tanh term of the GELU
  Matrix<Scalar> act;   // gelu(pre)
};

template <class Scalar>
Matrix<Scalar> feed_forward(const FeedForwardParams<Scalar>& p, const Matrix<Scalar>& x,
                            FeedForwardCache<Scalar>& c) {
  c.pre.noalias() = x * p.w1;
  c.pre.rowwise() += p.b1.row(0);
  const auto u = c.pre.array();
  c.tanh = (Scalar(kGeluK) * (u + Scalar(kGeluC) * u.cube())).tanh();
  c.act = Scalar(0.5) * u * (Scalar(1) + c.tanh.array());
  Matrix<Scalar> y = c.act * p.w2;
  y.rowwise() += p.b2.row(0);
  return y;
}

template <class Scalar>
Matrix<Scalar> feed_forward_backward(const FeedForwardParams<Scalar>& p, FeedForwardParams<Scalar>& g,
                                     const FeedForwardCache<Scalar>& c, const Matrix<Scalar>& x,
                                     const Matrix<Scalar>& dy) {
  g.w2.noalias() += c.act.transpose() * dy;
  g.b2.row(0) += dy.colwise().sum();
  Matrix<Scalar> dpre = dy * p.w2.transpose();
  const auto u = c.pre.array();
  const auto t = c.tanh.array();
  dpre.array() *= Scalar(0.5) * (Scalar(1) + t) +
                  Scalar(0.5) * u * (Scalar(1) - t.square()) * Scalar(kGeluK) *
                      (Scalar(1) + Scalar(3 * kGeluC) * u.square());
  g.w1.noalias() += x.transpose() * dpre;
  g.b1.row(0) += dpre.colwise().sum();
  return dpre * p.w1.transpose();
}

// --------------------------------------------------------------- attention

/// Softmax over each row in place; -inf entries get weight 0 and a row that is
/// entirely -inf becomes all zeros.
template <class Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Scalar mx = m.row(i).maxCoeff();
    if (mx == -std::numeric_limits<Scalar>::infinity()) {
      m.row(i).setZero();
      continue;
    }
    m.row(i) = (m.row(i).array() - mx).exp().matrix();
    m.row(i) /= m.row(i).sum();
  }
}

struct AttentionMask {
  bool causal = false;
  /// Optional per-key validity over the packed key rows; empty means all valid.
  std::span<const std::uint8_t> key_valid{};
};

template <class Scalar>
struct AttentionCache {
  Matrix<Scalar> q, k, v, o;
  std::vector<Matrix<Scalar>> probs;  // segment-major, then head
};

template <class Scalar>
Matrix<Scalar> attention(const AttentionParams<Scalar>& p, int heads, const Matrix<Scalar>& xq,
                         const Segments& qseg, const Matrix<Scalar>& xkv, const Segments& kseg,
                         const AttentionMask& mask, AttentionCache<Scalar>& c) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

  c.q.noalias() = xq * p.wq;
  c.q.rowwise() += p.bq.row(0);
  c.k.noalias() = xkv * p.wk;
  c.k.rowwise() += p.bk.row(0);
  c.v.noalias() = xkv * p.wv;
  c.v.rowwise() += p.bv.row(0);
  c.o.setZero(xq.rows(), d);
  c.probs.resize(static_cast<std::size_t>(qseg.count() * heads));

  for (Eigen::Index s = 0; s < qseg.count(); ++s) {
    const Eigen::Index qo = qseg.begin(s), lq = qseg.length(s);
    const Eigen::Index ko = kseg.begin(s), lk = kseg.length(s);
    for (int h = 0; h < heads; ++h) {
      Matrix<Scalar>& P = c.probs[static_cast<std::size_t>(s * heads + h)];
      P.noalias() = c.q.block(qo, h * dh, lq, dh) * c.k.block(ko, h * dh, lk, dh).transpose();
      P *= scale;
      if (mask.causal) {
        for (Eigen::Index i = 0; i < lq; ++i) {
          for (Eigen::Index j = i + 1; j < lk; ++j) P(i, j) = neg_inf;
        }
      }
      if (!mask.key_valid.empty()) {
        for (Eigen::Index j = 0; j < lk; ++j) {
          if (!mask.key_valid[static_cast<std::size_t>(ko + j)]) P.col(j).setConstant(neg_inf);
        }
      }
      softmax_rows(P);
      c.o.block(qo, h * dh, lq, dh).noalias() = P * c.v.block(ko, h * dh, lk, dh);
    }
  }
  Matrix<Scalar> out = c.o * p.wo;
  out.rowwise() += p.bo.row(0);
  return out;
}

/// Accumulates parameter gradients into `g`; writes input gradients to
/// `dxq` and `dxkv` (overwritten).  For self-attention sum the two.
template <class Scalar>
void attention_backward(const AttentionParams<Scalar>& p, AttentionParams<Scalar>& g, int heads,
                        const AttentionCache<Scalar>& c, const Matrix<Scalar>& xq,
                        const Segments& qseg, const Matrix<Scalar>& xkv, const Segments& kseg,
                        const Matrix<Scalar>& dout, Matrix<Scalar>& dxq, Matrix<Scalar>& dxkv) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  g.wo.noalias() += c.o.transpose() * dout;
  g.bo.row(0) += dout.colwise().sum();
  const Matrix<Scalar> d_o = dout * p.wo.transpose();

  Matrix<Scalar> dq = Matrix<Scalar>::Zero(xq.rows(), d);
  Matrix<Scalar> dk = Matrix<Scalar>::Zero(xkv.rows(), d);
  Matrix<Scalar> dv = Matrix<Scalar>::Zero(xkv.rows(), d);
  Matrix<Scalar> dp, ds;
  for (Eigen::Index s = 0; s < qseg.count(); ++s) {
    const Eigen::Index qo = qseg.begin(s), lq = qseg.length(s);
    const Eigen::Index ko = kseg.begin(s), lk = kseg.length(s);
    for (int h = 0; h < heads; ++h) {
      const Matrix<Scalar>& P = c.probs[static_cast<std::size_t>(s * heads + h)];
      const auto dos = d_o.block(qo, h * dh, lq, dh);
      dv.block(ko, h * dh, lk, dh).noalias() += P.transpose() * dos;
      dp.noalias() = dos * c.v.block(ko, h * dh, lk, dh).transpose();
      const ColVector<Scalar> rowdot = (dp.array() * P.array()).rowwise().sum();
      ds = (P.array() * (dp.colwise() - rowdot).array()) * scale;
      dq.block(qo, h * dh, lq, dh).noalias() += ds * c.k.block(ko, h * dh, lk, dh);
      dk.block(ko, h * dh, lk, dh).noalias() += ds.transpose() * c.q.block(qo, h * dh, lq, dh);
    }
  }
  g.wq.noalias() += xq.transpose() * dq;
  g.bq.row(0) += dq.colwise().sum();
  g.wk.noalias() += xkv.transpose() * dk;
  g.bk.row(0) += dk.colwise().sum();
  g.wv.noalias() += xkv.transpose() * dv;
  g.bv.row(0) += dv.colwise().sum();
  dxq.noalias() = dq * p.wq.transpose();
  dxkv.noalias() = dk * p.wk.transpose();
  dxkv.noalias() += dv * p.wv.transpose();
}

}  // namespace nn

// ------------------------------------------------------------------ model

template <class Scalar>
struct EncoderLayerCache {
  Matrix<Scalar> ln_attn_out, ln_ffn_out;
  nn::LayerNormCache<Scalar> ln_attn, ln_ffn;
  nn::AttentionCache<Scalar> attn;
  nn::FeedForwardCache<Scalar> ffn;
};

template <class Scalar>
struct DecoderLayerCache {
  Matrix<Scalar> ln_self_out, ln_cross_out, ln_ffn_out;
  nn::LayerNormCache<Scalar> ln_self, ln_cross, ln_ffn;
  nn::AttentionCache<Scalar> self_attn, cross_attn;
  nn::FeedForwardCache<Scalar> ffn;
};

template <class Scalar>
struct EncoderCache {
  std::vector<EncoderLayerCache<Scalar>> layers;
  nn::LayerNormCache<Scalar> final_norm;
};

template <class Scalar>
struct DecoderCache {
  std::vector<DecoderLayerCache<Scalar>> layers;
  nn::LayerNormCache<Scalar> final_norm;
};

/// token + positional + modal-type embedding for packed sequences.
template <class Scalar>
Matrix<Scalar> embed(const ModelParams<Scalar>& p, const ModelConfig& cfg, std::span<const TokenId> tokens,
                     const Segments& seg, Modality modality) {
  Matrix<Scalar> x(static_cast<Eigen::Index>(tokens.size()), cfg.d_model);
  const auto type_row = p.modal_type_embedding.row(static_cast<Eigen::Index>(modality));
  for (Eigen::Index s = 0; s < seg.count(); ++s) {
    if (seg.length(s) > cfg.max_len) {
      fail(ErrorCode::Length, "sequence of length " + std::to_string(seg.length(s)) +
                                  " exceeds max_len " + std::to_string(cfg.max_len));
    }
    for (Eigen::Index t = 0; t < seg.length(s); ++t) {
      const Eigen::Index row = seg.begin(s) + t;
      const TokenId tok = tokens[static_cast<std::size_t>(row)];
      if (tok < 0 || tok >= cfg.vocab_total) {
        fail(ErrorCode::Range, "token id " + std::to_string(tok) + " outside the model vocabulary");
      }
      x.row(row) = p.token_embedding.row(tok) + p.positional_embedding.row(t) + type_row;
    }
  }
  return x;
}

template <class Scalar>
void embed_backward(ModelParams<Scalar>& g, std::span<const TokenId> tokens, const Segments& seg,
                    Modality modality, const Matrix<Scalar>& dx) {
  for (Eigen::Index s = 0; s < seg.count(); ++s) {
    for (Eigen::Index t = 0; t < seg.length(s); ++t) {
      const Eigen::Index row = seg.begin(s) + t;
      g.token_embedding.row(tokens[static_cast<std::size_t>(row)]) += dx.row(row);
      g.positional_embedding.row(t) += dx.row(row);
    }
  }
  g.modal_type_embedding.row(static_cast<Eigen::Index>(modality)) += dx.colwise().sum();
}

/// Encoder stack; returns the final-normed context rows.
template <class Scalar>
Matrix<Scalar> run_encoder(const ModelParams<Scalar>& p, const ModelConfig& cfg,
                           std::span<const TokenId> tokens, const Segments& seg, Modality modality,
                           std::span<const std::uint8_t> key_valid, EncoderCache<Scalar>& cache) {
  Matrix<Scalar> x = embed(p, cfg, tokens, seg, modality);
  cache.layers.resize(p.encoder.size());
  const nn::AttentionMask mask{false, key_valid};
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& lp = p.encoder[l];
    auto& lc = cache.layers[l];
    lc.ln_attn_out = nn::layer_norm(lp.ln_attn, x, lc.ln_attn);
    x += nn::attention(lp.self_attn, cfg.n_heads, lc.ln_attn_out, seg, lc.ln_attn_out, seg, mask, lc.attn);
    lc.ln_ffn_out = nn::layer_norm(lp.ln_ffn, x, lc.ln_ffn);
    x += nn::feed_forward(lp.ffn, lc.ln_ffn_out, lc.ffn);
  }
  return nn::layer_norm(p.encoder_norm, x, cache.final_norm);
}

/// Gradient of the encoder given d(context); accumulates into `g`.
template <class Scalar>
void run_encoder_backward(const ModelParams<Scalar>& p, const ModelConfig& cfg, ModelParams<Scalar>& g,
                          std::span<const TokenId> tokens, const Segments& seg, Modality modality,
                          const EncoderCache<Scalar>& cache, const Matrix<Scalar>& dcontext) {
  Matrix<Scalar> dx = nn::layer_norm_backward(p.encoder_norm, g.encoder_norm, cache.final_norm, dcontext);
  Matrix<Scalar> dq, dkv;
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    const auto& lp = p.encoder[l];
    auto& lg = g.encoder[l];
    const auto& lc = cache.layers[l];
    const Matrix<Scalar> dffn_in = nn::feed_forward_backward(lp.ffn, lg.ffn, lc.ffn, lc.ln_ffn_out, dx);
    dx += nn::layer_norm_backward(lp.ln_ffn, lg.ln_ffn, lc.ln_ffn, dffn_in);
    nn::attention_backward(lp.self_attn, lg.self_attn, cfg.n_heads, lc.attn, lc.ln_attn_out, seg,
                           lc.ln_attn_out, seg, dx, dq, dkv);
    dq += dkv;
    dx += nn::layer_norm_backward(lp.ln_attn, lg.ln_attn, lc.ln_attn, dq);
  }
  embed_backward(g, tokens, seg, modality, dx);
}

/// Decoder stack over packed target prefixes; returns final-normed hidden rows.
template <class Scalar>
Matrix<Scalar> run_decoder(const ModelParams<Scalar>& p, const ModelConfig& cfg,
                           std::span<const TokenId> tokens, const Segments& seg, Modality modality,
                           const Matrix<Scalar>& context, const Segments& context_seg,
                           std::span<const std::uint8_t> context_valid, DecoderCache<Scalar>& cache) {
  Matrix<Scalar> x = embed(p, cfg, tokens, seg, modality);
  cache.layers.resize(p.decoder.size());
  const nn::AttentionMask self_mask{true, {}};
  const nn::AttentionMask cross_mask{false, context_valid};
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& lp = p.decoder[l];
    auto& lc = cache.layers[l];
    lc.ln_self_out = nn::layer_norm(lp.ln_self, x, lc.ln_self);
    x += nn::attention(lp.self_attn, cfg.n_heads, lc.ln_self_out, seg, lc.ln_self_out, seg, self_mask,
                       lc.self_attn);
    lc.ln_cross_out = nn::layer_norm(lp.ln_cross, x, lc.ln_cross);
    x += nn::attention(lp.cross_attn, cfg.n_heads, lc.ln_cross_out, seg, context, context_seg, cross_mask,
                       lc.cross_attn);
    lc.ln_ffn_out = nn::layer_norm(lp.ln_ffn, x, lc.ln_ffn);
    x += nn::feed_forward(lp.ffn, lc.ln_ffn_out, lc.ffn);
  }
  return nn::layer_norm(p.decoder_norm, x, cache.final_norm);
}

/// Returns d(context) and accumulates decoder gradients into `g`.
template <class Scalar>
Matrix<Scalar> run_decoder_backward(const ModelParams<Scalar>& p, const ModelConfig& cfg,
                                    ModelParams<Scalar>& g, std::span<const TokenId> tokens,
                                    const Segments& seg, Modality modality, const Matrix<Scalar>& context,
                                    const Segments& context_seg, const DecoderCache<Scalar>& cache,
                                    const Matrix<Scalar>& dhidden) {
  Matrix<Scalar> dx = nn::layer_norm_backward(p.decoder_norm, g.decoder_norm, cache.final_norm, dhidden);
  Matrix<Scalar> dcontext = Matrix<Scalar>::Zero(context.rows(), context.cols());
  Matrix<Scalar> dq, dkv;
  for (std::size_t l = p.decoder.size(); l-- > 0;) {
    const auto& lp = p.decoder[l];
    auto& lg = g.decoder[l];
    const auto& lc = cache.layers[l];
    const Matrix<Scalar> dffn_in = nn::feed_forward_backward(lp.ffn, lg.ffn, lc.ffn, lc.ln_ffn_out, dx);
    dx += nn::layer_norm_backward(lp.ln_ffn, lg.ln_ffn, lc.ln_ffn, dffn_in);

    nn::attention_backward(lp.cross_attn, lg.cross_attn, cfg.n_heads, lc.cross_attn, lc.ln_cross_out, seg,
                           context, context_seg, dx, dq, dkv);
    dcontext += dkv;
    dx += nn::layer_norm_backward(lp.ln_cross, lg.ln_cross, lc.ln_cross, dq);

    nn::attention_backward(lp.self_attn, lg.self_attn, cfg.n_heads, lc.self_attn, lc.ln_self_out, seg,
                           lc.ln_self_out, seg, dx, dq, dkv);
    dq += dkv;
    dx += nn::layer_norm_backward(lp.ln_self, lg.ln_self, lc.ln_self, dq);
  }
  embed_backward(g, tokens, seg, modality, dx);
  return dcontext;
}

/// hidden x output projection (tied: token embedding transposed) + bias.
template <class Scalar>
Matrix<Scalar> output_logits(const ModelParams<Scalar>& p, const Matrix<Scalar>& hidden) {
  Matrix<Scalar> logits = p.output_projection.size() > 0
                              ? Matrix<Scalar>(hidden * p.output_projection)
                              : Matrix<Scalar>(hidden * p.token_embedding.transpose());
  logits.rowwise() += p.output_bias.row(0);
  return logits;
}

template <class Scalar>
Matrix<Scalar> output_logits_backward(const ModelParams<Scalar>& p, ModelParams<Scalar>& g,
                                      const Matrix<Scalar>& hidden, const Matrix<Scalar>& dlogits) {
  g.output_bias.row(0) += dlogits.colwise().sum();
  if (p.output_projection.size() > 0) {
    g.output_projection.noalias() += hidden.transpose() * dlogits;
    return dlogits * p.output_projection.transpose();
  }
  g.token_embedding.noalias() += dlogits.transpose() * hidden;
  return dlogits * p.token_embedding;
}

template <class Scalar>
RowVector<Scalar> log_softmax(const RowVector<Scalar>& logits) {
  const Scalar mx = logits.maxCoeff();
  const Scalar lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

}  // namespace tmt
