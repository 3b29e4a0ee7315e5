#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tmt/common.hpp"
#include "tmt/vocab.hpp"

namespace tmt {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int ffn_dim = 256;
  int enc_layers = 2;
  int dec_layers = 2;
  int max_len = 400;
  int vocab_total = 0;
  double dropout = 0.0;
  bool tie_embeddings = true;

  int head_dim() const { return d_model / n_heads; }

  /// Throws InvalidArgument when the shape parameters are inconsistent.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <class Scalar>
struct LayerNormParams {
  Matrix<Scalar> gain, bias;  // 1 x d
};

template <class Scalar>
struct AttentionParams {
  Matrix<Scalar> wq, wk, wv, wo;  // d x d
  Matrix<Scalar> bq, bk, bv, bo;  // 1 x d
};

template <class Scalar>
struct FeedForwardParams {
  Matrix<Scalar> w1, b1;  // d x f, 1 x f
  Matrix<Scalar> w2, b2;  // f x d, 1 x d
};

template <class Scalar>
struct EncoderLayerParams {
  LayerNormParams<Scalar> ln_attn;
  AttentionParams<Scalar> self_attn;
  LayerNormParams<Scalar> ln_ffn;
  FeedForwardParams<Scalar> ffn;
};

template <class Scalar>
struct DecoderLayerParams {
  LayerNormParams<Scalar> ln_self;
  AttentionParams<Scalar> self_attn;
  LayerNormParams<Scalar> ln_cross;
  AttentionParams<Scalar> cross_attn;
  LayerNormParams<Scalar> ln_ffn;
  FeedForwardParams<Scalar> ffn;
};

/// Every learnable tensor of the encoder-decoder.  Gradients use the same type.
template <class Scalar>
struct ModelParams {
  Matrix<Scalar> token_embedding;       // V x d
  Matrix<Scalar> positional_embedding;  // max_len x d
  Matrix<Scalar> modal_type_embedding;  // 3 x d
  std::vector<EncoderLayerParams<Scalar>> encoder;
  LayerNormParams<Scalar> encoder_norm;
  std::vector<DecoderLayerParams<Scalar>> decoder;
  LayerNormParams<Scalar> decoder_norm;
  Matrix<Scalar> output_projection;  // d x V; empty when tied
  Matrix<Scalar> output_bias;        // 1 x V
};

namespace detail {

template <class P, class F>
void visit_ln(P& ln, const std::string& prefix, F& f) {
  f(prefix + ".gain", ln.gain);
  f(prefix + ".bias", ln.bias);
}

template <class P, class F>
void visit_attn(P& a, const std::string& prefix, F& f) {
  f(prefix + ".wq", a.wq);
  f(prefix + ".wk", a.wk);
  f(prefix + ".wv", a.wv);
  f(prefix + ".wo", a.wo);
  f(prefix + ".bq", a.bq);
  f(prefix + ".bk", a.bk);
  f(prefix + ".bv", a.bv);
  f(prefix + ".bo", a.bo);
}

template <class P, class F>
void visit_ffn(P& p, const std::string& prefix, F& f) {
  f(prefix + ".w1", p.w1);
  f(prefix + ".b1", p.b1);
  f(prefix + ".w2", p.w2);
  f(prefix + ".b2", p.b2);
}

}  // namespace detail

/// Calls f(name, tensor) for every tensor in a fixed order.  Works on const
/// and mutable params alike.
template <class P, class F>
void for_each_tensor(P& params, F&& f) {
  f(std::string("token_embedding"), params.token_embedding);
  f(std::string("positional_embedding"), params.positional_embedding);
  f(std::string("modal_type_embedding"), params.modal_type_embedding);
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    detail::visit_ln(params.encoder[l].ln_attn, p + ".ln_attn", f);
    detail::visit_attn(params.encoder[l].self_attn, p + ".self_attn", f);
    detail::visit_ln(params.encoder[l].ln_ffn, p + ".ln_ffn", f);
    detail::visit_ffn(params.encoder[l].ffn, p + ".ffn", f);
  }
  detail::visit_ln(params.encoder_norm, std::string("enc.norm"), f);
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const std::string p = "dec." + std::to_string(l);
    detail::visit_ln(params.decoder[l].ln_self, p + ".ln_self", f);
    detail::visit_attn(params.decoder[l].self_attn, p + ".self_attn", f);
    detail::visit_ln(params.decoder[l].ln_cross, p + ".ln_cross", f);
    detail::visit_attn(params.decoder[l].cross_attn, p + ".cross_attn", f);
    detail::visit_ln(params.decoder[l].ln_ffn, p + ".ln_ffn", f);
    detail::visit_ffn(params.decoder[l].ffn, p + ".ffn", f);
  }
  detail::visit_ln(params.decoder_norm, std::string("dec.norm"), f);
  if (params.output_projection.size() > 0) f(std::string("output_projection"), params.output_projection);
  f(std::string("output_bias"), params.output_bias);
}

/// Pairwise visit of two structurally identical parameter sets.
template <class A, class B, class F>
void zip_tensors(A& a, B& b, F&& f) {
  std::vector<decltype(&a.output_bias)> lhs;
  std::vector<decltype(&b.output_bias)> rhs;
  std::vector<std::string> names;
  for_each_tensor(a, [&](const std::string& n, auto& t) {
    names.push_back(n);
    lhs.push_back(&t);
  });
  for_each_tensor(b, [&](const std::string&, auto& t) { rhs.push_back(&t); });
  if (lhs.size() != rhs.size()) fail(ErrorCode::Shape, "parameter sets differ in structure");
  for (std::size_t i = 0; i < lhs.size(); ++i) f(names[i], *lhs[i], *rhs[i]);
}

/// Same shapes, all zeros.
template <class Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p) {
  ModelParams<Scalar> z = p;
  for_each_tensor(z, [](const std::string&, Matrix<Scalar>& t) { t.setZero(); });
  return z;
}

template <class Scalar>
std::size_t parameter_count(const ModelParams<Scalar>& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const Matrix<Scalar>& t) {
    n += static_cast<std::size_t>(t.size());
  });
  return n;
}

/// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& cfg);

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.encoder.resize(p.encoder.size());
  out.decoder.resize(p.decoder.size());
  out.output_projection.resize(p.output_projection.rows(), p.output_projection.cols());
  zip_tensors(out, p, [](const std::string&, Matrix<To>& dst, const Matrix<From>& src) {
    dst = src.template cast<To>();
  });
  return out;
}

/// Seeded init: weights and embeddings N(0, 1/d_model), biases 0, layer-norm
/// gains 1.
template <class Scalar>
ModelParams<Scalar> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.d_model, f = cfg.ffn_dim, v = cfg.vocab_total;
  std::mt19937_64 rng(derive_seed(seed, "init"));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  auto randn = [&](int r, int c) {
    Matrix<Scalar> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(normal(rng));
    return m;
  };
  auto zeros = [](int r, int c) { return Matrix<Scalar>::Zero(r, c).eval(); };
  auto ln = [&] { return LayerNormParams<Scalar>{Matrix<Scalar>::Ones(1, d), zeros(1, d)}; };
  auto attn = [&] {
    return AttentionParams<Scalar>{randn(d, d), randn(d, d), randn(d, d), randn(d, d),
                                   zeros(1, d), zeros(1, d), zeros(1, d), zeros(1, d)};
  };
  auto ffn = [&] { return FeedForwardParams<Scalar>{randn(d, f), zeros(1, f), randn(f, d), zeros(1, d)}; };

  ModelParams<Scalar> p;
  p.token_embedding = randn(v, d);
  p.positional_embedding = randn(cfg.max_len, d);
  p.modal_type_embedding = randn(3, d);
  for (int l = 0; l < cfg.enc_layers; ++l) {
    EncoderLayerParams<Scalar> layer;
    layer.ln_attn = ln();
    layer.self_attn = attn();
    layer.ln_ffn = ln();
    layer.ffn = ffn();
    p.encoder.push_back(std::move(layer));
  }
  p.encoder_norm = ln();
  for (int l = 0; l < cfg.dec_layers; ++l) {
    DecoderLayerParams<Scalar> layer;
    layer.ln_self = ln();
    layer.self_attn = attn();
    layer.ln_cross = ln();
    layer.cross_attn = attn();
    layer.ln_ffn = ln();
    layer.ffn = ffn();
    p.decoder.push_back(std::move(layer));
  }
  p.decoder_norm = ln();
  if (!cfg.tie_embeddings) p.output_projection = randn(d, v);
  p.output_bias = zeros(1, v);
  return p;
}

/// Throws Shape if any tensor disagrees with the configuration.
template <class Scalar>
void check_params(const ModelParams<Scalar>& p, const ModelConfig& cfg) {
  ModelParams<Scalar> ref = init_params<Scalar>(cfg, 0);
  if (ref.output_projection.size() != p.output_projection.size() ||
      ref.encoder.size() != p.encoder.size() || ref.decoder.size() != p.decoder.size()) {
    fail(ErrorCode::Shape, "parameter structure disagrees with the model config");
  }
  zip_tensors(ref, p, [](const std::string& name, const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      fail(ErrorCode::Shape, "tensor " + name + " has the wrong shape");
    }
  });
}

}  // namespace tmt
