#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "tmt/checkpoint.hpp"
#include "tmt/seq2seq.hpp"

using namespace tmt;
using test::error_of;

namespace {

std::vector<TokenId> ids(const Vocabulary& v, Modality m, std::initializer_list<TokenId> locals) {
  std::vector<TokenId> out;
  for (TokenId l : locals) out.push_back(v.local_to_global(m, l));
  return out;
}

Matrix<double> full_logits(const ModelParams<double>& p, const ModelConfig& cfg, const EncodedSource<double>& src,
                           const std::vector<TokenId>& prefix, Modality target) {
  Segments seg, cseg;
  seg.push(static_cast<Eigen::Index>(prefix.size()));
  cseg.push(src.context.rows());
  DecoderCache<double> cache;
  const auto hidden = run_decoder(p, cfg, std::span<const TokenId>(prefix), seg, target, src.context, cseg,
                                  std::span<const std::uint8_t>(src.key_valid), cache);
  return output_logits(p, hidden);
}

}  // namespace

TEST_CASE("initialization") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto a = init_params<double>(cfg, 5), b = init_params<double>(cfg, 5);
  zip_tensors(a, b, [](const std::string&, const Matrix<double>& x, const Matrix<double>& y) { CHECK(x == y); });
  CHECK(a.encoder[0].ln_attn.gain.isOnes());
  CHECK(a.decoder[1].ln_ffn.gain.isOnes());
  CHECK(parameter_count(a) == expected_parameter_count(cfg));
  // d=16, f=32, V=22, max_len=16, 2+2 layers, tied
  CHECK(parameter_count(a) == 22 * 16 + 16 * 16 + 3 * 16 + 2 * 2224 + 32 + 2 * 3344 + 32 + 22);

  ModelConfig untied = cfg;
  untied.tie_embeddings = false;
  CHECK(parameter_count(init_params<double>(untied, 0)) == expected_parameter_count(cfg) + 16 * 22);

  ModelConfig bad = cfg;
  bad.n_heads = 3;
  CHECK(error_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("encoder properties") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto p = init_params<double>(cfg, 1);
  const auto one = ids(v, Modality::Speech, {2});
  CHECK(encode(p, cfg, std::span<const TokenId>(one), Modality::Speech).context.rows() == 1);
  CHECK(encode(p, cfg, std::span<const TokenId>(one), Modality::Speech).context.cols() == 16);

  const auto seq = ids(v, Modality::Image, {0, 3, 5});
  const auto as_image = encode(p, cfg, std::span<const TokenId>(seq), Modality::Image);
  const auto as_speech = encode(p, cfg, std::span<const TokenId>(seq), Modality::Speech);
  CHECK((as_image.context - as_speech.context).cwiseAbs().maxCoeff() > 0);

  // pad-only tail positions do not reach the real positions
  std::vector<TokenId> padded = seq;
  padded.push_back(kPad);
  padded.push_back(kPad);
  const auto with_pad = encode(p, cfg, std::span<const TokenId>(padded), Modality::Image);
  CHECK((with_pad.context.topRows(3) - as_image.context).cwiseAbs().maxCoeff() < 1e-12);

  CHECK(error_of([&] { encode(p, cfg, std::span<const TokenId>(), Modality::Image); }) == ErrorCode::InvalidArgument);
  const std::vector<TokenId> too_long(17, seq[0]);
  CHECK(error_of([&] { encode(p, cfg, std::span<const TokenId>(too_long), Modality::Image); }) == ErrorCode::Length);
}

TEST_CASE("decoder properties") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto p = init_params<double>(cfg, 2);
  const auto src_tokens = ids(v, Modality::Speech, {1, 4, 0});
  const auto src = encode(p, cfg, std::span<const TokenId>(src_tokens), Modality::Speech);
  std::vector<TokenId> prefix{kBos};
  for (TokenId t : ids(v, Modality::Text, {6, 2, 2, 0, 5})) prefix.push_back(t);

  const auto full = full_logits(p, cfg, src, prefix, Modality::Text);
  for (std::size_t t = 1; t <= prefix.size(); ++t) {
    const auto step = decode_step(p, cfg, src, std::span<const TokenId>(prefix.data(), t), Modality::Text);
    CHECK((step - full.row(static_cast<Eigen::Index>(t) - 1)).cwiseAbs().maxCoeff() < 1e-12);
    const auto lp = log_softmax<double>(step);
    CHECK(std::abs(lp.array().exp().sum() - 1.0) < 1e-6);
  }

  const auto as_text = decode_step(p, cfg, src, std::span<const TokenId>(prefix), Modality::Text);
  const auto as_image = decode_step(p, cfg, src, std::span<const TokenId>(prefix), Modality::Image);
  CHECK((as_text - as_image).cwiseAbs().maxCoeff() > 0);

  const std::vector<TokenId> no_bos{prefix[1]};
  CHECK(error_of([&] { decode_step(p, cfg, src, std::span<const TokenId>(no_bos), Modality::Text); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("sequence loss values") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  auto p = init_params<double>(cfg, 3);
  std::mt19937_64 rng(3);
  const Batch b = oracle::random_batch(rng, v, {Modality::Text, Modality::Image}, 3);

  // tied output with zero embeddings and bias: every logit is 0
  auto flat = p;
  flat.token_embedding.setZero();
  CHECK(std::abs(sequence_loss(flat, cfg, b, false).loss - std::log(22.0)) < 1e-12);

  // a target with no tokens trains only EOS
  const std::vector<std::vector<TokenId>> s{ids(v, Modality::Text, {1, 2})}, t{{}};
  const Batch eos_only = Batch::from_pairs({Modality::Text, Modality::Speech}, s, t);
  const auto r = sequence_loss(p, cfg, eos_only, false);
  CHECK(r.positions == 1);
  const auto src = encode(p, cfg, std::span<const TokenId>(s[0]), Modality::Text);
  const std::vector<TokenId> bos{kBos};
  const auto lp = log_softmax<double>(decode_step(p, cfg, src, std::span<const TokenId>(bos), Modality::Speech));
  CHECK(std::abs(r.loss + lp(kEos)) < 1e-12);

  // extra PAD columns change nothing
  Batch wide = b;
  wide.source.conservativeResize(Eigen::NoChange, wide.source.cols() + 2);
  wide.source.rightCols(2).setConstant(kPad);
  wide.target.conservativeResize(Eigen::NoChange, wide.target.cols() + 3);
  wide.target.rightCols(3).setConstant(kPad);
  validate_batch(wide, v);
  CHECK(sequence_loss(p, cfg, wide, false).loss == sequence_loss(p, cfg, b, false).loss);

  Batch wrong = b;
  wrong.target(0, 0) = v.local_to_global(Modality::Speech, 0);
  if (b.target_lengths[0] > 0) CHECK(error_of([&] { validate_batch(wrong, v); }) == ErrorCode::Range);
}

TEST_CASE("gradient matches central differences") {
  const auto v = oracle::small_vocab();
  ModelConfig cfg = oracle::small_model(v);
  cfg.d_model = 8;
  cfg.ffn_dim = 16;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  std::mt19937_64 rng(11);
  const auto p = init_params<double>(cfg, 11);
  for (const Direction d : {Direction{Modality::Image, Modality::Text}, Direction{Modality::Text, Modality::Speech}}) {
    const auto res = oracle::gradient_check(p, cfg, oracle::random_batch(rng, v, d, 2));
    INFO(d.name() << " worst " << res.worst);
    CHECK(res.max_rel <= 1e-4);
    CHECK(res.entries == parameter_count(p));
  }

  // key biases shift every score of a row equally, so their gradient vanishes
  const auto g = sequence_loss(p, cfg, oracle::random_batch(rng, v, {Modality::Speech, Modality::Image}, 2)).grad;
  CHECK(g.encoder[0].self_attn.bk.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.decoder[0].cross_attn.bk.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("float and double agree") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto pd = init_params<double>(cfg, 4);
  const auto pf = cast_params<float>(pd);
  std::mt19937_64 rng(4);
  const Batch b = oracle::random_batch(rng, v, {Modality::Speech, Modality::Text}, 4);
  CHECK(std::abs(static_cast<double>(sequence_loss(pf, cfg, b, false).loss) - sequence_loss(pd, cfg, b, false).loss) <
        1e-4);
}

TEST_CASE("unified loss is the sum of per-direction losses") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(oracle::tmt_loss_decomposition_gap(seed) <= 1e-9);

  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto p = init_params<double>(cfg, 6);
  std::mt19937_64 rng(6);
  std::vector<Batch> batches;
  for (const auto& d : all_directions()) batches.push_back(oracle::random_batch(rng, v, d, 2));
  const auto joint = tmt_loss(p, cfg, std::span<const Batch>(batches));
  auto grad_sum = zeros_like(p);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto r = sequence_loss(p, cfg, batches[i]);
    CHECK(joint.per_direction[direction_index(batches[i].direction())] == r.loss);
    accumulate(grad_sum, r.grad);
  }
  zip_tensors(joint.grad, grad_sum, [](const std::string&, const Matrix<double>& a, const Matrix<double>& b) {
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  });

  // six batches with the same content (directions differ only by tags)
  std::vector<Batch> same;
  const std::vector<std::vector<TokenId>> s{{kUnk}}, t{{}};
  for (const auto& d : all_directions()) same.push_back(Batch::from_pairs(d, s, t));
  const std::vector<Batch> one{same[0]};
  const auto six = tmt_loss(p, cfg, std::span<const Batch>(same));
  double manual = 0;
  for (const auto& b : same) manual += sequence_loss(p, cfg, b, false).loss;
  CHECK(six.loss == manual);

  const std::span<const Batch> five(batches.data(), 5);
  CHECK(error_of([&] { tmt_loss(p, cfg, five); }) == ErrorCode::InvalidArgument);
  std::vector<Batch> dup = batches;
  dup[5] = dup[0];
  CHECK(error_of([&] { tmt_loss(p, cfg, std::span<const Batch>(dup)); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("checkpoint round trip") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  Checkpoint c{cfg, 42, init_params<double>(cfg, 9)};
  const auto dir = test::temp_dir("ckpt");
  save_checkpoint(dir / "a.tmt", c);
  const auto back = load_checkpoint(dir / "a.tmt");
  CHECK(back.config == cfg);
  CHECK(back.step == 42);
  zip_tensors(back.params, c.params, [](const std::string&, const Matrix<double>& a, const Matrix<double>& b) {
    CHECK(a == b);
  });
  save_checkpoint(dir / "b.tmt", back);
  CHECK(test::slurp(dir / "a.tmt") == test::slurp(dir / "b.tmt"));

  std::ofstream(dir / "bad.tmt") << "NOTACKPT\n";
  CHECK(error_of([&] { load_checkpoint(dir / "bad.tmt"); }) == ErrorCode::Io);
  CHECK(error_of([&] { model_config_from_kv({{"d_model", "16"}, {"bogus", "1"}}); }) == ErrorCode::Config);
}
