#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "helpers.hpp"
#include "oracles.hpp"
#include "tmt/decode.hpp"

using namespace tmt;
using test::error_of;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Stepper driven by a function of the prefix (BOS included).
struct TableStepper {
  using State = std::vector<TokenId>;
  int vocab = 12;
  std::function<Eigen::RowVectorXd(const State&)> table;

  State initial() const { return {}; }
  Eigen::RowVectorXd next(State& s, TokenId t) const {
    s.push_back(t);
    return table(s);
  }
};

Eigen::RowVectorXd log_probs(int vocab, std::initializer_list<std::pair<TokenId, double>> probs) {
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Constant(vocab, kNegInf);
  for (const auto& [t, p] : probs) v(t) = std::log(p);
  return v;
}

// tokens 4 = "a", 5 = "b"; the other eight non-EOS ids 3..11 share what is left
TableStepper toy_stepper() {
  TableStepper s;
  s.table = [](const TableStepper::State& prefix) {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Constant(12, kNegInf);
    if (prefix.size() == 1) return log_probs(12, {{4, 0.6}, {5, 0.4}});
    const double eos = prefix[1] == 4 ? 0.1 : 0.9;
    v(kEos) = std::log(eos);
    for (TokenId t = 3; t < 12; ++t) v(t) = std::log((1 - eos) / 9);
    return v;
  };
  return s;
}

ModelConfig decode_model(const Vocabulary& v) {
  ModelConfig c = oracle::small_model(v);
  c.max_len = 40;
  return c;
}

DecodeConfig small_decode() {
  DecodeConfig d;
  d.beam_width = 3;
  d.speech_max_len = 12;
  d.text_max_len = 12;
  return d;
}

}  // namespace

TEST_CASE("beam search on a toy distribution") {
  const auto stepper = toy_stepper();
  const TargetConstraint none{};
  const auto hyps = beam_search(stepper, none, 2, 2);
  REQUIRE(hyps.size() == 2);
  CHECK(hyps[0].tokens == std::vector<TokenId>{kBos, 5, kEos});
  CHECK(std::abs(hyps[0].logprob - std::log(0.36)) < 1e-12);
  CHECK(hyps[1].tokens == std::vector<TokenId>{kBos, 4, kEos});
  CHECK(std::abs(hyps[1].logprob - std::log(0.06)) < 1e-12);
  CHECK(hyps[0].body() == std::vector<TokenId>{5});

  // greedy commits to "a" and then takes the lowest-id tie, EOS
  const auto g = greedy_search(stepper, none, 2);
  REQUIRE(g);
  CHECK(g->tokens == std::vector<TokenId>{kBos, 4, kEos});

  // exhaustive enumeration of the length-2 sequences ending in EOS
  double best = kNegInf;
  for (TokenId first : {4, 5}) {
    TableStepper::State s{kBos};
    const double lp1 = stepper.table(s)(first);
    s.push_back(first);
    best = std::max(best, lp1 + stepper.table(s)(kEos));
  }
  CHECK(std::abs(hyps[0].logprob - best) < 1e-12);

  CHECK(error_of([&] { beam_search(stepper, none, 0, 2); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("greedy follows a hand-built logit table") {
  TableStepper s;
  s.vocab = 8;
  s.table = [](const TableStepper::State& prefix) {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(8);
    switch (prefix.size()) {
      case 1: v(6) = 3; v(5) = 2.5; break;   // -> 6
      case 2: v(4) = 1; v(7) = 1; break;     // tie -> 4
      case 3: v(kEos) = 5; break;            // -> EOS
      default: break;
    }
    return v;
  };
  const auto g = greedy_search(s, TargetConstraint{}, 10);
  REQUIRE(g);
  CHECK(g->tokens == std::vector<TokenId>{kBos, 6, 4, kEos});
  CHECK(g->finished);

  // never reaching EOS within max_len gives no result
  TableStepper loop;
  loop.vocab = 8;
  loop.table = [](const TableStepper::State&) {
    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(8);
    v(5) = 1;
    return v;
  };
  CHECK(!greedy_search(loop, TargetConstraint{}, 5));
  CHECK(beam_search(loop, TargetConstraint{}, 2, 5).empty());
}

TEST_CASE("logit masking") {
  const auto v = oracle::small_vocab();
  DecodeConfig d;
  Eigen::RowVectorXd logits = Eigen::RowVectorXd::Zero(v.total());
  constrain_logits(logits, v, Modality::Speech, 0, d);
  for (TokenId t = 0; t < v.total(); ++t) CHECK(std::isfinite(logits(t)) == (t == kEos || v.range(Modality::Speech).contains(t)));

  Eigen::RowVectorXd img = Eigen::RowVectorXd::Zero(v.total());
  constrain_logits(img, v, Modality::Image, 5, d);
  CHECK(!std::isfinite(img(kEos)));
  Eigen::RowVectorXd last = Eigen::RowVectorXd::Zero(v.total());
  constrain_logits(last, v, Modality::Image, 32, d);
  for (TokenId t = 0; t < v.total(); ++t) CHECK(std::isfinite(last(t)) == (t == kEos));

  CHECK(error_of([] { masked_log_softmax(Eigen::RowVectorXd::Constant(3, kNegInf)); }) == ErrorCode::NoFinish);
}

TEST_CASE("incremental decoding matches full recomputation") {
  const auto v = oracle::small_vocab();
  const auto cfg = decode_model(v);
  const auto p = init_params<double>(cfg, 21);
  std::mt19937_64 rng(21);
  const auto src_tokens = oracle::random_tokens(rng, v, Modality::Text, 3, 6);
  const auto src = encode(p, cfg, std::span<const TokenId>(src_tokens), Modality::Text);
  IncrementalDecoder<double> dec(p, cfg, src, Modality::Image);
  auto state = dec.initial();
  std::vector<TokenId> prefix{kBos};
  const auto more = oracle::random_tokens(rng, v, Modality::Image, 10, 10);
  for (std::size_t i = 0; i <= more.size(); ++i) {
    const auto inc = dec.step(state, prefix.back());
    const auto full = decode_step(p, cfg, src, std::span<const TokenId>(prefix), Modality::Image);
    CHECK((inc - full).cwiseAbs().maxCoeff() < 1e-10);
    if (i < more.size()) prefix.push_back(more[i]);
  }
}

TEST_CASE("decoding properties on a random model") {
  const auto v = oracle::small_vocab();
  const auto cfg = decode_model(v);
  const auto p = init_params<double>(cfg, 22);
  std::mt19937_64 rng(22);
  DecodeConfig one = small_decode();
  one.beam_width = 1;
  const DecodeConfig three = small_decode();
  for (int trial = 0; trial < 12; ++trial) {
    const Direction d = all_directions()[static_cast<std::size_t>(trial % 6)];
    const TokenSequence src{d.source, oracle::random_tokens(rng, v, d.source, 1, 6)};

    const auto greedy = greedy_decode(p, cfg, v, src, d.target, one);
    const auto beam1 = beam_decode(p, cfg, v, src, d.target, one);
    CHECK(greedy.has_value() == !beam1.empty());
    if (greedy) CHECK(greedy->tokens == beam1.front().body());

    const auto hyps = beam_decode(p, cfg, v, src, d.target, three);
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const auto& h = hyps[i];
      CHECK(h.finished);
      CHECK(h.logprob <= 0);
      if (i > 0) CHECK(hyps[i - 1].score >= h.score);
      CHECK(std::abs(rescore(p, cfg, v, src, d.target, three, h) - h.logprob) <= 1e-5);
      for (TokenId t : h.body()) CHECK(v.range(d.target).contains(t));
      if (d.target == Modality::Image) CHECK(h.body().size() == 32);
    }
  }

  ModelConfig other = cfg;
  other.vocab_total = v.total() + 1;
  const TokenSequence src{Modality::Text, {v.local_to_global(Modality::Text, 0)}};
  CHECK(error_of([&] { greedy_decode(p, other, v, src, Modality::Image, one); }) == ErrorCode::Config);
}

TEST_CASE("translate direction contract") {
  const auto dir = test::temp_dir("translate");
  generate_corpus(dir / "corpus", 40, 3, 0.0);
  TokenizerConfig tc;
  tc.image_vocab = 24;
  tc.speech_vocab = 30;
  tc.text_vocab = 40;
  tc.kmeans_iters = 5;
  const auto splits = read_corpus(dir / "corpus");
  const auto tok = train_tokenizers(dir / "corpus", splits.train, tc);
  ModelConfig cfg = oracle::small_model(tok.vocab);
  cfg.max_len = 400;
  const auto p = init_params<float>(cfg, 1);
  const auto ex = load_example(dir / "corpus", splits.test.front());
  const std::array<RawData, 3> inputs{RawData(ex.image), RawData(ex.speech_features), RawData(ex.text)};

  DecodeConfig dc;
  dc.beam_width = 2;
  dc.text_max_len = 8;
  dc.speech_max_len = 8;
  for (const auto& d : all_directions()) {
    const RawData& in = inputs[static_cast<std::size_t>(d.source)];
    try {
      const RawData out = translate(p, cfg, tok, in, d.target, dc);
      CHECK(raw_modality(out) == d.target);
      if (d.target == Modality::Image) CHECK(std::get<Raster>(out).height == 32);
    } catch (const Error& e) {
      // an untrained model may never emit EOS within the short limits
      CHECK(e.code() == ErrorCode::NoFinish);
      CHECK(d.target != Modality::Image);
    }
  }
  CHECK(error_of([&] { translate(p, cfg, tok, inputs[2], Modality::Text, dc); }) == ErrorCode::InvalidArgument);
  ModelConfig wrong = cfg;
  wrong.vocab_total += 1;
  const auto pw = init_params<float>(wrong, 1);
  CHECK(error_of([&] { translate(pw, wrong, tok, inputs[2], Modality::Image, dc); }) == ErrorCode::Config);
}
