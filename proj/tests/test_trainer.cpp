#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "tmt/trainer.hpp"

using namespace tmt;
using test::error_of;

namespace {

PairCorpus tiny_corpus(std::uint64_t seed, const Vocabulary& v, std::size_t per_direction) {
  std::mt19937_64 rng(seed);
  PairCorpus c;
  c.vocab = v;
  for (const auto& d : all_directions()) {
    for (std::size_t i = 0; i < per_direction; ++i) {
      c.at(d).push_back({"p" + std::to_string(i), oracle::random_tokens(rng, v, d.source, 1, 4),
                         oracle::random_tokens(rng, v, d.target, 1, 4)});
    }
  }
  return c;
}

TrainConfig quick_config(int steps) {
  TrainConfig t;
  t.per_task_batch = 3;
  t.peak_lr = 1e-2;
  t.warmup_steps = 2;
  t.total_steps = steps;
  t.log_every = 2;
  t.checkpoint_every = 3;
  t.seed = 5;
  return t;
}

template <class S>
double max_diff(const ModelParams<S>& a, const ModelParams<S>& b) {
  double d = 0;
  zip_tensors(a, b, [&](const std::string&, const Matrix<S>& x, const Matrix<S>& y) {
    d = std::max(d, static_cast<double>((x - y).cwiseAbs().maxCoeff()));
  });
  return d;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig t;
  t.peak_lr = 1e-4;
  t.warmup_steps = 500;
  CHECK(lr_at(1, t) == doctest::Approx(2e-7).epsilon(1e-12));
  CHECK(lr_at(500, t) == 1e-4);
  CHECK(lr_at(2000, t) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(std::abs(lr_at(501, t) - lr_at(500, t)) < 1e-7);
  for (int s = 501; s < 3000; ++s) CHECK(lr_at(s + 1, t) < lr_at(s, t));
  for (int s = 1; s < 500; ++s) CHECK(lr_at(s + 1, t) > lr_at(s, t));
  CHECK(error_of([&] { lr_at(0, t); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("Adam step") {
  ModelParams<double> p;
  p.output_bias = Matrix<double>::Constant(1, 1, 0.5);
  auto state = AdamState<double>::zeros(p);
  auto g = zeros_like(p);
  g.output_bias(0, 0) = 1.0;
  TrainConfig t;
  CHECK(adam_step(p, g, state, 1e-3, t) == 1.0);
  CHECK(std::abs((0.5 - p.output_bias(0, 0)) - 1e-3) < 1e-9);

  // zero gradient on a fresh state is a fixed point
  ModelParams<double> q = p;
  auto fresh = AdamState<double>::zeros(q);
  auto zero = zeros_like(q);
  adam_step(q, zero, fresh, 1e-3, t);
  CHECK(q.output_bias == p.output_bias);

  // with clip 1, scaling a gradient whose norm already exceeds 1 changes nothing
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto base = init_params<double>(cfg, 1);
  std::mt19937_64 rng(1);
  auto grad = sequence_loss(base, cfg, oracle::random_batch(rng, v, {Modality::Image, Modality::Text}, 2)).grad;
  double sq = 0;
  for_each_tensor(grad, [&](const std::string&, Matrix<double>& m) { m *= 50.0; sq += m.squaredNorm(); });
  REQUIRE(std::sqrt(sq) > 1.0);
  auto big = grad;
  for_each_tensor(big, [](const std::string&, Matrix<double>& m) { m *= 10.0; });
  auto pa = base, pb = base;
  auto sa = AdamState<double>::zeros(base), sb = AdamState<double>::zeros(base);
  adam_step(pa, grad, sa, 1e-3, t);
  adam_step(pb, big, sb, 1e-3, t);
  CHECK(max_diff(pa, pb) < 1e-15);
  double clipped = 0;
  for_each_tensor(big, [&](const std::string&, const Matrix<double>& m) { clipped += m.squaredNorm(); });
  CHECK(std::sqrt(clipped) <= 1.0 + 1e-12);

  auto bad = zeros_like(base);
  bad.decoder[1].ffn.w2(0, 0) = std::nan("");
  auto pc = base;
  auto sc = AdamState<double>::zeros(base);
  try {
    adam_step(pc, bad, sc, 1e-3, t);
    FAIL("expected a NonFinite error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
    CHECK(std::string(e.what()).find("dec.1.ffn.w2") != std::string::npos);
  }
}

TEST_CASE("training configuration") {
  TrainConfig t;
  t.warmup_steps = 10;
  t.total_steps = 10;
  CHECK(error_of([&] { t.validate(); }) == ErrorCode::InvalidArgument);
  t.total_steps = 0;
  t.validate();

  const auto kv = train_config_to_kv(quick_config(7));
  const auto back = train_config_from_kv(kv);
  CHECK(train_config_to_kv(back) == kv);
  CHECK(error_of([] { train_config_from_kv({{"learning_rate", "1"}}); }) == ErrorCode::Config);
  CHECK(error_of([] { train_config_from_kv({{"total_steps", "ten"}}); }) == ErrorCode::Config);

  CHECK(format_log_line(100, {Modality::Speech, Modality::Text}, 1.25, 5e-5) ==
        "step=100 dir=s2t loss=1.250000 lr=0.0000500000");
}

TEST_CASE("epoch sampler") {
  EpochSampler s(7, 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    auto e = s.next(7);
    std::sort(e.begin(), e.end());
    for (std::size_t i = 0; i < 7; ++i) CHECK(e[i] == i);
  }
  EpochSampler a(10, 9), b(10, 9);
  CHECK(a.next(25) == b.next(25));
  CHECK(error_of([] { EpochSampler(0, 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("training runs") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto corpus = tiny_corpus(1, v, 8);
  const auto init = init_params<float>(cfg, 2);

  SUBCASE("no steps") {
    const auto r = train(cfg, init, corpus, quick_config(0));
    CHECK(r.log.empty());
    CHECK(r.final.step == 0);
    CHECK(max_diff(r.final.params, cast_params<double>(init)) == 0);
  }

  SUBCASE("determinism and artifacts") {
    const auto dir = test::temp_dir("train");
    const auto a = train(cfg, init, corpus, quick_config(7), dir / "a");
    const auto b = train(cfg, init, corpus, quick_config(7), dir / "b");
    CHECK(a.log == b.log);
    CHECK(a.step_losses == b.step_losses);
    // log at steps 1, 2, 4, 6 and the last step, six lines each
    CHECK(a.log.size() == 5 * 6);
    CHECK(a.log.front().rfind("step=1 dir=i2s loss=", 0) == 0);
    REQUIRE(a.checkpoints.size() == 4);  // 0, 3, 6, 7
    CHECK(a.checkpoints.back().filename() == "ckpt-000007.tmt");
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
      CHECK(test::slurp(a.checkpoints[i]) == test::slurp(dir / "b" / a.checkpoints[i].filename()));
    }
    CHECK(test::slurp(dir / "a" / "train.log") == test::slurp(dir / "b" / "train.log"));
    const auto loaded = load_checkpoint(a.checkpoints.back());
    CHECK(loaded.step == 7);
    CHECK(max_diff(loaded.params, a.final.params) == 0);
    check_resume(loaded, cfg);
    ModelConfig other = cfg;
    other.ffn_dim = 64;
    CHECK(error_of([&] { check_resume(loaded, other); }) == ErrorCode::Config);
  }

  SUBCASE("loss goes down") {
    const auto r = train(cfg, init, corpus, quick_config(60));
    double head = 0, tail = 0;
    for (int i = 0; i < 5; ++i) {
      head += r.step_losses[static_cast<std::size_t>(i)];
      tail += r.step_losses[r.step_losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(tail < head);
  }

  SUBCASE("invalid inputs") {
    PairCorpus missing = corpus;
    missing.at({Modality::Speech, Modality::Image}).clear();
    CHECK(error_of([&] { train(cfg, init, missing, quick_config(3)); }) == ErrorCode::InvalidArgument);
    // a single-direction run only needs its own pairs
    single_task_train(cfg, init, missing, {Modality::Image, Modality::Text}, quick_config(3));
    CHECK(error_of([&] { single_task_train(cfg, init, corpus, {Modality::Text, Modality::Text}, quick_config(3)); }) ==
          ErrorCode::InvalidArgument);
    PairCorpus other_vocab = corpus;
    other_vocab.vocab = Vocabulary::build(6, 5, 8);
    CHECK(error_of([&] { train(cfg, init, other_vocab, quick_config(3)); }) == ErrorCode::Config);
  }
}

TEST_CASE("unified step with masked directions equals a single-task step") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto corpus = tiny_corpus(4, v, 6);
  const auto init = init_params<double>(cfg, 4);
  const auto t = quick_config(5);
  for (const auto& d : all_directions()) {
    const auto& dirs = all_directions();
    Trainer<double> unified(cfg, init, corpus, t, std::vector<Direction>(dirs.begin(), dirs.end()));
    std::array<bool, 6> mask{};
    mask[direction_index(d)] = true;
    unified.set_gradient_mask(mask);
    Trainer<double> single(cfg, init, corpus, t, {d});
    for (int s = 0; s < 2; ++s) {
      const auto ru = unified.step();
      const auto rs = single.step();
      CHECK(*ru.per_direction[direction_index(d)] == rs.loss);
    }
    CHECK(max_diff(unified.params(), single.params()) <= 1e-12);
  }
}

TEST_CASE("held-out loss") {
  const auto v = oracle::small_vocab();
  const auto cfg = oracle::small_model(v);
  const auto corpus = tiny_corpus(8, v, 5);
  const auto p = init_params<double>(cfg, 8);
  const Direction d{Modality::Text, Modality::Image};
  // batched weighting equals one big batch
  const double batched = heldout_loss(p, cfg, corpus, d, 2);
  std::vector<std::size_t> all{0, 1, 2, 3, 4};
  const double whole = sequence_loss(p, cfg, make_batch(d, corpus.at(d), all), false).loss;
  CHECK(std::abs(batched - whole) < 1e-12);
}

TEST_CASE("back translation") {
  const auto v = oracle::small_vocab();
  ModelConfig cfg = oracle::small_model(v);
  cfg.max_len = 40;
  const auto p = init_params<double>(cfg, 3);
  std::mt19937_64 rng(3);
  std::vector<TokenRecord> targets;
  for (int i = 0; i < 6; ++i) {
    targets.push_back({"x" + std::to_string(i), {Modality::Text, oracle::random_tokens(rng, v, Modality::Text, 1, 4)}});
  }
  BtConfig bt;
  bt.source_directions = {{Modality::Image, Modality::Text}, {Modality::Speech, Modality::Text}};
  bt.decode.speech_max_len = 6;

  const auto r = back_translate(p, cfg, v, targets, bt);
  CHECK(r.attempted == targets.size() * 2);
  CHECK(r.emitted() == r.pseudo.size());
  CHECK(r.records.size() == 2 * r.emitted());
  for (const auto& d : all_directions()) {
    for (const auto& pair : r.pseudo.at(d)) {
      CHECK(pair.id.rfind("bt-" + d.name() + "-", 0) == 0);
      for (TokenId t : pair.source) CHECK(v.range(d.source).contains(t));
    }
  }
  // every image decode has a fixed length and always finishes
  CHECK(r.pseudo.at({Modality::Image, Modality::Text}).size() == targets.size());

  const auto rebuilt = pseudo_corpus_from_records(r.records, v);
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(rebuilt.pairs[i].size() == r.pseudo.pairs[i].size());
    for (std::size_t j = 0; j < rebuilt.pairs[i].size(); ++j) {
      CHECK(rebuilt.pairs[i][j].source == r.pseudo.pairs[i][j].source);
      CHECK(rebuilt.pairs[i][j].target == r.pseudo.pairs[i][j].target);
    }
  }

  const auto empty = back_translate(p, cfg, v, {}, bt);
  CHECK(empty.attempted == 0);
  CHECK(empty.pseudo.size() == 0);

  BtConfig bad = bt;
  bad.source_directions = {{Modality::Text, Modality::Text}};
  CHECK(error_of([&] { back_translate(p, cfg, v, targets, bad); }) == ErrorCode::InvalidArgument);

  PairCorpus other;
  other.vocab = Vocabulary::build(6, 5, 8);
  CHECK(error_of([&] { merge_corpora(r.pseudo, other); }) == ErrorCode::Config);

  // an empty pseudo corpus reduces to plain training at the continuation rate
  const auto real = tiny_corpus(3, v, 4);
  PairCorpus none;
  none.vocab = v;
  auto t = quick_config(3);
  const auto cont = continue_training(cfg, p, real, none, t, bt);
  t.peak_lr = bt.continue_peak_lr;
  const auto plain = train(cfg, p, real, t);
  CHECK(cont.log == plain.log);
  CHECK(max_diff(cont.final.params, plain.final.params) == 0);
}
