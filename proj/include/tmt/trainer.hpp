#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tmt/checkpoint.hpp"
#include "tmt/decode.hpp"
#include "tmt/seq2seq.hpp"

namespace tmt {

struct TrainConfig {
  int per_task_batch = 16;
  double peak_lr = 1e-4;
  int warmup_steps = 500;
  int total_steps = 5000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int log_every = 100;          // K
  int checkpoint_every = 1000;  // C; 0 keeps only the initial and final checkpoints

  void validate() const;
};

/// Recognized keys match the field names; unknown keys are a Config error.
TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv, TrainConfig base = {});
std::map<std::string, std::string> train_config_to_kv(const TrainConfig& cfg);

/// Linear warmup to `peak_lr` at `warmup_steps`, then inverse square root.
double lr_at(int step, const TrainConfig& cfg);

struct SequencePair {
  std::string id;
  std::vector<TokenId> source;
  std::vector<TokenId> target;
};

/// Training pairs for each ordered direction, indexed by direction_index.
struct PairCorpus {
  Vocabulary vocab;
  std::array<std::vector<SequencePair>, 6> pairs;

  const std::vector<SequencePair>& at(Direction d) const { return pairs[direction_index(d)]; }
  std::vector<SequencePair>& at(Direction d) { return pairs[direction_index(d)]; }
  std::size_t size() const;
};

/// Every example contributes one pair per ordered direction between the
/// modalities it carries.
PairCorpus make_pair_corpus(const std::vector<TokenizedExample>& examples, const Vocabulary& vocab);

/// Concatenation per direction; vocabularies must agree (Config error).
PairCorpus merge_corpora(const PairCorpus& a, const PairCorpus& b);

/// Endless shuffled epochs over one direction's pairs.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t count);

 private:
  void reshuffle();
  std::size_t n_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

Batch make_batch(Direction d, const std::vector<SequencePair>& pairs, const std::vector<std::size_t>& indices);

std::string format_log_line(int step, Direction d, double loss, double lr);

template <class Scalar>
struct AdamState {
  ModelParams<Scalar> m, v;
  std::uint64_t t = 0;

  static AdamState zeros(const ModelParams<Scalar>& like) { return {zeros_like(like), zeros_like(like), 0}; }
};

/// Clips `grads` in place to global norm `grad_clip`, then applies one
/// bias-corrected Adam update.  Returns the pre-clip global norm.  A
/// non-finite gradient aborts with the offending tensor's name.
template <class Scalar>
double adam_step(ModelParams<Scalar>& params, ModelParams<Scalar>& grads, AdamState<Scalar>& state, double lr,
                 const TrainConfig& cfg) {
  double sq = 0;
  for_each_tensor(grads, [&](const std::string& name, const Matrix<Scalar>& g) {
    if (!g.allFinite()) fail(ErrorCode::NonFinite, "non-finite gradient in tensor " + name);
    sq += g.template cast<double>().squaredNorm();
  });
  const double norm = std::sqrt(sq);
  if (cfg.grad_clip > 0 && norm > cfg.grad_clip) {
    const Scalar scale = static_cast<Scalar>(cfg.grad_clip / norm);
    for_each_tensor(grads, [&](const std::string&, Matrix<Scalar>& g) { g *= scale; });
  }
  ++state.t;
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.t)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.t)));
  const Scalar step = static_cast<Scalar>(lr);
  const Scalar eps = static_cast<Scalar>(cfg.eps);

  std::vector<Matrix<Scalar>*> ps, ms, vs;
  for_each_tensor(params, [&](const std::string&, Matrix<Scalar>& t) { ps.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, Matrix<Scalar>& t) { ms.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, Matrix<Scalar>& t) { vs.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(grads, [&](const std::string& name, const Matrix<Scalar>& g) {
    if (i >= ps.size() || ps[i]->rows() != g.rows() || ps[i]->cols() != g.cols()) {
      fail(ErrorCode::Shape, "gradient shape mismatch at " + name);
    }
    auto m = ms[i]->array();
    auto v = vs[i]->array();
    m = b1 * m + (Scalar(1) - b1) * g.array();
    v = b2 * v + (Scalar(1) - b2) * g.array().square();
    ps[i]->array() -= step * (m / c1) / ((v / c2).sqrt() + eps);
    ++i;
  });
  return norm;
}

struct StepReport {
  int step = 0;
  double lr = 0;
  double loss = 0;  // sum over the trained directions
  std::array<std::optional<double>, 6> per_direction;
};

/// One optimizer over a fixed set of directions: all six for the unified
/// model, a single one for a baseline.  Each direction draws its batches from
/// its own sampler seeded by (seed, direction), so a direction sees the same
/// batches whichever other directions are trained alongside it.
template <class Scalar>
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, ModelParams<Scalar> init, const PairCorpus& corpus, const TrainConfig& cfg,
          std::vector<Direction> directions)
      : model_cfg_(model_cfg),
        params_(std::move(init)),
        corpus_(corpus),
        cfg_(cfg),
        directions_(std::move(directions)),
        adam_(AdamState<Scalar>::zeros(params_)) {
    cfg_.validate();
    model_cfg_.validate();
    check_params(params_, model_cfg_);
    if (corpus.vocab.total() != model_cfg_.vocab_total) {
      fail(ErrorCode::Config, "corpus vocabulary size " + std::to_string(corpus.vocab.total()) +
                                  " differs from the model's " + std::to_string(model_cfg_.vocab_total));
    }
    if (directions_.empty()) fail(ErrorCode::InvalidArgument, "no directions to train");
    if (directions_.size() == 6) check_direction_cover(directions_);
    if (directions_.size() != 6 && directions_.size() != 1) {
      fail(ErrorCode::InvalidArgument, "train either all six directions or exactly one");
    }
    for (const auto& d : directions_) {
      const std::size_t idx = direction_index(d);  // rejects source == target
      if (corpus.pairs[idx].empty()) fail(ErrorCode::InvalidArgument, "empty corpus for direction " + d.name());
      samplers_[idx].emplace(corpus.pairs[idx].size(), derive_seed(cfg_.seed, "sampler", idx));
    }
  }

  /// Directions whose gradient is dropped (their loss is still computed).
  void set_gradient_mask(std::array<bool, 6> active) { active_ = active; }

  const ModelParams<Scalar>& params() const { return params_; }
  int steps_done() const { return step_; }

  StepReport step() {
    StepReport r;
    r.step = ++step_;
    r.lr = lr_at(step_, cfg_);
    ModelParams<Scalar> grad;
    if (directions_.size() == 6) {
      std::vector<PackedBatch> batches;
      for (const auto& d : directions_) batches.push_back(sample(d));
      auto res = tmt_loss(params_, model_cfg_, std::span<const PackedBatch>(batches), active_);
      for (std::size_t i = 0; i < 6; ++i) r.per_direction[i] = static_cast<double>(res.per_direction[i]);
      r.loss = static_cast<double>(res.loss);
      grad = std::move(res.grad);
    } else {
      const Direction d = directions_.front();
      auto res = sequence_loss(params_, model_cfg_, sample(d), true);
      r.per_direction[direction_index(d)] = static_cast<double>(res.loss);
      r.loss = static_cast<double>(res.loss);
      grad = std::move(res.grad);
    }
    adam_step(params_, grad, adam_, r.lr, cfg_);
    return r;
  }

 private:
  PackedBatch sample(Direction d) {
    const std::size_t idx = direction_index(d);
    const auto picks = samplers_[idx]->next(static_cast<std::size_t>(cfg_.per_task_batch));
    return pack(make_batch(d, corpus_.pairs[idx], picks));
  }

  ModelConfig model_cfg_;
  ModelParams<Scalar> params_;
  const PairCorpus& corpus_;
  TrainConfig cfg_;
  std::vector<Direction> directions_;
  AdamState<Scalar> adam_;
  std::array<std::optional<EpochSampler>, 6> samplers_;
  std::array<bool, 6> active_{true, true, true, true, true, true};
  int step_ = 0;
};

struct TrainResult {
  Checkpoint final;
  std::vector<std::string> log;            // metric lines
  std::vector<double> step_losses;         // summed loss per step
  std::vector<std::filesystem::path> checkpoints;
};

/// Optional observer called after every step (progress reporting).
using StepObserver = std::function<void(const StepReport&)>;

/// Runs `cfg.total_steps` steps.  With `out_dir`, writes `ckpt-<step>.tmt`
/// for step 0, every `checkpoint_every` steps and the last step, plus
/// `train.log`.  Log lines are emitted at step 1, every `log_every` steps and
/// the last step.
template <class Scalar>
TrainResult run_training(const ModelConfig& model_cfg, const ModelParams<Scalar>& init, const PairCorpus& corpus,
                         const TrainConfig& cfg, const std::vector<Direction>& directions,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                         const StepObserver& observer = {}) {
  Trainer<Scalar> trainer(model_cfg, init, corpus, cfg, directions);
  TrainResult out;
  auto snapshot = [&](int step) {
    Checkpoint c{model_cfg, static_cast<std::uint64_t>(step), cast_params<double>(trainer.params())};
    if (out_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt-%06d.tmt", step);
      save_checkpoint(*out_dir / name, c);
      out.checkpoints.push_back(*out_dir / name);
    }
    return c;
  };
  if (out_dir) std::filesystem::create_directories(*out_dir);
  out.final = snapshot(0);
  for (int s = 1; s <= cfg.total_steps; ++s) {
    const StepReport r = trainer.step();
    out.step_losses.push_back(r.loss);
    if (s == 1 || s % cfg.log_every == 0 || s == cfg.total_steps) {
      for (const auto& d : all_directions()) {
        const auto& l = r.per_direction[direction_index(d)];
        if (l) out.log.push_back(format_log_line(s, d, *l, r.lr));
      }
    }
    if (observer) observer(r);
    if (s == cfg.total_steps || (cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0)) {
      out.final = snapshot(s);
    }
  }
  if (out_dir) {
    std::ofstream log(*out_dir / "train.log");
    for (const auto& line : out.log) log << line << '\n';
    if (!log) fail(ErrorCode::Io, "cannot write " + (*out_dir / "train.log").string());
  }
  return out;
}

template <class Scalar>
TrainResult train(const ModelConfig& model_cfg, const ModelParams<Scalar>& init, const PairCorpus& corpus,
                  const TrainConfig& cfg, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const StepObserver& observer = {}) {
  const auto& dirs = all_directions();
  return run_training(model_cfg, init, corpus, cfg, std::vector<Direction>(dirs.begin(), dirs.end()), out_dir,
                      observer);
}

template <class Scalar>
TrainResult single_task_train(const ModelConfig& model_cfg, const ModelParams<Scalar>& init,
                              const PairCorpus& corpus, Direction d, const TrainConfig& cfg,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                              const StepObserver& observer = {}) {
  direction_index(d);
  return run_training(model_cfg, init, corpus, cfg, {d}, out_dir, observer);
}

/// Rejects a checkpoint whose model configuration differs from `expected`.
void check_resume(const Checkpoint& ckpt, const ModelConfig& expected);

/// Position-weighted mean cross-entropy of the model on every pair of one
/// direction, evaluated in batches of `batch`.
template <class Scalar>
double heldout_loss(const ModelParams<Scalar>& p, const ModelConfig& cfg, const PairCorpus& corpus, Direction d,
                    std::size_t batch = 32) {
  const auto& pairs = corpus.at(d);
  if (pairs.empty()) fail(ErrorCode::InvalidArgument, "no held-out pairs for " + d.name());
  double total = 0;
  std::size_t positions = 0;
  for (std::size_t b = 0; b < pairs.size(); b += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(pairs.size(), b + batch); ++i) idx.push_back(i);
    const auto r = sequence_loss(p, cfg, pack(make_batch(d, pairs, idx)), false);
    total += static_cast<double>(r.loss) * static_cast<double>(r.positions);
    positions += r.positions;
  }
  return total / static_cast<double>(positions);
}

struct BtConfig {
  // (pseudo-source modality k, real target modality m)
  std::vector<Direction> source_directions{{Modality::Image, Modality::Text}, {Modality::Speech, Modality::Text}};
  bool beam = false;
  double continue_peak_lr = 5e-5;
  DecodeConfig decode;

  void validate() const;
};

struct BtResult {
  PairCorpus pseudo;
  std::vector<TokenRecord> records;  // pseudo source then real target per pair, ids `bt-<k2m>-<id>`
  std::size_t attempted = 0;
  std::size_t skipped = 0;
  std::size_t emitted() const { return attempted - skipped; }
};

/// Id of a pseudo pair: `bt-<k2m>-<original id>`.
std::string bt_pair_id(Direction d, const std::string& original);

/// Rebuilds the pseudo corpus from records written by back translation.
PairCorpus pseudo_corpus_from_records(const std::vector<TokenRecord>& records, const Vocabulary& vocab);

/// Translates each target-modality sequence into every configured pseudo
/// source modality and pairs the result with the real sequence.  Decodes
/// that never reach EOS are skipped and counted.
template <class Scalar>
BtResult back_translate(const ModelParams<Scalar>& p, const ModelConfig& cfg, const Vocabulary& vocab,
                        const std::vector<TokenRecord>& targets, const BtConfig& bt) {
  bt.validate();
  BtResult out;
  out.pseudo.vocab = vocab;
  for (const auto& rec : targets) {
    validate(rec.seq, vocab);
    for (const auto& d : bt.source_directions) {
      if (d.target != rec.seq.modality) continue;
      ++out.attempted;
      std::optional<TokenSequence> pseudo;
      if (bt.beam) {
        const auto hyps = beam_decode(p, cfg, vocab, rec.seq, d.source, bt.decode);
        if (!hyps.empty()) pseudo = TokenSequence{d.source, hyps.front().body()};
      } else {
        pseudo = greedy_decode(p, cfg, vocab, rec.seq, d.source, bt.decode);
      }
      if (!pseudo || pseudo->tokens.empty()) {
        ++out.skipped;
        continue;
      }
      const std::string id = bt_pair_id(d, rec.id);
      out.pseudo.at(d).push_back({id, pseudo->tokens, rec.seq.tokens});
      out.records.push_back({id, *pseudo});
      out.records.push_back({id, rec.seq});
    }
  }
  return out;
}

/// Trains on the merged real and pseudo corpora at `bt.continue_peak_lr`.
template <class Scalar>
TrainResult continue_training(const ModelConfig& model_cfg, const ModelParams<Scalar>& start, const PairCorpus& real,
                              const PairCorpus& pseudo, TrainConfig cfg, const BtConfig& bt,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                              const StepObserver& observer = {}) {
  const PairCorpus merged = merge_corpora(real, pseudo);
  cfg.peak_lr = bt.continue_peak_lr;
  return train(model_cfg, start, merged, cfg, out_dir, observer);
}

}  // namespace tmt
