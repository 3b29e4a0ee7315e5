#include "tmt/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace tmt {

void TrainConfig::validate() const {
  if (per_task_batch < 1) fail(ErrorCode::InvalidArgument, "per_task_batch must be >= 1");
  if (!(peak_lr > 0) || !(eps > 0) || grad_clip < 0) {
    fail(ErrorCode::InvalidArgument, "peak_lr and eps must be positive, grad_clip non-negative");
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    fail(ErrorCode::InvalidArgument, "Adam betas must lie in [0, 1)");
  }
  if (warmup_steps < 1 || total_steps < 0) {
    fail(ErrorCode::InvalidArgument, "warmup_steps must be >= 1 and total_steps >= 0");
  }
  if (total_steps > 0 && warmup_steps >= total_steps) {
    fail(ErrorCode::InvalidArgument, "warmup_steps (" + std::to_string(warmup_steps) +
                                         ") must be below total_steps (" + std::to_string(total_steps) + ")");
  }
  if (log_every < 1 || checkpoint_every < 0) {
    fail(ErrorCode::InvalidArgument, "log_every must be >= 1 and checkpoint_every >= 0");
  }
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !in.eof()) fail(ErrorCode::Config, "key '" + key + "' has a malformed value '" + value + "'");
  return out;
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv, TrainConfig cfg) {
  for (const auto& [k, v] : kv) {
    if (k == "per_task_batch") cfg.per_task_batch = parse_number<int>(k, v);
    else if (k == "peak_lr") cfg.peak_lr = parse_number<double>(k, v);
    else if (k == "warmup_steps") cfg.warmup_steps = parse_number<int>(k, v);
    else if (k == "total_steps") cfg.total_steps = parse_number<int>(k, v);
    else if (k == "beta1") cfg.beta1 = parse_number<double>(k, v);
    else if (k == "beta2") cfg.beta2 = parse_number<double>(k, v);
    else if (k == "eps") cfg.eps = parse_number<double>(k, v);
    else if (k == "grad_clip") cfg.grad_clip = parse_number<double>(k, v);
    else if (k == "seed") cfg.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "log_every") cfg.log_every = parse_number<int>(k, v);
    else if (k == "checkpoint_every") cfg.checkpoint_every = parse_number<int>(k, v);
    else fail(ErrorCode::Config, "unknown training config key '" + k + "'");
  }
  return cfg;
}

std::map<std::string, std::string> train_config_to_kv(const TrainConfig& cfg) {
  return {{"per_task_batch", std::to_string(cfg.per_task_batch)},
          {"peak_lr", format_double(cfg.peak_lr)},
          {"warmup_steps", std::to_string(cfg.warmup_steps)},
          {"total_steps", std::to_string(cfg.total_steps)},
          {"beta1", format_double(cfg.beta1)},
          {"beta2", format_double(cfg.beta2)},
          {"eps", format_double(cfg.eps)},
          {"grad_clip", format_double(cfg.grad_clip)},
          {"seed", std::to_string(cfg.seed)},
          {"log_every", std::to_string(cfg.log_every)},
          {"checkpoint_every", std::to_string(cfg.checkpoint_every)}};
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < 1) fail(ErrorCode::InvalidArgument, "learning-rate steps start at 1");
  const double w = static_cast<double>(cfg.warmup_steps);
  const double s = static_cast<double>(step);
  if (step <= cfg.warmup_steps) return cfg.peak_lr * s / w;
  return cfg.peak_lr * std::sqrt(w / s);
}

std::size_t PairCorpus::size() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.size();
  return n;
}

PairCorpus make_pair_corpus(const std::vector<TokenizedExample>& examples, const Vocabulary& vocab) {
  PairCorpus out;
  out.vocab = vocab;
  for (const auto& ex : examples) {
    for (const auto& d : all_directions()) {
      const auto& src = ex.view(d.source);
      const auto& tgt = ex.view(d.target);
      if (!src || !tgt) continue;
      validate(*src, vocab);
      validate(*tgt, vocab);
      out.at(d).push_back({ex.id, src->tokens, tgt->tokens});
    }
  }
  return out;
}

PairCorpus merge_corpora(const PairCorpus& a, const PairCorpus& b) {
  if (!(a.vocab == b.vocab)) fail(ErrorCode::Config, "corpora were tokenized under different vocabularies");
  PairCorpus out = a;
  for (std::size_t i = 0; i < 6; ++i) {
    out.pairs[i].insert(out.pairs[i].end(), b.pairs[i].begin(), b.pairs[i].end());
  }
  return out;
}

EpochSampler::EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed), order_(n) {
  if (n == 0) fail(ErrorCode::InvalidArgument, "cannot sample from an empty set");
  reshuffle();
}

void EpochSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  // Fisher-Yates with explicit draws so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n_; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng_() % i);
    std::swap(order_[i - 1], order_[j]);
  }
  pos_ = 0;
}

std::vector<std::size_t> EpochSampler::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (pos_ == n_) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

Batch make_batch(Direction d, const std::vector<SequencePair>& pairs, const std::vector<std::size_t>& indices) {
  std::vector<std::vector<TokenId>> src, tgt;
  src.reserve(indices.size());
  tgt.reserve(indices.size());
  for (std::size_t i : indices) {
    src.push_back(pairs.at(i).source);
    tgt.push_back(pairs.at(i).target);
  }
  return Batch::from_pairs(d, src, tgt);
}

std::string format_log_line(int step, Direction d, double loss, double lr) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "step=%d dir=%s loss=%.6f lr=%.10f", step, d.name().c_str(), loss, lr);
  return buf;
}

void check_resume(const Checkpoint& ckpt, const ModelConfig& expected) {
  if (!(ckpt.config == expected)) {
    fail(ErrorCode::Config, "checkpoint model configuration does not match the requested one");
  }
}

void BtConfig::validate() const {
  if (source_directions.empty()) fail(ErrorCode::InvalidArgument, "back translation needs at least one direction");
  for (const auto& d : source_directions) {
    if (d.source == d.target) {
      fail(ErrorCode::InvalidArgument, "pseudo-source and target are both " + modality_name(d.source));
    }
  }
  if (!(continue_peak_lr > 0)) fail(ErrorCode::InvalidArgument, "continue_peak_lr must be positive");
  if (decode.beam_width < 1) fail(ErrorCode::InvalidArgument, "beam width must be >= 1");
}

std::string bt_pair_id(Direction d, const std::string& original) { return "bt-" + d.name() + "-" + original; }

PairCorpus pseudo_corpus_from_records(const std::vector<TokenRecord>& records, const Vocabulary& vocab) {
  PairCorpus out;
  out.vocab = vocab;
  for (const auto& ex : group_records(records)) {
    if (ex.id.size() < 8 || ex.id.compare(0, 3, "bt-") != 0 || ex.id[6] != '-') {
      fail(ErrorCode::InvalidArgument, "'" + ex.id + "' is not a back-translation pair id");
    }
    const Direction d = direction_from_name(ex.id.substr(3, 3));
    const auto& src = ex.view(d.source);
    const auto& tgt = ex.view(d.target);
    if (!src || !tgt) fail(ErrorCode::InvalidArgument, "pair '" + ex.id + "' lacks one of its sequences");
    validate(*src, vocab);
    validate(*tgt, vocab);
    out.at(d).push_back({ex.id, src->tokens, tgt->tokens});
  }
  return out;
}

}  // namespace tmt
