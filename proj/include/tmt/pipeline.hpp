#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tmt/evaluate.hpp"
#include "tmt/tokenizers.hpp"
#include "tmt/trainer.hpp"

namespace tmt {

/// A generated corpus after tokenizer training and tokenization.
struct PreparedCorpus {
  Tokenizers tok;
  std::vector<TokenizedExample> train, valid, test;
  PairCorpus train_pairs, valid_pairs, test_pairs;
};

/// Trains tokenizers on the train split and tokenizes every split.
PreparedCorpus prepare_corpus(const std::filesystem::path& corpus_dir, const TokenizerConfig& cfg);

/// Default desk-scale model over a vocabulary.
ModelConfig default_model_config(const Vocabulary& vocab);

struct SweepRow {
  TokenId speech_vocab = 0;
  DirectionReport s2t;  // speech -> text
  DirectionReport i2s;  // image -> speech
};

/// Retrains the speech codebook and the model for each size; needs two or
/// more sizes.  Every size uses the same seeds.
std::vector<SweepRow> sweep_speech_vocab(const std::filesystem::path& corpus_dir, const std::vector<TokenId>& sizes,
                                         const TokenizerConfig& tok_cfg, const ModelConfig& model_template,
                                         const TrainConfig& train_cfg, const DecodeConfig& dcfg);

std::string format_sweep(const std::vector<SweepRow>& rows);

}  // namespace tmt
