#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "tmt/bpe.hpp"
#include "tmt/codebook.hpp"
#include "tmt/image.hpp"
#include "tmt/speech.hpp"
#include "tmt/synthworld.hpp"
#include "tmt/vocab.hpp"

namespace tmt {

/// Raw data of one modality: image raster, speech feature frames, or text.
using RawData = std::variant<Raster, RowMatrix, std::string>;

Modality raw_modality(const RawData& raw);

/// The three trained tokenizers plus the vocabulary they map into.
struct Tokenizers {
  Vocabulary vocab;
  Codebook image_codebook;
  Codebook speech_codebook;
  PatchGrid grid;
  BpeModel bpe;
  std::size_t speech_cap = kDefaultSpeechCap;

  TokenSequence tokenize(const RawData& raw) const;
  RawData detokenize(const TokenSequence& seq) const;
};

struct TokenizerConfig {
  TokenId image_vocab = 256;
  TokenId speech_vocab = 200;
  TokenId text_vocab = 200;
  int kmeans_iters = 30;
  std::size_t speech_cap = kDefaultSpeechCap;
  std::uint64_t seed = 0;
};

/// Fits both codebooks (raw vectors, no normalization) and the BPE model on
/// the given manifest entries.
Tokenizers train_tokenizers(const std::filesystem::path& corpus_dir, const std::vector<ManifestEntry>& entries,
                            const TokenizerConfig& cfg);

/// Directory layout: `tokenizers.txt` (key=value), `image.cb`, `speech.cb`, `text.bpe`.
void save_tokenizers(const Tokenizers& tok, const std::filesystem::path& dir);
Tokenizers load_tokenizers(const std::filesystem::path& dir);

TokenizedExample tokenize_example(const Tokenizers& tok, const TriModalExample& ex);
std::vector<TokenizedExample> tokenize_entries(const Tokenizers& tok, const std::filesystem::path& corpus_dir,
                                               const std::vector<ManifestEntry>& entries);

/// Speech back to characters: one frame per token, each frame mapped to the
/// nearest zero-noise prototype.
std::string speech_tokens_to_text(const Tokenizers& tok, const TokenSequence& seq);

/// Text as it reads after speech tokenization collapses repeated characters
/// ("green" -> "gren").
std::string collapse_repeats(const std::string& text);

}  // namespace tmt
