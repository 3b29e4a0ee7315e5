#pragma once

#include <cstddef>
#include <filesystem>

#include "tmt/codebook.hpp"
#include "tmt/vocab.hpp"

namespace tmt {

inline constexpr std::size_t kDefaultSpeechCap = 384;

/// Quantize frames, collapse runs, map to global ids.  Throws Length if the
/// deduplicated sequence exceeds `cap`.
TokenSequence tokenize_speech(const Codebook& cb, const RowMatrix& features, const Vocabulary& vocab,
                              std::size_t cap = kDefaultSpeechCap);

/// One frame per token; durations are not recoverable after deduplication.
RowMatrix detokenize_speech(const Codebook& cb, const TokenSequence& seq, const Vocabulary& vocab);

// `TMTFEAT <dim> <frames>\n` then frames x dim little-endian float32.
void write_features(const RowMatrix& features, const std::filesystem::path& path);
RowMatrix read_features(const std::filesystem::path& path);

}  // namespace tmt
