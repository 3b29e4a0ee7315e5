#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace tmt {

struct BitsInput {
  double audio_seconds = 1.0;
  double token_rate = 50.0;  // speech tokens per second
  std::uint64_t speech_vocab = 200;
  std::uint64_t image_height = 224;
  std::uint64_t image_width = 224;
  std::uint64_t image_tokens = 32;
  std::uint64_t image_vocab = 8192;
};

struct BitsReport {
  double speech_raw_bits = 0;    // 16 kHz x 16 bit
  double speech_token_bits = 0;  // tokens x ceil(log2 vocab)
  std::optional<double> speech_percent;
  double image_raw_bits = 0;     // H x W x 3 x 8
  double image_token_bits = 0;
  std::optional<double> image_percent;
  unsigned speech_token_width = 0;
  unsigned image_token_width = 0;
};

/// Bits needed to name one of `vocab` symbols, i.e. ceil(log2 vocab).
unsigned token_bit_width(std::uint64_t vocab);

BitsReport bits_report(const BitsInput& in);

std::string format_bits_report(const BitsInput& in, const BitsReport& report);

}  // namespace tmt
