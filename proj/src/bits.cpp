#include "tmt/bits.hpp"

#include <bit>
#include <cstdio>

#include "tmt/common.hpp"

namespace tmt {

unsigned token_bit_width(std::uint64_t vocab) {
  if (vocab <= 1) return 0;
  return static_cast<unsigned>(std::bit_width(vocab - 1));
}

BitsReport bits_report(const BitsInput& in) {
  if (in.audio_seconds < 0 || in.token_rate <= 0) {
    fail(ErrorCode::InvalidArgument, "audio duration must be >= 0 and token rate > 0");
  }
  BitsReport r;
  r.speech_token_width = token_bit_width(in.speech_vocab);
  r.image_token_width = token_bit_width(in.image_vocab);

  r.speech_raw_bits = 16000.0 * in.audio_seconds * 16.0;
  r.speech_token_bits = in.token_rate * in.audio_seconds * r.speech_token_width;
  if (r.speech_raw_bits > 0) r.speech_percent = 100.0 * r.speech_token_bits / r.speech_raw_bits;

  r.image_raw_bits = static_cast<double>(in.image_height * in.image_width * 3 * 8);
  r.image_token_bits = static_cast<double>(in.image_tokens * r.image_token_width);
  if (r.image_raw_bits > 0) r.image_percent = 100.0 * r.image_token_bits / r.image_raw_bits;
  return r;
}

std::string format_bits_report(const BitsInput& in, const BitsReport& r) {
  auto pct = [](const std::optional<double>& p) {
    if (!p) return std::string("undefined");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.5f%%", *p);
    return std::string(buf);
  };
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-8s %-12s %16s %12s\n", "modality", "format", "bits", "percent");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %-12s %16.0f %12s\n", "speech", "raw-audio", r.speech_raw_bits,
                r.speech_raw_bits > 0 ? "100%" : "undefined");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %-12s %16.0f %12s\n", "speech", "tokens", r.speech_token_bits,
                pct(r.speech_percent).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %-12s %16.0f %12s\n", "image", "raw-rgb", r.image_raw_bits, "100%");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %-12s %16.0f %12s\n", "image", "tokens", r.image_token_bits,
                pct(r.image_percent).c_str());
  out += buf;
  std::snprintf(buf, sizeof buf,
                "audio_seconds=%g\ntoken_rate=%g\nspeech_vocab=%llu\nspeech_token_width=%u\n"
                "image_hw=%llux%llu\nimage_tokens=%llu\nimage_vocab=%llu\nimage_token_width=%u\n",
                in.audio_seconds, in.token_rate, static_cast<unsigned long long>(in.speech_vocab),
                r.speech_token_width, static_cast<unsigned long long>(in.image_height),
                static_cast<unsigned long long>(in.image_width),
                static_cast<unsigned long long>(in.image_tokens),
                static_cast<unsigned long long>(in.image_vocab), r.image_token_width);
  out += buf;
  out += "speech_percent=" + pct(r.speech_percent) + "\n";
  out += "image_percent=" + pct(r.image_percent) + "\n";
  return out;
}

}  // namespace tmt
