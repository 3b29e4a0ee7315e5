#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tmt {

enum class ErrorCode {
  InvalidArgument,
  Range,
  Domain,
  Length,
  Shape,
  InsufficientData,
  Config,
  Io,
  NonFinite,
  NoFinish,
};

std::string_view error_code_name(ErrorCode code);

/// Single exception type for the library; `code()` drives the CLI's
/// `error: <code>: <message>` line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

/// Derives an independent sub-seed from a root seed and a purpose tag.
/// Fixed FNV-1a over the tag, mixed with splitmix64.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                          std::uint64_t index = 0);

}  // namespace tmt
