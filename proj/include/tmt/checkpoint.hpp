#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "tmt/model.hpp"

namespace tmt {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  ModelParams<double> params;
};

/// `TMTCKPT <version>`, ModelConfig as key=value lines, `step=`, `tensors=`,
/// then per tensor `<name> <rank> <dims...>` and little-endian float64 data.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::map<std::string, std::string> model_config_to_kv(const ModelConfig& cfg);
/// Unknown keys are rejected with a Config error.
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv);

/// Key=value text parsing shared by config files; `#` starts a comment.
std::map<std::string, std::string> parse_kv_text(const std::string& text, const std::string& origin);
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);

}  // namespace tmt
