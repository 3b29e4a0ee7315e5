#include "tmt/speech.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tmt/common.hpp"

namespace tmt {

TokenSequence tokenize_speech(const Codebook& cb, const RowMatrix& features, const Vocabulary& vocab,
                              std::size_t cap) {
  if (features.rows() < 1) fail(ErrorCode::InvalidArgument, "speech needs at least one frame");
  TokenSequence seq{Modality::Speech, {}};
  for (TokenId id : quantize(cb, features)) {
    seq.tokens.push_back(vocab.local_to_global(Modality::Speech, id));
  }
  seq = dedup_runs(seq);
  if (seq.tokens.size() > cap) {
    fail(ErrorCode::Length, "speech sequence has " + std::to_string(seq.tokens.size()) +
                                " tokens after deduplication, cap is " + std::to_string(cap));
  }
  return seq;
}

RowMatrix detokenize_speech(const Codebook& cb, const TokenSequence& seq, const Vocabulary& vocab) {
  if (seq.modality != Modality::Speech) fail(ErrorCode::Shape, "sequence is not a speech sequence");
  std::vector<TokenId> local;
  local.reserve(seq.tokens.size());
  for (TokenId t : seq.tokens) {
    const auto l = vocab.global_to_local(t);
    if (l.modality != Modality::Speech) fail(ErrorCode::Shape, "non-speech token in speech sequence");
    local.push_back(l.id);
  }
  return dequantize(cb, local);
}

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void write_features(const RowMatrix& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << "TMTFEAT " << features.cols() << ' ' << features.rows() << '\n';
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(
          static_cast<float>(features(i, j))));
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

RowMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string magic;
  Eigen::Index dim = -1, frames = -1;
  in >> magic >> dim >> frames;
  if (magic != "TMTFEAT" || dim < 1 || frames < 0 || in.get() != '\n') {
    fail(ErrorCode::Io, path.string() + ": not a TMTFEAT file");
  }
  RowMatrix features(frames, dim);
  for (Eigen::Index i = 0; i < frames; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      std::uint32_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), 4)) {
        fail(ErrorCode::Io, path.string() + ": truncated feature data");
      }
      features(i, j) = std::bit_cast<float>(to_little_endian(bits));
    }
  }
  return features;
}

}  // namespace tmt
