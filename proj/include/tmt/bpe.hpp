#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tmt/vocab.hpp"

namespace tmt {

/// Byte-level BPE.  Local ids: base symbols first (sorted bytes), then one id
/// per merge in merge order.
class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeModel() = default;
  BpeModel(std::vector<std::string> base_symbols, std::vector<Merge> merges);

  const std::vector<std::string>& base_symbols() const { return base_; }
  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(TokenId local_id) const;

  /// Local ids; -1 marks a byte outside the base inventory.
  std::vector<TokenId> encode_local(const std::string& text) const;

  bool operator==(const BpeModel& other) const {
    return base_ == other.base_ && merges_ == other.merges_;
  }

 private:
  std::vector<std::string> base_;
  std::vector<Merge> merges_;
  std::vector<std::string> symbols_;
  std::map<std::string, TokenId> ids_;
  std::map<std::pair<TokenId, TokenId>, std::size_t> merge_rank_;
};

/// Repeatedly merges the most frequent adjacent pair (ties: smallest pair in
/// lexicographic order) until the vocabulary reaches `target_vocab` or no
/// pair occurs more than once.
BpeModel train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab);

/// Unknown bytes become UNK.
TokenSequence encode_text(const BpeModel& model, const std::string& text, const Vocabulary& vocab);

inline constexpr const char* kUnkMarker = "<unk>";

/// Concatenates symbols; UNK renders as `<unk>`, BOS/EOS/PAD are dropped.
std::string decode_text(const BpeModel& model, const TokenSequence& seq, const Vocabulary& vocab);

// `TMTBPE <n_base> <n_merges>`, base symbols one per line, then `<left> <right>`
// lines.  Symbols are escaped: `\\`, `\s` (space), `\t`, `\n`, `\r`, `\xHH`.
void save_bpe(const BpeModel& model, const std::filesystem::path& path);
BpeModel load_bpe(const std::filesystem::path& path);

std::string escape_symbol(const std::string& s);
std::string unescape_symbol(const std::string& s);

}  // namespace tmt
