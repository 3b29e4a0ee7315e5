#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tmt {

enum class Modality : std::uint8_t { Image = 0, Speech = 1, Text = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::Image, Modality::Speech,
                                                     Modality::Text};

char modality_letter(Modality m);
Modality modality_from_letter(char c);
std::string modality_name(Modality m);

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kSpecialCount = 4;

struct TokenRange {
  TokenId begin;
  TokenId end;  // exclusive
  bool contains(TokenId id) const { return id >= begin && id < end; }
  TokenId size() const { return end - begin; }
};

/// Union token space: specials at [0, 4), then Image, Speech, Text blocks.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(TokenId image_size, TokenId speech_size, TokenId text_size);

  TokenId size(Modality m) const { return sizes_[index(m)]; }
  TokenId offset(Modality m) const { return offsets_[index(m)]; }
  TokenRange range(Modality m) const { return {offset(m), offset(m) + size(m)}; }
  TokenId total() const { return kSpecialCount + sizes_[0] + sizes_[1] + sizes_[2]; }

  TokenId local_to_global(Modality m, TokenId local_id) const;

  struct Local {
    Modality modality;
    TokenId id;
    bool operator==(const Local&) const = default;
  };
  Local global_to_local(TokenId global_id) const;

  std::optional<Modality> owner(TokenId global_id) const;

  bool operator==(const Vocabulary&) const = default;

 private:
  static std::size_t index(Modality m) { return static_cast<std::size_t>(m); }
  std::array<TokenId, 3> sizes_{};
  std::array<TokenId, 3> offsets_{};
};

struct TokenSequence {
  Modality modality = Modality::Text;
  std::vector<TokenId> tokens;

  bool operator==(const TokenSequence&) const = default;
};

/// Throws Range if a token lies outside the modality's block.  BOS/EOS/PAD
/// are accepted only at the edges; UNK anywhere in text.
void validate(const TokenSequence& seq, const Vocabulary& vocab);

/// Collapses runs of equal adjacent tokens.
TokenSequence dedup_runs(const TokenSequence& seq);

struct Direction {
  Modality source;
  Modality target;
  std::string name() const;  // e.g. "i2t"
  bool operator==(const Direction&) const = default;
};

/// The six ordered pairs in fixed order: i2s i2t s2i s2t t2i t2s.
const std::array<Direction, 6>& all_directions();
std::size_t direction_index(Direction d);
Direction direction_from_name(const std::string& name);

// Token corpus file: `<id> TAB <i|s|t> TAB <space-separated global ids>`.
struct TokenRecord {
  std::string id;
  TokenSequence seq;
};

void write_token_corpus(const std::filesystem::path& path, const std::vector<TokenRecord>& records);
std::vector<TokenRecord> read_token_corpus(const std::filesystem::path& path);
std::string format_token_record(const TokenRecord& record);

/// Tri-modal token view of one example; missing modalities are empty.
struct TokenizedExample {
  std::string id;
  std::array<std::optional<TokenSequence>, 3> views;

  const std::optional<TokenSequence>& view(Modality m) const {
    return views[static_cast<std::size_t>(m)];
  }
};

/// Groups records by id, keeping first-appearance order.
std::vector<TokenizedExample> group_records(const std::vector<TokenRecord>& records);
std::vector<TokenRecord> flatten_examples(const std::vector<TokenizedExample>& examples);

}  // namespace tmt
