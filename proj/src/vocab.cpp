#include "tmt/vocab.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "tmt/common.hpp"

namespace tmt {

char modality_letter(Modality m) {
  switch (m) {
    case Modality::Image: return 'i';
    case Modality::Speech: return 's';
    case Modality::Text: return 't';
  }
  return '?';
}

Modality modality_from_letter(char c) {
  switch (c) {
    case 'i': return Modality::Image;
    case 's': return Modality::Speech;
    case 't': return Modality::Text;
    default: fail(ErrorCode::InvalidArgument, std::string("unknown modality letter '") + c + "'");
  }
}

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::Image: return "image";
    case Modality::Speech: return "speech";
    case Modality::Text: return "text";
  }
  return "?";
}

Vocabulary Vocabulary::build(TokenId image_size, TokenId speech_size, TokenId text_size) {
  if (image_size < 1 || speech_size < 1 || text_size < 1) {
    fail(ErrorCode::InvalidArgument, "vocabulary sizes must be >= 1");
  }
  Vocabulary v;
  v.sizes_ = {image_size, speech_size, text_size};
  v.offsets_[0] = kSpecialCount;
  v.offsets_[1] = v.offsets_[0] + image_size;
  v.offsets_[2] = v.offsets_[1] + speech_size;
  return v;
}

TokenId Vocabulary::local_to_global(Modality m, TokenId local_id) const {
  if (local_id < 0 || local_id >= size(m)) {
    fail(ErrorCode::Range, "local id " + std::to_string(local_id) + " out of range for " +
                               modality_name(m) + " vocabulary of size " +
                               std::to_string(size(m)));
  }
  return offset(m) + local_id;
}

std::optional<Modality> Vocabulary::owner(TokenId global_id) const {
  for (Modality m : kModalities) {
    if (range(m).contains(global_id)) return m;
  }
  return std::nullopt;
}

Vocabulary::Local Vocabulary::global_to_local(TokenId global_id) const {
  auto m = owner(global_id);
  if (!m) {
    fail(ErrorCode::Domain,
         "global id " + std::to_string(global_id) + " is not owned by any modality");
  }
  return {*m, global_id - offset(*m)};
}

void validate(const TokenSequence& seq, const Vocabulary& vocab) {
  const TokenRange r = vocab.range(seq.modality);
  const std::size_t n = seq.tokens.size();
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId t = seq.tokens[i];
    if (r.contains(t)) continue;
    if (t == kUnk && seq.modality == Modality::Text) continue;
    const bool edge = (i == 0 && t == kBos) || (i + 1 == n && t == kEos) || t == kPad;
    if (edge) continue;
    fail(ErrorCode::Range, "token " + std::to_string(t) + " at position " + std::to_string(i) +
                               " outside the " + modality_name(seq.modality) + " range");
  }
}

TokenSequence dedup_runs(const TokenSequence& seq) {
  TokenSequence out{seq.modality, {}};
  out.tokens.reserve(seq.tokens.size());
  for (TokenId t : seq.tokens) {
    if (out.tokens.empty() || out.tokens.back() != t) out.tokens.push_back(t);
  }
  return out;
}

std::string Direction::name() const {
  return std::string{modality_letter(source), '2', modality_letter(target)};
}

const std::array<Direction, 6>& all_directions() {
  static const std::array<Direction, 6> dirs{{
      {Modality::Image, Modality::Speech},
      {Modality::Image, Modality::Text},
      {Modality::Speech, Modality::Image},
      {Modality::Speech, Modality::Text},
      {Modality::Text, Modality::Image},
      {Modality::Text, Modality::Speech},
  }};
  return dirs;
}

std::size_t direction_index(Direction d) {
  const auto& dirs = all_directions();
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    if (dirs[i] == d) return i;
  }
  fail(ErrorCode::InvalidArgument, "source and target modality must differ");
}

Direction direction_from_name(const std::string& name) {
  if (name.size() != 3 || name[1] != '2') {
    fail(ErrorCode::InvalidArgument, "direction must look like 'i2t', got '" + name + "'");
  }
  Direction d{modality_from_letter(name[0]), modality_from_letter(name[2])};
  direction_index(d);
  return d;
}

std::string format_token_record(const TokenRecord& record) {
  std::string line = record.id;
  line += '\t';
  line += modality_letter(record.seq.modality);
  line += '\t';
  for (std::size_t i = 0; i < record.seq.tokens.size(); ++i) {
    if (i) line += ' ';
    line += std::to_string(record.seq.tokens[i]);
  }
  return line;
}

void write_token_corpus(const std::filesystem::path& path, const std::vector<TokenRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << format_token_record(r) << '\n';
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

std::vector<TokenRecord> read_token_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<TokenRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos || tab2 != tab1 + 2) {
      fail(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) + ": malformed record");
    }
    TokenRecord r;
    r.id = line.substr(0, tab1);
    r.seq.modality = modality_from_letter(line[tab1 + 1]);
    std::istringstream ids(line.substr(tab2 + 1));
    long v;
    while (ids >> v) r.seq.tokens.push_back(static_cast<TokenId>(v));
    if (!ids.eof()) {
      fail(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) + ": bad token id");
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<TokenizedExample> group_records(const std::vector<TokenRecord>& records) {
  std::vector<TokenizedExample> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : records) {
    auto [it, inserted] = index.try_emplace(r.id, out.size());
    if (inserted) out.push_back(TokenizedExample{r.id, {}});
    out[it->second].views[static_cast<std::size_t>(r.seq.modality)] = r.seq;
  }
  return out;
}

std::vector<TokenRecord> flatten_examples(const std::vector<TokenizedExample>& examples) {
  std::vector<TokenRecord> out;
  for (const auto& ex : examples) {
    for (Modality m : kModalities) {
      if (ex.view(m)) out.push_back({ex.id, *ex.view(m)});
    }
  }
  return out;
}

}  // namespace tmt
