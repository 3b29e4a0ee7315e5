#include "tmt/bpe.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_map>

#include "tmt/common.hpp"

namespace tmt {

BpeModel::BpeModel(std::vector<std::string> base_symbols, std::vector<Merge> merges)
    : base_(std::move(base_symbols)), merges_(std::move(merges)) {
  for (const auto& s : base_) {
    if (s.size() != 1) fail(ErrorCode::InvalidArgument, "base symbols must be single bytes");
    if (!ids_.emplace(s, static_cast<TokenId>(symbols_.size())).second) {
      fail(ErrorCode::InvalidArgument, "duplicate base symbol '" + escape_symbol(s) + "'");
    }
    symbols_.push_back(s);
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [left, right] = merges_[r];
    auto l = ids_.find(left);
    auto rr = ids_.find(right);
    if (l == ids_.end() || rr == ids_.end()) {
      fail(ErrorCode::InvalidArgument, "merge " + std::to_string(r) + " uses an unknown symbol");
    }
    const std::string joined = left + right;
    if (!ids_.emplace(joined, static_cast<TokenId>(symbols_.size())).second) {
      fail(ErrorCode::InvalidArgument, "merge " + std::to_string(r) + " does not create a new symbol");
    }
    merge_rank_.emplace(std::make_pair(l->second, rr->second), r);
    symbols_.push_back(joined);
  }
}

const std::string& BpeModel::symbol(TokenId local_id) const {
  if (local_id < 0 || static_cast<std::size_t>(local_id) >= symbols_.size()) {
    fail(ErrorCode::Range, "bpe id " + std::to_string(local_id) + " out of range");
  }
  return symbols_[static_cast<std::size_t>(local_id)];
}

std::vector<TokenId> BpeModel::encode_local(const std::string& text) const {
  std::vector<TokenId> out;
  std::vector<TokenId> piece;
  auto flush = [&] {
    // lowest-rank pair first, all its occurrences left to right
    for (;;) {
      std::size_t best_rank = merges_.size();
      for (std::size_t i = 0; i + 1 < piece.size(); ++i) {
        auto it = merge_rank_.find({piece[i], piece[i + 1]});
        if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == merges_.size()) break;
      const auto& [left, right] = merges_[best_rank];
      const TokenId l = ids_.at(left), r = ids_.at(right), joined = ids_.at(left + right);
      std::vector<TokenId> next;
      next.reserve(piece.size());
      for (std::size_t i = 0; i < piece.size(); ++i) {
        if (i + 1 < piece.size() && piece[i] == l && piece[i + 1] == r) {
          next.push_back(joined);
          ++i;
        } else {
          next.push_back(piece[i]);
        }
      }
      piece.swap(next);
    }
    out.insert(out.end(), piece.begin(), piece.end());
    piece.clear();
  };
  for (char c : text) {
    auto it = ids_.find(std::string(1, c));
    if (it == ids_.end()) {
      flush();
      out.push_back(-1);
    } else {
      piece.push_back(it->second);
    }
  }
  flush();
  return out;
}

BpeModel train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab) {
  if (corpus.empty()) fail(ErrorCode::InvalidArgument, "bpe corpus is empty");

  std::set<std::string> chars;
  std::map<std::string, std::size_t> freq;
  for (const auto& s : corpus) {
    ++freq[s];
    for (char c : s) chars.emplace(1, c);
  }
  if (target_vocab < chars.size()) {
    fail(ErrorCode::InvalidArgument, "target vocabulary " + std::to_string(target_vocab) +
                                         " is below the character inventory of " +
                                         std::to_string(chars.size()));
  }

  std::vector<std::string> symbols(chars.begin(), chars.end());
  std::unordered_map<std::string, int> symbol_id;
  for (std::size_t i = 0; i < symbols.size(); ++i) symbol_id[symbols[i]] = static_cast<int>(i);

  struct Word {
    std::vector<int> syms;
    std::size_t count;
  };
  std::vector<Word> words;
  for (const auto& [s, n] : freq) {
    Word w{{}, n};
    for (char c : s) w.syms.push_back(symbol_id.at(std::string(1, c)));
    words.push_back(std::move(w));
  }

  std::vector<BpeModel::Merge> merges;
  std::set<std::pair<int, int>> banned;
  while (symbols.size() < target_vocab) {
    std::map<std::pair<int, int>, std::size_t> counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.syms.size(); ++i) counts[{w.syms[i], w.syms[i + 1]}] += w.count;
    }
    const std::pair<int, int>* best = nullptr;
    std::size_t best_count = 1;
    for (const auto& [pair, n] : counts) {
      if (banned.count(pair)) continue;
      if (n > best_count ||
          (n == best_count && best && n > 1 &&
           std::tie(symbols[pair.first], symbols[pair.second]) <
               std::tie(symbols[best->first], symbols[best->second]))) {
        best = &pair;
        best_count = n;
      }
    }
    if (!best) break;
    const auto [l, r] = *best;
    const std::string joined = symbols[l] + symbols[r];
    if (symbol_id.count(joined)) {
      banned.insert(*best);
      continue;
    }
    const int id = static_cast<int>(symbols.size());
    symbols.push_back(joined);
    symbol_id[joined] = id;
    merges.emplace_back(symbols[l], symbols[r]);
    for (auto& w : words) {
      std::vector<int> next;
      next.reserve(w.syms.size());
      for (std::size_t i = 0; i < w.syms.size(); ++i) {
        if (i + 1 < w.syms.size() && w.syms[i] == l && w.syms[i + 1] == r) {
          next.push_back(id);
          ++i;
        } else {
          next.push_back(w.syms[i]);
        }
      }
      w.syms.swap(next);
    }
  }
  return BpeModel(std::vector<std::string>(chars.begin(), chars.end()), std::move(merges));
}

TokenSequence encode_text(const BpeModel& model, const std::string& text, const Vocabulary& vocab) {
  if (model.size() > static_cast<std::size_t>(vocab.size(Modality::Text))) {
    fail(ErrorCode::Config, "bpe model has " + std::to_string(model.size()) +
                                " symbols but the text vocabulary holds " +
                                std::to_string(vocab.size(Modality::Text)));
  }
  TokenSequence seq{Modality::Text, {}};
  for (TokenId id : model.encode_local(text)) {
    seq.tokens.push_back(id < 0 ? kUnk : vocab.local_to_global(Modality::Text, id));
  }
  return seq;
}

std::string decode_text(const BpeModel& model, const TokenSequence& seq, const Vocabulary& vocab) {
  if (seq.modality != Modality::Text) fail(ErrorCode::Shape, "sequence is not a text sequence");
  std::string out;
  for (TokenId t : seq.tokens) {
    if (t == kUnk) {
      out += kUnkMarker;
      continue;
    }
    if (t == kBos || t == kEos || t == kPad) continue;
    const auto l = vocab.global_to_local(t);
    if (l.modality != Modality::Text) fail(ErrorCode::Shape, "non-text token in text sequence");
    out += model.symbol(l.id);
  }
  return out;
}

std::string escape_symbol(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case ' ': out += "\\s"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x21 || c >= 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\x%02x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out;
}

std::string unescape_symbol(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (++i >= s.size()) fail(ErrorCode::Io, "dangling escape in symbol '" + s + "'");
    switch (s[i]) {
      case '\\': out += '\\'; break;
      case 's': out += ' '; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 'x': {
        if (i + 2 >= s.size()) fail(ErrorCode::Io, "short \\x escape in '" + s + "'");
        out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
        i += 2;
        break;
      }
      default: fail(ErrorCode::Io, "unknown escape in symbol '" + s + "'");
    }
  }
  return out;
}

void save_bpe(const BpeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << "TMTBPE " << model.base_symbols().size() << ' ' << model.merges().size() << '\n';
  for (const auto& s : model.base_symbols()) out << escape_symbol(s) << '\n';
  for (const auto& [l, r] : model.merges()) out << escape_symbol(l) << ' ' << escape_symbol(r) << '\n';
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

BpeModel load_bpe(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string magic;
  std::size_t n_base = 0, n_merges = 0;
  in >> magic >> n_base >> n_merges;
  if (magic != "TMTBPE") fail(ErrorCode::Io, path.string() + ": not a TMTBPE model");
  std::vector<std::string> base(n_base);
  for (auto& s : base) {
    std::string tok;
    if (!(in >> tok)) fail(ErrorCode::Io, path.string() + ": truncated base symbols");
    s = unescape_symbol(tok);
  }
  std::vector<BpeModel::Merge> merges(n_merges);
  for (auto& [l, r] : merges) {
    std::string a, b;
    if (!(in >> a >> b)) fail(ErrorCode::Io, path.string() + ": truncated merges");
    l = unescape_symbol(a);
    r = unescape_symbol(b);
  }
  return BpeModel(std::move(base), std::move(merges));
}

}  // namespace tmt
