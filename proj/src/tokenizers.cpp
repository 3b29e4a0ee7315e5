#include "tmt/tokenizers.hpp"

#include <fstream>
#include <set>

#include "tmt/checkpoint.hpp"
#include "tmt/common.hpp"

namespace tmt {

Modality raw_modality(const RawData& raw) {
  switch (raw.index()) {
    case 0: return Modality::Image;
    case 1: return Modality::Speech;
    default: return Modality::Text;
  }
}

TokenSequence Tokenizers::tokenize(const RawData& raw) const {
  if (const auto* img = std::get_if<Raster>(&raw)) return tokenize_image(image_codebook, *img, grid, vocab);
  if (const auto* feat = std::get_if<RowMatrix>(&raw)) {
    return tokenize_speech(speech_codebook, *feat, vocab, speech_cap);
  }
  return encode_text(bpe, std::get<std::string>(raw), vocab);
}

RawData Tokenizers::detokenize(const TokenSequence& seq) const {
  switch (seq.modality) {
    case Modality::Image: return detokenize_image(image_codebook, seq, grid, vocab);
    case Modality::Speech: return detokenize_speech(speech_codebook, seq, vocab);
    case Modality::Text: return decode_text(bpe, seq, vocab);
  }
  fail(ErrorCode::InvalidArgument, "unknown modality");
}

Tokenizers train_tokenizers(const std::filesystem::path& corpus_dir, const std::vector<ManifestEntry>& entries,
                            const TokenizerConfig& cfg) {
  if (entries.empty()) fail(ErrorCode::InsufficientData, "no training examples for the tokenizers");
  Tokenizers tok;
  tok.vocab = Vocabulary::build(cfg.image_vocab, cfg.speech_vocab, cfg.text_vocab);
  tok.speech_cap = cfg.speech_cap;

  std::vector<RowMatrix> patches, frames;
  std::vector<std::string> captions;
  Eigen::Index patch_rows = 0, frame_rows = 0;
  for (const auto& e : entries) {
    TriModalExample ex = load_example(corpus_dir, e);
    if (patches.empty()) tok.grid = PatchGrid::fit(ex.image.height, ex.image.width, tok.grid.rows, tok.grid.cols);
    patches.push_back(extract_patches(ex.image, tok.grid));
    patch_rows += patches.back().rows();
    frame_rows += ex.speech_features.rows();
    frames.push_back(std::move(ex.speech_features));
    captions.push_back(std::move(ex.text));
  }
  auto stack = [](const std::vector<RowMatrix>& parts, Eigen::Index rows) {
    RowMatrix out(rows, parts.front().cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p.cols() != out.cols()) fail(ErrorCode::Shape, "feature dimensions differ across examples");
      out.middleRows(r, p.rows()) = p;
      r += p.rows();
    }
    return out;
  };
  tok.image_codebook =
      train_codebook(stack(patches, patch_rows), cfg.image_vocab, cfg.kmeans_iters, derive_seed(cfg.seed, "image-codebook"))
          .codebook;
  tok.speech_codebook =
      train_codebook(stack(frames, frame_rows), cfg.speech_vocab, cfg.kmeans_iters, derive_seed(cfg.seed, "speech-codebook"))
          .codebook;
  tok.bpe = train_bpe(captions, static_cast<std::size_t>(cfg.text_vocab));
  return tok;
}

void save_tokenizers(const Tokenizers& tok, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "tokenizers.txt");
  if (!out) fail(ErrorCode::Io, "cannot write " + (dir / "tokenizers.txt").string());
  out << "image_vocab=" << tok.vocab.size(Modality::Image) << '\n'
      << "speech_vocab=" << tok.vocab.size(Modality::Speech) << '\n'
      << "text_vocab=" << tok.vocab.size(Modality::Text) << '\n'
      << "grid_rows=" << tok.grid.rows << '\n'
      << "grid_cols=" << tok.grid.cols << '\n'
      << "patch_h=" << tok.grid.patch_h << '\n'
      << "patch_w=" << tok.grid.patch_w << '\n'
      << "speech_cap=" << tok.speech_cap << '\n';
  if (!out) fail(ErrorCode::Io, "write failed: " + (dir / "tokenizers.txt").string());
  save_codebook(tok.image_codebook, dir / "image.cb");
  save_codebook(tok.speech_codebook, dir / "speech.cb");
  save_bpe(tok.bpe, dir / "text.bpe");
}

Tokenizers load_tokenizers(const std::filesystem::path& dir) {
  const auto kv = read_kv_file(dir / "tokenizers.txt");
  auto get = [&](const std::string& key) -> long long {
    const auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorCode::Config, "tokenizers.txt lacks '" + key + "'");
    try {
      return std::stoll(it->second);
    } catch (const std::exception&) {
      fail(ErrorCode::Config, "tokenizers.txt: bad value for '" + key + "'");
    }
  };
  for (const auto& [k, v] : kv) {
    static const std::set<std::string> known{"image_vocab", "speech_vocab", "text_vocab", "grid_rows",
                                             "grid_cols",   "patch_h",      "patch_w",    "speech_cap"};
    if (!known.count(k)) fail(ErrorCode::Config, "tokenizers.txt: unknown key '" + k + "'");
  }
  Tokenizers tok;
  tok.vocab = Vocabulary::build(static_cast<TokenId>(get("image_vocab")), static_cast<TokenId>(get("speech_vocab")),
                                static_cast<TokenId>(get("text_vocab")));
  tok.grid = PatchGrid{static_cast<int>(get("grid_rows")), static_cast<int>(get("grid_cols")),
                       static_cast<int>(get("patch_h")), static_cast<int>(get("patch_w"))};
  tok.speech_cap = static_cast<std::size_t>(get("speech_cap"));
  tok.image_codebook = load_codebook(dir / "image.cb");
  tok.speech_codebook = load_codebook(dir / "speech.cb");
  tok.bpe = load_bpe(dir / "text.bpe");
  if (tok.image_codebook.k() != tok.vocab.size(Modality::Image) ||
      tok.speech_codebook.k() != tok.vocab.size(Modality::Speech) ||
      tok.bpe.size() > static_cast<std::size_t>(tok.vocab.size(Modality::Text))) {
    fail(ErrorCode::Config, dir.string() + ": tokenizer sizes disagree with tokenizers.txt");
  }
  if (tok.image_codebook.dim() != tok.grid.patch_dim()) {
    fail(ErrorCode::Config, dir.string() + ": image codebook dimension does not match the patch grid");
  }
  return tok;
}

TokenizedExample tokenize_example(const Tokenizers& tok, const TriModalExample& ex) {
  TokenizedExample out;
  out.id = ex.id;
  out.views[0] = tok.tokenize(ex.image);
  out.views[1] = tok.tokenize(ex.speech_features);
  out.views[2] = tok.tokenize(ex.text);
  return out;
}

std::vector<TokenizedExample> tokenize_entries(const Tokenizers& tok, const std::filesystem::path& corpus_dir,
                                               const std::vector<ManifestEntry>& entries) {
  std::vector<TokenizedExample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(tokenize_example(tok, load_example(corpus_dir, e)));
  return out;
}

std::string collapse_repeats(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (out.empty() || out.back() != c) out += c;
  }
  return out;
}

std::string speech_tokens_to_text(const Tokenizers& tok, const TokenSequence& seq) {
  if (seq.tokens.empty()) return "";
  return collapse_repeats(transcribe_frames(detokenize_speech(tok.speech_codebook, seq, tok.vocab)));
}

}  // namespace tmt
