#include "tmt/evaluate.hpp"

#include <cstdio>
#include <sstream>

namespace tmt {

namespace {

std::string join_ids(const std::vector<TokenId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(ids[i]);
  }
  return out;
}

std::vector<TokenId> parse_ids(const std::string& s) {
  std::istringstream in(s);
  std::vector<TokenId> out;
  for (TokenId t; in >> t;) out.push_back(t);
  return out;
}

Eigen::RowVectorXd patch_vector(const Tokenizers& tok, const std::vector<TokenId>& ids) {
  Eigen::RowVectorXd v(static_cast<Eigen::Index>(ids.size()) * tok.image_codebook.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto local = tok.vocab.global_to_local(ids[i]);
    if (local.modality != Modality::Image) fail(ErrorCode::Range, "non-image token in an image prediction");
    v.segment(static_cast<Eigen::Index>(i) * tok.image_codebook.dim(), tok.image_codebook.dim()) =
        tok.image_codebook.centers().row(local.id);
  }
  return v;
}

std::string fmt(const std::optional<double>& v, const char* spec = "%.4f") {
  if (!v) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, *v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }

}  // namespace

std::string render_prediction(const Tokenizers& tok, const TokenSequence& seq) {
  switch (seq.modality) {
    case Modality::Text: return decode_text(tok.bpe, seq, tok.vocab);
    case Modality::Speech: return speech_tokens_to_text(tok, seq);
    case Modality::Image: return join_ids(seq.tokens);
  }
  return "";
}

std::string render_reference(const Tokenizers& tok, const TokenizedExample& ex, Modality target) {
  const auto& view = ex.view(target == Modality::Image ? Modality::Image : Modality::Text);
  if (!view) fail(ErrorCode::InvalidArgument, "example " + ex.id + " lacks the reference view");
  switch (target) {
    case Modality::Text: return decode_text(tok.bpe, *view, tok.vocab);
    case Modality::Speech: return collapse_repeats(decode_text(tok.bpe, *view, tok.vocab));
    case Modality::Image: return join_ids(view->tokens);
  }
  return "";
}

DirectionReport score_predictions(const Tokenizers& tok, Direction d, const std::vector<TokenizedExample>& test,
                                  const std::vector<std::optional<std::string>>& rendered) {
  if (rendered.size() != test.size()) fail(ErrorCode::Shape, "prediction count differs from the test set");
  DirectionReport r;
  r.direction = d;
  r.examples = test.size();
  if (test.empty()) return r;
  std::vector<ScoredPair> pairs;
  std::size_t positions = 0, exact = 0;
  double cos_sum = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const std::string out = rendered[i].value_or("");
    if (!rendered[i]) ++r.failures;
    r.dump.push_back(test[i].id + "\t" + d.name() + "\t" + out);
    const std::string ref = render_reference(tok, test[i], d.target);
    if (d.target == Modality::Image) {
      const auto ref_ids = parse_ids(ref);
      const auto hyp_ids = parse_ids(out);
      positions += ref_ids.size();
      for (std::size_t j = 0; j < ref_ids.size() && j < hyp_ids.size(); ++j) exact += ref_ids[j] == hyp_ids[j];
      if (hyp_ids.size() == ref_ids.size() && !ref_ids.empty()) {
        const auto a = patch_vector(tok, hyp_ids), b = patch_vector(tok, ref_ids);
        const double na = a.norm(), nb = b.norm();
        if (na > 0 && nb > 0) cos_sum += a.dot(b) / (na * nb);
      }
    } else {
      pairs.push_back({split_words(out), {split_words(ref)}});
    }
  }
  if (d.target == Modality::Image) {
    r.token_exact = positions ? static_cast<double>(exact) / static_cast<double>(positions) : 0.0;
    r.patch_cosine = cos_sum / static_cast<double>(test.size());
  } else {
    r.bleu4 = corpus_bleu4(pairs);
    double rl = 0;
    for (const auto& p : pairs) rl += rouge_l(p);
    r.rouge_l = rl / static_cast<double>(pairs.size());
    double c = 0;
    for (double v : cider(pairs)) c += v;
    r.cider = c / static_cast<double>(pairs.size());
    r.wer = corpus_wer(pairs);
  }
  return r;
}

std::string format_report(const std::vector<DirectionReport>& reports) {
  std::ostringstream out;
  out << "dir     n  fail   BLEU-4  ROUGE-L    CIDEr  CIDEr*100      WER    exact  patchcos\n";
  for (const auto& r : reports) {
    const std::optional<double> c100 = r.cider ? std::optional<double>(*r.cider * 100) : std::nullopt;
    out << r.direction.name() << pad(std::to_string(r.examples), 6) << pad(std::to_string(r.failures), 6)
        << pad(fmt(r.bleu4), 9) << pad(fmt(r.rouge_l), 9) << pad(fmt(r.cider), 9) << pad(fmt(c100, "%.1f"), 11)
        << pad(fmt(r.wer), 9) << pad(fmt(r.token_exact), 9) << pad(fmt(r.patch_cosine), 10) << '\n';
  }
  out << "# patchcos: cosine of codebook patch vectors (not comparable to CLIP score)\n";
  for (const auto& r : reports) {
    const std::string p = r.direction.name() + ".";
    out << p << "examples=" << r.examples << '\n' << p << "failures=" << r.failures << '\n';
    auto kv = [&](const char* key, const std::optional<double>& v) {
      if (v) out << p << key << '=' << fmt(v, "%.6f") << '\n';
    };
    kv("bleu4", r.bleu4);
    kv("rouge_l", r.rouge_l);
    kv("cider", r.cider);
    kv("wer", r.wer);
    kv("token_exact", r.token_exact);
    kv("patch_cosine", r.patch_cosine);
  }
  return out.str();
}

std::string primary_metric_name(Direction d) {
  switch (d.target) {
    case Modality::Text: return "BLEU-4";
    case Modality::Speech: return "WER";
    case Modality::Image: return "exact";
  }
  return "";
}

double primary_metric(const DirectionReport& r) {
  switch (r.direction.target) {
    case Modality::Text: return r.bleu4.value_or(0);
    case Modality::Speech: return r.wer.value_or(0);
    case Modality::Image: return r.token_exact.value_or(0);
  }
  return 0;
}

std::string format_comparison(const std::vector<DirectionReport>& unified, const std::vector<DirectionReport>& single) {
  if (unified.size() != single.size()) fail(ErrorCode::Shape, "comparison needs matching report lists");
  std::ostringstream out;
  out << "dir  metric    single   unified     delta\n";
  for (std::size_t i = 0; i < unified.size(); ++i) {
    if (!(unified[i].direction == single[i].direction)) fail(ErrorCode::Shape, "comparison rows are misaligned");
    const double s = primary_metric(single[i]), u = primary_metric(unified[i]);
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s  %-6s %9.4f %9.4f %+9.4f\n", unified[i].direction.name().c_str(),
                  primary_metric_name(unified[i].direction).c_str(), s, u, u - s);
    out << buf;
  }
  out << "# WER: lower is better; other metrics: higher is better\n";
  return out.str();
}

}  // namespace tmt
