#include "tmt/pipeline.hpp"

#include <cstdio>
#include <sstream>

namespace tmt {

PreparedCorpus prepare_corpus(const std::filesystem::path& corpus_dir, const TokenizerConfig& cfg) {
  const CorpusSplits splits = read_corpus(corpus_dir);
  PreparedCorpus out;
  out.tok = train_tokenizers(corpus_dir, splits.train, cfg);
  out.train = tokenize_entries(out.tok, corpus_dir, splits.train);
  out.valid = tokenize_entries(out.tok, corpus_dir, splits.valid);
  out.test = tokenize_entries(out.tok, corpus_dir, splits.test);
  out.train_pairs = make_pair_corpus(out.train, out.tok.vocab);
  out.valid_pairs = make_pair_corpus(out.valid, out.tok.vocab);
  out.test_pairs = make_pair_corpus(out.test, out.tok.vocab);
  return out;
}

ModelConfig default_model_config(const Vocabulary& vocab) {
  ModelConfig cfg;
  cfg.vocab_total = vocab.total();
  return cfg;
}

std::vector<SweepRow> sweep_speech_vocab(const std::filesystem::path& corpus_dir, const std::vector<TokenId>& sizes,
                                         const TokenizerConfig& tok_cfg, const ModelConfig& model_template,
                                         const TrainConfig& train_cfg, const DecodeConfig& dcfg) {
  if (sizes.size() < 2) fail(ErrorCode::InvalidArgument, "a speech vocabulary sweep needs at least two sizes");
  std::vector<SweepRow> rows;
  for (TokenId size : sizes) {
    try {
      TokenizerConfig tc = tok_cfg;
      tc.speech_vocab = size;
      const PreparedCorpus pc = prepare_corpus(corpus_dir, tc);
      ModelConfig mc = model_template;
      mc.vocab_total = pc.tok.vocab.total();
      const auto init = init_params<float>(mc, train_cfg.seed);
      const TrainResult tr = train(mc, init, pc.train_pairs, train_cfg);
      const auto params = cast_params<float>(tr.final.params);
      SweepRow row;
      row.speech_vocab = size;
      row.s2t = evaluate_direction(params, mc, pc.tok, pc.test, {Modality::Speech, Modality::Text}, dcfg);
      row.i2s = evaluate_direction(params, mc, pc.tok, pc.test, {Modality::Image, Modality::Speech}, dcfg);
      rows.push_back(std::move(row));
    } catch (const Error& e) {
      fail(e.code(), "speech vocab " + std::to_string(size) + ": " + e.what());
    }
  }
  return rows;
}

std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "speech_vocab  s2t.WER  i2s.BLEU-4  i2s.ROUGE-L  i2s.CIDEr  i2s.WER\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%12d %8.4f %11.4f %12.4f %10.4f %8.4f\n", r.speech_vocab, r.s2t.wer.value_or(0),
                  r.i2s.bleu4.value_or(0), r.i2s.rouge_l.value_or(0), r.i2s.cider.value_or(0), r.i2s.wer.value_or(0));
    out << buf;
  }
  for (const auto& r : rows) {
    const std::string p = "v" + std::to_string(r.speech_vocab) + ".";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%ss2t.wer=%.6f\n%si2s.bleu4=%.6f\n%si2s.rouge_l=%.6f\n%si2s.cider=%.6f\n%si2s.wer=%.6f\n",
                  p.c_str(), r.s2t.wer.value_or(0), p.c_str(), r.i2s.bleu4.value_or(0), p.c_str(),
                  r.i2s.rouge_l.value_or(0), p.c_str(), r.i2s.cider.value_or(0), p.c_str(), r.i2s.wer.value_or(0));
    out << buf;
  }
  return out.str();
}

}  // namespace tmt
