// tmt: corpus generation, tokenizer training, training, back translation,
// translation, evaluation, and reporting from one binary.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tmt/bits.hpp"
#include "tmt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tmt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct ModelFlags {
  int d_model = 64, n_heads = 4, ffn_dim = 256, enc_layers = 2, dec_layers = 2, max_len = 400;
  bool untied = false;

  void add(CLI::App* app) {
    app->add_option("--d-model", d_model, "Model width");
    app->add_option("--heads", n_heads, "Attention heads");
    app->add_option("--ffn-dim", ffn_dim, "Feed-forward width");
    app->add_option("--enc-layers", enc_layers, "Encoder layers");
    app->add_option("--dec-layers", dec_layers, "Decoder layers");
    app->add_option("--max-len", max_len, "Longest sequence the model accepts");
    app->add_flag("--untied", untied, "Separate output projection instead of the tied embedding");
  }

  ModelConfig config(const Vocabulary& vocab) const {
    ModelConfig c;
    c.d_model = d_model;
    c.n_heads = n_heads;
    c.ffn_dim = ffn_dim;
    c.enc_layers = enc_layers;
    c.dec_layers = dec_layers;
    c.max_len = max_len;
    c.vocab_total = vocab.total();
    c.tie_embeddings = !untied;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  int steps = 5000, batch = 16, warmup = 500, log_every = 100, checkpoint_every = 1000;
  double peak_lr = 1e-4, grad_clip = 1.0;

  void add(CLI::App* app) {
    app->add_option("--steps", steps, "Optimizer steps");
    app->add_option("--batch", batch, "Pairs per direction per step");
    app->add_option("--peak-lr", peak_lr, "Learning rate at the end of warmup");
    app->add_option("--warmup", warmup, "Warmup steps");
    app->add_option("--grad-clip", grad_clip, "Global gradient-norm clip (0 disables)");
    app->add_option("--log-every", log_every, "Steps between loss log lines");
    app->add_option("--checkpoint-every", checkpoint_every, "Steps between checkpoints (0: initial and final only)");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.total_steps = steps;
    c.per_task_batch = batch;
    c.warmup_steps = warmup;
    c.log_every = log_every;
    c.checkpoint_every = checkpoint_every;
    c.peak_lr = peak_lr;
    c.grad_clip = grad_clip;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct DecodeFlags {
  int beam_width = 5, text_max_len = 64;
  double alpha = 0.0;

  void add(CLI::App* app, int default_beam) {
    beam_width = default_beam;
    app->add_option("--beam-width", beam_width, "Beam width (1: greedy)");
    app->add_option("--text-max-len", text_max_len, "Longest text output in tokens, EOS included");
    app->add_option("--alpha", alpha, "Length-normalization exponent");
  }

  DecodeConfig config() const {
    DecodeConfig c;
    c.beam_width = beam_width;
    c.text_max_len = text_max_len;
    c.length_norm_alpha = alpha;
    if (c.beam_width < 1) fail(ErrorCode::InvalidArgument, "beam width must be >= 1");
    return c;
  }
};

Modality parse_modality(const std::string& s) {
  if (s == "image") return Modality::Image;
  if (s == "speech") return Modality::Speech;
  if (s == "text") return Modality::Text;
  fail(ErrorCode::InvalidArgument, "unknown modality '" + s + "' (image, speech, text)");
}

std::vector<Direction> parse_directions(const std::string& list) {
  std::vector<Direction> out;
  std::stringstream in(list);
  for (std::string item; std::getline(in, item, ',');) out.push_back(direction_from_name(item));
  return out;
}

std::vector<TokenRecord> read_tok(const fs::path& dir, const std::string& split) {
  return read_token_corpus(dir / (split + ".tok"));
}

/// Loads a checkpoint and checks it against the tokenizers' vocabulary.
std::pair<ModelConfig, ModelParams<float>> load_model(const fs::path& path, const Tokenizers& tok) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.config.vocab_total != tok.vocab.total()) {
    fail(ErrorCode::Config, "checkpoint vocabulary (" + std::to_string(ck.config.vocab_total) +
                                ") does not match the tokenizers (" + std::to_string(tok.vocab.total()) + ")");
  }
  return {ck.config, cast_params<float>(ck.params)};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
}

StepObserver progress(int log_every) {
  return [log_every](const StepReport& r) {
    if (r.step == 1 || r.step % log_every == 0) {
      std::fprintf(stderr, "step %d loss %.6f lr %.3g\n", r.step, r.loss, r.lr);
    }
  };
}

/// Prints every option of the selected subcommand as key=value; the output
/// is itself a valid --config file.
void print_resolved(const CLI::App* sub) {
  std::cerr << "# tmt " << sub->get_name() << '\n';
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    std::cerr << name << '=' << value << '\n';
  }
}

/// Expands `--config FILE` into `--key=value` arguments placed before the
/// command-line ones so explicit flags win.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  CLI::App* sub = nullptr;
  for (const auto& a : args) {
    if (!a.empty() && a[0] != '-') {
      sub = app.get_subcommand_no_throw(a);
      if (sub) break;
    }
  }
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string file;
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      file = args[i].substr(9);
    } else {
      continue;
    }
    if (!sub) throw CLI::ValidationError("--config", "needs a subcommand");
    std::vector<std::string> extra;
    for (const auto& [k, v] : read_kv_file(file)) {
      const CLI::Option* opt = sub->get_option_no_throw("--" + k);
      if (!opt || k == "config" || k == "help") fail(ErrorCode::Config, file + ": unknown key '" + k + "'");
      extra.push_back("--" + k + "=" + v);
    }
    const auto pos = std::find(args.begin(), args.end(), sub->get_name()) + 1;
    args.insert(pos, extra.begin(), extra.end());
    return args;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tri-modal token translation toolkit"};
  app.name("tmt");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::uint64_t seed = 0;
  std::string out;
  std::string config_file;
  auto common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--seed", seed, "Root seed; sub-seeds are derived from it");
    auto* o = sub->add_option("--out", out, "Output directory");
    if (needs_out) o->required();
    sub->add_option("--config", config_file, "key=value file of flag defaults (keys are flag names)");
  };

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic tri-modal corpus");
  std::size_t n_examples = 2000;
  double noise = 0.0;
  gen->add_option("--n", n_examples, "Number of scenes");
  gen->add_option("--noise", noise, "Speech feature noise sigma");
  common(gen, true);

  // train-tokenizers
  auto* ttok = app.add_subcommand("train-tokenizers", "Fit codebooks and BPE on a corpus's train split");
  std::string corpus;
  TokenizerConfig tok_cfg;
  ttok->add_option("--corpus", corpus, "Corpus directory")->required();
  ttok->add_option("--image-vocab", tok_cfg.image_vocab, "Image codebook size");
  ttok->add_option("--speech-vocab", tok_cfg.speech_vocab, "Speech codebook size");
  ttok->add_option("--text-vocab", tok_cfg.text_vocab, "BPE vocabulary size");
  ttok->add_option("--kmeans-iters", tok_cfg.kmeans_iters, "Lloyd iterations");
  ttok->add_option("--speech-cap", tok_cfg.speech_cap, "Longest speech sequence after deduplication");
  common(ttok, true);

  // tokenize
  auto* tokz = app.add_subcommand("tokenize", "Tokenize every split of a corpus");
  std::string tokenizers_dir;
  tokz->add_option("--corpus", corpus, "Corpus directory")->required();
  tokz->add_option("--tokenizers", tokenizers_dir, "Tokenizer directory")->required();
  common(tokz, true);

  // train
  auto* trn = app.add_subcommand("train", "Train the unified model or one single-direction baseline");
  std::string data_dir, direction, init_ckpt;
  ModelFlags model_flags;
  TrainFlags train_flags;
  trn->add_option("--tokenizers", tokenizers_dir, "Tokenizer directory")->required();
  trn->add_option("--data", data_dir, "Tokenized corpus directory")->required();
  trn->add_option("--direction", direction, "Train only this direction (e.g. s2t); empty: all six");
  trn->add_option("--init", init_ckpt, "Start from this checkpoint (its config must match)");
  model_flags.add(trn);
  train_flags.add(trn);
  common(trn, true);

  // bt
  auto* bt = app.add_subcommand("bt", "Back-translate target-only data, optionally continue training");
  std::string checkpoint, targets, text_file, bt_dirs = "i2t,s2t";
  bool bt_beam = false;
  double continue_lr = 5e-5;
  DecodeFlags bt_decode;
  bt->add_option("--checkpoint", checkpoint, "Intermediate model")->required();
  bt->add_option("--tokenizers", tokenizers_dir, "Tokenizer directory")->required();
  bt->add_option("--targets", targets, "Token corpus file of target-only sequences");
  bt->add_option("--text-file", text_file, "Plain text, one target sentence per line");
  bt->add_option("--directions", bt_dirs, "Comma list of <pseudo-source>2<target> directions");
  bt->add_flag("--beam", bt_beam, "Beam search instead of greedy decoding");
  bt->add_option("--data", data_dir, "Tokenized real corpus; when set, continue training on real + pseudo pairs");
  bt->add_option("--continue-lr", continue_lr, "Peak learning rate for continued training");
  bt_decode.add(bt, 5);
  train_flags.add(bt);
  common(bt, true);

  // translate
  auto* tr = app.add_subcommand("translate", "Translate one input between modalities");
  std::string from, to, input, output = "-";
  DecodeFlags tr_decode;
  tr->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  tr->add_option("--tokenizers", tokenizers_dir, "Tokenizer directory")->required();
  tr->add_option("--from", from, "Source modality: image, speech, text")->required();
  tr->add_option("--to", to, "Target modality: image, speech, text")->required();
  tr->add_option("--input", input, "PPM image, TMTFEAT features, or text file ('-': stdin)")->required();
  tr->add_option("--output", output, "Output file ('-': stdout, text only)");
  tr_decode.add(tr, 5);
  tr->add_option("--seed", seed, "Root seed; sub-seeds are derived from it");
  tr->add_option("--config", config_file, "key=value file of flag defaults (keys are flag names)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Decode a test split and score it");
  std::string split = "test";
  DecodeFlags ev_decode;
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--tokenizers", tokenizers_dir, "Tokenizer directory")->required();
  ev->add_option("--data", data_dir, "Tokenized corpus directory")->required();
  ev->add_option("--split", split, "Split to score");
  ev->add_option("--direction", direction, "Only this direction; empty: all six");
  ev_decode.add(ev, 5);
  common(ev, true);

  // sweep-speech-vocab
  auto* sw = app.add_subcommand("sweep-speech-vocab", "Retrain and score for several speech codebook sizes");
  std::vector<TokenId> sizes;
  DecodeFlags sw_decode;
  sw->add_option("--corpus", corpus, "Corpus directory")->required();
  sw->add_option("--sizes", sizes, "Speech codebook sizes")->delimiter(',')->required();
  sw->add_option("--image-vocab", tok_cfg.image_vocab, "Image codebook size");
  sw->add_option("--text-vocab", tok_cfg.text_vocab, "BPE vocabulary size");
  sw->add_option("--kmeans-iters", tok_cfg.kmeans_iters, "Lloyd iterations");
  model_flags.add(sw);
  train_flags.add(sw);
  sw_decode.add(sw, 1);
  common(sw, true);
  sw->get_option("--sizes")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  // bits-report
  auto* bits = app.add_subcommand("bits-report", "Raw versus token storage for speech and images");
  BitsInput bits_in;
  bits->add_option("--audio-seconds", bits_in.audio_seconds, "Audio duration");
  bits->add_option("--token-rate", bits_in.token_rate, "Speech tokens per second");
  bits->add_option("--speech-vocab", bits_in.speech_vocab, "Speech vocabulary size");
  bits->add_option("--image-height", bits_in.image_height, "Image height in pixels");
  bits->add_option("--image-width", bits_in.image_width, "Image width in pixels");
  bits->add_option("--image-tokens", bits_in.image_tokens, "Tokens per image");
  bits->add_option("--image-vocab", bits_in.image_vocab, "Image vocabulary size");
  bits->add_option("--config", config_file, "key=value file of flag defaults (keys are flag names)");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(app, args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    // subcommand help requests also land here
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << '\n' << "run 'tmt --help' for usage\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << '\n';
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  print_resolved(sub);
  try {
    const std::string cmd = sub->get_name();
    if (cmd == "gen-corpus") {
      const auto splits = generate_corpus(out, n_examples, seed, noise);
      std::printf("wrote %zu train, %zu valid, %zu test examples to %s\n", splits.train.size(), splits.valid.size(),
                  splits.test.size(), out.c_str());
    } else if (cmd == "train-tokenizers") {
      tok_cfg.seed = seed;
      const auto tok = train_tokenizers(corpus, read_corpus(corpus).train, tok_cfg);
      save_tokenizers(tok, out);
      std::printf("vocabulary total %d (image %d, speech %d, text %d; bpe uses %zu)\n", tok.vocab.total(),
                  tok.vocab.size(Modality::Image), tok.vocab.size(Modality::Speech), tok.vocab.size(Modality::Text),
                  tok.bpe.size());
    } else if (cmd == "tokenize") {
      const auto tok = load_tokenizers(tokenizers_dir);
      const auto splits = read_corpus(corpus);
      fs::create_directories(out);
      const std::pair<const char*, const std::vector<ManifestEntry>*> parts[] = {
          {"train", &splits.train}, {"valid", &splits.valid}, {"test", &splits.test}};
      for (const auto& [name, entries] : parts) {
        write_token_corpus(fs::path(out) / (std::string(name) + ".tok"),
                           flatten_examples(tokenize_entries(tok, corpus, *entries)));
      }
      std::printf("tokenized corpus written to %s\n", out.c_str());
    } else if (cmd == "train") {
      const auto tok = load_tokenizers(tokenizers_dir);
      const ModelConfig mc = model_flags.config(tok.vocab);
      const TrainConfig tc = train_flags.config(seed);
      const PairCorpus pairs = make_pair_corpus(group_records(read_tok(data_dir, "train")), tok.vocab);
      ModelParams<float> init = init_params<float>(mc, seed);
      if (!init_ckpt.empty()) {
        const Checkpoint ck = load_checkpoint(init_ckpt);
        check_resume(ck, mc);
        init = cast_params<float>(ck.params);
      }
      const TrainResult res = direction.empty()
                                  ? train(mc, init, pairs, tc, fs::path(out), progress(tc.log_every))
                                  : single_task_train(mc, init, pairs, direction_from_name(direction), tc,
                                                      fs::path(out), progress(tc.log_every));
      save_checkpoint(fs::path(out) / "final.tmt", res.final);
      std::printf("trained %d steps; checkpoints in %s\n", tc.total_steps, out.c_str());
    } else if (cmd == "bt") {
      const auto tok = load_tokenizers(tokenizers_dir);
      const auto [mc, params] = load_model(checkpoint, tok);
      BtConfig cfg;
      cfg.source_directions = parse_directions(bt_dirs);
      cfg.beam = bt_beam;
      cfg.continue_peak_lr = continue_lr;
      cfg.decode = bt_decode.config();
      std::vector<TokenRecord> target_records;
      if (!targets.empty()) target_records = read_token_corpus(targets);
      if (!text_file.empty()) {
        std::ifstream in(text_file);
        if (!in) fail(ErrorCode::Io, "cannot open " + text_file);
        std::size_t i = 0;
        char id[32];
        for (std::string line; std::getline(in, line);) {
          if (line.empty()) continue;
          std::snprintf(id, sizeof id, "txt%06zu", i++);
          target_records.push_back({id, encode_text(tok.bpe, line, tok.vocab)});
        }
      }
      const BtResult res = back_translate(params, mc, tok.vocab, target_records, cfg);
      fs::create_directories(out);
      write_token_corpus(fs::path(out) / "bt.tok", res.records);
      std::ostringstream report;
      report << "attempted=" << res.attempted << "\nskipped=" << res.skipped << "\nemitted=" << res.emitted() << '\n';
      write_text(fs::path(out) / "bt_report.txt", report.str());
      std::cout << report.str();
      if (!data_dir.empty()) {
        const TrainConfig tc = train_flags.config(seed);
        const PairCorpus real = make_pair_corpus(group_records(read_tok(data_dir, "train")), tok.vocab);
        const TrainResult cont = continue_training(mc, params, real, res.pseudo, tc, cfg, fs::path(out) / "continue",
                                                   progress(tc.log_every));
        save_checkpoint(fs::path(out) / "continue" / "final.tmt", cont.final);
      }
    } else if (cmd == "translate") {
      const Modality src = parse_modality(from), dst = parse_modality(to);
      if (src == dst) fail(ErrorCode::InvalidArgument, "source and target modality are both " + modality_name(src));
      const auto tok = load_tokenizers(tokenizers_dir);
      const auto [mc, params] = load_model(checkpoint, tok);
      RawData raw;
      if (src == Modality::Image) {
        raw = read_ppm(input);
      } else if (src == Modality::Speech) {
        raw = read_features(input);
      } else {
        std::stringstream buf;
        if (input == "-") {
          buf << std::cin.rdbuf();
        } else {
          std::ifstream in(input);
          if (!in) fail(ErrorCode::Io, "cannot open " + input);
          buf << in.rdbuf();
        }
        std::string text = buf.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        raw = text;
      }
      const RawData result = translate(params, mc, tok, raw, dst, tr_decode.config());
      if (const auto* text = std::get_if<std::string>(&result)) {
        if (output == "-") {
          std::cout << *text << '\n';
        } else {
          write_text(output, *text + "\n");
        }
      } else if (output == "-") {
        fail(ErrorCode::InvalidArgument, "image and speech output need --output FILE");
      } else if (const auto* img = std::get_if<Raster>(&result)) {
        write_ppm(*img, output);
      } else {
        write_features(std::get<RowMatrix>(result), output);
      }
    } else if (cmd == "evaluate") {
      const auto tok = load_tokenizers(tokenizers_dir);
      const auto [mc, params] = load_model(checkpoint, tok);
      const auto test = group_records(read_tok(data_dir, split));
      const DecodeConfig dc = ev_decode.config();
      std::vector<DirectionReport> reports;
      if (direction.empty()) {
        reports = evaluate_all(params, mc, tok, test, dc);
      } else {
        reports.push_back(evaluate_direction(params, mc, tok, test, direction_from_name(direction), dc));
      }
      fs::create_directories(out);
      std::ostringstream dump;
      for (const auto& r : reports) {
        for (const auto& line : r.dump) dump << line << '\n';
      }
      write_text(fs::path(out) / "predictions.tsv", dump.str());
      const std::string report = format_report(reports);
      write_text(fs::path(out) / "report.txt", report);
      std::cout << report;
    } else if (cmd == "sweep-speech-vocab") {
      tok_cfg.seed = seed;
      ModelFlags mf = model_flags;
      ModelConfig templ;
      templ.d_model = mf.d_model;
      templ.n_heads = mf.n_heads;
      templ.ffn_dim = mf.ffn_dim;
      templ.enc_layers = mf.enc_layers;
      templ.dec_layers = mf.dec_layers;
      templ.max_len = mf.max_len;
      templ.tie_embeddings = !mf.untied;
      const auto rows =
          sweep_speech_vocab(corpus, sizes, tok_cfg, templ, train_flags.config(seed), sw_decode.config());
      const std::string report = format_sweep(rows);
      fs::create_directories(out);
      write_text(fs::path(out) / "sweep.txt", report);
      std::cout << report;
    } else if (cmd == "bits-report") {
      std::cout << format_bits_report(bits_in, bits_report(bits_in));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << sub->get_name() << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: io: " << sub->get_name() << ": " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
