#include "tmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tmt {

namespace {

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    fail(ErrorCode::Config, "key '" + key + "' expects an integer, got '" + v + "'");
  }
}

}  // namespace

std::map<std::string, std::string> model_config_to_kv(const ModelConfig& cfg) {
  std::ostringstream dropout;
  dropout << cfg.dropout;
  return {{"d_model", std::to_string(cfg.d_model)},       {"n_heads", std::to_string(cfg.n_heads)},
          {"ffn_dim", std::to_string(cfg.ffn_dim)},       {"enc_layers", std::to_string(cfg.enc_layers)},
          {"dec_layers", std::to_string(cfg.dec_layers)}, {"max_len", std::to_string(cfg.max_len)},
          {"vocab_total", std::to_string(cfg.vocab_total)}, {"dropout", dropout.str()},
          {"tie_embeddings", cfg.tie_embeddings ? "1" : "0"}};
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  for (const auto& [k, v] : kv) {
    if (k == "d_model") cfg.d_model = to_int(k, v);
    else if (k == "n_heads") cfg.n_heads = to_int(k, v);
    else if (k == "ffn_dim") cfg.ffn_dim = to_int(k, v);
    else if (k == "enc_layers") cfg.enc_layers = to_int(k, v);
    else if (k == "dec_layers") cfg.dec_layers = to_int(k, v);
    else if (k == "max_len") cfg.max_len = to_int(k, v);
    else if (k == "vocab_total") cfg.vocab_total = to_int(k, v);
    else if (k == "dropout") cfg.dropout = std::stod(v);
    else if (k == "tie_embeddings") cfg.tie_embeddings = to_int(k, v) != 0;
    else fail(ErrorCode::Config, "unknown model config key '" + k + "'");
  }
  return cfg;
}

std::map<std::string, std::string> parse_kv_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::Config, origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str(), path.string());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << "TMTCKPT " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : model_config_to_kv(ckpt.config)) out << k << '=' << v << '\n';
  std::size_t count = 0;
  for_each_tensor(ckpt.params, [&](const std::string&, const Matrix<double>&) { ++count; });
  out << "step=" << ckpt.step << '\n' << "tensors=" << count << '\n';
  for_each_tensor(ckpt.params, [&](const std::string& name, const Matrix<double>& t) {
    out << name << " 2 " << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(t.data()[i]));
      out.write(reinterpret_cast<const char*>(&bits), 8);
    }
  });
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "TMTCKPT " + std::to_string(kCheckpointVersion)) {
    fail(ErrorCode::Io, path.string() + ": not a version " + std::to_string(kCheckpointVersion) +
                            " checkpoint");
  }
  std::map<std::string, std::string> kv;
  Checkpoint ckpt;
  std::size_t tensors = 0;
  for (;;) {
    if (!std::getline(in, line)) fail(ErrorCode::Io, path.string() + ": truncated header");
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Io, path.string() + ": bad header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "step") {
      ckpt.step = std::stoull(value);
    } else if (key == "tensors") {
      tensors = std::stoull(value);
      break;
    } else {
      kv[key] = value;
    }
  }
  ckpt.config = model_config_from_kv(kv);
  ckpt.params = init_params<double>(ckpt.config, 0);

  std::map<std::string, Matrix<double>*> slots;
  for_each_tensor(ckpt.params, [&](const std::string& name, Matrix<double>& t) { slots[name] = &t; });
  if (tensors != slots.size()) {
    fail(ErrorCode::Config, path.string() + ": tensor count " + std::to_string(tensors) +
                                " does not match the config (" + std::to_string(slots.size()) + ")");
  }
  for (std::size_t n = 0; n < tensors; ++n) {
    if (!std::getline(in, line)) fail(ErrorCode::Io, path.string() + ": truncated tensor header");
    std::istringstream hdr(line);
    std::string name;
    int rank = 0;
    Eigen::Index rows = 0, cols = 0;
    hdr >> name >> rank >> rows >> cols;
    auto it = slots.find(name);
    if (rank != 2 || it == slots.end() || it->second->rows() != rows || it->second->cols() != cols) {
      fail(ErrorCode::Config, path.string() + ": unexpected tensor '" + line + "'");
    }
    Matrix<double>& t = *it->second;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), 8)) fail(ErrorCode::Io, path.string() + ": truncated data");
      t.data()[i] = std::bit_cast<double>(to_little_endian(bits));
    }
  }
  return ckpt;
}

}  // namespace tmt
