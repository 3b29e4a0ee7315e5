#include "tmt/synthworld.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "tmt/common.hpp"
#include "tmt/speech.hpp"

namespace tmt {

std::string shape_name(Shape s) {
  switch (s) {
    case Shape::Circle: return "circle";
    case Shape::Square: return "square";
    case Shape::Triangle: return "triangle";
  }
  return "?";
}

std::string color_name(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
  }
  return "?";
}

namespace {

int home_column(Shape s, Color c) {
  return (static_cast<int>(s) * 3 + static_cast<int>(c)) % kSceneGrid;
}

bool glyph_covers(Shape s, int y, int x) {
  const double dy = y - 3.5, dx = x - 3.5;
  switch (s) {
    case Shape::Circle: return dy * dy + dx * dx < 13.0;
    case Shape::Square: return y >= 1 && y <= 6 && x >= 1 && x <= 6;
    case Shape::Triangle: return std::abs(dx) <= 0.5 * (y + 1);
  }
  return false;
}

std::array<std::uint8_t, 3> rgb(Color c) {
  switch (c) {
    case Color::Red: return {255, 0, 0};
    case Color::Green: return {0, 255, 0};
    case Color::Blue: return {0, 0, 255};
  }
  return {0, 0, 0};
}

}  // namespace

Scene sample_scene(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "scene"));
  std::uniform_int_distribution<int> count(1, 3), kind(0, 2);
  Scene scene;
  scene.seed = seed;
  const int n = count(rng);
  for (int j = 0; j < n; ++j) {
    const auto shape = static_cast<Shape>(kind(rng));
    const auto color = static_cast<Color>(kind(rng));
    scene.objects.push_back({shape, color, j, home_column(shape, color)});
  }
  return scene;
}

void check_scene(const Scene& scene) {
  if (scene.objects.empty() || scene.objects.size() > 3) {
    fail(ErrorCode::InvalidArgument, "scene must hold 1-3 objects");
  }
  for (std::size_t a = 0; a < scene.objects.size(); ++a) {
    const auto& o = scene.objects[a];
    if (o.row < 0 || o.row >= kSceneGrid || o.col < 0 || o.col >= kSceneGrid) {
      fail(ErrorCode::InvalidArgument, "object outside the 4x4 grid");
    }
    for (std::size_t b = 0; b < a; ++b) {
      if (scene.objects[b].row == o.row && scene.objects[b].col == o.col) {
        fail(ErrorCode::InvalidArgument, "two objects share a cell");
      }
    }
  }
}

Raster render_image(const Scene& scene) {
  check_scene(scene);
  Raster image(kImageSize, kImageSize, 255);
  for (const auto& o : scene.objects) {
    const auto color = rgb(o.color);
    for (int y = 0; y < kCellPixels; ++y) {
      for (int x = 0; x < kCellPixels; ++x) {
        if (!glyph_covers(o.shape, y, x)) continue;
        for (int ch = 0; ch < 3; ++ch) {
          image.at(o.row * kCellPixels + y, o.col * kCellPixels + x, ch) = color[ch];
        }
      }
    }
  }
  return image;
}

std::string caption_scene(const Scene& scene) {
  check_scene(scene);
  auto objects = scene.objects;
  std::sort(objects.begin(), objects.end(), [](const SceneObject& a, const SceneObject& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  std::string out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (i) out += " and ";
    out += "a " + color_name(objects[i].color) + " " + shape_name(objects[i].shape);
  }
  return out;
}

const std::string& speech_inventory() {
  static const std::string inventory = " abcdefghijklmnopqrstuvwxyz";
  return inventory;
}

Eigen::RowVectorXd speech_prototype(char c) {
  const auto pos = speech_inventory().find(c);
  if (pos == std::string::npos) {
    fail(ErrorCode::InvalidArgument, std::string("character '") + c + "' has no speech prototype");
  }
  // One dominant axis per character plus a seeded secondary component keeps
  // prototypes well separated.
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(kFeatureDim);
  v(static_cast<Eigen::Index>(pos % kFeatureDim)) = 4.0;
  v(static_cast<Eigen::Index>((pos / kFeatureDim + 5 * pos + 1) % kFeatureDim)) += 2.0;
  std::mt19937_64 rng(derive_seed(0x70726f746fULL, "prototype", pos));
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  for (Eigen::Index d = 0; d < kFeatureDim; ++d) {
    v(d) = static_cast<float>(v(d) + jitter(rng));
  }
  return v;
}

std::vector<int> speech_durations(const std::string& text, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "durations"));
  std::uniform_int_distribution<int> dur(2, 4);
  std::vector<int> out(text.size());
  for (auto& d : out) d = dur(rng);
  return out;
}

RowMatrix synthesize_speech_features(const std::string& text, double noise_sigma, std::uint64_t seed) {
  const auto durations = speech_durations(text, seed);
  const int frames = std::accumulate(durations.begin(), durations.end(), 0);
  RowMatrix out(frames, kFeatureDim);
  std::mt19937_64 noise_rng(derive_seed(seed, "noise"));
  std::normal_distribution<double> noise(0.0, noise_sigma > 0 ? noise_sigma : 1.0);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const Eigen::RowVectorXd proto = speech_prototype(text[i]);
    for (int f = 0; f < durations[i]; ++f, ++row) {
      for (Eigen::Index d = 0; d < kFeatureDim; ++d) {
        double v = proto(d);
        if (noise_sigma > 0) v += noise(noise_rng);
        out(row, d) = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::string transcribe_frames(const RowMatrix& frames) {
  static const RowMatrix prototypes = [] {
    RowMatrix p(static_cast<Eigen::Index>(speech_inventory().size()), kFeatureDim);
    for (std::size_t i = 0; i < speech_inventory().size(); ++i) {
      p.row(static_cast<Eigen::Index>(i)) = speech_prototype(speech_inventory()[i]);
    }
    return p;
  }();
  static const Codebook inverse(prototypes);
  std::string out;
  for (TokenId id : quantize(inverse, frames)) out += speech_inventory()[static_cast<std::size_t>(id)];
  return out;
}

TriModalExample make_example(const std::string& id, std::uint64_t scene_seed,
                             std::uint64_t speech_seed, double noise_sigma) {
  const Scene scene = sample_scene(scene_seed);
  TriModalExample ex;
  ex.id = id;
  ex.image = render_image(scene);
  ex.text = caption_scene(scene);
  ex.speech_features = synthesize_speech_features(ex.text, noise_sigma, speech_seed);
  return ex;
}

SplitSizes split_sizes(std::size_t n) {
  if (n < 3) fail(ErrorCode::InvalidArgument, "corpus needs n >= 3");
  const std::size_t valid = std::max<std::size_t>(1, n * 5 / 100);
  const std::size_t test = std::max<std::size_t>(1, n * 5 / 100);
  return {n - valid - test, valid, test};
}

namespace {

std::string example_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ex%06zu", i);
  return buf;
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  for (const auto& e : entries) {
    out << e.id << '\t' << e.image_path << '\t' << e.speech_path << '\t' << e.caption << '\n';
  }
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int f = 0; f < 3; ++f) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fail(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    out.push_back({fields[0], fields[1], fields[2], line.substr(start)});
  }
  return out;
}

CorpusSplits generate_corpus(const std::filesystem::path& out_dir, std::size_t n, std::uint64_t seed,
                             double noise_sigma) {
  const SplitSizes sizes = split_sizes(n);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "speech", ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestEntry> entries;
  entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = example_id(i);
    const auto ex = make_example(id, derive_seed(seed, "scene", i), derive_seed(seed, "speech", i),
                                 noise_sigma);
    ManifestEntry e{id, "images/" + id + ".ppm", "speech/" + id + ".feat", ex.text};
    write_ppm(ex.image, out_dir / e.image_path);
    write_features(ex.speech_features, out_dir / e.speech_path);
    entries.push_back(std::move(e));
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(derive_seed(seed, "split")));

  CorpusSplits splits;
  for (std::size_t r = 0; r < n; ++r) {
    auto& dst = r < sizes.train ? splits.train : r < sizes.train + sizes.valid ? splits.valid : splits.test;
    dst.push_back(entries[order[r]]);
  }
  auto by_id = [](const ManifestEntry& a, const ManifestEntry& b) { return a.id < b.id; };
  std::sort(splits.train.begin(), splits.train.end(), by_id);
  std::sort(splits.valid.begin(), splits.valid.end(), by_id);
  std::sort(splits.test.begin(), splits.test.end(), by_id);

  write_manifest(out_dir / "train.tsv", splits.train);
  write_manifest(out_dir / "valid.tsv", splits.valid);
  write_manifest(out_dir / "test.tsv", splits.test);
  return splits;
}

CorpusSplits read_corpus(const std::filesystem::path& corpus_dir) {
  return {read_manifest(corpus_dir / "train.tsv"), read_manifest(corpus_dir / "valid.tsv"),
          read_manifest(corpus_dir / "test.tsv")};
}

TriModalExample load_example(const std::filesystem::path& corpus_dir, const ManifestEntry& entry) {
  return {entry.id, read_ppm(corpus_dir / entry.image_path),
          read_features(corpus_dir / entry.speech_path), entry.caption};
}

}  // namespace tmt
