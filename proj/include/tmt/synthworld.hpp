#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tmt/codebook.hpp"
#include "tmt/image.hpp"

namespace tmt {

enum class Shape : std::uint8_t { Circle = 0, Square = 1, Triangle = 2 };
enum class Color : std::uint8_t { Red = 0, Green = 1, Blue = 2 };

std::string shape_name(Shape s);
std::string color_name(Color c);

inline constexpr int kSceneGrid = 4;        // 4 x 4 cells
inline constexpr int kCellPixels = 8;       // each cell is 8 x 8 pixels
inline constexpr int kImageSize = kSceneGrid * kCellPixels;
inline constexpr int kFeatureDim = 13;

struct SceneObject {
  Shape shape;
  Color color;
  int row;
  int col;
  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;

  /// Scenes compare by content; `seed` is provenance only.
  bool operator==(const Scene& other) const { return objects == other.objects; }
};

/// 1-3 objects with seeded shapes and colors.  Object j of the caption sits
/// in row j; its column is a fixed function of (shape, color), so the caption
/// determines the raster exactly.
Scene sample_scene(std::uint64_t seed);

/// Throws InvalidArgument for overlapping cells or out-of-grid objects.
void check_scene(const Scene& scene);

Raster render_image(const Scene& scene);

/// "a <color> <shape>" per object in row-major cell order, joined by " and ".
std::string caption_scene(const Scene& scene);

/// Characters the speech synthesizer can voice: a-z and space.
const std::string& speech_inventory();

/// Fixed 13-dim prototype for an inventory character.
Eigen::RowVectorXd speech_prototype(char c);

/// Each character's prototype held for a seeded 2-4 frames, plus N(0, sigma^2)
/// noise.  Values are rounded to float precision so they survive TMTFEAT.
RowMatrix synthesize_speech_features(const std::string& text, double noise_sigma, std::uint64_t seed);

/// Per-character durations used by `synthesize_speech_features`.
std::vector<int> speech_durations(const std::string& text, std::uint64_t seed);

/// Nearest-prototype transcription of feature frames, one character per frame.
std::string transcribe_frames(const RowMatrix& frames);

struct TriModalExample {
  std::string id;
  Raster image;
  RowMatrix speech_features;
  std::string text;
};

TriModalExample make_example(const std::string& id, std::uint64_t scene_seed,
                             std::uint64_t speech_seed, double noise_sigma);

struct ManifestEntry {
  std::string id;
  std::string image_path;   // relative to the corpus root
  std::string speech_path;
  std::string caption;
};

struct CorpusSplits {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> valid;
  std::vector<ManifestEntry> test;
};

/// Sizes of the deterministic 90/5/5 split; valid and test get at least one.
struct SplitSizes {
  std::size_t train, valid, test;
};
SplitSizes split_sizes(std::size_t n);

/// Writes images/, speech/, and train/valid/test manifests under `out_dir`.
CorpusSplits generate_corpus(const std::filesystem::path& out_dir, std::size_t n, std::uint64_t seed,
                             double noise_sigma);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
CorpusSplits read_corpus(const std::filesystem::path& corpus_dir);

TriModalExample load_example(const std::filesystem::path& corpus_dir, const ManifestEntry& entry);

}  // namespace tmt
