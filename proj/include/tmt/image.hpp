#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tmt/codebook.hpp"
#include "tmt/vocab.hpp"

namespace tmt {

/// Interleaved 8-bit RGB, row-major.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Raster() = default;
  Raster(int h, int w, std::uint8_t fill = 255)
      : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const Raster&) const = default;
};

struct PatchGrid {
  int rows = 4;
  int cols = 8;
  int patch_h = 8;
  int patch_w = 4;

  int cells() const { return rows * cols; }
  int height() const { return rows * patch_h; }
  int width() const { return cols * patch_w; }
  int patch_dim() const { return patch_h * patch_w * 3; }

  /// Grid of `rows x cols` cells over an image of the given size.
  static PatchGrid fit(int image_h, int image_w, int rows, int cols);
};

/// One row per patch, patches in row-major order; each row holds the patch's
/// pixels row-major with R, G, B adjacent.
RowMatrix extract_patches(const Raster& image, const PatchGrid& grid);
Raster assemble_patches(const RowMatrix& patches, const PatchGrid& grid);

TokenSequence tokenize_image(const Codebook& cb, const Raster& image, const PatchGrid& grid,
                             const Vocabulary& vocab);
Raster detokenize_image(const Codebook& cb, const TokenSequence& seq, const PatchGrid& grid,
                        const Vocabulary& vocab);

void write_ppm(const Raster& image, const std::filesystem::path& path);
Raster read_ppm(const std::filesystem::path& path);

}  // namespace tmt
