#include "tmt/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tmt/common.hpp"

namespace tmt {

PatchGrid PatchGrid::fit(int image_h, int image_w, int rows, int cols) {
  if (rows < 1 || cols < 1 || image_h % rows != 0 || image_w % cols != 0) {
    fail(ErrorCode::Shape, std::to_string(image_h) + "x" + std::to_string(image_w) +
                               " image does not divide into a " + std::to_string(rows) + "x" +
                               std::to_string(cols) + " grid");
  }
  return PatchGrid{rows, cols, image_h / rows, image_w / cols};
}

RowMatrix extract_patches(const Raster& image, const PatchGrid& grid) {
  if (image.height != grid.height() || image.width != grid.width()) {
    fail(ErrorCode::Shape, "image " + std::to_string(image.height) + "x" +
                               std::to_string(image.width) + " does not match grid " +
                               std::to_string(grid.height()) + "x" + std::to_string(grid.width()));
  }
  RowMatrix patches(grid.cells(), grid.patch_dim());
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int p = r * grid.cols + c;
      int k = 0;
      for (int y = 0; y < grid.patch_h; ++y) {
        for (int x = 0; x < grid.patch_w; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            patches(p, k++) = image.at(r * grid.patch_h + y, c * grid.patch_w + x, ch);
          }
        }
      }
    }
  }
  return patches;
}

Raster assemble_patches(const RowMatrix& patches, const PatchGrid& grid) {
  if (patches.rows() != grid.cells() || patches.cols() != grid.patch_dim()) {
    fail(ErrorCode::Shape, "patch matrix does not match grid");
  }
  Raster image(grid.height(), grid.width());
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int p = r * grid.cols + c;
      int k = 0;
      for (int y = 0; y < grid.patch_h; ++y) {
        for (int x = 0; x < grid.patch_w; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            const double v = std::clamp(std::round(patches(p, k++)), 0.0, 255.0);
            image.at(r * grid.patch_h + y, c * grid.patch_w + x, ch) =
                static_cast<std::uint8_t>(v);
          }
        }
      }
    }
  }
  return image;
}

TokenSequence tokenize_image(const Codebook& cb, const Raster& image, const PatchGrid& grid,
                             const Vocabulary& vocab) {
  const RowMatrix patches = extract_patches(image, grid);
  TokenSequence seq{Modality::Image, {}};
  for (TokenId id : quantize(cb, patches)) {
    seq.tokens.push_back(vocab.local_to_global(Modality::Image, id));
  }
  return seq;
}

Raster detokenize_image(const Codebook& cb, const TokenSequence& seq, const PatchGrid& grid,
                        const Vocabulary& vocab) {
  if (seq.modality != Modality::Image) fail(ErrorCode::Shape, "sequence is not an image sequence");
  if (static_cast<int>(seq.tokens.size()) != grid.cells()) {
    fail(ErrorCode::Shape, "image sequence has " + std::to_string(seq.tokens.size()) +
                               " tokens, grid needs " + std::to_string(grid.cells()));
  }
  std::vector<TokenId> local;
  local.reserve(seq.tokens.size());
  for (TokenId t : seq.tokens) {
    const auto l = vocab.global_to_local(t);
    if (l.modality != Modality::Image) fail(ErrorCode::Shape, "non-image token in image sequence");
    local.push_back(l.id);
  }
  return assemble_patches(dequantize(cb, local), grid);
}

void write_ppm(const Raster& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

namespace {

void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace

Raster read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string magic;
  in >> magic;
  int w = 0, h = 0, maxval = 0;
  skip_ws_and_comments(in);
  in >> w;
  skip_ws_and_comments(in);
  in >> h;
  skip_ws_and_comments(in);
  in >> maxval;
  in.get();
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) {
    fail(ErrorCode::Io, path.string() + ": expected binary PPM (P6, maxval 255)");
  }
  Raster image(h, w);
  in.read(reinterpret_cast<char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!in) fail(ErrorCode::Io, path.string() + ": truncated pixel data");
  return image;
}

}  // namespace tmt
