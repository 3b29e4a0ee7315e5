#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "tmt/vocab.hpp"

namespace tmt {

/// Row-per-vector storage used for feature frames, patches and centroids.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// k centroid vectors of dimension `dim()`; centroid j names local token j.
class Codebook {
 public:
  Codebook() = default;
  explicit Codebook(RowMatrix centers);

  Eigen::Index k() const { return centers_.rows(); }
  Eigen::Index dim() const { return centers_.cols(); }
  const RowMatrix& centers() const { return centers_; }

  /// Nearest centroid by squared distance, lowest index on ties.
  TokenId nearest(const Eigen::Ref<const Eigen::RowVectorXd>& v) const;

  bool operator==(const Codebook& other) const { return centers_ == other.centers_; }

 private:
  RowMatrix centers_;
};

struct KMeansResult {
  Codebook codebook;
  /// Objective after each assignment pass; entry 0 is the k-means++ start.
  std::vector<double> objective_trace;
  int iterations = 0;
};

/// Lloyd's algorithm from a seeded k-means++ start.  Stops at an assignment
/// fixpoint, after `iters` passes, or when a pass fails to lower the
/// objective (rounding), in which case the previous centers are kept.
KMeansResult train_codebook(const RowMatrix& vectors, Eigen::Index k, int iters, std::uint64_t seed);

/// Sum of squared distances of each vector to its nearest center.
double quantization_objective(const Codebook& cb, const RowMatrix& vectors);

std::vector<TokenId> quantize(const Codebook& cb, const RowMatrix& vectors);
RowMatrix dequantize(const Codebook& cb, const std::vector<TokenId>& ids);

// `TMTCB <dim> <k>` followed by k lines of dim reals.
void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace tmt
