#include "tmt/codebook.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "tmt/common.hpp"

namespace tmt {

Codebook::Codebook(RowMatrix centers) : centers_(std::move(centers)) {
  if (centers_.rows() < 1) fail(ErrorCode::InvalidArgument, "codebook needs k >= 1");
  if (!centers_.allFinite()) fail(ErrorCode::NonFinite, "codebook centers must be finite");
}

TokenId Codebook::nearest(const Eigen::Ref<const Eigen::RowVectorXd>& v) const {
  TokenId best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < centers_.rows(); ++j) {
    const double d = (centers_.row(j) - v).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<TokenId>(j);
    }
  }
  return best;
}

namespace {

struct Assignment {
  std::vector<TokenId> labels;
  double objective = 0;
};

Assignment assign(const RowMatrix& centers, const RowMatrix& vectors) {
  Assignment a;
  a.labels.resize(static_cast<std::size_t>(vectors.rows()));
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    TokenId best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < centers.rows(); ++j) {
      const double d = (centers.row(j) - vectors.row(i)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<TokenId>(j);
      }
    }
    a.labels[static_cast<std::size_t>(i)] = best;
    a.objective += best_d;
  }
  return a;
}

RowMatrix kmeanspp_init(const RowMatrix& vectors, Eigen::Index k, std::mt19937_64& rng) {
  const Eigen::Index n = vectors.rows();
  RowMatrix centers(k, vectors.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = vectors.row(pick(rng));

  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (vectors.row(i) - centers.row(0)).squaredNorm();

  for (Eigen::Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      const double target = u(rng);
      double acc = 0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target && d2(i) > 0) {
          chosen = i;
          break;
        }
      }
    } else {
      // every point already coincides with a center
      chosen = pick(rng);
    }
    centers.row(c) = vectors.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2(i) = std::min(d2(i), (vectors.row(i) - centers.row(c)).squaredNorm());
    }
  }
  return centers;
}

}  // namespace

KMeansResult train_codebook(const RowMatrix& vectors, Eigen::Index k, int iters, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  if (vectors.rows() < k) {
    fail(ErrorCode::InsufficientData, "need at least k=" + std::to_string(k) + " vectors, got " +
                                          std::to_string(vectors.rows()));
  }
  if (!vectors.allFinite()) fail(ErrorCode::NonFinite, "training vectors must be finite");

  std::mt19937_64 rng(seed);
  RowMatrix centers = kmeanspp_init(vectors, k, rng);
  Assignment current = assign(centers, vectors);

  KMeansResult result;
  result.objective_trace.push_back(current.objective);

  for (int it = 0; it < iters; ++it) {
    RowMatrix sums = RowMatrix::Zero(k, vectors.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
      const auto label = current.labels[static_cast<std::size_t>(i)];
      sums.row(label) += vectors.row(i);
      ++counts[static_cast<std::size_t>(label)];
    }
    RowMatrix updated = centers;
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto c = counts[static_cast<std::size_t>(j)];
      if (c > 0) updated.row(j) = sums.row(j) / static_cast<double>(c);
    }

    Assignment next = assign(updated, vectors);
    if (next.objective > current.objective) break;
    centers = std::move(updated);
    result.objective_trace.push_back(next.objective);
    ++result.iterations;
    const bool fixpoint = next.labels == current.labels;
    current = std::move(next);
    if (fixpoint) break;
  }
  result.codebook = Codebook(std::move(centers));
  return result;
}

double quantization_objective(const Codebook& cb, const RowMatrix& vectors) {
  return assign(cb.centers(), vectors).objective;
}

std::vector<TokenId> quantize(const Codebook& cb, const RowMatrix& vectors) {
  if (vectors.rows() > 0 && vectors.cols() != cb.dim()) {
    fail(ErrorCode::Shape, "frame dim " + std::to_string(vectors.cols()) +
                               " does not match codebook dim " + std::to_string(cb.dim()));
  }
  std::vector<TokenId> ids(static_cast<std::size_t>(vectors.rows()));
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    ids[static_cast<std::size_t>(i)] = cb.nearest(vectors.row(i));
  }
  return ids;
}

RowMatrix dequantize(const Codebook& cb, const std::vector<TokenId>& ids) {
  RowMatrix frames(static_cast<Eigen::Index>(ids.size()), cb.dim());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= cb.k()) {
      fail(ErrorCode::Range, "codebook id " + std::to_string(ids[t]) + " >= k=" +
                                 std::to_string(cb.k()));
    }
    frames.row(static_cast<Eigen::Index>(t)) = cb.centers().row(ids[t]);
  }
  return frames;
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << "TMTCB " << cb.dim() << ' ' << cb.k() << '\n';
  char buf[32];
  for (Eigen::Index j = 0; j < cb.k(); ++j) {
    for (Eigen::Index c = 0; c < cb.dim(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", cb.centers()(j, c));
      if (c) out << ' ';
      out << buf;
    }
    out << '\n';
  }
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string magic;
  Eigen::Index dim = 0, k = 0;
  in >> magic >> dim >> k;
  if (magic != "TMTCB" || dim < 1 || k < 1) {
    fail(ErrorCode::Io, path.string() + ": not a TMTCB codebook");
  }
  RowMatrix centers(k, dim);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      if (!(in >> centers(j, c))) fail(ErrorCode::Io, path.string() + ": truncated codebook");
    }
  }
  return Codebook(std::move(centers));
}

}  // namespace tmt
