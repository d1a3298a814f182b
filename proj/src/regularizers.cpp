#include "editlab/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "editlab/random.hpp"

namespace editlab {

std::string_view to_string(MaskMethod method) {
  switch (method) {
    case MaskMethod::none:
      return "none";
    case MaskMethod::rect:
      return "rect";
    case MaskMethod::random:
      return "random";
    case MaskMethod::pca:
      return "pca";
  }
  throw std::invalid_argument("unknown mask method");
}

MaskMethod parse_mask_method(std::string_view name) {
  if (name == "none") return MaskMethod::none;
  if (name == "rect") return MaskMethod::rect;
  if (name == "random") return MaskMethod::random;
  if (name == "pca") return MaskMethod::pca;
  throw std::invalid_argument("unknown regularizer method '" + std::string(name) + "'");
}

void RegularizerSpec::validate() const {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw std::invalid_argument("k_percent must lie in (0, 100]");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  (void)to_string(method);
}

namespace {

void check_k(double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw std::invalid_argument("k_percent must lie in (0, 100]");
  }
}

// Row-major flat index of element `flat` in an Eigen (column-major) matrix.
struct Cell {
  Eigen::Index row;
  Eigen::Index col;
};

Cell cell_of(std::size_t flat, Eigen::Index cols) {
  const auto f = static_cast<Eigen::Index>(flat);
  return {f / cols, f % cols};
}

// Row-major indices of the `count` largest scores, ties to the lower index.
std::vector<std::size_t> top_indices(const Matrix& score, std::size_t count) {
  const auto cols = score.cols();
  const auto size = static_cast<std::size_t>(score.size());
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto value = [&](std::size_t i) {
    const auto c = cell_of(i, cols);
    return score(c.row, c.col);
  };
  auto before = [&](std::size_t a, std::size_t b) {
    const double va = value(a);
    const double vb = value(b);
    return va > vb || (va == vb && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    before);
  idx.resize(count);
  return idx;
}

Matrix keep_only(const Matrix& values, const std::vector<std::size_t>& kept) {
  Matrix out = Matrix::Zero(values.rows(), values.cols());
  for (std::size_t i : kept) {
    const auto c = cell_of(i, values.cols());
    out(c.row, c.col) = values(c.row, c.col);
  }
  return out;
}

}  // namespace

RelChangeMatrix relative_change(const Matrix& weights, const Matrix& delta, double epsilon) {
  if (weights.rows() != delta.rows() || weights.cols() != delta.cols()) {
    throw std::invalid_argument("relative_change: shape mismatch");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("relative_change: epsilon must be > 0");
  return {delta.cwiseAbs().cwiseQuotient(weights.cwiseAbs().cwiseMax(epsilon))};
}

std::size_t keep_count(double k_percent, std::size_t size) {
  check_k(k_percent);
  if (size == 0) return 0;
  // The slack absorbs products like 0.1 * 100 landing a hair above an integer.
  const double raw = k_percent / 100.0 * static_cast<double>(size);
  auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(n, 1, size);
}

Matrix rect_mask(const Matrix& delta, const RelChangeMatrix& rel, double k_percent) {
  if (rel.delta_rel.rows() != delta.rows() || rel.delta_rel.cols() != delta.cols()) {
    throw std::invalid_argument("rect_mask: shape mismatch");
  }
  const std::size_t n_keep = keep_count(k_percent, static_cast<std::size_t>(delta.size()));
  if (n_keep == static_cast<std::size_t>(delta.size())) return delta;
  return keep_only(delta, top_indices(rel.delta_rel, n_keep));
}

Matrix random_mask(const Matrix& delta, double k_percent, std::uint64_t seed) {
  const auto size = static_cast<std::size_t>(delta.size());
  const std::size_t n_keep = keep_count(k_percent, size);
  if (n_keep == size) return delta;

  // Partial Fisher-Yates over row-major indices.
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0x72616e646f6dULL));
  for (std::size_t i = 0; i < n_keep; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n_keep);
  return keep_only(delta, idx);
}

Matrix low_rank_approximation(const Matrix& m, Eigen::Index rank) {
  if (m.size() == 0) return m;
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  rank = std::clamp<Eigen::Index>(rank, 0, svd.singularValues().size());
  return svd.matrixU().leftCols(rank) * svd.singularValues().head(rank).asDiagonal() *
         svd.matrixV().leftCols(rank).transpose();
}

Matrix pca_mask(const Matrix& delta, double k_percent) {
  check_k(k_percent);
  if (delta.size() == 0) return delta;
  const auto min_dim = std::min(delta.rows(), delta.cols());
  const auto rank = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::round(k_percent / 100.0 * static_cast<double>(min_dim))));

  const Matrix recon = low_rank_approximation(delta, rank);

  const std::size_t n_keep = keep_count(k_percent, static_cast<std::size_t>(delta.size()));
  if (n_keep == static_cast<std::size_t>(delta.size())) return recon;
  return keep_only(recon, top_indices(recon.cwiseAbs(), n_keep));
}

WeightDelta regularize(const WeightDelta& delta, const RegularizerSpec& spec,
                       const Matrix& original_weights) {
  spec.validate();
  if (original_weights.rows() != delta.delta.rows() ||
      original_weights.cols() != delta.delta.cols()) {
    throw std::invalid_argument("regularize: weight and delta shapes differ");
  }
  switch (spec.method) {
    case MaskMethod::none:
      return delta;
    case MaskMethod::rect:
      return {delta.layer_index,
              rect_mask(delta.delta, relative_change(original_weights, delta.delta, spec.epsilon),
                        spec.k_percent)};
    case MaskMethod::random:
      return {delta.layer_index, random_mask(delta.delta, spec.k_percent, spec.seed)};
    case MaskMethod::pca:
      return {delta.layer_index, pca_mask(delta.delta, spec.k_percent)};
  }
  throw std::invalid_argument("regularize: unknown method");
}

}  // namespace editlab
