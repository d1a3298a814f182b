#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "editlab/core_model.hpp"
#include "editlab/editors.hpp"

namespace editlab {

enum class MaskMethod { none, rect, random, pca };

std::string_view to_string(MaskMethod method);
// Throws std::invalid_argument for unknown names.
MaskMethod parse_mask_method(std::string_view name);

struct RegularizerSpec {
  MaskMethod method = MaskMethod::none;
  double k_percent = 100.0;  // (0, 100]
  std::uint64_t seed = 0;    // random only
  double epsilon = 1e-12;    // floor for |W| in the relative change

  void validate() const;
};

// delta_rel(i, j) = |dW(i, j)| / max(|W(i, j)|, epsilon). Always finite and >= 0.
struct RelChangeMatrix {
  Matrix delta_rel;
};

RelChangeMatrix relative_change(const Matrix& weights, const Matrix& delta, double epsilon = 1e-12);

// ceil(k/100 * size), clamped to [1, size] for non-empty matrices.
std::size_t keep_count(double k_percent, std::size_t size);

// Keeps the keep_count() entries of `delta` with the largest relative change.
// Ties go to the smaller row-major index; kept entries are copied unchanged.
Matrix rect_mask(const Matrix& delta, const RelChangeMatrix& rel, double k_percent);

// Keeps keep_count() entries chosen uniformly at random (seeded).
Matrix random_mask(const Matrix& delta, double k_percent, std::uint64_t seed);

// Best rank-`rank` approximation (truncated SVD).
Matrix low_rank_approximation(const Matrix& m, Eigen::Index rank);

// Rank-r truncated SVD reconstruction, r = max(1, round(k/100 * min(rows, cols))),
// followed by top-k% selection on |reconstruction| with the rect_mask tie rule.
Matrix pca_mask(const Matrix& delta, double k_percent);

WeightDelta regularize(const WeightDelta& delta, const RegularizerSpec& spec,
                       const Matrix& original_weights);

}  // namespace editlab
