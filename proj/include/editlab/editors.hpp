#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "editlab/core_model.hpp"

namespace editlab {

// Additive update for one layer: W_new = W + delta.
struct WeightDelta {
  std::size_t layer_index = 0;
  Matrix delta;
};

inline constexpr double kDefaultKeyCovarianceLambda = 1e-2;

// Inputs seen by `layer` for every stored fact (dim x n).
Matrix stored_layer_inputs(const ToyModel& model, std::size_t layer);

// C = K K^T + lambda_c I over the stored facts' inputs at `layer`.
Matrix key_covariance(const ToyModel& model, std::size_t layer, double lambda_c);

// Output that `layer` must produce for `key` so the final output moves by
// `fraction` of the remaining error towards `target`. The downstream layers
// are linearised once around the current activation and inverted with a
// damped least-squares step; for the last layer this is exact.
inline constexpr double kJacobianDamping = 1e-4;

Vector layer_target(const ToyModel& model, std::size_t layer, const Vector& key,
                    const Vector& target, double fraction = 1.0);

// Rank-one insertion:
//   delta = (v* - W k*) (C^-1 k*)^T / (k*^T C^-1 k*)
// which makes (W + delta) k* = v* exactly.
WeightDelta rome_delta(const ToyModel& model, std::size_t layer, const EditFact& fact,
                       double lambda_c = kDefaultKeyCovarianceLambda);

// Neuron-restricted update on the `neurons` input columns with the largest
// |k*_j| * ||W[:, j]||, scaled by `step`. Ties prefer the lower column index.
WeightDelta kn_delta(const ToyModel& model, std::size_t layer, const EditFact& fact,
                     std::size_t neurons, double step = 1.0);

// Multi-layer batch update. Layers are visited in ascending order; each takes
// 1/(remaining layers) of every fact's remaining output error and solves the
// minimum-covariance-norm system delta K = R exactly.
std::vector<WeightDelta> memit_delta(const ToyModel& model, std::span<const std::size_t> layers,
                                     std::span<const EditFact> batch,
                                     double lambda_c = kDefaultKeyCovarianceLambda);

// W_l + delta_l for each delta; the input model is left untouched.
ToyModel apply(const ToyModel& model, std::span<const WeightDelta> deltas);
ToyModel apply(const ToyModel& model, const WeightDelta& delta);

}  // namespace editlab
