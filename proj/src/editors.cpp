#include "editlab/editors.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

namespace editlab {

namespace {

void check_layer(const ToyModel& model, std::size_t layer) {
  if (layer >= model.n_layers()) {
    throw std::out_of_range("layer " + std::to_string(layer) + " out of range (model has " +
                            std::to_string(model.n_layers()) + " layers)");
  }
}

// d(final output) / d(pre-activation output of `layer`) at `key`.
Matrix downstream_jacobian(const ToyModel& model, std::size_t layer, const Vector& key) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  if (layer + 1 == model.n_layers()) return Matrix::Identity(d, d);

  Vector pre = layer_output(model, layer, key);
  Matrix jac = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) jac(i, i) = pre[i] > 0.0 ? 1.0 : 0.0;
  for (std::size_t m = layer + 1; m + 1 < model.n_layers(); ++m) {
    const Matrix& w = model.layer(m);
    pre = w * rectify(pre);
    Matrix next = w * jac;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!(pre[i] > 0.0)) next.row(i).setZero();
    }
    jac = std::move(next);
  }
  return model.layers().back() * jac;
}

// Damped least-squares step x = J^T (J J^T + mu I)^-1 b, mu relative to the
// largest squared singular value. Near-singular directions are suppressed
// instead of amplified.
Vector damped_solve(const Matrix& jac, const Vector& b) {
  Eigen::JacobiSVD<Matrix> svd(jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s[0] == 0.0) return Vector::Zero(jac.cols());
  const double mu = kJacobianDamping * s[0] * s[0];
  const Vector gain = s.array() / (s.array().square() + mu);
  return svd.matrixV() * (gain.asDiagonal() * (svd.matrixU().transpose() * b));
}

}  // namespace

Matrix stored_layer_inputs(const ToyModel& model, std::size_t layer) {
  check_layer(model, layer);
  Matrix inputs = model.stored_keys();
  for (std::size_t l = 0; l < layer; ++l) inputs = (model.layer(l) * inputs).cwiseMax(0.0);
  return inputs;
}

Matrix key_covariance(const ToyModel& model, std::size_t layer, double lambda_c) {
  if (!(lambda_c > 0.0)) throw std::invalid_argument("key covariance lambda must be > 0");
  const Matrix inputs = stored_layer_inputs(model, layer);
  Matrix cov = inputs * inputs.transpose();
  cov.diagonal().array() += lambda_c;
  return cov;
}

Vector layer_target(const ToyModel& model, std::size_t layer, const Vector& key,
                    const Vector& target, double fraction) {
  check_layer(model, layer);
  const Vector current = layer_output(model, layer, key);
  const Vector wanted = fraction * (target - forward(model, key));
  if (layer + 1 == model.n_layers()) return current + wanted;
  const Matrix jac = downstream_jacobian(model, layer, key);
  return current + damped_solve(jac, wanted);
}

WeightDelta rome_delta(const ToyModel& model, std::size_t layer, const EditFact& fact,
                       double lambda_c) {
  check_layer(model, layer);
  validate_fact(fact);
  const Vector key = key_for(fact, model);
  const Vector k = layer_input(model, layer, key);
  if (k.squaredNorm() == 0.0) {
    throw std::invalid_argument("rome_delta: fact " + std::to_string(fact.id) +
                                " has a zero key at layer " + std::to_string(layer));
  }
  const Vector v_star = layer_target(model, layer, key, token_vector(model, fact.object_new));
  const Matrix& w = model.layer(layer);

  const Eigen::LDLT<Matrix> cov(key_covariance(model, layer, lambda_c));
  const Vector u = cov.solve(k);
  const Vector residual = v_star - w * k;
  return {layer, residual * u.transpose() / k.dot(u)};
}

WeightDelta kn_delta(const ToyModel& model, std::size_t layer, const EditFact& fact,
                     std::size_t neurons, double step) {
  check_layer(model, layer);
  validate_fact(fact);
  const Matrix& w = model.layer(layer);
  const auto d_in = static_cast<std::size_t>(w.cols());
  if (neurons < 1 || neurons > d_in) {
    throw std::invalid_argument("kn_delta: neuron count " + std::to_string(neurons) +
                                " outside [1, " + std::to_string(d_in) + "]");
  }

  const Vector key = key_for(fact, model);
  const Vector k = layer_input(model, layer, key);
  const Vector v_star = layer_target(model, layer, key, token_vector(model, fact.object_new));
  const Vector residual = v_star - w * k;

  // Attribution proxy: |k_j| * ||W[:, j]||.
  std::vector<std::size_t> order(d_in);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> score(d_in);
  for (std::size_t j = 0; j < d_in; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    score[j] = std::abs(k[jj]) * w.col(jj).norm();
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  double support_energy = 0.0;
  for (std::size_t i = 0; i < neurons; ++i) {
    const double kj = k[static_cast<Eigen::Index>(order[i])];
    support_energy += kj * kj;
  }

  Matrix delta = Matrix::Zero(w.rows(), w.cols());
  if (support_energy == 0.0 || step == 0.0) return {layer, delta};

  // Minimum-norm solution of delta_S k_S = residual restricted to the support.
  for (std::size_t i = 0; i < neurons; ++i) {
    const auto j = static_cast<Eigen::Index>(order[i]);
    delta.col(j) = step * residual * (k[j] / support_energy);
  }
  return {layer, delta};
}

std::vector<WeightDelta> memit_delta(const ToyModel& model, std::span<const std::size_t> layers,
                                     std::span<const EditFact> batch, double lambda_c) {
  if (batch.empty()) throw std::invalid_argument("memit_delta: empty batch");
  if (layers.empty()) throw std::invalid_argument("memit_delta: no layers given");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    check_layer(model, layers[i]);
    if (i > 0 && layers[i] <= layers[i - 1]) {
      throw std::invalid_argument("memit_delta: layers must be strictly ascending");
    }
  }
  validate_fact_set(batch);

  const auto d = static_cast<Eigen::Index>(model.dim());
  const auto n = static_cast<Eigen::Index>(batch.size());
  std::vector<Vector> keys;
  std::vector<Vector> targets;
  keys.reserve(batch.size());
  targets.reserve(batch.size());
  for (const auto& fact : batch) {
    keys.push_back(key_for(fact, model));
    targets.push_back(token_vector(model, fact.object_new));
  }

  std::vector<WeightDelta> out;
  out.reserve(layers.size());
  ToyModel current = model;
  for (std::size_t p = 0; p < layers.size(); ++p) {
    const std::size_t layer = layers[p];
    const double fraction = 1.0 / static_cast<double>(layers.size() - p);
    const Matrix& w = current.layer(layer);

    Matrix k_mat(d, n);
    Matrix r_mat(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& key = keys[static_cast<std::size_t>(j)];
      k_mat.col(j) = layer_input(current, layer, key);
      r_mat.col(j) =
          layer_target(current, layer, key, targets[static_cast<std::size_t>(j)], fraction) -
          w * k_mat.col(j);
    }

    // delta = R (K^T C^-1 K)^+ (C^-1 K)^T
    const Eigen::LDLT<Matrix> cov(key_covariance(current, layer, lambda_c));
    const Matrix cinv_k = cov.solve(k_mat);
    const Matrix gram = k_mat.transpose() * cinv_k;
    const Matrix mix = Eigen::CompleteOrthogonalDecomposition<Matrix>(gram).solve(
        Matrix(cinv_k.transpose()));
    WeightDelta step{layer, r_mat * mix};
    current = editlab::apply(current, step);
    out.push_back(std::move(step));
  }
  return out;
}

ToyModel apply(const ToyModel& model, std::span<const WeightDelta> deltas) {
  std::vector<Matrix> layers = model.layers();
  for (const auto& d : deltas) {
    if (d.layer_index >= layers.size()) {
      throw std::out_of_range("apply: delta targets missing layer " +
                              std::to_string(d.layer_index));
    }
    Matrix& w = layers[d.layer_index];
    if (d.delta.rows() != w.rows() || d.delta.cols() != w.cols()) {
      throw std::invalid_argument("apply: delta shape does not match layer " +
                                  std::to_string(d.layer_index));
    }
    if (!d.delta.allFinite()) throw std::invalid_argument("apply: non-finite delta");
    w += d.delta;
  }
  return model.with_layers(std::move(layers));
}

ToyModel apply(const ToyModel& model, const WeightDelta& delta) {
  return editlab::apply(model, std::span<const WeightDelta>(&delta, 1));
}

}  // namespace editlab
