#include "editlab/core_model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <utility>

#include "editlab/random.hpp"

namespace editlab {

void validate_fact(const EditFact& fact) {
  if (fact.subject.empty() || fact.relation.empty()) {
    throw std::invalid_argument("fact " + std::to_string(fact.id) +
                                ": subject and relation must be non-empty");
  }
  if (fact.object_old.empty() || fact.object_new.empty()) {
    throw std::invalid_argument("fact " + std::to_string(fact.id) + ": objects must be non-empty");
  }
  if (fact.object_old == fact.object_new) {
    throw std::invalid_argument("fact " + std::to_string(fact.id) +
                                ": object_old equals object_new");
  }
}

void validate_fact_set(std::span<const EditFact> facts) {
  std::set<std::int64_t> ids;
  for (const auto& f : facts) {
    validate_fact(f);
    if (!ids.insert(f.id).second) {
      throw std::invalid_argument("duplicate fact id " + std::to_string(f.id));
    }
  }
}

Vector embed_token(std::string_view token, std::size_t dim, std::uint64_t seed) {
  if (token.empty()) throw std::invalid_argument("embed_token: empty token");
  if (dim < 2) throw std::invalid_argument("embed_token: dim must be >= 2");

  std::mt19937_64 rng(splitmix64(fnv1a64(token) ^ splitmix64(seed)));
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = standard_normal(rng);
  const double norm = v.norm();
  // A zero draw is not reachable in practice; keep the contract anyway.
  if (norm == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

ToyModel::ToyModel(std::vector<Matrix> layers, std::uint64_t seed, Vocabulary vocab,
                   Vocabulary objects, Matrix stored_keys)
    : layers_(std::move(layers)),
      dim_(0),
      seed_(seed),
      vocab_(std::make_shared<const Vocabulary>(std::move(vocab))),
      objects_(std::make_shared<const Vocabulary>(std::move(objects))),
      stored_keys_(std::make_shared<const Matrix>(std::move(stored_keys))) {
  if (layers_.empty()) throw std::invalid_argument("ToyModel: at least one layer required");
  dim_ = static_cast<std::size_t>(layers_.front().cols());
  for (const auto& w : layers_) {
    if (static_cast<std::size_t>(w.rows()) != dim_ || static_cast<std::size_t>(w.cols()) != dim_) {
      throw std::invalid_argument("ToyModel: every layer must be dim x dim");
    }
    if (!w.allFinite()) throw std::invalid_argument("ToyModel: non-finite weight");
  }
  if (stored_keys_->size() != 0 && static_cast<std::size_t>(stored_keys_->rows()) != dim_) {
    throw std::invalid_argument("ToyModel: stored keys have wrong dimension");
  }
}

ToyModel ToyModel::with_layers(std::vector<Matrix> layers) const {
  ToyModel copy = *this;
  if (layers.size() != layers_.size()) {
    throw std::invalid_argument("with_layers: layer count mismatch");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].rows() != layers_[i].rows() || layers[i].cols() != layers_[i].cols()) {
      throw std::invalid_argument("with_layers: shape mismatch at layer " + std::to_string(i));
    }
    if (!layers[i].allFinite()) throw std::invalid_argument("with_layers: non-finite weight");
  }
  copy.layers_ = std::move(layers);
  return copy;
}

Vector key_for(const EditFact& fact, std::size_t dim, std::uint64_t seed) {
  Vector k = embed_token(fact.subject, dim, seed) + embed_token(fact.relation, dim, seed);
  const double norm = k.norm();
  if (norm == 0.0) throw std::invalid_argument("key_for: subject and relation cancel out");
  return k / norm;
}

Vector key_for(const EditFact& fact, const ToyModel& model) {
  return key_for(fact, model.dim(), model.seed());
}

Vector token_vector(const ToyModel& model, std::string_view token) {
  if (auto it = model.vocab().find(token); it != model.vocab().end()) return it->second;
  return embed_token(token, model.dim(), model.seed());
}

namespace {

// Seeded random unit target for an intermediate layer.
Vector hidden_target(const EditFact& fact, std::size_t layer, std::size_t dim, std::uint64_t seed) {
  const std::string tag =
      "#hidden/" + std::to_string(layer) + "/" + fact.subject + "\x1f" + fact.relation;
  return embed_token(tag, dim, seed);
}

// W = T X^T (X X^T + lambda I)^-1, computed through the symmetric system.
Matrix ridge_fit(const Matrix& inputs, const Matrix& targets, double lambda) {
  Matrix gram = inputs * inputs.transpose();
  gram.diagonal().array() += lambda;
  Eigen::LDLT<Matrix> ldlt(gram);
  return ldlt.solve(inputs * targets.transpose()).transpose();
}

std::pair<Vocabulary, Vocabulary> collect_vocab(std::span<const EditFact> facts, std::size_t dim,
                                                std::uint64_t seed) {
  Vocabulary vocab;
  Vocabulary objects;
  auto add = [&](Vocabulary& into, const std::string& token) {
    if (!into.contains(token)) into.emplace(token, embed_token(token, dim, seed));
  };
  for (const auto& f : facts) {
    add(vocab, f.subject);
    add(vocab, f.relation);
    add(vocab, f.object_old);
    add(vocab, f.object_new);
    add(objects, f.object_old);
    add(objects, f.object_new);
  }
  return {std::move(vocab), std::move(objects)};
}

Matrix keys_matrix(std::span<const EditFact> facts, std::size_t dim, std::uint64_t seed) {
  Matrix keys(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(facts.size()));
  for (std::size_t j = 0; j < facts.size(); ++j) {
    keys.col(static_cast<Eigen::Index>(j)) = key_for(facts[j], dim, seed);
  }
  return keys;
}

}  // namespace

ToyModel build_model(std::span<const EditFact> facts, const ModelConfig& config) {
  if (facts.empty()) throw std::invalid_argument("build_model: fact list is empty");
  if (config.n_layers < 1) throw std::invalid_argument("build_model: n_layers must be >= 1");
  if (!(config.ridge_lambda > 0.0)) throw std::invalid_argument("build_model: lambda must be > 0");
  if (config.dim < 2) throw std::invalid_argument("build_model: dim must be >= 2");

  std::map<std::pair<std::string, std::string>, std::string> seen;
  for (const auto& f : facts) {
    validate_fact(f);
    auto [it, inserted] = seen.emplace(std::pair{f.subject, f.relation}, f.object_old);
    if (!inserted && it->second != f.object_old) {
      throw std::invalid_argument("build_model: conflicting objects for (" + f.subject + ", " +
                                  f.relation + ")");
    }
  }

  const auto d = static_cast<Eigen::Index>(config.dim);
  const auto n = static_cast<Eigen::Index>(facts.size());
  auto [vocab, objects] = collect_vocab(facts, config.dim, config.seed);
  Matrix keys = keys_matrix(facts, config.dim, config.seed);

  Matrix final_targets(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    final_targets.col(j) = vocab.at(facts[static_cast<std::size_t>(j)].object_old);
  }

  std::vector<Matrix> layers;
  layers.reserve(config.n_layers);
  Matrix inputs = keys;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const bool last = l + 1 == config.n_layers;
    Matrix targets(d, n);
    if (last) {
      targets = final_targets;
    } else {
      for (Eigen::Index j = 0; j < n; ++j) {
        targets.col(j) = hidden_target(facts[static_cast<std::size_t>(j)], l, config.dim, config.seed);
      }
    }
    Matrix w = ridge_fit(inputs, targets, config.ridge_lambda);
    if (!last) inputs = (w * inputs).cwiseMax(0.0);
    layers.push_back(std::move(w));
  }

  return ToyModel(std::move(layers), config.seed, std::move(vocab), std::move(objects),
                  std::move(keys));
}

ToyModel model_from_weights(std::vector<Matrix> layers, std::span<const EditFact> facts,
                            std::uint64_t seed) {
  if (layers.empty()) throw std::invalid_argument("model_from_weights: no layers");
  const auto dim = static_cast<std::size_t>(layers.front().cols());
  auto [vocab, objects] = collect_vocab(facts, dim, seed);
  Matrix keys = facts.empty() ? Matrix(static_cast<Eigen::Index>(dim), 0)
                              : keys_matrix(facts, dim, seed);
  return ToyModel(std::move(layers), seed, std::move(vocab), std::move(objects), std::move(keys));
}

Vector rectify(const Vector& v) { return v.cwiseMax(0.0); }

Vector layer_output(const ToyModel& model, std::size_t layer, const Vector& input) {
  return model.layer(layer) * layer_input(model, layer, input);
}

Vector layer_input(const ToyModel& model, std::size_t layer, const Vector& input) {
  if (static_cast<std::size_t>(input.size()) != model.dim()) {
    throw std::invalid_argument("forward: input has length " + std::to_string(input.size()) +
                                ", expected " + std::to_string(model.dim()));
  }
  if (layer >= model.n_layers()) throw std::out_of_range("layer index out of range");
  Vector x = input;
  for (std::size_t l = 0; l < layer; ++l) x = rectify(model.layer(l) * x);
  return x;
}

Vector forward(const ToyModel& model, const Vector& input) {
  return layer_output(model, model.n_layers() - 1, input);
}

Decoded decode(const Vector& output, const Vocabulary& vocab) {
  if (vocab.empty()) throw std::invalid_argument("decode: empty vocabulary");
  if (output.squaredNorm() == 0.0) return {vocab.begin()->first, true};

  // |output| is common to every score, so it is left out; scaling the output
  // by a positive factor cannot reorder the scores.
  const std::string* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& [token, embedding] : vocab) {
    const double score = output.dot(embedding) / embedding.norm();
    if (score > best_score) {
      best_score = score;
      best = &token;
    }
  }
  return {*best, false};
}

std::string predict(const ToyModel& model, const Vector& input) {
  return decode(forward(model, input), model.objects()).token;
}

}  // namespace editlab
