#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace editlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// One knowledge tuple (subject, relation, object_old -> object_new).
struct EditFact {
  std::string subject;
  std::string relation;
  std::string object_old;
  std::string object_new;
  std::int64_t id = 0;

  bool operator==(const EditFact&) const = default;
};

// Throws std::invalid_argument when a fact violates its own invariants.
void validate_fact(const EditFact& fact);

// Throws std::invalid_argument on duplicate ids.
void validate_fact_set(std::span<const EditFact> facts);

// Sorted token -> unit embedding. Ordered so iteration is lexicographic.
using Vocabulary = std::map<std::string, Vector, std::less<>>;

// Deterministic unit vector for a token: FNV-1a hash of the token mixed with
// the seed drives a Gaussian draw, which is then L2-normalised. The RNG path
// uses only mt19937_64 plus a hand-written Box-Muller transform, so the output
// is identical on every conforming standard library.
Vector embed_token(std::string_view token, std::size_t dim, std::uint64_t seed);

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t n_layers = 1;
  double ridge_lambda = 1e-3;
  std::uint64_t seed = 0;
};

// Stack of square linear maps with a rectifier between layers (never after the
// last one). Immutable: edits produce new models through with_layers().
class ToyModel {
 public:
  ToyModel(std::vector<Matrix> layers, std::uint64_t seed, Vocabulary vocab,
           Vocabulary objects, Matrix stored_keys);

  const std::vector<Matrix>& layers() const { return layers_; }
  const Matrix& layer(std::size_t index) const { return layers_.at(index); }
  std::size_t n_layers() const { return layers_.size(); }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  // Every token registered at build time.
  const Vocabulary& vocab() const { return *vocab_; }
  // Decode targets: all object_old / object_new tokens.
  const Vocabulary& objects() const { return *objects_; }
  // dim x n matrix of the stored facts' keys (layer-0 inputs).
  const Matrix& stored_keys() const { return *stored_keys_; }

  ToyModel with_layers(std::vector<Matrix> layers) const;

 private:
  std::vector<Matrix> layers_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::shared_ptr<const Vocabulary> vocab_;
  std::shared_ptr<const Vocabulary> objects_;
  std::shared_ptr<const Matrix> stored_keys_;
};

// normalize(embed(subject) + embed(relation)).
Vector key_for(const EditFact& fact, std::size_t dim, std::uint64_t seed);
Vector key_for(const EditFact& fact, const ToyModel& model);

// Embedding of a token in the model's space (vocabulary lookup with a
// fallback to embed_token for unregistered tokens).
Vector token_vector(const ToyModel& model, std::string_view token);

// Fits every layer by closed-form ridge regression. Layers before the last map
// each fact onto a seeded random unit vector; the last layer maps onto the
// object_old embedding. Each layer is fitted on the actual activations
// produced by the already-fitted layers below it.
ToyModel build_model(std::span<const EditFact> facts, const ModelConfig& config);

// Builds a model around explicitly given weights (tests, file-driven tools).
ToyModel model_from_weights(std::vector<Matrix> layers, std::span<const EditFact> facts,
                            std::uint64_t seed);

Vector rectify(const Vector& v);

Vector forward(const ToyModel& model, const Vector& input);

// Input seen by layer `layer` (the raw input for layer 0).
Vector layer_input(const ToyModel& model, std::size_t layer, const Vector& input);

// Pre-activation output of layer `layer`.
Vector layer_output(const ToyModel& model, std::size_t layer, const Vector& input);

struct Decoded {
  std::string token;
  bool degenerate = false;  // zero output: token is the lexicographically first
};

// Argmax of cosine similarity over the vocabulary; ties go to the
// lexicographically smallest token.
Decoded decode(const Vector& output, const Vocabulary& vocab);

std::string predict(const ToyModel& model, const Vector& input);

}  // namespace editlab
