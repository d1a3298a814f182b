#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "editlab/core_model.hpp"
#include "editlab/editors.hpp"
#include "editlab/regularizers.hpp"

namespace editlab {

enum class EditorKind { rome, kn, memit };
enum class Regime { single, sequential };

std::string_view to_string(EditorKind editor);
std::string_view to_string(Regime regime);
EditorKind parse_editor(std::string_view name);
Regime parse_regime(std::string_view name);

inline constexpr double kDefaultThresholdLow = 0.077;
inline constexpr double kDefaultThresholdHigh = 0.171;

struct ExperimentConfig {
  // Model.
  std::size_t dim = 64;
  std::size_t n_layers = 1;
  double ridge_lambda = 1e-3;
  std::uint64_t seed = 0;

  // Synthetic facts, used when `facts` is empty.
  std::size_t num_facts = 128;
  std::size_t num_relations = 4;
  std::size_t num_objects = 32;
  std::vector<EditFact> facts;

  // Editing.
  EditorKind editor = EditorKind::rome;
  std::vector<std::size_t> edit_layers;  // empty: last layer only
  double lambda_c = 10.0;
  std::size_t kn_neurons = 16;
  double kn_step = 1.0;
  RegularizerSpec regularizer;
  Regime regime = Regime::sequential;
  std::size_t batch_size = 1;
  std::size_t num_edit_operations = 15;

  // Evaluation.
  std::size_t num_paraphrases = 4;
  double paraphrase_sigma = 0.05;
  std::size_t num_probes = 64;
  std::vector<double> thresholds{kDefaultThresholdLow, kDefaultThresholdHigh};

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  std::vector<std::size_t> resolved_edit_layers() const;
  // One-line key=value summary, stable across runs.
  std::string echo() const;
};

struct EditMetrics {
  double reliability = 0.0;
  double generalization = 0.0;
  double locality = 0.0;
  double general_ability_drift = 0.0;
};

struct DriftStats {
  double manhattan = 0.0;
  // (threshold, fraction of entries whose relative change exceeds it), in the
  // order the thresholds were given.
  std::vector<std::pair<double, double>> frac_above;
};

struct ResultRow {
  std::size_t step = 0;
  EditMetrics metrics;
  DriftStats drift;
  std::string config_echo;
};

struct ProbeSet {
  std::vector<EditFact> holdout_facts;
  std::vector<Vector> random_probes;
};

std::vector<EditFact> synthesize_facts(std::size_t count, std::size_t relations,
                                       std::size_t objects, std::uint64_t seed);

std::vector<Vector> make_probes(std::size_t count, std::size_t dim, std::uint64_t seed);

double eval_reliability(const ToyModel& model, std::span<const EditFact> edited);

// Paraphrase keys are normalize(key + sigma * g) with g ~ N(0, I), drawn from a
// stream seeded by (seed, fact id) so every fact sees the same paraphrases on
// every call.
double eval_generalization(const ToyModel& model, std::span<const EditFact> edited,
                           std::size_t n_para, double sigma, std::uint64_t seed);

// Fraction of holdout facts on which both models decode identically. Rejects
// holdout facts whose ids appear in `edited`.
double eval_locality(const ToyModel& edited_model, const ToyModel& base_model,
                     std::span<const EditFact> holdout, std::span<const EditFact> edited = {});

double eval_general_ability(const ToyModel& edited_model, const ToyModel& base_model,
                            std::span<const Vector> probes);

DriftStats drift_stats(const Matrix& original, const Matrix& current,
                       std::span<const double> thresholds, double epsilon = 1e-12);

// Pools several layers into one statistic (sum of distances, pooled fractions).
DriftStats drift_stats(std::span<const Matrix> original, std::span<const Matrix> current,
                       std::span<const double> thresholds, double epsilon = 1e-12);

std::vector<ResultRow> run_experiment(const ExperimentConfig& config);

}  // namespace editlab
