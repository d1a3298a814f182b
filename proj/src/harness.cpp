#include "editlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "editlab/random.hpp"

namespace editlab {

std::string_view to_string(EditorKind editor) {
  switch (editor) {
    case EditorKind::rome:
      return "rome";
    case EditorKind::kn:
      return "kn";
    case EditorKind::memit:
      return "memit";
  }
  throw std::invalid_argument("unknown editor");
}

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::single:
      return "single";
    case Regime::sequential:
      return "sequential";
  }
  throw std::invalid_argument("unknown regime");
}

EditorKind parse_editor(std::string_view name) {
  if (name == "rome") return EditorKind::rome;
  if (name == "kn") return EditorKind::kn;
  if (name == "memit") return EditorKind::memit;
  throw std::invalid_argument("unknown editor '" + std::string(name) + "'");
}

Regime parse_regime(std::string_view name) {
  if (name == "single") return Regime::single;
  if (name == "sequential") return Regime::sequential;
  throw std::invalid_argument("unknown regime '" + std::string(name) + "'");
}

std::vector<std::size_t> ExperimentConfig::resolved_edit_layers() const {
  if (edit_layers.empty()) return {n_layers - 1};
  return edit_layers;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (dim < 2) fail("dim must be >= 2");
  if (n_layers < 1) fail("layers must be >= 1");
  if (!(ridge_lambda > 0.0)) fail("ridge_lambda must be > 0");
  if (!(lambda_c > 0.0)) fail("lambda_c must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (num_edit_operations < 1) fail("num_edit_operations must be >= 1");
  if (regime == Regime::single && num_edit_operations != 1) {
    fail("single regime requires num_edit_operations = 1");
  }
  if (editor != EditorKind::memit && batch_size != 1) {
    fail(std::string(to_string(editor)) + " does not support batch editing (batch_size must be 1)");
  }
  const auto layers = resolved_edit_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] >= n_layers) fail("edit layer " + std::to_string(layers[i]) + " out of range");
    if (i > 0 && layers[i] <= layers[i - 1]) fail("edit layers must be strictly ascending");
  }
  if (editor != EditorKind::memit && layers.size() != 1) {
    fail(std::string(to_string(editor)) + " edits exactly one layer");
  }
  if (editor == EditorKind::kn && (kn_neurons < 1 || kn_neurons > dim)) {
    fail("kn_neurons must lie in [1, dim]");
  }
  if (num_paraphrases < 1) fail("num_paraphrases must be >= 1");
  if (!(paraphrase_sigma >= 0.0)) fail("paraphrase_sigma must be >= 0");
  if (num_probes < 1) fail("num_probes must be >= 1");
  for (double t : thresholds) {
    if (!(t > 0.0)) fail("thresholds must be positive");
  }
  regularizer.validate();

  const std::size_t edited = num_edit_operations * batch_size;
  const std::size_t available = facts.empty() ? num_facts : facts.size();
  if (edited >= available) {
    fail("need more facts than edits (" + std::to_string(available) + " facts, " +
         std::to_string(edited) + " edits); at least one holdout fact is required");
  }
  if (facts.empty()) {
    if (num_relations < 1) fail("num_relations must be >= 1");
    if (num_objects < 2) fail("num_objects must be >= 2");
  }
}

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  os << "dim=" << dim << " layers=" << n_layers << " ridge_lambda=" << fmt_g(ridge_lambda)
     << " seed=" << seed;
  if (facts.empty()) {
    os << " num_facts=" << num_facts << " num_relations=" << num_relations
       << " num_objects=" << num_objects;
  } else {
    os << " facts=" << facts.size();
  }
  os << " editor=" << to_string(editor) << " edit_layers=";
  const auto layers = resolved_edit_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) os << (i ? ";" : "") << layers[i];
  os << " lambda_c=" << fmt_g(lambda_c);
  if (editor == EditorKind::kn) os << " kn_neurons=" << kn_neurons << " kn_step=" << fmt_g(kn_step);
  os << " regularizer=" << to_string(regularizer.method) << " k=" << fmt_g(regularizer.k_percent);
  if (regularizer.method == MaskMethod::random) os << " mask_seed=" << regularizer.seed;
  os << " regime=" << to_string(regime) << " batch_size=" << batch_size
     << " operations=" << num_edit_operations << " paraphrases=" << num_paraphrases
     << " sigma=" << fmt_g(paraphrase_sigma) << " probes=" << num_probes;
  return os.str();
}

std::vector<EditFact> synthesize_facts(std::size_t count, std::size_t relations,
                                       std::size_t objects, std::uint64_t seed) {
  if (relations < 1) throw std::invalid_argument("synthesize_facts: need at least one relation");
  if (objects < 2) throw std::invalid_argument("synthesize_facts: need at least two objects");
  std::mt19937_64 rng(mix_seed(seed, 0x6661637473ULL));
  std::vector<EditFact> facts;
  facts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto rel = uniform_below(rng, relations);
    const auto old_obj = uniform_below(rng, objects);
    const auto new_obj = (old_obj + 1 + uniform_below(rng, objects - 1)) % objects;
    facts.push_back({"s" + std::to_string(i), "r" + std::to_string(rel),
                     "o" + std::to_string(old_obj), "o" + std::to_string(new_obj),
                     static_cast<std::int64_t>(i)});
  }
  return facts;
}

std::vector<Vector> make_probes(std::size_t count, std::size_t dim, std::uint64_t seed) {
  std::vector<Vector> probes;
  probes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    probes.push_back(embed_token("#probe/" + std::to_string(i), dim, mix_seed(seed, 0x70726f6265ULL)));
  }
  return probes;
}

double eval_reliability(const ToyModel& model, std::span<const EditFact> edited) {
  if (edited.empty()) throw std::invalid_argument("eval_reliability: no edited facts");
  std::size_t hits = 0;
  for (const auto& f : edited) {
    if (predict(model, key_for(f, model)) == f.object_new) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(edited.size());
}

double eval_generalization(const ToyModel& model, std::span<const EditFact> edited,
                           std::size_t n_para, double sigma, std::uint64_t seed) {
  if (edited.empty()) throw std::invalid_argument("eval_generalization: no edited facts");
  if (n_para < 1) throw std::invalid_argument("eval_generalization: n_para must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("eval_generalization: sigma must be >= 0");
  std::size_t hits = 0;
  for (const auto& f : edited) {
    const Vector key = key_for(f, model);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(f.id)));
    for (std::size_t p = 0; p < n_para; ++p) {
      Vector noisy = key;
      // sigma = 0 must reproduce the key bit for bit, so skip renormalising.
      if (sigma > 0.0) {
        for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy[i] += sigma * standard_normal(rng);
        const double norm = noisy.norm();
        if (norm > 0.0) noisy /= norm;
      }
      if (predict(model, noisy) == f.object_new) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(edited.size() * n_para);
}

double eval_locality(const ToyModel& edited_model, const ToyModel& base_model,
                     std::span<const EditFact> holdout, std::span<const EditFact> edited) {
  std::set<std::int64_t> edited_ids;
  for (const auto& f : edited) edited_ids.insert(f.id);
  for (const auto& f : holdout) {
    if (edited_ids.contains(f.id)) {
      throw std::invalid_argument("eval_locality: holdout fact " + std::to_string(f.id) +
                                  " is also an edited fact");
    }
  }
  if (holdout.empty()) return 1.0;
  std::size_t same = 0;
  for (const auto& f : holdout) {
    const Vector key = key_for(f, base_model);
    if (predict(edited_model, key) == predict(base_model, key)) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(holdout.size());
}

double eval_general_ability(const ToyModel& edited_model, const ToyModel& base_model,
                            std::span<const Vector> probes) {
  if (probes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : probes) total += (forward(edited_model, p) - forward(base_model, p)).norm();
  return total / static_cast<double>(probes.size());
}

DriftStats drift_stats(std::span<const Matrix> original, std::span<const Matrix> current,
                       std::span<const double> thresholds, double epsilon) {
  if (original.size() != current.size()) {
    throw std::invalid_argument("drift_stats: layer count mismatch");
  }
  for (double t : thresholds) {
    if (!(t > 0.0)) throw std::invalid_argument("drift_stats: thresholds must be positive");
  }
  DriftStats stats;
  std::vector<std::size_t> above(thresholds.size(), 0);
  std::size_t entries = 0;
  for (std::size_t l = 0; l < original.size(); ++l) {
    const Matrix& w0 = original[l];
    const Matrix& w1 = current[l];
    if (w0.rows() != w1.rows() || w0.cols() != w1.cols()) {
      throw std::invalid_argument("drift_stats: shape mismatch");
    }
    const Matrix diff = (w1 - w0).cwiseAbs();
    stats.manhattan += diff.sum();
    const Matrix rel = diff.cwiseQuotient(w0.cwiseAbs().cwiseMax(epsilon));
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      above[t] += static_cast<std::size_t>((rel.array() > thresholds[t]).count());
    }
    entries += static_cast<std::size_t>(w0.size());
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const double frac =
        entries == 0 ? 0.0 : static_cast<double>(above[t]) / static_cast<double>(entries);
    stats.frac_above.emplace_back(thresholds[t], frac);
  }
  return stats;
}

DriftStats drift_stats(const Matrix& original, const Matrix& current,
                       std::span<const double> thresholds, double epsilon) {
  return drift_stats(std::span<const Matrix>(&original, 1), std::span<const Matrix>(&current, 1),
                     thresholds, epsilon);
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::vector<EditFact> facts =
      config.facts.empty()
          ? synthesize_facts(config.num_facts, config.num_relations, config.num_objects,
                             config.seed)
          : config.facts;
  validate_fact_set(facts);

  const ToyModel base =
      build_model(facts, {config.dim, config.n_layers, config.ridge_lambda, config.seed});
  const auto layers = config.resolved_edit_layers();
  const std::size_t n = config.batch_size;
  const std::size_t n_edited = config.num_edit_operations * n;

  const std::span<const EditFact> all(facts);
  ProbeSet probes{{facts.begin() + static_cast<std::ptrdiff_t>(n_edited), facts.end()},
                  make_probes(config.num_probes, config.dim, config.seed)};
  const std::uint64_t paraphrase_seed = mix_seed(config.seed, 0x70617261ULL);
  const std::string echo = config.echo();

  std::vector<Matrix> original;
  for (std::size_t l : layers) original.push_back(base.layer(l));

  std::vector<ResultRow> rows;
  ToyModel current = base;
  for (std::size_t op = 0; op < config.num_edit_operations; ++op) {
    const auto batch = all.subspan(op * n, n);
    std::vector<WeightDelta> deltas;
    switch (config.editor) {
      case EditorKind::rome:
        deltas.push_back(rome_delta(current, layers.front(), batch.front(), config.lambda_c));
        break;
      case EditorKind::kn:
        deltas.push_back(kn_delta(current, layers.front(), batch.front(), config.kn_neurons,
                                  config.kn_step));
        break;
      case EditorKind::memit:
        deltas = memit_delta(current, layers, batch, config.lambda_c);
        break;
    }

    RegularizerSpec spec = config.regularizer;
    spec.seed = mix_seed(config.regularizer.seed, op);
    std::vector<WeightDelta> masked;
    masked.reserve(deltas.size());
    for (const auto& d : deltas) masked.push_back(regularize(d, spec, current.layer(d.layer_index)));
    current = editlab::apply(current, masked);

    const auto edited = all.first((op + 1) * n);
    ResultRow row;
    row.step = op + 1;
    row.metrics.reliability = eval_reliability(current, edited);
    row.metrics.generalization = eval_generalization(current, edited, config.num_paraphrases,
                                                     config.paraphrase_sigma, paraphrase_seed);
    row.metrics.locality = eval_locality(current, base, probes.holdout_facts, all.first(n_edited));
    row.metrics.general_ability_drift =
        eval_general_ability(current, base, probes.random_probes);

    std::vector<Matrix> now;
    for (std::size_t l : layers) now.push_back(current.layer(l));
    row.drift = drift_stats(original, now, config.thresholds);
    row.config_echo = echo;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace editlab
