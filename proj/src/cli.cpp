#include "editlab/cli.hpp"

#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "CLI11.hpp"
#include "editlab/harness.hpp"
#include "editlab/io.hpp"
#include "editlab/regularizers.hpp"

namespace editlab {

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string method;
  double k_percent = 100.0;
  std::string weights;
  std::string delta;
  std::uint64_t seed = 0;
  double epsilon = 1e-12;
  std::string before;
  std::string after;
  std::vector<double> thresholds{kDefaultThresholdLow, kDefaultThresholdHigh};
  std::string mode = "abs";
};

int cmd_run(const Options& o, std::ostream& out) {
  const auto run = io::load_config(o.config);
  const auto rows = run_experiment(run.experiment);
  if (!o.out.empty()) {
    io::write_results(rows, o.out);
  } else if (run.output) {
    io::write_results(rows, *run.output);
  } else {
    out << io::format_results(rows);
  }
  return 0;
}

int cmd_mask(const Options& o, std::ostream& out) {
  const Matrix weights = io::load_matrix(o.weights);
  const Matrix delta = io::load_matrix(o.delta);
  RegularizerSpec spec;
  spec.method = parse_mask_method(o.method);
  spec.k_percent = o.k_percent;
  spec.seed = o.seed;
  spec.epsilon = o.epsilon;
  const WeightDelta masked = regularize({0, delta}, spec, weights);
  if (o.out.empty()) {
    out << io::format_matrix(masked.delta);
  } else {
    io::write_matrix(masked.delta, o.out);
  }
  return 0;
}

int cmd_stats(const Options& o, std::ostream& out) {
  const Matrix before = io::load_matrix(o.before);
  const Matrix after = io::load_matrix(o.after);
  const DriftStats stats = drift_stats(before, after, o.thresholds, o.epsilon);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", stats.manhattan);
  out << "manhattan=" << buf << '\n';
  for (const auto& [t, frac] : stats.frac_above) {
    char tb[32];
    std::snprintf(tb, sizeof tb, "%.6g", t);
    std::snprintf(buf, sizeof buf, "%.6g", frac);
    out << "frac_above_" << tb << '=' << buf << '\n';
  }
  return 0;
}

int cmd_heatmap(const Options& o) {
  io::export_heatmap(io::load_matrix(o.delta), o.out, io::parse_heatmap_mode(o.mode));
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-editing side-effect lab: edit a toy associative model, regularize "
               "the updates and measure what breaks.",
               "editlab"};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "Run an experiment described by a config file");
  run->add_option("config", o.config, "key=value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", o.out, "Result CSV (overrides the config's output)");

  auto* mask = app.add_subcommand("mask", "Regularize an update matrix");
  mask->add_option("--method", o.method, "none | rect | random | pca")->required();
  mask->add_option("--k", o.k_percent, "Retained percentage in (0, 100]")->required();
  mask->add_option("--weights", o.weights, "Original weight matrix CSV")->required();
  mask->add_option("--delta", o.delta, "Update matrix CSV")->required();
  mask->add_option("--seed", o.seed, "Seed for the random mask");
  mask->add_option("--epsilon", o.epsilon, "Floor for |W| in the relative change");
  mask->add_option("--out", o.out, "Output CSV (default: stdout)");

  auto* stats = app.add_subcommand("stats", "Drift statistics between two weight matrices");
  stats->add_option("--before", o.before, "Original weights CSV")->required();
  stats->add_option("--after", o.after, "Edited weights CSV")->required();
  stats->add_option("--thresholds", o.thresholds, "Relative-change thresholds")->delimiter(',');
  stats->add_option("--epsilon", o.epsilon, "Floor for |W| in the relative change");

  auto* heatmap = app.add_subcommand("heatmap", "Render a matrix as a plain PGM");
  heatmap->add_option("--delta", o.delta, "Matrix CSV")->required();
  heatmap->add_option("--out", o.out, "Output .pgm")->required();
  heatmap->add_option("--mode", o.mode, "abs | raw")->check(CLI::IsMember({"abs", "raw"}));

  std::vector<const char*> argv{"editlab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "editlab: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*run) return cmd_run(o, out);
    if (*mask) return cmd_mask(o, out);
    if (*stats) return cmd_stats(o, out);
    if (*heatmap) return cmd_heatmap(o);
  } catch (const std::exception& e) {
    err << "editlab: error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace editlab
