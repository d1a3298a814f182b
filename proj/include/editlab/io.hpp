#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "editlab/core_model.hpp"
#include "editlab/harness.hpp"

namespace editlab::io {

// Malformed input file. The message names the file and offending line(s).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

// Fact files hold one JSON object per line with the keys subject, relation,
// object_old, object_new and id. Blank lines and lines starting with '#' are
// skipped (the writer emits a '# editlab facts v1' marker).
std::vector<EditFact> parse_facts(std::string_view text, std::string_view source = "<facts>");
std::vector<EditFact> load_facts(const std::filesystem::path& path);
std::string format_facts(std::span<const EditFact> facts);
void write_facts(std::span<const EditFact> facts, const std::filesystem::path& path);

// Result files are CSV:
//   # editlab results v1
//   # <config echo>
//   step,reliability,generalization,locality,drift,manhattan,frac_above_<t>...
// Values use 6 significant digits.
std::string format_results(std::span<const ResultRow> rows);
void write_results(std::span<const ResultRow> rows, const std::filesystem::path& path);

struct ResultTable {
  std::vector<double> thresholds;
  std::vector<ResultRow> rows;
};
ResultTable parse_results(std::string_view text);

// Matrices are CSV rows with shortest round-trip number formatting.
std::string format_matrix(const Matrix& m);
Matrix parse_matrix(std::string_view text, std::string_view source = "<matrix>");
Matrix load_matrix(const std::filesystem::path& path);
void write_matrix(const Matrix& m, const std::filesystem::path& path);

enum class HeatmapMode { abs, raw };
HeatmapMode parse_heatmap_mode(std::string_view name);

// Plain PGM (P2), maxval 255. In abs mode pixel = round(255 * |v| / max|v|);
// in raw mode values are scaled linearly from [min, max] onto [0, 255].
// A constant image renders all zeros. The scale is recorded in a comment.
std::string format_heatmap(const Matrix& m, HeatmapMode mode = HeatmapMode::abs);
void export_heatmap(const Matrix& m, const std::filesystem::path& path,
                    HeatmapMode mode = HeatmapMode::abs);

struct RunConfig {
  ExperimentConfig experiment;
  std::optional<std::filesystem::path> output;
};

// key = value lines, '#' comments. Relative paths (facts_file, output) are
// resolved against `base_dir`.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {},
                       std::string_view source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace editlab::io
