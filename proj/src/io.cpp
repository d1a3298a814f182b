#include "editlab/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "json.hpp"

namespace editlab::io {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Calls fn(line_number, line) for every physical line (1-based).
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const auto stop = end == std::string_view::npos ? text.size() : end;
    std::string_view line = text.substr(pos, stop - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(++line_no, line);
    pos = stop + 1;
  }
}

bool skippable(std::string_view line) {
  const auto t = trim(line);
  return t.empty() || t.front() == '#';
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    parts.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos
                                                                   : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return parts;
}

std::optional<double> to_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

template <typename Int>
std::optional<Int> to_int(std::string_view s) {
  s = trim(s);
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf, ptr);
}

std::string sig6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string at_line(std::string_view source, std::size_t line) {
  return std::string(source) + ":" + std::to_string(line) + ": ";
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  const auto tmp =
      std::filesystem::path(path.string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw std::runtime_error("write to " + tmp.string() + " failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw std::runtime_error("cannot move result into " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Facts

std::vector<EditFact> parse_facts(std::string_view text, std::string_view source) {
  std::vector<EditFact> facts;
  std::map<std::int64_t, std::size_t> id_line;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (skippable(line)) return;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(at_line(source, line_no) + "malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw FormatError(at_line(source, line_no) + "expected a JSON object");
    auto text_field = [&](const char* key) {
      const auto it = obj.find(key);
      if (it == obj.end() || !it->is_string()) {
        throw FormatError(at_line(source, line_no) + "missing string field '" + key + "'");
      }
      return it->get<std::string>();
    };
    EditFact fact;
    fact.subject = text_field("subject");
    fact.relation = text_field("relation");
    fact.object_old = text_field("object_old");
    fact.object_new = text_field("object_new");
    const auto id = obj.find("id");
    if (id == obj.end() || !id->is_number_integer()) {
      throw FormatError(at_line(source, line_no) + "missing integer field 'id'");
    }
    fact.id = id->get<std::int64_t>();
    try {
      validate_fact(fact);
    } catch (const std::invalid_argument& e) {
      throw FormatError(at_line(source, line_no) + e.what());
    }
    if (const auto [it, inserted] = id_line.emplace(fact.id, line_no); !inserted) {
      throw FormatError(std::string(source) + ": duplicate id " + std::to_string(fact.id) +
                        " on lines " + std::to_string(it->second) + " and " +
                        std::to_string(line_no));
    }
    facts.push_back(std::move(fact));
  });
  return facts;
}

std::vector<EditFact> load_facts(const std::filesystem::path& path) {
  return parse_facts(read_file(path), path.string());
}

std::string format_facts(std::span<const EditFact> facts) {
  std::string out = "# editlab facts v1\n";
  for (const auto& f : facts) {
    nlohmann::ordered_json obj;
    obj["id"] = f.id;
    obj["subject"] = f.subject;
    obj["relation"] = f.relation;
    obj["object_old"] = f.object_old;
    obj["object_new"] = f.object_new;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_facts(std::span<const EditFact> facts, const std::filesystem::path& path) {
  write_file_atomic(path, format_facts(facts));
}

// ---------------------------------------------------------------------------
// Results

std::string format_results(std::span<const ResultRow> rows) {
  if (rows.empty()) throw std::invalid_argument("write_results: no rows");
  const auto& thresholds = rows.front().drift.frac_above;
  std::string out = "# editlab results v1\n";
  if (!rows.front().config_echo.empty()) out += "# " + rows.front().config_echo + "\n";
  out += "step,reliability,generalization,locality,drift,manhattan";
  for (const auto& [t, _] : thresholds) out += ",frac_above_" + sig6(t);
  out += '\n';
  for (const auto& r : rows) {
    if (r.drift.frac_above.size() != thresholds.size()) {
      throw std::invalid_argument("write_results: rows disagree on thresholds");
    }
    out += std::to_string(r.step);
    for (double v : {r.metrics.reliability, r.metrics.generalization, r.metrics.locality,
                     r.metrics.general_ability_drift, r.drift.manhattan}) {
      out += ',' + sig6(v);
    }
    for (const auto& [_, frac] : r.drift.frac_above) out += ',' + sig6(frac);
    out += '\n';
  }
  return out;
}

void write_results(std::span<const ResultRow> rows, const std::filesystem::path& path) {
  write_file_atomic(path, format_results(rows));
}

ResultTable parse_results(std::string_view text) {
  ResultTable table;
  bool have_header = false;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (skippable(line)) return;
    const auto cells = split(trim(line), ',');
    if (!have_header) {
      static constexpr std::string_view fixed[] = {"step",     "reliability", "generalization",
                                                   "locality", "drift",       "manhattan"};
      if (cells.size() < std::size(fixed)) throw FormatError(at_line("<results>", line_no) + "bad header");
      for (std::size_t i = 0; i < std::size(fixed); ++i) {
        if (cells[i] != fixed[i]) throw FormatError(at_line("<results>", line_no) + "bad header");
      }
      constexpr std::string_view prefix = "frac_above_";
      for (std::size_t i = std::size(fixed); i < cells.size(); ++i) {
        if (!cells[i].starts_with(prefix)) throw FormatError(at_line("<results>", line_no) + "bad header");
        const auto t = to_double(cells[i].substr(prefix.size()));
        if (!t) throw FormatError(at_line("<results>", line_no) + "bad threshold column");
        table.thresholds.push_back(*t);
      }
      have_header = true;
      return;
    }
    if (cells.size() != 6 + table.thresholds.size()) {
      throw FormatError(at_line("<results>", line_no) + "wrong column count");
    }
    ResultRow row;
    const auto step = to_int<std::size_t>(cells[0]);
    if (!step) throw FormatError(at_line("<results>", line_no) + "bad step");
    row.step = *step;
    std::vector<double> v;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      const auto d = to_double(cells[i]);
      if (!d) throw FormatError(at_line("<results>", line_no) + "bad number");
      v.push_back(*d);
    }
    row.metrics = {v[0], v[1], v[2], v[3]};
    row.drift.manhattan = v[4];
    for (std::size_t t = 0; t < table.thresholds.size(); ++t) {
      row.drift.frac_above.emplace_back(table.thresholds[t], v[5 + t]);
    }
    table.rows.push_back(std::move(row));
  });
  if (!have_header) throw FormatError("<results>: missing header");
  return table;
}

// ---------------------------------------------------------------------------
// Matrices

std::string format_matrix(const Matrix& m) {
  std::string out = "# editlab matrix v1\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += shortest(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Matrix parse_matrix(std::string_view text, std::string_view source) {
  std::vector<std::vector<double>> rows;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (skippable(line)) return;
    std::vector<double> row;
    for (auto cell : split(trim(line), ',')) {
      const auto v = to_double(cell);
      if (!v || !std::isfinite(*v)) {
        throw FormatError(at_line(source, line_no) + "bad number '" + std::string(trim(cell)) + "'");
      }
      row.push_back(*v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(at_line(source, line_no) + "expected " +
                        std::to_string(rows.front().size()) + " columns, found " +
                        std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  });
  if (rows.empty()) throw FormatError(std::string(source) + ": empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

Matrix load_matrix(const std::filesystem::path& path) {
  return parse_matrix(read_file(path), path.string());
}

void write_matrix(const Matrix& m, const std::filesystem::path& path) {
  write_file_atomic(path, format_matrix(m));
}

// ---------------------------------------------------------------------------
// Heatmaps

HeatmapMode parse_heatmap_mode(std::string_view name) {
  if (name == "abs") return HeatmapMode::abs;
  if (name == "raw") return HeatmapMode::raw;
  throw std::invalid_argument("unknown heatmap mode '" + std::string(name) + "'");
}

std::string format_heatmap(const Matrix& m, HeatmapMode mode) {
  if (m.size() == 0) throw std::invalid_argument("export_heatmap: empty matrix");
  if (!m.allFinite()) throw std::invalid_argument("export_heatmap: non-finite entry");

  const Matrix values = mode == HeatmapMode::abs ? Matrix(m.cwiseAbs()) : m;
  const double hi = values.maxCoeff();
  const double lo = mode == HeatmapMode::abs ? 0.0 : values.minCoeff();
  const bool constant = values.maxCoeff() == values.minCoeff();

  std::string out = "P2\n# editlab heatmap v1 mode=";
  out += mode == HeatmapMode::abs ? "abs" : "raw";
  if (mode == HeatmapMode::raw) out += " minvalue=" + shortest(lo);
  out += " maxvalue=" + shortest(hi) + "\n";
  out += std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      long pixel = 0;
      if (!constant) {
        pixel = std::lround(255.0 * (values(i, j) - lo) / (hi - lo));
        pixel = std::clamp(pixel, 0L, 255L);
      }
      if (j) out += ' ';
      out += std::to_string(pixel);
    }
    out += '\n';
  }
  return out;
}

void export_heatmap(const Matrix& m, const std::filesystem::path& path, HeatmapMode mode) {
  write_file_atomic(path, format_heatmap(m, mode));
}

// ---------------------------------------------------------------------------
// Config

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                       std::string_view source) {
  RunConfig run;
  ExperimentConfig& cfg = run.experiment;
  std::set<std::string, std::less<>> seen;
  std::optional<std::filesystem::path> facts_file;

  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (skippable(line)) return;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError(at_line(source, line_no) + "expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw FormatError(at_line(source, line_no) + "duplicate key '" + key + "'");
    auto bad = [&](const std::string& why) {
      return FormatError(at_line(source, line_no) + key + ": " + why);
    };
    auto size_value = [&] {
      const auto v = to_int<std::size_t>(value);
      if (!v) throw bad("expected a non-negative integer, got '" + std::string(value) + "'");
      return *v;
    };
    auto real_value = [&] {
      const auto v = to_double(value);
      if (!v || !std::isfinite(*v)) throw bad("expected a number, got '" + std::string(value) + "'");
      return *v;
    };
    auto seed_value = [&] {
      const auto v = to_int<std::uint64_t>(value);
      if (!v) throw bad("expected a non-negative integer, got '" + std::string(value) + "'");
      return *v;
    };
    auto path_value = [&] {
      if (value.empty()) throw bad("empty path");
      std::filesystem::path p{std::string(value)};
      return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };

    try {
      if (key == "dim") cfg.dim = size_value();
      else if (key == "layers") cfg.n_layers = size_value();
      else if (key == "ridge_lambda") cfg.ridge_lambda = real_value();
      else if (key == "seed") cfg.seed = seed_value();
      else if (key == "num_facts") cfg.num_facts = size_value();
      else if (key == "num_relations") cfg.num_relations = size_value();
      else if (key == "num_objects") cfg.num_objects = size_value();
      else if (key == "facts_file") facts_file = path_value();
      else if (key == "editor") cfg.editor = parse_editor(value);
      else if (key == "edit_layers") {
        cfg.edit_layers.clear();
        for (auto part : split(value, ',')) {
          const auto v = to_int<std::size_t>(part);
          if (!v) throw bad("expected comma-separated layer indices");
          cfg.edit_layers.push_back(*v);
        }
      } else if (key == "lambda_c") cfg.lambda_c = real_value();
      else if (key == "kn_neurons") cfg.kn_neurons = size_value();
      else if (key == "kn_step") cfg.kn_step = real_value();
      else if (key == "regularizer") cfg.regularizer.method = parse_mask_method(value);
      else if (key == "k_percent") cfg.regularizer.k_percent = real_value();
      else if (key == "mask_seed") cfg.regularizer.seed = seed_value();
      else if (key == "epsilon") cfg.regularizer.epsilon = real_value();
      else if (key == "regime") cfg.regime = parse_regime(value);
      else if (key == "batch_size") cfg.batch_size = size_value();
      else if (key == "num_edit_operations") cfg.num_edit_operations = size_value();
      else if (key == "num_paraphrases") cfg.num_paraphrases = size_value();
      else if (key == "paraphrase_sigma") cfg.paraphrase_sigma = real_value();
      else if (key == "num_probes") cfg.num_probes = size_value();
      else if (key == "thresholds") {
        cfg.thresholds.clear();
        for (auto part : split(value, ',')) {
          const auto v = to_double(part);
          if (!v) throw bad("expected comma-separated numbers");
          cfg.thresholds.push_back(*v);
        }
      } else if (key == "output") run.output = path_value();
      else throw FormatError(at_line(source, line_no) + "unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw bad(e.what());
    }
  });

  if (facts_file) cfg.facts = load_facts(*facts_file);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string(source) + ": " + e.what());
  }
  return run;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.parent_path(), path.string());
}

}  // namespace editlab::io
