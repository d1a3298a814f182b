#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "doctest.h"
#include "editlab/io.hpp"
#include "test_util.hpp"

using namespace editlab;
namespace fs = std::filesystem;

namespace {

// Fresh directory per test case, removed on scope exit.
struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("editlab_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::vector<ResultRow> sample_rows() {
  std::vector<ResultRow> rows;
  for (std::size_t i = 1; i <= 3; ++i) {
    ResultRow r;
    r.step = i;
    r.metrics = {1.0, 0.75, 1.0 - 0.1 * static_cast<double>(i), 0.125 * static_cast<double>(i)};
    r.drift.manhattan = 3.5 * static_cast<double>(i);
    r.drift.frac_above = {{0.077, 0.01 * static_cast<double>(i)}, {0.171, 0.005}};
    r.config_echo = "dim=4 editor=rome";
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("load_facts: empty file gives no facts") {
  TempDir dir;
  write_text(dir.path / "empty.jsonl", "");
  CHECK(io::load_facts(dir.path / "empty.jsonl").empty());
}

TEST_CASE("load_facts: three well-formed lines") {
  const std::string text =
      R"({"subject":"paris","relation":"capital_of","object_old":"france","object_new":"italy","id":1})"
      "\n"
      R"({"subject":"rome","relation":"capital_of","object_old":"italy","object_new":"spain","id":2})"
      "\n"
      R"({"subject":"oslo","relation":"capital_of","object_old":"norway","object_new":"chile","id":3})"
      "\n";
  const auto facts = io::parse_facts(text);
  REQUIRE(facts.size() == 3);
  CHECK(facts[0] == EditFact{"paris", "capital_of", "france", "italy", 1});
  CHECK(facts[2].id == 3);
}

TEST_CASE("load_facts: duplicate ids cite both lines") {
  std::string text;
  const std::int64_t ids[] = {1, 7, 3, 4, 7};
  for (std::size_t i = 0; i < 5; ++i) {
    text += R"({"subject":"s)" + std::to_string(i) +
            R"(","relation":"r","object_old":"a","object_new":"b","id":)" + std::to_string(ids[i]) +
            "}\n";
  }
  try {
    io::parse_facts(text, "f.jsonl");
    FAIL("expected a FormatError");
  } catch (const io::FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("duplicate id 7") != std::string::npos);
    CHECK(msg.find("lines 2 and 5") != std::string::npos);
  }
}

TEST_CASE("load_facts: malformed lines are located") {
  auto message = [](const std::string& text) {
    try {
      io::parse_facts(text, "x.jsonl");
    } catch (const io::FormatError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("# c\n{not json}\n").starts_with("x.jsonl:2:"));
  CHECK(message("[1,2]\n").find("expected a JSON object") != std::string::npos);
  CHECK(message(R"({"subject":"s","relation":"r","object_old":"a","id":1})").find("object_new") !=
        std::string::npos);
  CHECK(message(R"({"subject":"s","relation":"r","object_old":"a","object_new":"b"})")
            .find("'id'") != std::string::npos);
  CHECK(message(R"({"subject":"s","relation":"r","object_old":"a","object_new":"a","id":1})") !=
        "");
  CHECK_THROWS_AS(io::load_facts("/nonexistent/editlab/facts.jsonl"), std::runtime_error);
}

TEST_CASE("facts round-trip through the writer") {
  TempDir dir;
  const auto facts = testutil::simple_facts(12);
  io::write_facts(facts, dir.path / "f.jsonl");
  CHECK(io::load_facts(dir.path / "f.jsonl") == facts);
  const std::string text = io::read_file(dir.path / "f.jsonl");
  CHECK(text.starts_with("# editlab facts v1\n"));
}

TEST_CASE("write_results: single row has header and one data line") {
  TempDir dir;
  auto rows = sample_rows();
  rows.resize(1);
  io::write_results(rows, dir.path / "r.csv");
  CHECK(io::read_file(dir.path / "r.csv") ==
        "# editlab results v1\n"
        "# dim=4 editor=rome\n"
        "step,reliability,generalization,locality,drift,manhattan,frac_above_0.077,frac_above_0.171\n"
        "1,1,0.75,0.9,0.125,3.5,0.01,0.005\n");
}

TEST_CASE("results round-trip and rewrite byte-identically") {
  TempDir dir;
  const auto rows = sample_rows();
  io::write_results(rows, dir.path / "a.csv");
  const std::string first = io::read_file(dir.path / "a.csv");
  const auto table = io::parse_results(first);
  CHECK(table.thresholds == std::vector<double>{0.077, 0.171});
  REQUIRE(table.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(table.rows[i].step == rows[i].step);
    CHECK(table.rows[i].metrics.locality == doctest::Approx(rows[i].metrics.locality));
    CHECK(table.rows[i].drift.manhattan == doctest::Approx(rows[i].drift.manhattan));
    CHECK(table.rows[i].drift.frac_above == rows[i].drift.frac_above);
  }
  auto reread = table.rows;
  for (auto& r : reread) r.config_echo = rows.front().config_echo;
  io::write_results(reread, dir.path / "b.csv");
  CHECK(io::read_file(dir.path / "b.csv") == first);
  io::write_results(rows, dir.path / "a.csv");
  CHECK(io::read_file(dir.path / "a.csv") == first);
}

TEST_CASE("parse_results rejects malformed tables") {
  CHECK_THROWS_AS(io::parse_results(""), io::FormatError);
  CHECK_THROWS_AS(io::parse_results("step,reliability\n"), io::FormatError);
  CHECK_THROWS_AS(
      io::parse_results("step,reliability,generalization,locality,drift,manhattan\n1,1,1\n"),
      io::FormatError);
  CHECK_THROWS_AS(io::write_results(std::vector<ResultRow>{}, "unused.csv"),
                  std::invalid_argument);
}

TEST_CASE("matrix round-trip is exact") {
  std::mt19937_64 rng(4);
  TempDir dir;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = testutil::random_matrix(rng, 1 + trial % 5, 1 + trial % 7, 1e3);
    io::write_matrix(m, dir.path / "m.csv");
    const Matrix back = io::load_matrix(dir.path / "m.csv");
    CHECK(back == m);
  }
}

TEST_CASE("parse_matrix rejects ragged, empty and non-numeric input") {
  CHECK_THROWS_AS(io::parse_matrix("1,2\n3\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_matrix("# only a comment\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_matrix("1,x\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_matrix("1,nan\n"), io::FormatError);
  const Matrix m = io::parse_matrix(" 1 , -2.5 \r\n3,4e2\n");
  CHECK(m(0, 1) == -2.5);
  CHECK(m(1, 1) == 400.0);
}

TEST_CASE("heatmap of a zero matrix is all zeros") {
  const std::string pgm = io::format_heatmap(Matrix::Zero(2, 3));
  CHECK(pgm == "P2\n# editlab heatmap v1 mode=abs maxvalue=0\n3 2\n255\n0 0 0\n0 0 0\n");
}

TEST_CASE("heatmap maps the largest magnitude to 255") {
  Matrix m(1, 2);
  m << 0.0, 7.5;
  CHECK(io::format_heatmap(m).ends_with("2 1\n255\n0 255\n"));
  m << 0.0, -7.5;
  CHECK(io::format_heatmap(m).ends_with("0 255\n"));
  CHECK(io::format_heatmap(m, io::HeatmapMode::raw).ends_with("255 0\n"));
}

TEST_CASE("heatmap matches the hand-computed golden file") {
  const Matrix m = io::load_matrix(fs::path(EDITLAB_SOURCE_DIR) / "tests/golden/delta_4x4.csv");
  const std::string golden =
      io::read_file(fs::path(EDITLAB_SOURCE_DIR) / "tests/golden/heatmap_4x4.pgm");
  CHECK(io::format_heatmap(m) == golden);
  TempDir dir;
  io::export_heatmap(m, dir.path / "h.pgm");
  CHECK(io::read_file(dir.path / "h.pgm") == golden);
}

TEST_CASE("heatmap rejects empty and non-finite input") {
  CHECK_THROWS_AS(io::format_heatmap(Matrix(0, 0)), std::invalid_argument);
  Matrix m(1, 1);
  m << std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(io::format_heatmap(m), std::invalid_argument);
  CHECK_THROWS_AS(io::parse_heatmap_mode("log"), std::invalid_argument);
}

TEST_CASE("parse_config reads every key") {
  const std::string text =
      "# editlab config v1\n"
      "dim = 32\nlayers = 2\nridge_lambda = 0.01\nseed = 9\n"
      "num_facts = 70\nnum_relations = 3\nnum_objects = 12\n"
      "editor = memit\nedit_layers = 0,1\nlambda_c = 5\n"
      "regularizer = rect\nk_percent = 40\nmask_seed = 3\nepsilon = 1e-9\n"
      "regime = sequential\nbatch_size = 2\nnum_edit_operations = 6\n"
      "num_paraphrases = 3\nparaphrase_sigma = 0.1\nnum_probes = 10\n"
      "thresholds = 0.05,0.2\noutput = out/r.csv\n";
  const auto run = io::parse_config(text, "/base");
  const auto& c = run.experiment;
  CHECK(c.dim == 32);
  CHECK(c.n_layers == 2);
  CHECK(c.seed == 9);
  CHECK(c.num_facts == 70);
  CHECK(c.editor == EditorKind::memit);
  CHECK(c.edit_layers == std::vector<std::size_t>{0, 1});
  CHECK(c.lambda_c == 5.0);
  CHECK(c.regularizer.method == MaskMethod::rect);
  CHECK(c.regularizer.k_percent == 40.0);
  CHECK(c.regularizer.seed == 3);
  CHECK(c.regularizer.epsilon == 1e-9);
  CHECK(c.batch_size == 2);
  CHECK(c.num_edit_operations == 6);
  CHECK(c.paraphrase_sigma == 0.1);
  CHECK(c.thresholds == std::vector<double>{0.05, 0.2});
  REQUIRE(run.output.has_value());
  CHECK(*run.output == fs::path("/base/out/r.csv"));
}

TEST_CASE("parse_config rejects unknown, duplicate and invalid keys") {
  CHECK_THROWS_AS(io::parse_config("colour = red\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_config("dim = 8\ndim = 9\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_config("dim\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_config("dim = -3\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_config("editor = gpt\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_config("k_percent = 0\n"), io::FormatError);
  CHECK_THROWS_AS(io::parse_config("editor = rome\nbatch_size = 4\n"), io::FormatError);
  try {
    io::parse_config("dim = 8\n\nlayers = x\n", {}, "c.cfg");
  } catch (const io::FormatError& e) {
    CHECK(std::string(e.what()).starts_with("c.cfg:3:"));
  }
}

TEST_CASE("load_config reads facts relative to the config") {
  TempDir dir;
  fs::create_directories(dir.path / "data");
  io::write_facts(testutil::simple_facts(20), dir.path / "data/f.jsonl");
  write_text(dir.path / "run.cfg", "facts_file = data/f.jsonl\nnum_edit_operations = 4\n");
  const auto run = io::load_config(dir.path / "run.cfg");
  CHECK(run.experiment.facts == testutil::simple_facts(20));
  CHECK_FALSE(run.output.has_value());
}

TEST_CASE("write_file_atomic leaves no temporaries behind") {
  TempDir dir;
  io::write_file_atomic(dir.path / "x.txt", "one");
  io::write_file_atomic(dir.path / "x.txt", "two");
  CHECK(io::read_file(dir.path / "x.txt") == "two");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++files;
  CHECK(files == 1);
  CHECK_THROWS_AS(io::write_file_atomic(dir.path / "missing/dir/x.txt", "z"), std::runtime_error);
}

}  // TEST_SUITE
