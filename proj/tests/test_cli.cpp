// End-to-end tests of the command-line interface, driving the real binary.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return SCRUBKIT_CLI; }
const char* configs_dir() { return SCRUBKIT_CONFIGS_DIR; }

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const fs::path capture = fs::temp_directory_path() / "scrubkit_cli_capture.txt";
  const std::string cmd =
      std::string(cli_path()) + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());

  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::ostringstream text;
  text << in.rdbuf();
  result.output = text.str();
  fs::remove(capture);
  return result;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(in.good());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

fs::path sole_run_dir(const fs::path& root) {
  fs::path found;
  for (const auto& entry : fs::directory_iterator(root)) {
    REQUIRE(found.empty());
    found = entry.path();
  }
  REQUIRE(!found.empty());
  return found;
}

fs::path mini_config() { return fs::path(configs_dir()) / "mini.json"; }

}  // namespace

TEST_CASE("cli: run executes a config and lays out the run directory") {
  const fs::path out = fs::temp_directory_path() / "scrubkit_cli_run";
  fs::remove_all(out);

  const CliResult result = run_cli("run " + mini_config().string() + " --out " + out.string());
  CHECK(result.exit_code == 0);
  CHECK(result.output.find("run directory:") != std::string::npos);
  CHECK(result.output.find("method") != std::string::npos);  // table printed

  const fs::path run_dir = sole_run_dir(out);
  CHECK(run_dir.filename().string().rfind("run-", 0) == 0);
  CHECK(run_dir.filename().string().size() == 4 + 16);  // run-<16 hex digits>
  CHECK(fs::exists(run_dir / "rows.csv"));
  CHECK(fs::exists(run_dir / "aggregates.csv"));
  CHECK(fs::exists(run_dir / "timings.csv"));
  CHECK(fs::exists(run_dir / "config.snapshot"));
  fs::remove_all(out);
}

TEST_CASE("cli: re-running a config reproduces rows.csv byte for byte") {
  const fs::path out = fs::temp_directory_path() / "scrubkit_cli_det";
  fs::remove_all(out);

  REQUIRE(run_cli("run " + mini_config().string() + " --out " + out.string()).exit_code == 0);
  const fs::path run_dir = sole_run_dir(out);
  const std::string first_rows = slurp(run_dir / "rows.csv");
  const std::string first_aggs = slurp(run_dir / "aggregates.csv");

  REQUIRE(run_cli("run " + mini_config().string() + " --out " + out.string()).exit_code == 0);
  CHECK(slurp(run_dir / "rows.csv") == first_rows);
  CHECK(slurp(run_dir / "aggregates.csv") == first_aggs);
  fs::remove_all(out);
}

TEST_CASE("cli: seed and method filters select a sub-grid") {
  const fs::path out = fs::temp_directory_path() / "scrubkit_cli_filter";
  fs::remove_all(out);

  const CliResult result = run_cli("run " + mini_config().string() + " --out " + out.string() +
                                   " --methods original --seeds 7");
  CHECK(result.exit_code == 0);
  const std::string rows = slurp(sole_run_dir(out) / "rows.csv");
  CHECK(rows.find("original,7,ok") != std::string::npos);
  CHECK(rows.find("finetune") == std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("cli: suite override narrows the measured metrics") {
  const fs::path out = fs::temp_directory_path() / "scrubkit_cli_suite";
  fs::remove_all(out);
  const CliResult result = run_cli("run " + mini_config().string() + " --out " + out.string() +
                                   " --suite M1,M3 --seeds 0 --jobs 2");
  CHECK(result.exit_code == 0);
  const std::string rows = slurp(sole_run_dir(out) / "rows.csv");
  // With M3 on, the mia_mean field (15th of 16) is populated on every row.
  std::istringstream lines(rows);
  std::string line;
  std::getline(lines, line);  // header
  int data_rows = 0;
  while (std::getline(lines, line)) {
    ++data_rows;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream split(line);
    while (std::getline(split, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() >= 15);
    CHECK_FALSE(fields[14].empty());  // mia_mean
    CHECK(fields[8].empty());         // ic_test absent without M2
  }
  CHECK(data_rows >= 1);
  fs::remove_all(out);
}

TEST_CASE("cli: a failing cell yields a nonzero exit but a complete report") {
  const fs::path config = fs::temp_directory_path() / "scrubkit_cli_bad_cell.json";
  std::ofstream(config) << R"({
    "dataset": {"kind": "blobs", "blobs": {"classes": 3, "dim": 4,
      "train_per_class": 10, "val_per_class": 3, "test_per_class": 10}},
    "architecture": {"kind": "mlp", "hidden": [6]},
    "train": {"epochs": 2},
    "forget": {"mode": "class", "target_class": 0},
    "methods": [{"name": "original"}, {"name": "eu_k", "k": 9}],
    "seeds": [0],
    "suites": ["M1"]
  })";
  const fs::path out = fs::temp_directory_path() / "scrubkit_cli_bad_cell";
  fs::remove_all(out);

  const CliResult result = run_cli("run " + config.string() + " --out " + out.string());
  CHECK(result.exit_code == 3);
  const std::string rows = slurp(sole_run_dir(out) / "rows.csv");
  CHECK(rows.find("eu_k,0,error,invalid_argument") != std::string::npos);
  CHECK(rows.find("original,0,ok") != std::string::npos);
  fs::remove_all(out);
  fs::remove(config);
}

TEST_CASE("cli: bad invocations fail cleanly") {
  CHECK(run_cli("").exit_code != 0);
  CHECK(run_cli("run /nonexistent/config.json").exit_code != 0);
  CHECK(run_cli("run " + mini_config().string() + " --methods warp_core").exit_code != 0);
  CHECK(run_cli("run " + mini_config().string() + " --suite M9").exit_code != 0);
  CHECK(run_cli("report /nonexistent/run-dir").exit_code != 0);
}

TEST_CASE("cli: report renders every documented format from a run directory") {
  const fs::path out = fs::temp_directory_path() / "scrubkit_cli_report";
  fs::remove_all(out);
  REQUIRE(run_cli("run " + mini_config().string() + " --out " + out.string()).exit_code == 0);
  const fs::path run_dir = sole_run_dir(out);

  const CliResult table = run_cli("report " + run_dir.string());
  CHECK(table.exit_code == 0);
  CHECK(table.output.find("method") != std::string::npos);

  CHECK(run_cli("report " + run_dir.string() + " --format json").exit_code == 0);
  CHECK(fs::exists(run_dir / "report.json"));
  const std::string json_text = slurp(run_dir / "report.json");
  CHECK(json_text.find("config_hash") != std::string::npos);

  CHECK(run_cli("report " + run_dir.string() + " --format csv").exit_code == 0);
  CHECK(run_cli("report " + run_dir.string() + " --format plots").exit_code == 0);
  CHECK(fs::exists(run_dir / "plots" / "test_error.svg"));

  const fs::path elsewhere = fs::temp_directory_path() / "scrubkit_cli_report_out";
  fs::remove_all(elsewhere);
  CHECK(run_cli("report " + run_dir.string() + " --format json --out " + elsewhere.string())
            .exit_code == 0);
  CHECK(fs::exists(elsewhere / "report.json"));

  CHECK(run_cli("report " + run_dir.string() + " --format hologram").exit_code != 0);
  fs::remove_all(out);
  fs::remove_all(elsewhere);
}

TEST_CASE("cli: output root falls back to the environment variable") {
  const fs::path out = fs::temp_directory_path() / "scrubkit_cli_env";
  fs::remove_all(out);
  setenv("SCRUBKIT_OUT", out.string().c_str(), 1);
  const CliResult result = run_cli("run " + mini_config().string() + " --seeds 3");
  unsetenv("SCRUBKIT_OUT");
  CHECK(result.exit_code == 0);
  CHECK(fs::exists(out));
  CHECK(!fs::is_empty(out));
  fs::remove_all(out);
}
