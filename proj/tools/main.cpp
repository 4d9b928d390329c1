// Command-line entry point: `scrubkit run <config>` executes an experiment
// grid and persists a run directory; `scrubkit report <run-dir>` re-emits a
// stored run in another format.
//
// Exit codes: 0 success, 1 usage error, 2 configuration/runtime failure,
// 3 completed with at least one failed grid cell.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scrubkit/error.hpp"
#include "scrubkit/harness.hpp"

namespace {

std::vector<std::string> split_comma(const std::string& text) {
  std::vector<std::string> parts;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ','))
    if (!part.empty()) parts.push_back(part);
  return parts;
}

int run_command(const std::string& config_path, const std::vector<std::uint64_t>& seeds,
                const std::vector<std::string>& methods, const std::string& out,
                const std::string& suites, int jobs) {
  scrub::ExperimentConfig config = scrub::load_experiment_config(config_path);

  if (!seeds.empty()) config.seeds = seeds;
  if (!methods.empty()) {
    std::vector<scrub::MethodSpec> kept;
    for (const std::string& name : methods) {
      bool found = false;
      for (const scrub::MethodSpec& m : config.methods) {
        if (m.name == name) {
          kept.push_back(m);
          found = true;
          break;
        }
      }
      if (!found)
        throw scrub::Error(scrub::ErrorCode::bad_config,
                           "--methods names '" + name + "', which the config does not define");
    }
    config.methods = std::move(kept);
  }
  if (!suites.empty()) {
    config.suites.clear();
    for (const std::string& s : split_comma(suites)) {
      if (s != "M1" && s != "M2" && s != "M3")
        throw scrub::Error(scrub::ErrorCode::bad_config, "unknown suite '" + s + "'");
      config.suites.insert(s);
    }
    if (config.suites.empty())
      throw scrub::Error(scrub::ErrorCode::bad_config, "--suite selected nothing");
  }

  const std::filesystem::path root = scrub::resolve_output_root(out, config);
  const std::filesystem::path run_dir = root / ("run-" + scrub::config_hash(config));
  const scrub::ExperimentReport report =
      scrub::run_experiment(config, jobs, run_dir / "checkpoints");
  scrub::write_run_dir(run_dir, config, report);

  std::cout << scrub::report_table(report);
  std::cout << "\nrun directory: " << run_dir.string() << "\n";
  if (!report.all_ok()) {
    std::cerr << "warning: some grid cells failed; see rows.csv\n";
    return 3;
  }
  return 0;
}

int report_command(const std::string& run_dir, const std::string& format,
                   const std::string& out) {
  const scrub::ExperimentReport report = scrub::load_run_dir(run_dir);
  const scrub::ReportFormat fmt = scrub::report_format_from_string(format);
  const std::filesystem::path out_dir = out.empty() ? run_dir : out;
  const std::string text = scrub::emit_report(report, fmt, out_dir);
  if (fmt == scrub::ReportFormat::table)
    std::cout << text;
  else if (fmt == scrub::ReportFormat::plots)
    std::cout << text;
  else
    std::cout << "wrote " << (out_dir / (fmt == scrub::ReportFormat::json
                                             ? "report.json"
                                             : "rows.csv")).string()
              << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scrubkit: unlearning benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, out, suites, run_dir;
  std::string format = "table";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  int jobs = 1;

  CLI::App* run = app.add_subcommand("run", "execute an experiment config");
  run->add_option("config", config_path, "experiment config file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--seeds", seeds, "override the config's seed list")->delimiter(',');
  run->add_option("--methods", methods, "run only these config-defined methods")->delimiter(',');
  run->add_option("--out", out, "output root (default: config, then $SCRUBKIT_OUT, then ./runs)");
  run->add_option("--suite", suites, "comma-separated metric suites (M1,M2,M3)");
  run->add_option("--jobs", jobs, "seeds to run concurrently")->check(CLI::PositiveNumber);

  CLI::App* rep = app.add_subcommand("report", "re-emit a stored run");
  rep->add_option("run_dir", run_dir, "run directory produced by `scrubkit run`")
      ->required()
      ->check(CLI::ExistingDirectory);
  rep->add_option("--format", format, "table, csv, json or plots");
  rep->add_option("--out", out, "where to write the report (default: the run directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(config_path, seeds, methods, out, suites, jobs);
    return report_command(run_dir, format, out);
  } catch (const scrub::Error& e) {
    std::cerr << "error (" << e.code_name() << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
