#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "scrubkit/dataset.hpp"
#include "scrubkit/metrics.hpp"
#include "scrubkit/model.hpp"
#include "scrubkit/unlearn.hpp"

namespace scrub {

// Method names understood by the harness:
//   original, retrain, finetune, neggrad, cf_k, eu_k, scrub, scrub_r
struct MethodSpec {
  std::string name;
  TrainConfig train;      // finetune/neggrad/cf_k/eu_k (retrain uses the experiment train config)
  ScrubConfig scrub_cfg;  // scrub / scrub_r
  double beta = 0.95;     // neggrad
  int k = -1;             // cf_k / eu_k; -1 = all blocks but the last
};

struct ArchitectureConfig {
  ArchitectureSpec::Kind kind = ArchitectureSpec::Kind::mlp;
  std::vector<int> hidden = {64, 64};
  std::vector<int> conv_channels = {8, 16};
  int dense_hidden = 32;
  int in_channels = 1;  // cnn; image_size is derived from the dataset dim
};

struct ExperimentConfig {
  DatasetSource dataset;
  ArchitectureConfig architecture;
  TrainConfig train;  // original model and retrain oracle
  std::optional<ForgetSpec> forget;
  std::optional<ConfusionSpec> confusion;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::set<std::string> suites = {"M1"};
  std::string output_dir;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);
// Canonical snapshot: re-serialization of the parsed config. Its hash names
// the run directory.
std::string config_snapshot(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);

struct ReportRow {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error_code;  // empty when ok
  std::string error_message;

  std::optional<double> retain_error;
  std::optional<double> forget_error;
  std::optional<double> test_error;
  std::optional<double> ic_test;
  std::optional<double> ic_retain;
  std::optional<long> fgt_test;
  std::optional<long> fgt_retain;
  std::optional<double> fgt_test_rate;    // fgt_test / (|test_a| + |test_b|)
  std::optional<double> fgt_retain_rate;
  std::optional<double> mia_mean;
  std::optional<double> mia_std;

  // Timing lives outside the deterministic report surface (rows.csv); it is
  // persisted separately in timings.csv.
  double wall_clock_seconds = 0.0;
  std::optional<double> scale_up;
};

struct AggregateRow {
  std::string method;
  int n = 0;  // successful seeds
  std::optional<double> retain_error_mean, retain_error_std;
  std::optional<double> forget_error_mean, forget_error_std;
  std::optional<double> test_error_mean, test_error_std;
  std::optional<double> ic_test_mean, ic_test_std;
  std::optional<double> ic_retain_mean, ic_retain_std;
  std::optional<double> fgt_test_mean, fgt_test_std;
  std::optional<double> fgt_retain_mean, fgt_retain_std;
  std::optional<double> mia_mean_mean, mia_mean_std;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;           // sorted by (method, seed)
  std::vector<AggregateRow> aggregates;  // sorted by method
  std::string config_hash;
  std::string tool_version;

  bool all_ok() const;
  const ReportRow* find(const std::string& method, std::uint64_t seed) const;
  const AggregateRow* find_aggregate(const std::string& method) const;
};

std::vector<AggregateRow> aggregate_rows(const std::vector<ReportRow>& rows);

// Runs the full method x seed grid. A failing cell yields an error row and
// the rest of the grid continues. `jobs` > 1 executes seeds concurrently;
// results are identical either way. When `checkpoint_dir` is nonempty,
// methods with rewinding enabled persist their checkpoint trail under
// checkpoint_dir/<method>/<seed>/.
ExperimentReport run_experiment(const ExperimentConfig& config, int jobs = 1,
                                const std::filesystem::path& checkpoint_dir = {});

// Writes rows.csv, aggregates.csv, timings.csv and config.snapshot under
// dir. rows.csv and aggregates.csv are bitwise deterministic for a given
// config; timings.csv carries the wall-clock measurements.
void write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const ExperimentReport& report);
ExperimentReport load_run_dir(const std::filesystem::path& dir);

enum class ReportFormat { table, csv, json, plots };
ReportFormat report_format_from_string(const std::string& name);

// table  -> report.txt (also returned as the function result)
// csv    -> rows.csv + aggregates.csv
// json   -> report.json (includes config hash and tool version)
// plots  -> plots/<metric>.svg bar charts with 95% CI error bars
std::string emit_report(const ExperimentReport& report, ReportFormat format,
                        const std::filesystem::path& out_dir);

std::string rows_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_rows_csv(const std::string& text);
std::string aggregates_csv(const std::vector<AggregateRow>& aggregates);
std::string timings_csv(const std::vector<ReportRow>& rows);
std::string report_json(const ExperimentReport& report);
std::string report_table(const ExperimentReport& report);

// Output root resolution: explicit flag > config output_dir > $SCRUBKIT_OUT >
// ./runs
std::filesystem::path resolve_output_root(const std::string& flag_value,
                                          const ExperimentConfig& config);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace scrub
