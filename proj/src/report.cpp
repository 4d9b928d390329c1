#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "scrubkit/error.hpp"
#include "scrubkit/harness.hpp"
#include "scrubkit/model.hpp"

namespace scrub {

namespace {

using nlohmann::ordered_json;

constexpr const char* kRowsHeader =
    "method,seed,status,error_code,error_message,retain_error,forget_error,test_error,"
    "ic_test,ic_retain,fgt_test,fgt_retain,fgt_test_rate,fgt_retain_rate,mia_mean,mia_std";

constexpr const char* kTimingsHeader = "method,seed,wall_clock_seconds,scale_up";

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string opt_double(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::string opt_long(const std::optional<long>& v) {
  return v ? std::to_string(*v) : std::string();
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::optional<double> parse_opt_double(const std::string& field) {
  if (field.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str()) throw Error(ErrorCode::io_error, "bad number '" + field + "' in csv");
  return v;
}

std::optional<long> parse_opt_long(const std::string& field) {
  if (field.empty()) return std::nullopt;
  return std::stol(field);
}

std::string read_text_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::io_error, "cannot read " + file.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + file.string());
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "failed while writing " + file.string());
}

ordered_json row_json(const ReportRow& row) {
  ordered_json j;
  j["method"] = row.method;
  j["seed"] = row.seed;
  j["status"] = row.ok ? "ok" : "error";
  if (!row.ok) {
    j["error_code"] = row.error_code;
    j["error_message"] = row.error_message;
  }
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("retain_error", row.retain_error);
  put("forget_error", row.forget_error);
  put("test_error", row.test_error);
  put("ic_test", row.ic_test);
  put("ic_retain", row.ic_retain);
  if (row.fgt_test) j["fgt_test"] = *row.fgt_test;
  if (row.fgt_retain) j["fgt_retain"] = *row.fgt_retain;
  put("fgt_test_rate", row.fgt_test_rate);
  put("fgt_retain_rate", row.fgt_retain_rate);
  put("mia_mean", row.mia_mean);
  put("mia_std", row.mia_std);
  return j;
}

ordered_json aggregate_json(const AggregateRow& agg) {
  ordered_json j;
  j["method"] = agg.method;
  j["n"] = agg.n;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("retain_error_mean", agg.retain_error_mean);
  put("retain_error_std", agg.retain_error_std);
  put("forget_error_mean", agg.forget_error_mean);
  put("forget_error_std", agg.forget_error_std);
  put("test_error_mean", agg.test_error_mean);
  put("test_error_std", agg.test_error_std);
  put("ic_test_mean", agg.ic_test_mean);
  put("ic_test_std", agg.ic_test_std);
  put("ic_retain_mean", agg.ic_retain_mean);
  put("ic_retain_std", agg.ic_retain_std);
  put("fgt_test_mean", agg.fgt_test_mean);
  put("fgt_test_std", agg.fgt_test_std);
  put("fgt_retain_mean", agg.fgt_retain_mean);
  put("fgt_retain_std", agg.fgt_retain_std);
  put("mia_mean_mean", agg.mia_mean_mean);
  put("mia_mean_std", agg.mia_mean_std);
  return j;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

std::string cell(const std::optional<long>& v) { return v ? std::to_string(*v) : "-"; }

void append_padded(std::string& out, const std::string& text, std::size_t width) {
  out += text;
  if (text.size() < width) out.append(width - text.size(), ' ');
  out += "  ";
}

// Per-metric bar chart with 95% confidence-interval whiskers.
struct PlotMetric {
  const char* name;
  std::optional<double> AggregateRow::* mean;
  std::optional<double> AggregateRow::* std_dev;
};

constexpr PlotMetric kPlotMetrics[] = {
    {"retain_error", &AggregateRow::retain_error_mean, &AggregateRow::retain_error_std},
    {"forget_error", &AggregateRow::forget_error_mean, &AggregateRow::forget_error_std},
    {"test_error", &AggregateRow::test_error_mean, &AggregateRow::test_error_std},
    {"ic_test", &AggregateRow::ic_test_mean, &AggregateRow::ic_test_std},
    {"ic_retain", &AggregateRow::ic_retain_mean, &AggregateRow::ic_retain_std},
    {"fgt_test", &AggregateRow::fgt_test_mean, &AggregateRow::fgt_test_std},
    {"fgt_retain", &AggregateRow::fgt_retain_mean, &AggregateRow::fgt_retain_std},
    {"mia_mean", &AggregateRow::mia_mean_mean, &AggregateRow::mia_mean_std},
};

std::string svg_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string metric_svg(const PlotMetric& metric, const std::vector<AggregateRow>& aggregates) {
  struct Bar {
    std::string method;
    double mean;
    double ci;
  };
  std::vector<Bar> bars;
  for (const AggregateRow& agg : aggregates) {
    const std::optional<double>& mean = agg.*(metric.mean);
    if (!mean) continue;
    const std::optional<double>& sd = agg.*(metric.std_dev);
    const double ci =
        (sd && agg.n > 0) ? 1.96 * *sd / std::sqrt(static_cast<double>(agg.n)) : 0.0;
    bars.push_back({agg.method, *mean, ci});
  }
  if (bars.empty()) return {};

  const double slot = 100.0, left = 70.0, top = 30.0, plot_h = 210.0;
  const double width = left + slot * static_cast<double>(bars.size()) + 30.0;
  const double height = top + plot_h + 60.0;
  double max_val = 0.0;
  for (const Bar& b : bars) max_val = std::max(max_val, b.mean + b.ci);
  if (max_val <= 0.0) max_val = 1.0;
  const double scale = plot_h / max_val;
  const double base_y = top + plot_h;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_number(width)
      << "\" height=\"" << svg_number(height) << "\">\n";
  svg << "<text x=\"" << svg_number(width / 2) << "\" y=\"18\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">"
      << metric.name << " (mean, 95% CI)</text>\n";
  svg << "<line x1=\"" << svg_number(left) << "\" y1=\"" << svg_number(top) << "\" x2=\""
      << svg_number(left) << "\" y2=\"" << svg_number(base_y)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "<line x1=\"" << svg_number(left) << "\" y1=\"" << svg_number(base_y) << "\" x2=\""
      << svg_number(width - 20.0) << "\" y2=\"" << svg_number(base_y)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (int tick = 0; tick <= 2; ++tick) {
    const double v = max_val * static_cast<double>(tick) / 2.0;
    const double y = base_y - v * scale;
    char label[32];
    std::snprintf(label, sizeof(label), "%.3g", v);
    svg << "<line x1=\"" << svg_number(left - 4.0) << "\" y1=\"" << svg_number(y) << "\" x2=\""
        << svg_number(left) << "\" y2=\"" << svg_number(y) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << svg_number(left - 8.0) << "\" y=\"" << svg_number(y + 4.0)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << label
        << "</text>\n";
  }
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const Bar& b = bars[i];
    const double x = left + slot * static_cast<double>(i) + 20.0;
    const double bar_h = b.mean * scale;
    svg << "<rect x=\"" << svg_number(x) << "\" y=\"" << svg_number(base_y - bar_h)
        << "\" width=\"60\" height=\"" << svg_number(bar_h)
        << "\" fill=\"#4878a8\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
    if (b.ci > 0.0) {
      const double cx = x + 30.0;
      const double y_lo = base_y - std::max(0.0, b.mean - b.ci) * scale;
      const double y_hi = base_y - (b.mean + b.ci) * scale;
      svg << "<line x1=\"" << svg_number(cx) << "\" y1=\"" << svg_number(y_lo) << "\" x2=\""
          << svg_number(cx) << "\" y2=\"" << svg_number(y_hi)
          << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
      for (double yy : {y_lo, y_hi})
        svg << "<line x1=\"" << svg_number(cx - 8.0) << "\" y1=\"" << svg_number(yy) << "\" x2=\""
            << svg_number(cx + 8.0) << "\" y2=\"" << svg_number(yy)
            << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    }
    svg << "<text x=\"" << svg_number(x + 30.0) << "\" y=\"" << svg_number(base_y + 18.0)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << b.method
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

std::string rows_csv(const std::vector<ReportRow>& rows) {
  std::string out = kRowsHeader;
  out += "\n";
  for (const ReportRow& r : rows) {
    out += csv_quote(r.method);
    out += ",";
    out += std::to_string(r.seed);
    out += ",";
    out += r.ok ? "ok" : "error";
    out += ",";
    out += csv_quote(r.error_code);
    out += ",";
    out += csv_quote(r.error_message);
    out += ",";
    out += opt_double(r.retain_error);
    out += ",";
    out += opt_double(r.forget_error);
    out += ",";
    out += opt_double(r.test_error);
    out += ",";
    out += opt_double(r.ic_test);
    out += ",";
    out += opt_double(r.ic_retain);
    out += ",";
    out += opt_long(r.fgt_test);
    out += ",";
    out += opt_long(r.fgt_retain);
    out += ",";
    out += opt_double(r.fgt_test_rate);
    out += ",";
    out += opt_double(r.fgt_retain_rate);
    out += ",";
    out += opt_double(r.mia_mean);
    out += ",";
    out += opt_double(r.mia_std);
    out += "\n";
  }
  return out;
}

std::vector<ReportRow> parse_rows_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRowsHeader)
    throw Error(ErrorCode::io_error, "rows csv has an unexpected header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 16)
      throw Error(ErrorCode::io_error, "rows csv line has " + std::to_string(f.size()) +
                                           " fields, expected 16");
    ReportRow r;
    r.method = f[0];
    r.seed = std::stoull(f[1]);
    if (f[2] == "ok")
      r.ok = true;
    else if (f[2] == "error")
      r.ok = false;
    else
      throw Error(ErrorCode::io_error, "rows csv has unknown status '" + f[2] + "'");
    r.error_code = f[3];
    r.error_message = f[4];
    r.retain_error = parse_opt_double(f[5]);
    r.forget_error = parse_opt_double(f[6]);
    r.test_error = parse_opt_double(f[7]);
    r.ic_test = parse_opt_double(f[8]);
    r.ic_retain = parse_opt_double(f[9]);
    r.fgt_test = parse_opt_long(f[10]);
    r.fgt_retain = parse_opt_long(f[11]);
    r.fgt_test_rate = parse_opt_double(f[12]);
    r.fgt_retain_rate = parse_opt_double(f[13]);
    r.mia_mean = parse_opt_double(f[14]);
    r.mia_std = parse_opt_double(f[15]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string aggregates_csv(const std::vector<AggregateRow>& aggregates) {
  std::string out =
      "method,n,retain_error_mean,retain_error_std,forget_error_mean,forget_error_std,"
      "test_error_mean,test_error_std,ic_test_mean,ic_test_std,ic_retain_mean,ic_retain_std,"
      "fgt_test_mean,fgt_test_std,fgt_retain_mean,fgt_retain_std,mia_mean_mean,mia_mean_std\n";
  for (const AggregateRow& a : aggregates) {
    out += csv_quote(a.method);
    out += ",";
    out += std::to_string(a.n);
    for (const std::optional<double>& v :
         {a.retain_error_mean, a.retain_error_std, a.forget_error_mean, a.forget_error_std,
          a.test_error_mean, a.test_error_std, a.ic_test_mean, a.ic_test_std, a.ic_retain_mean,
          a.ic_retain_std, a.fgt_test_mean, a.fgt_test_std, a.fgt_retain_mean, a.fgt_retain_std,
          a.mia_mean_mean, a.mia_mean_std}) {
      out += ",";
      out += opt_double(v);
    }
    out += "\n";
  }
  return out;
}

std::string timings_csv(const std::vector<ReportRow>& rows) {
  std::string out = kTimingsHeader;
  out += "\n";
  for (const ReportRow& r : rows) {
    out += csv_quote(r.method);
    out += ",";
    out += std::to_string(r.seed);
    out += ",";
    out += format_double(r.wall_clock_seconds);
    out += ",";
    out += opt_double(r.scale_up);
    out += "\n";
  }
  return out;
}

std::string report_json(const ExperimentReport& report) {
  ordered_json j;
  j["tool"] = "scrubkit";
  j["version"] = report.tool_version;
  j["config_hash"] = report.config_hash;
  ordered_json conventions;
  conventions["errors"] = "fractions in [0, 1]";
  conventions["fgt_err"] =
      "raw misprediction count between the confused pair; *_rate fields divide by the pair's "
      "population";
  conventions["mia"] = "attack accuracy as a fraction; 0.5 is chance";
  conventions["aggregate_std"] = "population standard deviation over successful seeds";
  conventions["matched_validation"] =
      "clean-label examples drawn from the forget set's original classes";
  conventions["scrub_epochs"] =
      "epochs 1..max_steps pair a forget-set max pass with a retain-set min pass; epochs "
      "max_steps+1..total_steps run the min pass only";
  j["conventions"] = std::move(conventions);
  ordered_json rows = ordered_json::array();
  for (const ReportRow& r : report.rows) rows.push_back(row_json(r));
  j["rows"] = std::move(rows);
  ordered_json aggregates = ordered_json::array();
  for (const AggregateRow& a : report.aggregates) aggregates.push_back(aggregate_json(a));
  j["aggregates"] = std::move(aggregates);
  return j.dump(2) + "\n";
}

std::string report_table(const ExperimentReport& report) {
  // Column order is part of the documented format: method, seed, status,
  // retain/forget/test errors, IC errors, Fgt counts, MIA mean/std.
  std::string out;
  const std::size_t method_w = 10, seed_w = 4, status_w = 18, num_w = 7;
  auto header_row = [&]() {
    std::string line;
    append_padded(line, "method", method_w);
    append_padded(line, "seed", seed_w);
    append_padded(line, "status", status_w);
    for (const char* name : {"retain", "forget", "test", "ic_tst", "ic_rtn", "fgt_t", "fgt_r",
                             "mia", "mia_sd"})
      append_padded(line, name, num_w);
    return line + "\n";
  };
  out += header_row();
  for (const ReportRow& r : report.rows) {
    std::string line;
    append_padded(line, r.method, method_w);
    append_padded(line, std::to_string(r.seed), seed_w);
    append_padded(line, r.ok ? "ok" : r.error_code, status_w);
    append_padded(line, cell(r.retain_error), num_w);
    append_padded(line, cell(r.forget_error), num_w);
    append_padded(line, cell(r.test_error), num_w);
    append_padded(line, cell(r.ic_test), num_w);
    append_padded(line, cell(r.ic_retain), num_w);
    append_padded(line, cell(r.fgt_test), num_w);
    append_padded(line, cell(r.fgt_retain), num_w);
    append_padded(line, cell(r.mia_mean), num_w);
    append_padded(line, cell(r.mia_std), num_w);
    out += line + "\n";
  }
  out += "\naggregates (mean +/- population std over successful seeds)\n";
  auto pair_cell = [](const std::optional<double>& m, const std::optional<double>& s) {
    if (!m) return std::string("-");
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4f+/-%.4f", *m, s.value_or(0.0));
    return std::string(buf);
  };
  const std::size_t pair_w = 17;
  {
    std::string line;
    append_padded(line, "method", method_w);
    append_padded(line, "n", 3);
    for (const char* name : {"retain", "forget", "test", "ic_tst", "ic_rtn", "fgt_t", "fgt_r",
                             "mia"})
      append_padded(line, name, pair_w);
    out += line + "\n";
  }
  for (const AggregateRow& a : report.aggregates) {
    std::string line;
    append_padded(line, a.method, method_w);
    append_padded(line, std::to_string(a.n), 3);
    append_padded(line, pair_cell(a.retain_error_mean, a.retain_error_std), pair_w);
    append_padded(line, pair_cell(a.forget_error_mean, a.forget_error_std), pair_w);
    append_padded(line, pair_cell(a.test_error_mean, a.test_error_std), pair_w);
    append_padded(line, pair_cell(a.ic_test_mean, a.ic_test_std), pair_w);
    append_padded(line, pair_cell(a.ic_retain_mean, a.ic_retain_std), pair_w);
    append_padded(line, pair_cell(a.fgt_test_mean, a.fgt_test_std), pair_w);
    append_padded(line, pair_cell(a.fgt_retain_mean, a.fgt_retain_std), pair_w);
    append_padded(line, pair_cell(a.mia_mean_mean, a.mia_mean_std), pair_w);
    out += line + "\n";
  }
  return out;
}

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "table") return ReportFormat::table;
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  if (name == "plots") return ReportFormat::plots;
  throw Error(ErrorCode::invalid_argument,
              "unknown report format '" + name + "' (expected table, csv, json or plots)");
}

std::string emit_report(const ExperimentReport& report, ReportFormat format,
                        const std::filesystem::path& out_dir) {
  if (report.rows.empty())
    throw Error(ErrorCode::invalid_argument, "refusing to emit an empty report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + out_dir.string());
  switch (format) {
    case ReportFormat::table: {
      const std::string text = report_table(report);
      write_text_file(out_dir / "report.txt", text);
      return text;
    }
    case ReportFormat::csv: {
      const std::string rows = rows_csv(report.rows);
      write_text_file(out_dir / "rows.csv", rows);
      write_text_file(out_dir / "aggregates.csv", aggregates_csv(report.aggregates));
      return rows;
    }
    case ReportFormat::json: {
      const std::string text = report_json(report);
      write_text_file(out_dir / "report.json", text);
      return text;
    }
    case ReportFormat::plots: {
      const std::filesystem::path plot_dir = out_dir / "plots";
      std::filesystem::create_directories(plot_dir, ec);
      if (ec) throw Error(ErrorCode::io_error, "cannot create " + plot_dir.string());
      std::string written;
      for (const PlotMetric& metric : kPlotMetrics) {
        const std::string svg = metric_svg(metric, report.aggregates);
        if (svg.empty()) continue;
        const std::filesystem::path file = plot_dir / (std::string(metric.name) + ".svg");
        write_text_file(file, svg);
        written += file.string() + "\n";
      }
      if (written.empty())
        throw Error(ErrorCode::empty_result, "report has no aggregate metrics to plot");
      return written;
    }
  }
  throw Error(ErrorCode::internal, "unhandled report format");
}

void write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& config,
                   const ExperimentReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + dir.string());
  write_text_file(dir / "config.snapshot", config_snapshot(config));
  write_text_file(dir / "rows.csv", rows_csv(report.rows));
  write_text_file(dir / "aggregates.csv", aggregates_csv(report.aggregates));
  write_text_file(dir / "timings.csv", timings_csv(report.rows));
}

ExperimentReport load_run_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorCode::io_error, dir.string() + " is not a run directory");
  ExperimentReport report;
  report.rows = parse_rows_csv(read_text_file(dir / "rows.csv"));
  {
    const std::string snapshot = read_text_file(dir / "config.snapshot");
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(hash_bytes(snapshot.data(), snapshot.size())));
    report.config_hash = buf;
  }
  report.tool_version = kToolVersion;

  if (std::filesystem::exists(dir / "timings.csv")) {
    std::istringstream in(read_text_file(dir / "timings.csv"));
    std::string line;
    if (!std::getline(in, line) || line != kTimingsHeader)
      throw Error(ErrorCode::io_error, "timings csv has an unexpected header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> f = split_csv_line(line);
      if (f.size() != 4) throw Error(ErrorCode::io_error, "timings csv line is malformed");
      const std::uint64_t seed = std::stoull(f[1]);
      for (ReportRow& r : report.rows) {
        if (r.method == f[0] && r.seed == seed) {
          r.wall_clock_seconds = parse_opt_double(f[2]).value_or(0.0);
          r.scale_up = parse_opt_double(f[3]);
        }
      }
    }
  }
  report.aggregates = aggregate_rows(report.rows);
  return report;
}

}  // namespace scrub
