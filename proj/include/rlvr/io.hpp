#pragma once

// Configuration files, trace and log formats, and CSV reports.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlvr/entropy.hpp"
#include "rlvr/trainer.hpp"

namespace rlvr {

struct AnalysisOptions {
  std::vector<double> percentiles = {1, 5, 10, 25, 50, 75, 80, 90, 95, 99};
  double histogram_bin_width = 0.05;
  double rho = 0.2;
  std::size_t top_k = 10;
  std::size_t min_freq = 5;

  void validate() const;
};

struct ExperimentConfig {
  TrainConfig train;
  std::string output_dir = "runs";
  std::string run_name = "run";
  AnalysisOptions analysis;

  void validate() const;
};

inline constexpr const char* kOutputRootEnv = "RLVR_OUTPUT_ROOT";

// Strict JSON: unknown keys and wrong types are kConfig errors. Missing keys
// keep their defaults.
ExperimentConfig parse_experiment_config(const std::string& text);
std::string dump_experiment_config(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

// <root>/<run_name>, where root is $RLVR_OUTPUT_ROOT if set, else output_dir.
std::string resolve_run_dir(const ExperimentConfig& cfg);

// Token traces: a header line, then one line per query and per token.
inline constexpr int kTraceFormatVersion = 1;
std::string serialize_trace(const TokenTrace& trace);
TokenTrace parse_trace(const std::string& text);
void write_trace(const std::string& path, const TokenTrace& trace);
TokenTrace read_trace(const std::string& path);

// Training logs: a header line, then one line per gradient step.
inline constexpr int kLogFormatVersion = 1;
std::string serialize_log(std::span<const TrainLogRecord> log);
std::vector<TrainLogRecord> parse_log(const std::string& text);
void write_log(const std::string& path, std::span<const TrainLogRecord> log);
std::vector<TrainLogRecord> read_log(const std::string& path);

struct OverlapRow {
  std::uint64_t reference_checkpoint = 0;
  std::uint64_t compare_checkpoint = 0;
  double rho = 0.0;
  double overlap = 0.0;
  bool operator==(const OverlapRow&) const = default;
};

struct PercentileSnapshot {
  std::uint64_t checkpoint = 0;
  std::vector<double> percentiles;
  std::vector<double> values;
  bool operator==(const PercentileSnapshot&) const = default;
};

struct AnalysisReport {
  std::optional<Histogram> histogram;
  std::vector<PercentileSnapshot> percentile_series;
  std::vector<OverlapRow> overlap;
  std::optional<BinChange> bin_change;
  std::vector<TokenStat> top_tokens;
  std::vector<TokenStat> bottom_tokens;
};

std::string serialize_analysis(const AnalysisReport& report);
AnalysisReport parse_analysis(const std::string& text);

// %.6g.
std::string format_number(double v);

// Per-step series: "step,value,series".
inline constexpr const char* kSeriesHeader = "step,value,series";
std::vector<std::string> log_series_names();
std::string log_series_csv(std::span<const TrainLogRecord> log, const std::string& series);
std::string percentile_series_csv(std::span<const PercentileSnapshot> series);
std::string bin_change_csv(const BinChange& change);
std::string token_table_csv(std::span<const TokenStat> table);
std::string overlap_csv(std::span<const OverlapRow> rows);
std::string histogram_csv(const Histogram& h);

// Writes one CSV per series into dir; returns the file names written.
std::vector<std::string> export_report(const std::string& dir, std::span<const TrainLogRecord> log,
                                       const AnalysisReport& analysis);

}  // namespace rlvr
