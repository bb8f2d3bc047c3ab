#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "narxsel/datagen.hpp"
#include "narxsel/gating.hpp"
#include "narxsel/trainer.hpp"

namespace narxsel {

struct ExperimentSpec {
  std::vector<SystemId> systems;
  std::vector<GateMethod> methods;
  int n_seeds = 10;
  std::uint64_t seed = 0;
  std::size_t n_train = 4000;
  std::size_t n_test = 2000;
  int lag = 10;
  /// Template for every simulation; system, sample count and seed are set per run.
  SimConfig sim;
  /// Use each system's documented stable input range and initial output.
  bool stable_ranges = true;
  /// Template for every run; method and seed are set per run.
  TrainConfig train;
  std::filesystem::path output_dir;
  /// 0 picks the hardware concurrency.
  int threads = 0;

  void validate() const;
};

struct SupportMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

SupportMetrics support_metrics(const std::vector<int>& recovered, const std::set<ColumnLabel>& truth,
                               const std::vector<ColumnLabel>& labels);

struct RunResult {
  SystemId system = SystemId::F1;
  GateMethod method = GateMethod::decision_unit;
  int replicate = 0;
  std::uint64_t seed = 0;
  double test_mse = 0.0;
  ScoreVector alpha;
  double l1 = 0.0;
  SupportMetrics support;
  /// Set when the run failed; the numeric fields are then meaningless.
  std::optional<std::string> error;
  std::vector<ColumnLabel> labels;

  bool ok() const { return !error.has_value(); }
};

struct CellAggregate {
  SystemId system = SystemId::F1;
  GateMethod method = GateMethod::decision_unit;
  /// Successful runs that entered the statistics.
  int seeds = 0;
  int failures = 0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  double l1_mean = 0.0;
  double l1_std = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<ColumnLabel> labels;
  Eigen::VectorXd alpha_mean;
  Eigen::VectorXd alpha_std;
};

/// Equality of the report-table columns (everything the report CSV carries).
bool same_table_row(const CellAggregate& a, const CellAggregate& b);

struct AggregateResult {
  std::vector<CellAggregate> cells;

  const CellAggregate& cell(SystemId system, GateMethod method) const;
};

struct SuiteResult {
  AggregateResult aggregate;
  std::vector<RunResult> runs;

  bool any_failure() const;
  bool any_cell_failed() const;
};

std::uint64_t run_seed(std::uint64_t suite_seed, SystemId system, GateMethod method, int replicate);
/// Shared by all methods of one (system, replicate) pair so they see the same data.
std::uint64_t data_seed(std::uint64_t suite_seed, SystemId system, int replicate);

struct PreparedData {
  LaggedDataset train;
  LaggedDataset test;
};

/// generate, simulate, lag, split, standardize with training statistics.
PreparedData prepare_data(const ExperimentSpec& spec, SystemId system, int replicate);

/// One full run; failures are captured in the result.
RunResult run_single(const ExperimentSpec& spec, SystemId system, GateMethod method, int replicate);

/// Seed-ordered mean/std (population) over the successful runs of each cell.
AggregateResult aggregate(const std::vector<RunResult>& runs);

SuiteResult run_suite(const ExperimentSpec& spec);

/// Reads an external SISO series, builds ARX regressors and splits in time.
PreparedData ingest_csv(const std::filesystem::path& path, const std::string& input_column,
                        const std::string& output_column, int n_a, int n_b, double split_fraction);

/// Same pipeline up to the lagged dataset, without splitting or standardizing.
LaggedDataset ingest_lagged(const std::filesystem::path& path, const std::string& input_column,
                            const std::string& output_column, int n_a, int n_b);

enum class ReportFormat { csv, json };

void write_report_csv(std::ostream& out, const AggregateResult& result);
void write_report_json(std::ostream& out, const AggregateResult& result);
/// `column_label,alpha_mean,alpha_std`.
void write_score_csv(std::ostream& out, const CellAggregate& cell);

AggregateResult read_report_csv(std::istream& in);
AggregateResult read_report_json(std::istream& in);

/// Writes report.csv / report.json and scores_<system>_<method>.csv into dir.
void emit_report(const AggregateResult& result, ReportFormat format, const std::filesystem::path& dir);

/// Raw per-run results, for re-emitting reports later.
void write_runs_json(std::ostream& out, const std::vector<RunResult>& runs);
std::vector<RunResult> read_runs_json(std::istream& in);

}  // namespace narxsel
