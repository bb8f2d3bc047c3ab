#include "narxsel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "json_io.hpp"
#include "narxsel/csv.hpp"
#include "narxsel/error.hpp"
#include "narxsel/seeding.hpp"

namespace narxsel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kDataTag = 0xDA7A;

bool same_value(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::string cell_stem(const CellAggregate& cell) {
  return "scores_" + to_string(cell.system) + "_" + to_string(cell.method) + ".csv";
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  write_text_file(path, contents);
}

detail::ordered_json number_json(double x) {
  // JSON has no NaN; null marks a statistic over zero successful runs.
  if (std::isnan(x)) return nullptr;
  return x;
}

double number_from_json(const detail::ordered_json& j) {
  return j.is_null() ? kNaN : j.get<double>();
}

}  // namespace

void ExperimentSpec::validate() const {
  if (n_seeds < 1) throw Error(ErrorCode::invalid_argument, "n_seeds must be >= 1");
  if (systems.empty()) throw Error(ErrorCode::empty_request, "no systems selected");
  if (methods.empty()) throw Error(ErrorCode::empty_request, "no methods selected");
  if (n_train < 2 || n_test < 1) throw Error(ErrorCode::invalid_argument, "n_train >= 2 and n_test >= 1 required");
  if (lag < 1) throw Error(ErrorCode::invalid_argument, "lag must be >= 1");
  if (threads < 0) throw Error(ErrorCode::invalid_argument, "threads must be >= 0");
  for (SystemId s : systems) {
    if (max_lag(s) > lag) {
      throw Error(ErrorCode::invalid_argument,
                  to_string(s) + " needs lag >= " + std::to_string(max_lag(s)));
    }
  }
  train.validate();
}

SupportMetrics support_metrics(const std::vector<int>& recovered, const std::set<ColumnLabel>& truth,
                               const std::vector<ColumnLabel>& labels) {
  std::set<ColumnLabel> found;
  for (int idx : recovered) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= labels.size()) {
      throw Error(ErrorCode::out_of_range, "recovered index " + std::to_string(idx) + " has no label");
    }
    found.insert(labels[static_cast<std::size_t>(idx)]);
  }
  std::size_t hits = 0;
  for (const auto& label : found) hits += truth.count(label);
  SupportMetrics m;
  if (!found.empty()) m.precision = static_cast<double>(hits) / static_cast<double>(found.size());
  if (!truth.empty()) m.recall = static_cast<double>(hits) / static_cast<double>(truth.size());
  if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

bool same_table_row(const CellAggregate& a, const CellAggregate& b) {
  return a.system == b.system && a.method == b.method && a.seeds == b.seeds &&
         same_value(a.mse_mean, b.mse_mean) && same_value(a.mse_std, b.mse_std) &&
         same_value(a.l1_mean, b.l1_mean) && same_value(a.l1_std, b.l1_std) &&
         same_value(a.precision, b.precision) && same_value(a.recall, b.recall) &&
         same_value(a.f1, b.f1);
}

const CellAggregate& AggregateResult::cell(SystemId system, GateMethod method) const {
  for (const auto& c : cells) {
    if (c.system == system && c.method == method) return c;
  }
  throw Error(ErrorCode::out_of_range, "no cell " + to_string(system) + "/" + to_string(method));
}

bool SuiteResult::any_failure() const {
  for (const auto& r : runs) {
    if (!r.ok()) return true;
  }
  return false;
}

bool SuiteResult::any_cell_failed() const {
  for (const auto& c : aggregate.cells) {
    if (c.seeds == 0) return true;
  }
  return false;
}

std::uint64_t run_seed(std::uint64_t suite_seed, SystemId system, GateMethod method, int replicate) {
  return derive_seed({suite_seed, static_cast<std::uint64_t>(system),
                      static_cast<std::uint64_t>(method), static_cast<std::uint64_t>(replicate)});
}

std::uint64_t data_seed(std::uint64_t suite_seed, SystemId system, int replicate) {
  return derive_seed({suite_seed, static_cast<std::uint64_t>(system), kDataTag,
                      static_cast<std::uint64_t>(replicate)});
}

PreparedData prepare_data(const ExperimentSpec& spec, SystemId system, int replicate) {
  SimConfig sim = spec.sim;
  sim.system = system;
  sim.n_samples = spec.n_train + spec.n_test + static_cast<std::size_t>(spec.lag);
  sim.seed = data_seed(spec.seed, system, replicate);
  if (spec.stable_ranges) {
    if (auto range = stable_input_range(system)) std::tie(sim.u_low, sim.u_high) = *range;
    if (auto y0 = stable_initial_output(system)) sim.y_init = *y0;
  }
  const LaggedDataset lagged = build_lagged(simulate_system(sim), spec.lag);
  auto [train_raw, test_raw] = split_time_ordered(lagged, static_cast<Eigen::Index>(spec.n_train));
  auto [train, stats] = standardize(train_raw);
  return {std::move(train), apply_standardize(test_raw, stats)};
}

RunResult run_single(const ExperimentSpec& spec, SystemId system, GateMethod method, int replicate) {
  RunResult result;
  result.system = system;
  result.method = method;
  result.replicate = replicate;
  result.seed = run_seed(spec.seed, system, method, replicate);
  try {
    const PreparedData data = prepare_data(spec, system, replicate);
    TrainConfig config = spec.train;
    config.method = method;
    config.seed = result.seed;
    const FittedModel model = train(data.train, config);
    result.test_mse = evaluate(model, data.test);
    if (!std::isfinite(result.test_mse)) {
      throw Error(ErrorCode::numerical, "non-finite test MSE");
    }
    result.alpha = model.alpha;
    result.l1 = sparsity_l1(model.alpha);
    result.labels = data.train.labels;
    result.support = support_metrics(threshold_support(model.alpha), ground_truth_support(system),
                                     result.labels);
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  return result;
}

AggregateResult aggregate(const std::vector<RunResult>& runs) {
  std::vector<std::pair<SystemId, GateMethod>> order;
  std::map<std::pair<SystemId, GateMethod>, std::vector<const RunResult*>> groups;
  for (const auto& run : runs) {
    const auto key = std::make_pair(run.system, run.method);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&run);
  }

  AggregateResult out;
  for (const auto& key : order) {
    auto members = groups[key];
    std::stable_sort(members.begin(), members.end(),
                     [](const RunResult* a, const RunResult* b) { return a->replicate < b->replicate; });
    CellAggregate cell;
    cell.system = key.first;
    cell.method = key.second;
    std::vector<double> mse, l1, precision, recall, f1;
    std::vector<const RunResult*> ok;
    for (const RunResult* r : members) {
      if (!r->ok()) {
        ++cell.failures;
        continue;
      }
      ok.push_back(r);
      mse.push_back(r->test_mse);
      l1.push_back(r->l1);
      precision.push_back(r->support.precision);
      recall.push_back(r->support.recall);
      f1.push_back(r->support.f1);
    }
    cell.seeds = static_cast<int>(ok.size());
    cell.mse_mean = mean_of(mse);
    cell.mse_std = std_of(mse);
    cell.l1_mean = mean_of(l1);
    cell.l1_std = std_of(l1);
    cell.precision = mean_of(precision);
    cell.recall = mean_of(recall);
    cell.f1 = mean_of(f1);
    if (!ok.empty()) {
      cell.labels = ok.front()->labels;
      const Eigen::Index d = ok.front()->alpha.size();
      cell.alpha_mean = Eigen::VectorXd::Zero(d);
      cell.alpha_std = Eigen::VectorXd::Zero(d);
      for (const RunResult* r : ok) cell.alpha_mean += r->alpha.values();
      cell.alpha_mean /= static_cast<double>(ok.size());
      for (const RunResult* r : ok) {
        cell.alpha_std += (r->alpha.values() - cell.alpha_mean).cwiseAbs2();
      }
      cell.alpha_std = (cell.alpha_std / static_cast<double>(ok.size())).cwiseSqrt();
    }
    out.cells.push_back(std::move(cell));
  }
  return out;
}

SuiteResult run_suite(const ExperimentSpec& spec) {
  spec.validate();
  struct Job {
    SystemId system;
    GateMethod method;
    int replicate;
  };
  std::vector<Job> jobs;
  for (SystemId s : spec.systems) {
    for (GateMethod m : spec.methods) {
      for (int r = 0; r < spec.n_seeds; ++r) jobs.push_back({s, m, r});
    }
  }

  std::vector<RunResult> runs(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      runs[i] = run_single(spec, jobs[i].system, jobs[i].method, jobs[i].replicate);
    }
  };
  unsigned n_threads = spec.threads > 0 ? static_cast<unsigned>(spec.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  SuiteResult result;
  result.aggregate = aggregate(runs);
  result.runs = std::move(runs);
  return result;
}

LaggedDataset ingest_lagged(const std::filesystem::path& path, const std::string& input_column,
                            const std::string& output_column, int n_a, int n_b) {
  if (n_a < 1 || n_b < 1) throw Error(ErrorCode::invalid_argument, "n_a and n_b must be >= 1");
  const CsvTable table = read_csv_file(path);
  const std::size_t cu = table.column(input_column);
  const std::size_t cy = table.column(output_column);
  const std::size_t needed = static_cast<std::size_t>(std::max(n_a, n_b)) + 2;
  if (table.rows.size() < needed) {
    throw Error(ErrorCode::parse, path.string() + ": " + std::to_string(table.rows.size()) +
                                      " data rows, at least " + std::to_string(needed) + " required");
  }
  TimeSeriesPair pair;
  pair.u.reserve(table.rows.size());
  pair.y.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    pair.u.push_back(table.number(r, cu));
    pair.y.push_back(table.number(r, cy));
  }
  return build_arx(pair, n_a, n_b);
}

PreparedData ingest_csv(const std::filesystem::path& path, const std::string& input_column,
                        const std::string& output_column, int n_a, int n_b, double split_fraction) {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "split fraction must lie in (0, 1)");
  }
  const LaggedDataset lagged = ingest_lagged(path, input_column, output_column, n_a, n_b);
  const auto n_train =
      static_cast<Eigen::Index>(std::floor(split_fraction * static_cast<double>(lagged.rows())));
  auto [train_raw, test_raw] = split_time_ordered(lagged, n_train);
  auto [train, stats] = standardize(train_raw);
  return {std::move(train), apply_standardize(test_raw, stats)};
}

// --- reports -------------------------------------------------------------------

void write_report_csv(std::ostream& out, const AggregateResult& result) {
  write_csv_row(out, {"system", "method", "seeds", "mse_mean", "mse_std", "l1_mean", "l1_std",
                      "precision", "recall", "f1"});
  for (const auto& c : result.cells) {
    write_csv_row(out, {to_string(c.system), to_string(c.method), std::to_string(c.seeds),
                        format_double(c.mse_mean), format_double(c.mse_std), format_double(c.l1_mean),
                        format_double(c.l1_std), format_double(c.precision), format_double(c.recall),
                        format_double(c.f1)});
  }
}

void write_report_json(std::ostream& out, const AggregateResult& result) {
  detail::ordered_json cells = detail::ordered_json::array();
  for (const auto& c : result.cells) {
    cells.push_back({{"system", to_string(c.system)},
                     {"method", to_string(c.method)},
                     {"seeds", c.seeds},
                     {"mse_mean", number_json(c.mse_mean)},
                     {"mse_std", number_json(c.mse_std)},
                     {"l1_mean", number_json(c.l1_mean)},
                     {"l1_std", number_json(c.l1_std)},
                     {"precision", number_json(c.precision)},
                     {"recall", number_json(c.recall)},
                     {"f1", number_json(c.f1)},
                     {"failures", c.failures}});
  }
  out << cells.dump(2) << '\n';
}

void write_score_csv(std::ostream& out, const CellAggregate& cell) {
  write_csv_row(out, {"column_label", "alpha_mean", "alpha_std"});
  for (std::size_t j = 0; j < cell.labels.size(); ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    write_csv_row(out, {cell.labels[j].name(), format_double(cell.alpha_mean(k)),
                        format_double(cell.alpha_std(k))});
  }
}

AggregateResult read_report_csv(std::istream& in) {
  const CsvTable table = read_csv(in);
  const std::size_t c_system = table.column("system");
  const std::size_t c_method = table.column("method");
  const std::size_t c_seeds = table.column("seeds");
  const std::size_t c_mse_mean = table.column("mse_mean");
  const std::size_t c_mse_std = table.column("mse_std");
  const std::size_t c_l1_mean = table.column("l1_mean");
  const std::size_t c_l1_std = table.column("l1_std");
  const std::size_t c_precision = table.column("precision");
  const std::size_t c_recall = table.column("recall");
  const std::size_t c_f1 = table.column("f1");
  AggregateResult out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    CellAggregate c;
    c.system = parse_system(table.rows[r].at(c_system));
    c.method = parse_method(table.rows[r].at(c_method));
    c.seeds = static_cast<int>(table.number(r, c_seeds));
    c.mse_mean = table.number(r, c_mse_mean);
    c.mse_std = table.number(r, c_mse_std);
    c.l1_mean = table.number(r, c_l1_mean);
    c.l1_std = table.number(r, c_l1_std);
    c.precision = table.number(r, c_precision);
    c.recall = table.number(r, c_recall);
    c.f1 = table.number(r, c_f1);
    out.cells.push_back(std::move(c));
  }
  return out;
}

AggregateResult read_report_json(std::istream& in) {
  AggregateResult out;
  try {
    const auto cells = detail::ordered_json::parse(in);
    for (const auto& j : cells) {
      CellAggregate c;
      c.system = parse_system(j.at("system").get<std::string>());
      c.method = parse_method(j.at("method").get<std::string>());
      c.seeds = j.at("seeds").get<int>();
      c.mse_mean = number_from_json(j.at("mse_mean"));
      c.mse_std = number_from_json(j.at("mse_std"));
      c.l1_mean = number_from_json(j.at("l1_mean"));
      c.l1_std = number_from_json(j.at("l1_std"));
      c.precision = number_from_json(j.at("precision"));
      c.recall = number_from_json(j.at("recall"));
      c.f1 = number_from_json(j.at("f1"));
      c.failures = j.value("failures", 0);
      out.cells.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("report json: ") + e.what());
  }
  return out;
}

void emit_report(const AggregateResult& result, ReportFormat format, const std::filesystem::path& dir) {
  if (result.cells.empty()) throw Error(ErrorCode::empty_request, "no results to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());

  std::ostringstream table;
  if (format == ReportFormat::csv) {
    write_report_csv(table, result);
    write_file(dir / "report.csv", table.str());
  } else {
    write_report_json(table, result);
    write_file(dir / "report.json", table.str());
  }
  for (const auto& cell : result.cells) {
    if (cell.labels.empty()) continue;
    std::ostringstream scores;
    write_score_csv(scores, cell);
    write_file(dir / cell_stem(cell), scores.str());
  }
}

void write_runs_json(std::ostream& out, const std::vector<RunResult>& runs) {
  detail::ordered_json list = detail::ordered_json::array();
  for (const auto& r : runs) {
    detail::ordered_json labels = detail::ordered_json::array();
    for (const auto& label : r.labels) labels.push_back(label.name());
    detail::ordered_json entry = {{"system", to_string(r.system)},
                                  {"method", to_string(r.method)},
                                  {"replicate", r.replicate},
                                  {"seed", r.seed}};
    if (r.ok()) {
      entry["test_mse"] = r.test_mse;
      entry["l1"] = r.l1;
      entry["precision"] = r.support.precision;
      entry["recall"] = r.support.recall;
      entry["f1"] = r.support.f1;
      entry["labels"] = labels;
      entry["alpha"] = detail::to_json(r.alpha.values());
    } else {
      entry["error"] = *r.error;
    }
    list.push_back(std::move(entry));
  }
  out << list.dump(2) << '\n';
}

std::vector<RunResult> read_runs_json(std::istream& in) {
  std::vector<RunResult> runs;
  try {
    const auto list = detail::ordered_json::parse(in);
    for (const auto& j : list) {
      RunResult r;
      r.system = parse_system(j.at("system").get<std::string>());
      r.method = parse_method(j.at("method").get<std::string>());
      r.replicate = j.at("replicate").get<int>();
      r.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("error")) {
        r.error = j.at("error").get<std::string>();
      } else {
        r.test_mse = j.at("test_mse").get<double>();
        r.l1 = j.at("l1").get<double>();
        r.support = {j.at("precision").get<double>(), j.at("recall").get<double>(),
                     j.at("f1").get<double>()};
        for (const auto& label : j.at("labels")) {
          r.labels.push_back(ColumnLabel::parse(label.get<std::string>()));
        }
        r.alpha = ScoreVector(detail::vector_from_json(j.at("alpha")));
      }
      runs.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("runs json: ") + e.what());
  }
  return runs;
}

}  // namespace narxsel
