// narxsel command-line front end: data generation, benchmarks, single runs,
// external CSV ingestion and report re-emission.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "narxsel/csv.hpp"
#include "narxsel/datagen.hpp"
#include "narxsel/error.hpp"
#include "narxsel/harness.hpp"
#include "narxsel/trainer.hpp"

namespace fs = std::filesystem;
using namespace narxsel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitConfig = 2;

// Raw option values; converted to library types after parsing.
struct TrainFlags {
  double lambda_v = 0.1;
  double lr = TrainConfig{}.lr;
  int epochs = TrainConfig{}.epochs;
  int batch_size = 128;
  std::vector<int> hidden = {64};
  std::string optimizer = "adam";
  std::string x0 = "train_mean";
  bool full_flatten = false;
  bool raw_correlation = false;
  bool recompute_correlation = false;
  bool stop_penalty_gradient = false;
  double dropin_l1 = 0.0;
  double stochastic_sigma = 1.0;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--lambda", f.lambda_v, "Variance penalty weight")->capture_default_str();
  app->add_option("--lr", f.lr, "Learning rate")->capture_default_str();
  app->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  app->add_option("--batch", f.batch_size, "Minibatch size")->capture_default_str();
  app->add_option("--hidden", f.hidden, "Hidden layer widths")->capture_default_str()->delimiter(',');
  app->add_option("--optimizer", f.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  app->add_option("--x0", f.x0, "Expansion point: train_mean or zero")
      ->check(CLI::IsMember({"train_mean", "zero"}))
      ->capture_default_str();
  app->add_flag("--full-flatten", f.full_flatten, "Feed the full covariance to the decision unit");
  app->add_flag("--raw-correlation", f.raw_correlation, "Uncentered second moment instead of covariance");
  app->add_flag("--recompute-correlation", f.recompute_correlation, "Covariance per minibatch");
  app->add_flag("--stop-penalty-gradient", f.stop_penalty_gradient,
                "Treat the input gradient as constant in the penalty");
  app->add_option("--dropin-l1", f.dropin_l1, "L1 weight on drop-in scores")->capture_default_str();
  app->add_option("--stochastic-sigma", f.stochastic_sigma, "Noise scale of the stochastic gate")
      ->capture_default_str();
}

TrainConfig to_config(const TrainFlags& f) {
  TrainConfig c;
  c.lambda_v = f.lambda_v;
  c.lr = f.lr;
  c.epochs = f.epochs;
  c.batch_size = f.batch_size;
  c.hidden = f.hidden;
  c.optimizer = f.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
  c.x0_mode = parse_x0_mode(f.x0);
  c.full_flatten = f.full_flatten;
  c.centering = f.raw_correlation ? Centering::raw : Centering::centered;
  c.recompute_correlation = f.recompute_correlation;
  c.penalty_through_network = !f.stop_penalty_gradient;
  c.dropin_l1 = f.dropin_l1;
  c.stochastic_sigma = f.stochastic_sigma;
  c.validate();
  return c;
}

struct SimFlags {
  double u_low = -2.5;
  double u_high = 2.5;
  std::size_t burn_in = 50;
  double noise = 0.0;
  bool literal_ranges = false;
};

void add_sim_flags(CLI::App* app, SimFlags& f) {
  app->add_option("--u-low", f.u_low, "Lower input bound")->capture_default_str();
  app->add_option("--u-high", f.u_high, "Upper input bound")->capture_default_str();
  app->add_option("--burn-in", f.burn_in, "Discarded leading steps")->capture_default_str();
  app->add_option("--noise", f.noise, "Output measurement noise std")->capture_default_str();
  app->add_flag("--literal-ranges", f.literal_ranges,
                "Use --u-low/--u-high for every system instead of per-system stable ranges");
}

std::vector<SystemId> parse_systems(const std::vector<std::string>& names) {
  std::vector<SystemId> out;
  for (const auto& n : names) {
    if (n == "all") {
      for (SystemId s : all_systems()) out.push_back(s);
    } else {
      out.push_back(parse_system(n));
    }
  }
  return out;
}

std::vector<GateMethod> parse_methods(const std::vector<std::string>& names) {
  std::vector<GateMethod> out;
  for (const auto& n : names) {
    if (n == "all") {
      out = {GateMethod::decision_unit, GateMethod::drop_in, GateMethod::stochastic};
    } else {
      out.push_back(parse_method(n));
    }
  }
  return out;
}

void write_scores(const fs::path& path, const FittedModel& model) {
  std::ostringstream out;
  write_csv_row(out, {"column_label", "alpha"});
  for (std::size_t j = 0; j < model.labels.size(); ++j) {
    write_csv_row(out, {model.labels[j].name(), format_double(model.alpha[static_cast<Eigen::Index>(j)])});
  }
  write_text_file(path, out.str());
}

void write_log(const fs::path& path, const FittedModel& model) {
  std::ostringstream out;
  write_training_log(out, model.history);
  write_text_file(path, out.str());
}

void print_scores(const FittedModel& model) {
  for (std::size_t j = 0; j < model.labels.size(); ++j) {
    std::printf("  %-8s %.4f\n", model.labels[j].name().c_str(), model.alpha[static_cast<Eigen::Index>(j)]);
  }
}

void emit_all(const AggregateResult& agg, const std::string& format, const fs::path& out) {
  if (format == "csv" || format == "both") emit_report(agg, ReportFormat::csv, out);
  if (format == "json" || format == "both") emit_report(agg, ReportFormat::json, out);
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::training_failure:
    case ErrorCode::divergence:
    case ErrorCode::numerical: return kExitPartial;
    default: return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relevance-score learning for NARX system identification"};
  app.set_config("--config", "", "TOML/INI file; command-line flags take precedence");
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Simulate benchmark systems and write t,u,y CSVs");
  std::vector<std::string> gen_systems = {"all"};
  std::size_t gen_samples = 6000;
  std::uint64_t gen_seed = 0;
  SimFlags gen_sim;
  fs::path gen_out = "data";
  gen->add_option("--systems", gen_systems, "F1..F11 or all")->delimiter(',')->capture_default_str();
  gen->add_option("--samples", gen_samples, "Samples kept after burn-in")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Input seed")->capture_default_str();
  add_sim_flags(gen, gen_sim);
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "Multi-seed benchmark over systems and methods");
  std::vector<std::string> bench_systems = {"all"};
  std::vector<std::string> bench_methods = {"all"};
  ExperimentSpec spec;
  SimFlags bench_sim;
  TrainFlags bench_train;
  std::string bench_format = "both";
  fs::path bench_out = "results";
  bench->add_option("--systems", bench_systems, "F1..F11 or all")->delimiter(',')->capture_default_str();
  bench->add_option("--methods", bench_methods, "decision_unit, drop_in, stochastic or all")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--seeds", spec.n_seeds, "Replicates per cell")->capture_default_str();
  bench->add_option("--seed", spec.seed, "Suite seed")->capture_default_str();
  bench->add_option("--n-train", spec.n_train, "Training rows")->capture_default_str();
  bench->add_option("--n-test", spec.n_test, "Test rows")->capture_default_str();
  bench->add_option("--lag", spec.lag, "Lags per signal")->capture_default_str();
  bench->add_option("--threads", spec.threads, "Worker threads (0 = all cores)")->capture_default_str();
  bench->add_option("--format", bench_format, "csv, json or both")
      ->check(CLI::IsMember({"csv", "json", "both"}))
      ->capture_default_str();
  bench->add_option("--out", bench_out, "Output directory")->capture_default_str();
  add_sim_flags(bench, bench_sim);
  add_train_flags(bench, bench_train);

  // train
  auto* trn = app.add_subcommand("train", "Train one model on one simulated system");
  std::string trn_system = "F3";
  std::string trn_method = "decision_unit";
  int trn_replicate = 0;
  ExperimentSpec trn_spec;
  SimFlags trn_sim;
  TrainFlags trn_train;
  fs::path trn_out = "model";
  trn->add_option("--system", trn_system, "F1..F11")->capture_default_str();
  trn->add_option("--method", trn_method, "decision_unit, drop_in or stochastic")->capture_default_str();
  trn->add_option("--replicate", trn_replicate, "Replicate index")->capture_default_str();
  trn->add_option("--seed", trn_spec.seed, "Suite seed")->capture_default_str();
  trn->add_option("--n-train", trn_spec.n_train, "Training rows")->capture_default_str();
  trn->add_option("--n-test", trn_spec.n_test, "Test rows")->capture_default_str();
  trn->add_option("--lag", trn_spec.lag, "Lags per signal")->capture_default_str();
  trn->add_option("--out", trn_out, "Output directory")->capture_default_str();
  add_sim_flags(trn, trn_sim);
  add_train_flags(trn, trn_train);

  // ingest
  auto* ing = app.add_subcommand("ingest", "Train on an external SISO series");
  fs::path ing_csv;
  std::string ing_input = "u";
  std::string ing_output = "y";
  int ing_na = 5;
  int ing_nb = 5;
  double ing_split = 0.5;
  std::string ing_method = "decision_unit";
  std::uint64_t ing_seed = 0;
  TrainFlags ing_train;
  fs::path ing_out = "ingest";
  ing->add_option("--csv", ing_csv, "Input CSV with a header row")->required();
  ing->add_option("--input-col", ing_input, "Input column")->capture_default_str();
  ing->add_option("--output-col", ing_output, "Output column")->capture_default_str();
  ing->add_option("--na", ing_na, "Output lags")->capture_default_str();
  ing->add_option("--nb", ing_nb, "Input lags")->capture_default_str();
  ing->add_option("--split", ing_split, "Training fraction")->capture_default_str();
  ing->add_option("--method", ing_method, "decision_unit, drop_in or stochastic")->capture_default_str();
  ing->add_option("--seed", ing_seed, "Training seed")->capture_default_str();
  ing->add_option("--out", ing_out, "Output directory")->capture_default_str();
  add_train_flags(ing, ing_train);

  // report
  auto* rep = app.add_subcommand("report", "Re-emit reports from a stored runs.json");
  fs::path rep_runs;
  std::string rep_format = "both";
  fs::path rep_out = "report";
  rep->add_option("--runs", rep_runs, "runs.json written by bench")->required();
  rep->add_option("--format", rep_format, "csv, json or both")
      ->check(CLI::IsMember({"csv", "json", "both"}))
      ->capture_default_str();
  rep->add_option("--out", rep_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  auto apply_sim = [](SimConfig& sim, const SimFlags& f) {
    sim.u_low = f.u_low;
    sim.u_high = f.u_high;
    sim.burn_in = f.burn_in;
    sim.noise_std = f.noise;
  };

  try {
    if (*gen) {
      fs::create_directories(gen_out);
      for (SystemId s : parse_systems(gen_systems)) {
        SimConfig sim;
        apply_sim(sim, gen_sim);
        sim.system = s;
        sim.n_samples = gen_samples;
        sim.seed = gen_seed;
        if (!gen_sim.literal_ranges) {
          if (auto range = stable_input_range(s)) std::tie(sim.u_low, sim.u_high) = *range;
          if (auto y0 = stable_initial_output(s)) sim.y_init = *y0;
        }
        std::ostringstream out;
        write_series_csv(out, simulate_system(sim));
        const fs::path path = gen_out / (to_string(s) + ".csv");
        write_text_file(path, out.str());
        std::printf("%s\n", path.string().c_str());
      }
      return kExitOk;
    }

    if (*bench) {
      spec.systems = parse_systems(bench_systems);
      spec.methods = parse_methods(bench_methods);
      apply_sim(spec.sim, bench_sim);
      spec.stable_ranges = !bench_sim.literal_ranges;
      spec.train = to_config(bench_train);
      spec.output_dir = bench_out;
      const SuiteResult result = run_suite(spec);
      emit_all(result.aggregate, bench_format, bench_out);
      std::ostringstream runs;
      write_runs_json(runs, result.runs);
      write_text_file(bench_out / "runs.json", runs.str());
      write_report_csv(std::cout, result.aggregate);
      for (const auto& r : result.runs) {
        if (!r.ok()) {
          std::fprintf(stderr, "%s/%s replicate %d failed: %s\n", to_string(r.system).c_str(),
                       to_string(r.method).c_str(), r.replicate, r.error->c_str());
        }
      }
      return result.any_failure() ? kExitPartial : kExitOk;
    }

    if (*trn) {
      trn_spec.systems = {parse_system(trn_system)};
      trn_spec.methods = {parse_method(trn_method)};
      trn_spec.n_seeds = trn_replicate + 1;
      apply_sim(trn_spec.sim, trn_sim);
      trn_spec.stable_ranges = !trn_sim.literal_ranges;
      trn_spec.train = to_config(trn_train);
      trn_spec.validate();
      const SystemId system = trn_spec.systems.front();
      const GateMethod method = trn_spec.methods.front();
      const PreparedData data = prepare_data(trn_spec, system, trn_replicate);
      TrainConfig config = trn_spec.train;
      config.method = method;
      config.seed = run_seed(trn_spec.seed, system, method, trn_replicate);
      const FittedModel model = train(data.train, config);
      fs::create_directories(trn_out);
      save_model(model, trn_out / "model.json");
      write_log(trn_out / "training_log.csv", model);
      write_scores(trn_out / "scores.csv", model);
      std::printf("test_mse %s\nl1 %s\n", format_double(evaluate(model, data.test)).c_str(),
                  format_double(sparsity_l1(model.alpha)).c_str());
      print_scores(model);
      return kExitOk;
    }

    if (*ing) {
      const PreparedData data = ingest_csv(ing_csv, ing_input, ing_output, ing_na, ing_nb, ing_split);
      TrainConfig config = to_config(ing_train);
      config.method = parse_method(ing_method);
      config.seed = ing_seed;
      const FittedModel model = train(data.train, config);
      fs::create_directories(ing_out);
      save_model(model, ing_out / "model.json");
      write_log(ing_out / "training_log.csv", model);
      write_scores(ing_out / "scores.csv", model);
      std::printf("train_rows %lld\ntest_rows %lld\ntest_mse %s\nl1 %s\n",
                  static_cast<long long>(data.train.rows()), static_cast<long long>(data.test.rows()),
                  format_double(evaluate(model, data.test)).c_str(),
                  format_double(sparsity_l1(model.alpha)).c_str());
      print_scores(model);
      return kExitOk;
    }

    if (*rep) {
      std::ifstream in(rep_runs);
      if (!in) throw Error(ErrorCode::io, "cannot open " + rep_runs.string());
      const auto runs = read_runs_json(in);
      if (runs.empty()) throw Error(ErrorCode::empty_request, rep_runs.string() + " holds no runs");
      const AggregateResult agg = aggregate(runs);
      emit_all(agg, rep_format, rep_out);
      write_report_csv(std::cout, agg);
      for (const auto& r : runs) {
        if (!r.ok()) return kExitPartial;
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.code()), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitOk;
}
