// rlvr: train, evaluate, decode, analyze and report.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rlvr/decoder.hpp"
#include "rlvr/entropy.hpp"
#include "rlvr/error.hpp"
#include "rlvr/fileutil.hpp"
#include "rlvr/io.hpp"
#include "rlvr/model.hpp"
#include "rlvr/tasks.hpp"
#include "rlvr/trainer.hpp"

namespace fs = std::filesystem;
using namespace rlvr;

namespace {

struct TrainArgs {
  std::string config;
  std::string init;
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::string family = "modular-chain";
  int difficulty = 2;
  int tasks = 64;
  int samples = 16;
  double temperature = 1.0;
  int max_new = 64;
  std::uint64_t seed = 0xE7A1;
};

struct DecodeArgs {
  std::string checkpoint;
  std::string out;
  std::string family = "modular-chain";
  int difficulty = 2;
  int tasks = 16;
  int samples = 1;
  std::string mode = "plain";
  double temperature = 1.0;
  std::optional<double> t_high;
  std::optional<double> t_low;
  std::optional<double> h_threshold;
  int max_new = 64;
  std::uint64_t seed = 0;
  std::uint64_t task_seed = 0xE7A1;
};

struct AnalyzeArgs {
  std::string trace;
  std::string out;
  std::string config;
  std::vector<std::string> overlap_against;
  std::string change_against;
  std::optional<double> rho;
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> min_freq;
  std::optional<double> bin_width;
  std::vector<double> percentiles;
};

struct ReportArgs {
  std::string log;
  std::string analysis;
  std::string out;
};

std::string checkpoint_name(int step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "ckpt_step_%06d.bin", step);
  return buf;
}

int run_train(const TrainArgs& a) {
  const ExperimentConfig cfg = load_experiment_config(a.config);
  const fs::path dir = resolve_run_dir(cfg);
  if (fs::exists(dir)) {
    throw Error(ErrorKind::kConfig, "run directory already exists: " + dir.string() + " (choose another run_name)");
  }
  fs::create_directories(dir);
  write_file_atomic((dir / "config.json").string(), dump_experiment_config(cfg));

  PolicyParams initial = a.init.empty() ? make_base_policy(cfg.train) : load_checkpoint(a.init);
  TrainResult res = run_training(cfg.train, initial, [&](const TrainLogRecord& r) {
    if (a.quiet) return;
    std::fprintf(stderr, "step %d acc %.4f entropy %.4f len %.2f obj %.5f mask %.3f", r.step, r.train_accuracy,
                 r.mean_entropy, r.mean_length, r.objective, r.mask_fraction);
    if (r.eval_accuracy) std::fprintf(stderr, " eval_acc %.4f", *r.eval_accuracy);
    std::fprintf(stderr, "\n");
  });
  for (const Checkpoint& c : res.checkpoints) save_checkpoint((dir / checkpoint_name(c.step)).string(), c.params);
  save_checkpoint((dir / "final.ckpt").string(), res.params);
  write_log((dir / "log.jsonl").string(), res.log);
  write_trace((dir / "trace.jsonl").string(), res.last_batch_trace);

  nlohmann::ordered_json summary;
  summary["run_dir"] = dir.string();
  summary["steps"] = res.log.size();
  summary["checkpoints"] = res.checkpoints.size();
  if (!res.log.empty()) summary["final_train_accuracy"] = res.log.back().train_accuracy;
  std::cout << summary.dump() << "\n";
  return 0;
}

int run_eval(EvalArgs a) {
  const PolicyParams params = load_checkpoint(a.checkpoint);
  std::vector<Task> tasks;
  DecodeConfig d;
  if (!a.config.empty()) {
    const ExperimentConfig cfg = load_experiment_config(a.config);
    if (cfg.train.eval_tasks == 0) throw Error(ErrorKind::kConfig, "config has eval_tasks = 0");
    tasks = make_eval_set(cfg.train);
    a.samples = cfg.train.eval_samples_per_task;
    d.max_new_tokens = cfg.train.decode.max_new_tokens;
    d.seed = cfg.train.eval_seed;
  } else {
    tasks = make_task_set(parse_family(a.family), a.difficulty, static_cast<std::size_t>(std::max(a.tasks, 0)), a.seed);
    d.max_new_tokens = a.max_new;
    d.seed = a.seed;
  }
  d.temperature = a.temperature;
  const EvalResult r = evaluate(params, tasks, a.samples, d);
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["mean_length"] = r.mean_length;
  j["rollouts"] = r.rollouts;
  j["tasks"] = tasks.size();
  j["samples_per_task"] = a.samples;
  std::cout << j.dump() << "\n";
  return 0;
}

int run_decode(const DecodeArgs& a) {
  const PolicyParams params = load_checkpoint(a.checkpoint);
  if (a.tasks <= 0 || a.samples <= 0) throw Error(ErrorKind::kConfig, "--tasks and --samples must be positive");
  const std::vector<Task> tasks =
      make_task_set(parse_family(a.family), a.difficulty, static_cast<std::size_t>(a.tasks), a.task_seed);
  DecodeConfig d;
  d.mode = parse_decode_mode(a.mode);
  d.temperature = a.temperature;
  d.t_high = a.t_high;
  d.t_low = a.t_low;
  d.h_threshold = a.h_threshold;
  d.max_new_tokens = a.max_new;
  d.seed = a.seed;
  d.validate();

  std::vector<Rollout> rollouts;
  std::map<std::int64_t, std::vector<int>> queries;
  double correct = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    queries[static_cast<std::int64_t>(i)] = tasks[i].query;
    for (int s = 0; s < a.samples; ++s) {
      Rollout r = sample_response(params, tasks[i].query, d, {static_cast<std::int64_t>(i), s});
      r.outcome = outcome_reward(r.tokens, tasks[i]);
      correct += r.outcome;
      rollouts.push_back(std::move(r));
    }
  }
  const TokenTrace trace = make_trace(rollouts, queries, params.version_tag);
  write_trace(a.out, trace);
  const std::vector<double> h = trace.entropies();
  double mean_h = 0.0;
  for (double x : h) mean_h += x;
  nlohmann::ordered_json j;
  j["trace"] = a.out;
  j["responses"] = rollouts.size();
  j["tokens"] = h.size();
  j["accuracy"] = correct / static_cast<double>(rollouts.size());
  j["mean_entropy"] = h.empty() ? 0.0 : mean_h / static_cast<double>(h.size());
  std::cout << j.dump() << "\n";
  return 0;
}

int run_analyze(const AnalyzeArgs& a) {
  AnalysisOptions opt;
  if (!a.config.empty()) opt = load_experiment_config(a.config).analysis;
  if (a.rho) opt.rho = *a.rho;
  if (a.top_k) opt.top_k = *a.top_k;
  if (a.min_freq) opt.min_freq = *a.min_freq;
  if (a.bin_width) opt.histogram_bin_width = *a.bin_width;
  if (!a.percentiles.empty()) opt.percentiles = a.percentiles;
  opt.validate();

  const TokenTrace trace = read_trace(a.trace);
  const std::vector<double> base = trace.entropies();
  AnalysisReport report;
  if (!base.empty()) {
    const double hi = std::log(static_cast<double>(tok::kVocabSize));
    const auto bins = static_cast<std::size_t>(std::ceil(hi / opt.histogram_bin_width));
    report.histogram = entropy_histogram(base, bins, 0.0, hi);
    report.percentile_series.push_back(
        {trace.source_checkpoint, opt.percentiles, entropy_percentiles(base, opt.percentiles)});
    report.top_tokens = top_tokens_by_avg_entropy(trace, opt.top_k, opt.min_freq, Rank::kHighest);
    report.bottom_tokens = top_tokens_by_avg_entropy(trace, opt.top_k, opt.min_freq, Rank::kLowest);
  }
  if (!a.overlap_against.empty()) {
    const PositionSet reference = top_rho_positions(trace, opt.rho);
    for (const std::string& path : a.overlap_against) {
      const PolicyParams params = load_checkpoint(path);
      const TokenTrace rescored = rescore_trace(params, trace);
      report.overlap.push_back({trace.source_checkpoint, params.version_tag, opt.rho,
                                overlap_ratio(reference, top_rho_positions(rescored, opt.rho))});
      report.percentile_series.push_back(
          {params.version_tag, opt.percentiles, entropy_percentiles(rescored.entropies(), opt.percentiles)});
    }
  }
  if (!a.change_against.empty()) {
    const TokenTrace rescored = rescore_trace(load_checkpoint(a.change_against), trace);
    report.bin_change = per_bin_entropy_change(base, rescored.entropies());
  }
  fs::create_directories(a.out);
  write_file_atomic((fs::path(a.out) / "analysis.json").string(), serialize_analysis(report));
  std::cout << overlap_csv(report.overlap);
  return 0;
}

int run_report(const ReportArgs& a) {
  std::vector<TrainLogRecord> log;
  if (!a.log.empty()) log = read_log(a.log);
  AnalysisReport analysis;
  if (!a.analysis.empty()) analysis = parse_analysis(read_file(a.analysis));
  fs::create_directories(a.out);
  for (const std::string& name : export_report(a.out, log, analysis)) std::cout << name << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-masked RLVR on synthetic reasoning tasks"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Run RL training from a JSON experiment config");
  train->add_option("--config", train_args.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--init", train_args.init, "Start from this checkpoint instead of the warm-started base policy")
      ->check(CLI::ExistingFile);
  train->add_flag("--quiet", train_args.quiet, "Suppress per-step progress");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with n sampled responses per task");
  eval->add_option("--checkpoint", eval_args.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--config", eval_args.config, "Take the eval set and sample count from a config")
      ->check(CLI::ExistingFile);
  eval->add_option("--family", eval_args.family);
  eval->add_option("--difficulty", eval_args.difficulty);
  eval->add_option("--tasks", eval_args.tasks);
  eval->add_option("--samples", eval_args.samples);
  eval->add_option("--temperature", eval_args.temperature);
  eval->add_option("--max-new", eval_args.max_new);
  eval->add_option("--seed", eval_args.seed);

  DecodeArgs decode_args;
  auto* decode = app.add_subcommand("decode", "Sample responses and write a token trace");
  decode->add_option("--checkpoint", decode_args.checkpoint)->required()->check(CLI::ExistingFile);
  decode->add_option("--out", decode_args.out, "Trace path (JSONL)")->required();
  decode->add_option("--family", decode_args.family);
  decode->add_option("--difficulty", decode_args.difficulty);
  decode->add_option("--tasks", decode_args.tasks);
  decode->add_option("--samples", decode_args.samples);
  decode->add_option("--mode", decode_args.mode, "plain, dual or greedy");
  decode->add_option("--temperature", decode_args.temperature);
  decode->add_option("--t-high", decode_args.t_high);
  decode->add_option("--t-low", decode_args.t_low);
  decode->add_option("--h-threshold", decode_args.h_threshold);
  decode->add_option("--max-new", decode_args.max_new);
  decode->add_option("--seed", decode_args.seed);
  decode->add_option("--task-seed", decode_args.task_seed);

  AnalyzeArgs analyze_args;
  auto* analyze = app.add_subcommand("analyze", "Entropy analytics over a token trace");
  analyze->add_option("--trace", analyze_args.trace)->required()->check(CLI::ExistingFile);
  analyze->add_option("--out", analyze_args.out, "Output directory for analysis.json")->required();
  analyze->add_option("--config", analyze_args.config, "Take analysis options from a config")
      ->check(CLI::ExistingFile);
  analyze->add_option("--overlap-against", analyze_args.overlap_against, "Checkpoints to compare (comma separated)")
      ->delimiter(',');
  analyze->add_option("--change-against", analyze_args.change_against, "Checkpoint for per-bin entropy change")
      ->check(CLI::ExistingFile);
  analyze->add_option("--rho", analyze_args.rho);
  analyze->add_option("--top-k", analyze_args.top_k);
  analyze->add_option("--min-freq", analyze_args.min_freq);
  analyze->add_option("--bin-width", analyze_args.bin_width);
  analyze->add_option("--percentiles", analyze_args.percentiles)->delimiter(',');

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Convert logs and analyses to CSV");
  report->add_option("--log", report_args.log)->check(CLI::ExistingFile);
  report->add_option("--analysis", report_args.analysis)->check(CLI::ExistingFile);
  report->add_option("--out", report_args.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return run_train(train_args);
    if (*eval) return run_eval(eval_args);
    if (*decode) return run_decode(decode_args);
    if (*analyze) return run_analyze(analyze_args);
    if (*report) return run_report(report_args);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
