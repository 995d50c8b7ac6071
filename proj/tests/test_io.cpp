#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "rlvr/io.hpp"

using namespace rlvr;
using fixture::kind_of;
using fixture::slurp;
using fixture::TempDir;

namespace {

TokenTrace random_trace(std::size_t tokens, std::uint64_t seed) {
  Rng rng(seed);
  TokenTrace t;
  t.source_checkpoint = 42;
  std::int64_t q = 0, pos = 0;
  for (std::size_t i = 0; i < tokens; ++i) {
    if (pos == 0) {
      std::vector<int> query(3 + rng.below(5));
      for (int& v : query) v = static_cast<int>(rng.below(32));
      t.queries[q] = query;
    }
    ++pos;
    t.records.push_back({q, pos, static_cast<int>(rng.below(32)), rng.uniform() * 3.4, -rng.uniform() * 7.0, 42});
    if (rng.below(12) == 0) {
      ++q;
      pos = 0;
    }
  }
  return t;
}

std::vector<TrainLogRecord> random_log(std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainLogRecord> log;
  for (std::size_t i = 0; i < steps; ++i) {
    TrainLogRecord r;
    r.step = static_cast<int>(i + 1);
    r.train_accuracy = rng.uniform();
    r.mean_entropy = rng.uniform() / 3.0;
    r.mean_length = 10.0 + rng.uniform();
    r.objective = rng.normal() * 1e-3;
    r.mask_fraction = 0.2 + 1e-17 * rng.uniform();
    if (r.step % 4 == 0) {
      r.checkpoint_tag = static_cast<std::uint64_t>(r.step);
      r.eval_accuracy = rng.uniform();
      r.eval_length = 1.0 / 3.0;
    }
    log.push_back(r);
  }
  return log;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("trace round-trip is exact") {
  const TokenTrace t = random_trace(1000, 1);
  const std::string text = serialize_trace(t);
  const TokenTrace back = parse_trace(text);
  CHECK(back == t);
  CHECK(serialize_trace(back) == text);

  TempDir dir("trace");
  write_trace(dir.file("t.jsonl"), t);
  CHECK(read_trace(dir.file("t.jsonl")) == t);
}

TEST_CASE("empty trace is header only") {
  TokenTrace t;
  t.source_checkpoint = 7;
  const std::string text = serialize_trace(t);
  CHECK(count_lines(text) == 1);
  CHECK(parse_trace(text) == t);
}

TEST_CASE("trace faults") {
  const std::string text = serialize_trace(random_trace(50, 2));
  std::string future = text;
  future.replace(future.find("\"version\":1"), 11, "\"version\":9");
  try {
    parse_trace(future);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
    CHECK(std::string(e.what()).find('9') != std::string::npos);
    CHECK(std::string(e.what()).find('1') != std::string::npos);
  }
  // Cut mid-record: the last line is incomplete.
  const std::string cut = text.substr(0, text.size() - 10);
  try {
    parse_trace(cut);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("line " + std::to_string(count_lines(cut) + 1)) != std::string::npos);
  }
  CHECK(kind_of([] { parse_trace(""); }) == ErrorKind::kParse);
  CHECK(kind_of([] { parse_trace("{\"format\":\"rlvr-log\",\"version\":1}\n"); }) == ErrorKind::kFormat);
}

TEST_CASE("log round-trip is exact, including optional fields") {
  const auto log = random_log(37, 3);
  const std::string text = serialize_log(log);
  CHECK(parse_log(text) == log);
  CHECK(count_lines(text) == 38);
  CHECK(parse_log(serialize_log({})).empty());
  TempDir dir("log");
  write_log(dir.file("log.jsonl"), log);
  CHECK(read_log(dir.file("log.jsonl")) == log);

  std::string swapped = serialize_log(std::vector<TrainLogRecord>{log[1], log[0]});
  CHECK(kind_of([&] { parse_log(swapped); }) == ErrorKind::kParse);
  std::string future = text;
  future.replace(future.find("\"version\":1"), 11, "\"version\":2");
  CHECK(kind_of([&] { parse_log(future); }) == ErrorKind::kFormat);
}

TEST_CASE("analysis report round-trip") {
  AnalysisReport a;
  a.histogram = entropy_histogram(std::vector<double>{0.1, 0.2, 3.0, 9.0}, 5, 0.0, std::log(32.0));
  a.percentile_series = {{0, {50, 80}, {0.1, 0.7}}, {25, {50, 80}, {0.05, 0.6}}};
  a.overlap = {{3, 0, 0.2, 0.55}, {3, 3, 0.2, 1.0}};
  BinChange bc;
  for (std::size_t b = 0; b < kChangeBins; ++b) {
    bc.mean_change[b] = 0.01 * static_cast<double>(b) - 0.1;
    bc.count[b] = b;
  }
  a.bin_change = bc;
  a.top_tokens = {{tok::kComma, 1.25, 9}, {5, 1.0 / 3.0, 6}};
  a.bottom_tokens = {{tok::kEos, 0.0, 100}};
  const AnalysisReport b = parse_analysis(serialize_analysis(a));
  CHECK(serialize_analysis(b) == serialize_analysis(a));
  REQUIRE(b.histogram.has_value());
  CHECK(b.histogram->counts == a.histogram->counts);
  CHECK(b.histogram->hi == a.histogram->hi);
  CHECK(b.histogram->above == 1);
  CHECK(b.percentile_series == a.percentile_series);
  CHECK(b.overlap == a.overlap);
  REQUIRE(b.bin_change.has_value());
  CHECK(b.bin_change->mean_change == bc.mean_change);
  CHECK(b.bin_change->count == bc.count);
  CHECK(b.top_tokens == a.top_tokens);
  CHECK(b.bottom_tokens == a.bottom_tokens);
  CHECK(kind_of([] { parse_analysis("{\"format\":\"rlvr-analysis\",\"version\":3}"); }) == ErrorKind::kFormat);
}

TEST_CASE("experiment config round-trip and strictness") {
  ExperimentConfig c;
  c.run_name = "exp1";
  c.train.rl.rho = 0.5;
  c.train.rl.mask_side = MaskSide::kLowest;
  c.train.decode.mode = DecodeMode::kDual;
  c.train.decode.t_high = 2.0;
  c.train.decode.t_low = 1.0;
  c.train.decode.h_threshold = 0.672;
  c.train.optimizer = OptimizerKind::kSgd;
  c.train.learning_rate = 0.1 + 0.2;  // not exactly representable in short decimal
  c.analysis.percentiles = {10, 90};
  const std::string text = dump_experiment_config(c);
  const ExperimentConfig back = parse_experiment_config(text);
  CHECK(dump_experiment_config(back) == text);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.train.rl.mask_side == MaskSide::kLowest);
  CHECK(*back.train.decode.t_high == 2.0);

  // Partial configs keep defaults.
  const ExperimentConfig partial = parse_experiment_config(R"({"run_name": "p", "train": {"rl": {"rho": 1.0}}})");
  CHECK(partial.train.rl.rho == 1.0);
  CHECK(partial.train.max_steps == TrainConfig{}.max_steps);

  CHECK(kind_of([] { parse_experiment_config(R"({"train": {"rl": {"rhoo": 1.0}}})"); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { parse_experiment_config(R"({"train": {"max_steps": "ten"}})"); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { parse_experiment_config(R"({"train": {"task_family": "chess"}})"); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { parse_experiment_config(R"({"run_name": "../x"})"); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { parse_experiment_config("{not json"); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { parse_experiment_config(R"({"train": {"rl": {"rho": 0}}})"); }) == ErrorKind::kConfig);
}

TEST_CASE("output root override") {
  ExperimentConfig c;
  c.output_dir = "out";
  c.run_name = "r";
  ::unsetenv(kOutputRootEnv);
  CHECK(resolve_run_dir(c) == "out/r");
  ::setenv(kOutputRootEnv, "/tmp/elsewhere", 1);
  CHECK(resolve_run_dir(c) == "/tmp/elsewhere/r");
  ::unsetenv(kOutputRootEnv);
}

TEST_CASE("series CSVs") {
  for (const auto& s : log_series_names()) {
    CHECK(log_series_csv({}, s) == std::string(kSeriesHeader) + "\n");
  }
  const auto log = random_log(10, 4);
  const std::string acc = log_series_csv(log, "train_accuracy");
  CHECK(count_lines(acc) == 11);
  CHECK(acc.substr(0, acc.find('\n')) == "step,value,series");
  CHECK(acc.find("\n1," + format_number(log[0].train_accuracy) + ",train_accuracy\n") != std::string::npos);
  CHECK(count_lines(log_series_csv(log, "eval_accuracy")) == 1 + 2);  // steps 4 and 8
  CHECK(kind_of([&] { log_series_csv(log, "bogus"); }) == ErrorKind::kInvalidInput);
  CHECK(log_series_csv(log, "objective") == log_series_csv(random_log(10, 4), "objective"));
}

TEST_CASE("numbers print with six significant digits") {
  CHECK(format_number(1.0 / 3.0) == "0.333333");
  CHECK(format_number(123456789.0) == "1.23457e+08");
  CHECK(format_number(0.5) == "0.5");
}

TEST_CASE("fixed-shape CSVs") {
  BinChange bc;
  const std::string bins = bin_change_csv(bc);
  CHECK(count_lines(bins) == 21);
  CHECK(bins.find("19,95,100,0,0\n") != std::string::npos);
  const std::string table = token_table_csv(std::vector<TokenStat>{{tok::kComma, 0.5, 3}, {7, 0.25, 2}});
  CHECK(table == "rank,token_id,token,mean_entropy,frequency\n1,21,\",\",0.5,3\n2,7,7,0.25,2\n");
  CHECK(overlap_csv(std::vector<OverlapRow>{{3, 1, 0.2, 0.875}}) ==
        "reference_checkpoint,compare_checkpoint,rho,overlap\n3,1,0.2,0.875\n");
  PercentileSnapshot ps{25, {50, 99.5}, {0.1, 2.0}};
  CHECK(percentile_series_csv(std::vector<PercentileSnapshot>{ps}) == "step,value,series\n25,0.1,p50\n25,2,p99.5\n");
  const Histogram h = entropy_histogram(std::vector<double>{0.1, 0.6}, 2, 0.0, 1.0);
  CHECK(histogram_csv(h) == "lower,upper,count\n0,0.5,1\n0.5,1,1\n");
}

TEST_CASE("report export writes every series and is byte-stable") {
  AnalysisReport a;
  a.bin_change = BinChange{};
  a.overlap = {{1, 1, 0.2, 1.0}};
  const auto log = random_log(10, 5);
  TempDir one("report1"), two("report2");
  const auto names = export_report(one.path().string(), log, a);
  CHECK(names.size() == log_series_names().size() + 5);
  export_report(two.path().string(), log, a);
  for (const auto& n : names) {
    CHECK(slurp(one.file(n)) == slurp(two.file(n)));
    CHECK_FALSE(slurp(one.file(n)).empty());
  }
  CHECK(count_lines(slurp(one.file("series_mean_entropy.csv"))) == 11);
  CHECK(count_lines(slurp(one.file("bin_change.csv"))) == 21);
  CHECK(kind_of([&] { export_report("/proc/definitely/not/here", log, a); }) == ErrorKind::kIo);
}
