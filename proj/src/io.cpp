#include "rlvr/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rlvr/error.hpp"
#include "rlvr/fileutil.hpp"

namespace rlvr {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads fields of one JSON object, rejecting unknown keys and wrong types.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorKind::kConfig, where_ + ": expected an object");
  }

  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        fail(key, "a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) fail(key, "a number or null");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  const json* object(const char* key) { return find(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw Error(ErrorKind::kConfig, where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw Error(ErrorKind::kConfig, where_ + "." + key + " must be " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class Fn>
void read_section(ObjectReader& parent, const char* key, const std::string& where, Fn fn) {
  if (const json* v = parent.object(key)) {
    ObjectReader r(*v, where + "." + key);
    fn(r);
    r.finish();
  }
}

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

json parse_line(const std::string& line, std::size_t line_no, const char* what) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
  }
}

void check_header(const json& h, const char* format, int expected, const char* what) {
  if (!h.is_object() || !h.contains("format") || h["format"] != format || !h.contains("version") ||
      !h["version"].is_number_integer()) {
    throw Error(ErrorKind::kFormat, std::string(what) + " header is missing or not a " + format + " header");
  }
  const int version = h["version"].get<int>();
  if (version != expected) {
    throw Error(ErrorKind::kFormat, std::string(what) + " format version " + std::to_string(version) +
                                        " is not supported (expected " + std::to_string(expected) + ")");
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void AnalysisOptions::validate() const {
  for (double p : percentiles) {
    if (!(p >= 0.0 && p <= 100.0)) throw Error(ErrorKind::kConfig, "percentiles must lie in [0, 100]");
  }
  if (!(histogram_bin_width > 0.0)) throw Error(ErrorKind::kConfig, "histogram_bin_width must be positive");
  if (!(rho > 0.0 && rho <= 1.0)) throw Error(ErrorKind::kConfig, "analysis rho must lie in (0, 1]");
  if (top_k == 0) throw Error(ErrorKind::kConfig, "top_k must be positive");
}

void ExperimentConfig::validate() const {
  train.validate();
  analysis.validate();
  if (run_name.empty() || run_name.find('/') != std::string::npos || run_name == "." || run_name == "..") {
    throw Error(ErrorKind::kConfig, "run_name must be a plain, non-empty directory name");
  }
  if (output_dir.empty()) throw Error(ErrorKind::kConfig, "output_dir must not be empty");
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  ObjectReader top(root, "config");
  top.get("output_dir", cfg.output_dir);
  top.get("run_name", cfg.run_name);
  read_section(top, "train", "config", [&](ObjectReader& r) {
    TrainConfig& t = cfg.train;
    std::string family = to_string(t.task_family);
    std::string optimizer = to_string(t.optimizer);
    r.get("seed", t.seed);
    r.get("task_family", family);
    r.get("difficulty", t.difficulty);
    r.get("train_batch_queries", t.train_batch_queries);
    r.get("mini_batch_queries", t.mini_batch_queries);
    r.get("learning_rate", t.learning_rate);
    r.get("optimizer", optimizer);
    r.get("max_steps", t.max_steps);
    r.get("eval_every", t.eval_every);
    r.get("eval_samples_per_task", t.eval_samples_per_task);
    r.get("eval_tasks", t.eval_tasks);
    r.get("eval_seed", t.eval_seed);
    r.get("oversample_cap", t.oversample_cap);
    t.task_family = parse_family(family);
    t.optimizer = parse_optimizer(optimizer);
    read_section(r, "rl", "config.train", [&](ObjectReader& s) {
      std::string side = to_string(t.rl.mask_side);
      s.get("eps_low", t.rl.eps_low);
      s.get("eps_high", t.rl.eps_high);
      s.get("rho", t.rl.rho);
      s.get("group_size", t.rl.group_size);
      s.get("use_entropy_mask", t.rl.use_entropy_mask);
      s.get("mask_side", side);
      t.rl.mask_side = parse_mask_side(side);
    });
    read_section(r, "decode", "config.train", [&](ObjectReader& s) {
      std::string mode = to_string(t.decode.mode);
      s.get("temperature", t.decode.temperature);
      s.get("max_new_tokens", t.decode.max_new_tokens);
      s.get("mode", mode);
      s.get("t_high", t.decode.t_high);
      s.get("t_low", t.decode.t_low);
      s.get("h_threshold", t.decode.h_threshold);
      s.get("seed", t.decode.seed);
      t.decode.mode = parse_decode_mode(mode);
    });
    read_section(r, "reward", "config.train", [&](ObjectReader& s) {
      s.get("max_response_len", t.reward.max_response_len);
      s.get("cache_len", t.reward.cache_len);
    });
    read_section(r, "model", "config.train", [&](ObjectReader& s) {
      s.get("vocab_size", t.model.vocab_size);
      s.get("d_model", t.model.d_model);
      s.get("n_layers", t.model.n_layers);
      s.get("n_heads", t.model.n_heads);
      s.get("context_len", t.model.context_len);
      s.get("seed", t.model.seed);
    });
    read_section(r, "warm_start", "config.train", [&](ObjectReader& s) {
      s.get("clean_steps", t.warm_start.clean_steps);
      s.get("noisy_steps", t.warm_start.noisy_steps);
      s.get("batch_size", t.warm_start.batch_size);
      s.get("learning_rate", t.warm_start.learning_rate);
      s.get("step_accuracy", t.warm_start.step_accuracy);
    });
  });
  read_section(top, "analysis", "config", [&](ObjectReader& r) {
    r.get("percentiles", cfg.analysis.percentiles);
    r.get("histogram_bin_width", cfg.analysis.histogram_bin_width);
    r.get("rho", cfg.analysis.rho);
    r.get("top_k", cfg.analysis.top_k);
    r.get("min_freq", cfg.analysis.min_freq);
  });
  top.finish();
  cfg.validate();
  return cfg;
}

std::string dump_experiment_config(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  ordered_json j;
  j["output_dir"] = cfg.output_dir;
  j["run_name"] = cfg.run_name;
  ordered_json tr;
  tr["seed"] = t.seed;
  tr["task_family"] = to_string(t.task_family);
  tr["difficulty"] = t.difficulty;
  tr["train_batch_queries"] = t.train_batch_queries;
  tr["mini_batch_queries"] = t.mini_batch_queries;
  tr["learning_rate"] = t.learning_rate;
  tr["optimizer"] = to_string(t.optimizer);
  tr["max_steps"] = t.max_steps;
  tr["eval_every"] = t.eval_every;
  tr["eval_samples_per_task"] = t.eval_samples_per_task;
  tr["eval_tasks"] = t.eval_tasks;
  tr["eval_seed"] = t.eval_seed;
  tr["oversample_cap"] = t.oversample_cap;
  tr["rl"] = {{"eps_low", t.rl.eps_low},
              {"eps_high", t.rl.eps_high},
              {"rho", t.rl.rho},
              {"group_size", t.rl.group_size},
              {"use_entropy_mask", t.rl.use_entropy_mask},
              {"mask_side", to_string(t.rl.mask_side)}};
  tr["decode"] = {{"temperature", t.decode.temperature},
                  {"max_new_tokens", t.decode.max_new_tokens},
                  {"mode", to_string(t.decode.mode)},
                  {"t_high", optional_number(t.decode.t_high)},
                  {"t_low", optional_number(t.decode.t_low)},
                  {"h_threshold", optional_number(t.decode.h_threshold)},
                  {"seed", t.decode.seed}};
  tr["reward"] = {{"max_response_len", t.reward.max_response_len}, {"cache_len", t.reward.cache_len}};
  tr["model"] = {{"vocab_size", t.model.vocab_size}, {"d_model", t.model.d_model},
                 {"n_layers", t.model.n_layers},     {"n_heads", t.model.n_heads},
                 {"context_len", t.model.context_len}, {"seed", t.model.seed}};
  tr["warm_start"] = {{"clean_steps", t.warm_start.clean_steps},
                      {"noisy_steps", t.warm_start.noisy_steps},
                      {"batch_size", t.warm_start.batch_size},
                      {"learning_rate", t.warm_start.learning_rate},
                      {"step_accuracy", t.warm_start.step_accuracy}};
  j["train"] = tr;
  j["analysis"] = {{"percentiles", cfg.analysis.percentiles},
                   {"histogram_bin_width", cfg.analysis.histogram_bin_width},
                   {"rho", cfg.analysis.rho},
                   {"top_k", cfg.analysis.top_k},
                   {"min_freq", cfg.analysis.min_freq}};
  return j.dump(2) + "\n";
}

ExperimentConfig load_experiment_config(const std::string& path) { return parse_experiment_config(read_file(path)); }

std::string resolve_run_dir(const ExperimentConfig& cfg) {
  const char* env = std::getenv(kOutputRootEnv);
  const std::string root = env != nullptr && *env != '\0' ? std::string(env) : cfg.output_dir;
  return (std::filesystem::path(root) / cfg.run_name).string();
}

std::string serialize_trace(const TokenTrace& trace) {
  std::string out;
  ordered_json h;
  h["format"] = "rlvr-trace";
  h["version"] = kTraceFormatVersion;
  h["source_checkpoint"] = trace.source_checkpoint;
  out += h.dump() + "\n";
  for (const auto& [id, tokens] : trace.queries) {
    ordered_json q;
    q["type"] = "query";
    q["query_id"] = id;
    q["tokens"] = tokens;
    out += q.dump() + "\n";
  }
  for (const TokenRecord& r : trace.records) {
    ordered_json t;
    t["type"] = "token";
    t["query_id"] = r.query_id;
    t["position"] = r.position;
    t["token_id"] = r.token_id;
    t["entropy"] = r.entropy;
    t["logprob_old"] = r.logprob_old;
    t["source_checkpoint"] = r.source_checkpoint;
    out += t.dump() + "\n";
  }
  return out;
}

TokenTrace parse_trace(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::kParse, "trace line 1: missing header");
  if (text.back() != '\n') {
    throw Error(ErrorKind::kParse, "trace line " + std::to_string(lines.size()) + ": truncated record");
  }
  TokenTrace trace;
  const json header = parse_line(lines[0], 1, "trace");
  check_header(header, "rlvr-trace", kTraceFormatVersion, "trace");
  try {
    trace.source_checkpoint = header.at("source_checkpoint").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("trace line 1: ") + e.what());
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const json j = parse_line(lines[i], line_no, "trace");
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "query") {
        trace.queries[j.at("query_id").get<std::int64_t>()] = j.at("tokens").get<std::vector<int>>();
      } else if (type == "token") {
        TokenRecord r;
        r.query_id = j.at("query_id").get<std::int64_t>();
        r.position = j.at("position").get<std::int64_t>();
        r.token_id = j.at("token_id").get<int>();
        r.entropy = j.at("entropy").get<double>();
        r.logprob_old = j.at("logprob_old").get<double>();
        r.source_checkpoint = j.at("source_checkpoint").get<std::uint64_t>();
        trace.records.push_back(r);
      } else {
        throw Error(ErrorKind::kParse, "trace line " + std::to_string(line_no) + ": unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

void write_trace(const std::string& path, const TokenTrace& trace) { write_file_atomic(path, serialize_trace(trace)); }

TokenTrace read_trace(const std::string& path) { return parse_trace(read_file(path)); }

std::string serialize_log(std::span<const TrainLogRecord> log) {
  std::string out;
  ordered_json h;
  h["format"] = "rlvr-log";
  h["version"] = kLogFormatVersion;
  out += h.dump() + "\n";
  for (const TrainLogRecord& r : log) {
    ordered_json j;
    j["step"] = r.step;
    j["train_accuracy"] = r.train_accuracy;
    j["mean_entropy"] = r.mean_entropy;
    j["mean_length"] = r.mean_length;
    j["objective"] = r.objective;
    j["mask_fraction"] = r.mask_fraction;
    j["checkpoint_tag"] = r.checkpoint_tag ? ordered_json(*r.checkpoint_tag) : ordered_json(nullptr);
    j["eval_accuracy"] = optional_number(r.eval_accuracy);
    j["eval_length"] = optional_number(r.eval_length);
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<TrainLogRecord> parse_log(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorKind::kParse, "log line 1: missing header");
  if (text.back() != '\n') {
    throw Error(ErrorKind::kParse, "log line " + std::to_string(lines.size()) + ": truncated record");
  }
  check_header(parse_line(lines[0], 1, "log"), "rlvr-log", kLogFormatVersion, "log");
  std::vector<TrainLogRecord> log;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const json j = parse_line(lines[i], line_no, "log");
    try {
      TrainLogRecord r;
      r.step = j.at("step").get<int>();
      r.train_accuracy = j.at("train_accuracy").get<double>();
      r.mean_entropy = j.at("mean_entropy").get<double>();
      r.mean_length = j.at("mean_length").get<double>();
      r.objective = j.at("objective").get<double>();
      r.mask_fraction = j.at("mask_fraction").get<double>();
      if (j.contains("checkpoint_tag") && !j["checkpoint_tag"].is_null()) {
        r.checkpoint_tag = j["checkpoint_tag"].get<std::uint64_t>();
      }
      if (j.contains("eval_accuracy") && !j["eval_accuracy"].is_null()) r.eval_accuracy = j["eval_accuracy"].get<double>();
      if (j.contains("eval_length") && !j["eval_length"].is_null()) r.eval_length = j["eval_length"].get<double>();
      if (!log.empty() && r.step <= log.back().step) {
        throw Error(ErrorKind::kParse, "log line " + std::to_string(line_no) + ": step index is not increasing");
      }
      log.push_back(r);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

void write_log(const std::string& path, std::span<const TrainLogRecord> log) {
  write_file_atomic(path, serialize_log(log));
}

std::vector<TrainLogRecord> read_log(const std::string& path) { return parse_log(read_file(path)); }

namespace {

ordered_json stat_json(std::span<const TokenStat> table) {
  ordered_json a = ordered_json::array();
  for (const auto& s : table) {
    a.push_back({{"token_id", s.token_id}, {"mean_entropy", s.mean_entropy}, {"frequency", s.frequency}});
  }
  return a;
}

std::vector<TokenStat> stat_from_json(const json& a) {
  std::vector<TokenStat> out;
  for (const auto& e : a) {
    out.push_back({e.at("token_id").get<int>(), e.at("mean_entropy").get<double>(), e.at("frequency").get<std::size_t>()});
  }
  return out;
}

}  // namespace

std::string serialize_analysis(const AnalysisReport& report) {
  ordered_json j;
  j["format"] = "rlvr-analysis";
  j["version"] = 1;
  if (report.histogram) {
    j["histogram"] = {{"lo", report.histogram->lo},
                      {"hi", report.histogram->hi},
                      {"counts", report.histogram->counts},
                      {"below", report.histogram->below},
                      {"above", report.histogram->above}};
  }
  ordered_json ps = ordered_json::array();
  for (const auto& p : report.percentile_series) {
    ps.push_back({{"checkpoint", p.checkpoint}, {"percentiles", p.percentiles}, {"values", p.values}});
  }
  j["percentile_series"] = ps;
  ordered_json ov = ordered_json::array();
  for (const auto& r : report.overlap) {
    ov.push_back({{"reference_checkpoint", r.reference_checkpoint},
                  {"compare_checkpoint", r.compare_checkpoint},
                  {"rho", r.rho},
                  {"overlap", r.overlap}});
  }
  j["overlap"] = ov;
  if (report.bin_change) {
    j["bin_change"] = {{"mean_change", report.bin_change->mean_change}, {"count", report.bin_change->count}};
  }
  j["top_tokens"] = stat_json(report.top_tokens);
  j["bottom_tokens"] = stat_json(report.bottom_tokens);
  return j.dump(2) + "\n";
}

AnalysisReport parse_analysis(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("analysis: ") + e.what());
  }
  check_header(j, "rlvr-analysis", 1, "analysis");
  AnalysisReport r;
  try {
    if (j.contains("histogram")) {
      const json& h = j["histogram"];
      Histogram hist;
      hist.lo = h.at("lo").get<double>();
      hist.hi = h.at("hi").get<double>();
      hist.counts = h.at("counts").get<std::vector<std::size_t>>();
      hist.below = h.at("below").get<std::size_t>();
      hist.above = h.at("above").get<std::size_t>();
      r.histogram = hist;
    }
    for (const auto& p : j.at("percentile_series")) {
      r.percentile_series.push_back({p.at("checkpoint").get<std::uint64_t>(),
                                     p.at("percentiles").get<std::vector<double>>(),
                                     p.at("values").get<std::vector<double>>()});
    }
    for (const auto& o : j.at("overlap")) {
      r.overlap.push_back({o.at("reference_checkpoint").get<std::uint64_t>(),
                           o.at("compare_checkpoint").get<std::uint64_t>(), o.at("rho").get<double>(),
                           o.at("overlap").get<double>()});
    }
    if (j.contains("bin_change")) {
      BinChange b;
      b.mean_change = j["bin_change"].at("mean_change").get<std::array<double, kChangeBins>>();
      b.count = j["bin_change"].at("count").get<std::array<std::size_t, kChangeBins>>();
      r.bin_change = b;
    }
    r.top_tokens = stat_from_json(j.at("top_tokens"));
    r.bottom_tokens = stat_from_json(j.at("bottom_tokens"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("analysis: ") + e.what());
  }
  return r;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::string> log_series_names() {
  return {"train_accuracy", "mean_entropy", "mean_length", "objective", "mask_fraction", "eval_accuracy", "eval_length"};
}

std::string log_series_csv(std::span<const TrainLogRecord> log, const std::string& series) {
  std::string out = std::string(kSeriesHeader) + "\n";
  for (const TrainLogRecord& r : log) {
    std::optional<double> v;
    if (series == "train_accuracy") v = r.train_accuracy;
    else if (series == "mean_entropy") v = r.mean_entropy;
    else if (series == "mean_length") v = r.mean_length;
    else if (series == "objective") v = r.objective;
    else if (series == "mask_fraction") v = r.mask_fraction;
    else if (series == "eval_accuracy") v = r.eval_accuracy;
    else if (series == "eval_length") v = r.eval_length;
    else throw Error(ErrorKind::kInvalidInput, "unknown log series '" + series + "'");
    if (v) out += std::to_string(r.step) + "," + format_number(*v) + "," + series + "\n";
  }
  return out;
}

std::string percentile_series_csv(std::span<const PercentileSnapshot> series) {
  std::string out = std::string(kSeriesHeader) + "\n";
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      out += std::to_string(s.checkpoint) + "," + format_number(s.values[i]) + ",p" + format_number(s.percentiles[i]) + "\n";
    }
  }
  return out;
}

std::string bin_change_csv(const BinChange& change) {
  std::string out = "bin,lower_pct,upper_pct,mean_change,count\n";
  const double width = 100.0 / static_cast<double>(kChangeBins);
  for (std::size_t b = 0; b < kChangeBins; ++b) {
    out += std::to_string(b) + "," + format_number(width * static_cast<double>(b)) + "," +
           format_number(width * static_cast<double>(b + 1)) + "," + format_number(change.mean_change[b]) + "," +
           std::to_string(change.count[b]) + "\n";
  }
  return out;
}

std::string token_table_csv(std::span<const TokenStat> table) {
  std::string out = "rank,token_id,token,mean_entropy,frequency\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const int id = table[i].token_id;
    out += std::to_string(i + 1) + "," + std::to_string(id) + "," + csv_field(tok::render(std::span<const int>(&id, 1))) +
           "," + format_number(table[i].mean_entropy) + "," + std::to_string(table[i].frequency) + "\n";
  }
  return out;
}

std::string overlap_csv(std::span<const OverlapRow> rows) {
  std::string out = "reference_checkpoint,compare_checkpoint,rho,overlap\n";
  for (const auto& r : rows) {
    out += std::to_string(r.reference_checkpoint) + "," + std::to_string(r.compare_checkpoint) + "," +
           format_number(r.rho) + "," + format_number(r.overlap) + "\n";
  }
  return out;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "lower,upper,count\n";
  const double width = h.counts.empty() ? 0.0 : (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out += format_number(h.lo + width * static_cast<double>(b)) + "," +
           format_number(h.lo + width * static_cast<double>(b + 1)) + "," + std::to_string(h.counts[b]) + "\n";
  }
  return out;
}

std::vector<std::string> export_report(const std::string& dir, std::span<const TrainLogRecord> log,
                                       const AnalysisReport& analysis) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& s : log_series_names()) files.emplace_back("series_" + s + ".csv", log_series_csv(log, s));
  files.emplace_back("entropy_percentiles.csv", percentile_series_csv(analysis.percentile_series));
  files.emplace_back("overlap.csv", overlap_csv(analysis.overlap));
  files.emplace_back("top_tokens.csv", token_table_csv(analysis.top_tokens));
  files.emplace_back("bottom_tokens.csv", token_table_csv(analysis.bottom_tokens));
  if (analysis.bin_change) files.emplace_back("bin_change.csv", bin_change_csv(*analysis.bin_change));
  if (analysis.histogram) files.emplace_back("entropy_histogram.csv", histogram_csv(*analysis.histogram));
  std::vector<std::string> names;
  for (const auto& [name, body] : files) {
    write_file_atomic((std::filesystem::path(dir) / name).string(), body);
    names.push_back(name);
  }
  return names;
}

}  // namespace rlvr
