#include <sys/wait.h>

#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "rlvr/io.hpp"

using namespace rlvr;
using fixture::slurp;
using fixture::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run_cli(const std::string& args, const TempDir& dir) {
  const std::string err_path = dir.file("stderr.txt");
  const std::string cmd = std::string(RLVR_CLI_PATH) + " " + args + " 2>" + err_path;
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_path);
  return r;
}

std::string write_config(const TempDir& dir, const std::string& run_name) {
  ExperimentConfig c;
  c.train = fixture::tiny_train_config();
  c.output_dir = (dir.path() / "runs").string();
  c.run_name = run_name;
  c.analysis.min_freq = 2;
  const std::string path = dir.file(run_name + ".json");
  std::ofstream(path) << dump_experiment_config(c);
  return path;
}

// Contents of every regular file under a directory, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path().string());
  }
  return files;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  TempDir dir("cli_usage");
  Run r = run_cli("juggle", dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("train") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run_cli("", dir).code == 2);
  CHECK(run_cli("train", dir).code == 2);

  std::ofstream(dir.file("bad.json")) << R"({"train": {"max_stepz": 3}})";
  r = run_cli("train --config " + dir.file("bad.json"), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("max_stepz") != std::string::npos);
}

TEST_CASE("end-to-end: train, eval, decode, analyze, report") {
  TempDir dir("cli_e2e");
  const std::string cfg = write_config(dir, "tiny");
  Run r = run_cli("train --quiet --config " + cfg, dir);
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(r.out);
  CHECK(summary["steps"] == 6);
  const fs::path run = dir.path() / "runs" / "tiny";
  for (const char* f : {"config.json", "log.jsonl", "trace.jsonl", "final.ckpt", "ckpt_step_000000.bin",
                        "ckpt_step_000002.bin", "ckpt_step_000006.bin"}) {
    CHECK_MESSAGE(fs::exists(run / f), f);
  }
  CHECK(read_log((run / "log.jsonl").string()).size() == 6);
  CHECK(parse_experiment_config(slurp((run / "config.json").string())).run_name == "tiny");

  // Same run name again: refuses to overwrite.
  CHECK(run_cli("train --quiet --config " + cfg, dir).code == 2);

  const std::string final_ckpt = (run / "final.ckpt").string();
  const std::string base_ckpt = (run / "ckpt_step_000000.bin").string();
  const auto before = snapshot(run);

  r = run_cli("eval --checkpoint " + final_ckpt + " --config " + cfg, dir);
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["rollouts"] == 6 * 4);
  r = run_cli("eval --checkpoint " + final_ckpt + " --family list-max --difficulty 2 --tasks 5 --samples 3", dir);
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["rollouts"] == 15);

  const std::string trace = dir.file("decode.jsonl");
  r = run_cli("decode --checkpoint " + final_ckpt + " --out " + trace +
                  " --family list-max --difficulty 2 --tasks 8 --samples 2 --max-new 24",
              dir);
  REQUIRE(r.code == 0);
  const TokenTrace t = read_trace(trace);
  CHECK(t.queries.size() == 16);
  CHECK(t.source_checkpoint == 6);
  CHECK(run_cli("decode --checkpoint " + final_ckpt + " --out " + dir.file("d2.jsonl") + " --mode dual", dir).code == 2);
  r = run_cli("decode --checkpoint " + final_ckpt + " --out " + dir.file("d3.jsonl") +
                  " --family list-max --difficulty 2 --mode dual --t-high 2 --t-low 1 --h-threshold 0.3",
              dir);
  CHECK(r.code == 0);

  r = run_cli("analyze --trace " + trace + " --out " + dir.file("an") + " --overlap-against " + base_ckpt + "," +
                  final_ckpt + " --change-against " + base_ckpt + " --rho 0.2 --min-freq 2",
              dir);
  REQUIRE(r.code == 0);
  CHECK(r.out.substr(0, r.out.find('\n')) == "reference_checkpoint,compare_checkpoint,rho,overlap");
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 3);
  CHECK(r.out.find("\n6,6,0.2,1\n") != std::string::npos);
  const AnalysisReport an = parse_analysis(slurp(dir.file("an/analysis.json")));
  CHECK(an.overlap.size() == 2);
  CHECK(an.bin_change.has_value());
  CHECK(an.percentile_series.size() == 3);

  r = run_cli("report --log " + (run / "log.jsonl").string() + " --analysis " + dir.file("an/analysis.json") +
                  " --out " + dir.file("csv"),
              dir);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir.file("csv/series_train_accuracy.csv")));
  CHECK(fs::exists(dir.file("csv/bin_change.csv")));
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == static_cast<long>(log_series_names().size() + 6));

  // None of the read-only subcommands touched the run directory.
  CHECK(snapshot(run) == before);
}

TEST_CASE("runtime failures exit with 1") {
  TempDir dir("cli_runtime");
  std::ofstream(dir.file("junk.ckpt")) << "not a checkpoint";
  Run r = run_cli("eval --checkpoint " + dir.file("junk.ckpt"), dir);
  CHECK(r.code == 1);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("output root override redirects runs") {
  TempDir dir("cli_env");
  const std::string cfg = write_config(dir, "envrun");
  const std::string root = dir.file("elsewhere");
  Run r = run_cli("train --quiet --config " + cfg, dir);
  REQUIRE(r.code == 0);
  const std::string cmd_prefix = std::string(kOutputRootEnv) + "=" + root + " ";
  const std::string err = dir.file("err2.txt");
  const int status = std::system((cmd_prefix + RLVR_CLI_PATH + " train --quiet --config " + cfg + " >/dev/null 2>" + err).c_str());
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(fs::path(root) / "envrun" / "final.ckpt"));
  // Same config, same bytes, wherever it was written.
  const auto a = snapshot(dir.path() / "runs" / "envrun");
  const auto b = snapshot(fs::path(root) / "envrun");
  CHECK(a == b);
}
