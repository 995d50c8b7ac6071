#pragma once

// Small shared helpers for the test binaries.

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <unistd.h>

#include "doctest.h"
#include "rlvr/error.hpp"
#include "rlvr/trainer.hpp"

namespace fixture {

inline rlvr::ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const rlvr::Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return rlvr::ErrorKind::kInvalidInput;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rlvr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// A configuration that trains in well under a second: list-max with two
// values on a one-layer model, briefly warm-started so rollout groups have
// mixed outcomes.
inline rlvr::TrainConfig tiny_train_config() {
  rlvr::TrainConfig c;
  c.model.d_model = 16;
  c.model.n_layers = 1;
  c.model.n_heads = 2;
  c.model.context_len = 48;
  c.task_family = rlvr::TaskFamily::kListMax;
  c.difficulty = 2;
  c.warm_start.clean_steps = 50;
  c.warm_start.noisy_steps = 0;
  c.warm_start.batch_size = 16;
  c.warm_start.learning_rate = 1e-2;
  c.decode.max_new_tokens = 24;
  c.rl.group_size = 4;
  c.train_batch_queries = 8;
  c.mini_batch_queries = 4;
  c.learning_rate = 1e-3;
  c.max_steps = 6;
  c.eval_every = 2;
  c.eval_tasks = 6;
  c.eval_samples_per_task = 4;
  c.seed = 5;
  return c;
}

}  // namespace fixture
