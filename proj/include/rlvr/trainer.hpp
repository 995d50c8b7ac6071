#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlvr/decoder.hpp"
#include "rlvr/entropy.hpp"
#include "rlvr/model.hpp"
#include "rlvr/objectives.hpp"
#include "rlvr/tasks.hpp"

namespace rlvr {

enum class OptimizerKind { kSgd, kAdam };

const char* to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

// Supervised warm start that produces the base policy RL training starts
// from: clean_steps on exact demonstrations, then noisy_steps on
// demonstrations whose intermediate results are right with probability
// step_accuracy. Zero steps leave the random init untouched.
struct WarmStartConfig {
  int clean_steps = 700;
  int noisy_steps = 200;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double step_accuracy = 0.4;

  void validate() const;
};

struct TrainConfig {
  RLConfig rl;
  DecodeConfig decode;
  RewardConfig reward;
  ModelConfig model;
  WarmStartConfig warm_start;
  TaskFamily task_family = TaskFamily::kModularChain;
  int difficulty = 2;
  int train_batch_queries = 64;
  int mini_batch_queries = 8;
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int max_steps = 200;
  int eval_every = 25;
  int eval_samples_per_task = 16;
  int eval_tasks = 128;  // periodic evaluation is skipped when 0
  std::uint64_t eval_seed = 0xE7A1;
  double oversample_cap = 4.0;  // max queries drawn per batch, as a multiple of train_batch_queries
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainLogRecord {
  int step = 0;
  double train_accuracy = 0.0;  // over every rollout sampled for the batch
  double mean_entropy = 0.0;    // overall entropy of those rollouts' tokens
  double mean_length = 0.0;
  double objective = 0.0;
  double mask_fraction = 0.0;
  std::optional<std::uint64_t> checkpoint_tag;
  std::optional<double> eval_accuracy;
  std::optional<double> eval_length;

  bool operator==(const TrainLogRecord&) const = default;
};

struct Checkpoint {
  int step = 0;
  PolicyParams params;
};

struct TrainResult {
  PolicyParams params;
  std::vector<TrainLogRecord> log;
  std::vector<Checkpoint> checkpoints;  // step 0 plus every eval_every steps
  TokenTrace last_batch_trace;          // rollouts of the final batch, as sampled
};

// Constant-rate parameter updates in the ascent direction.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, const PolicyParams& params);

  void ascend(PolicyParams& params, const ParamGrads& grads);

 private:
  OptimizerKind kind_;
  double lr_;
  std::int64_t t_ = 0;
  ParamGrads m_;
  ParamGrads v_;
};

// Initializes from cfg.model and applies the warm start.
PolicyParams make_base_policy(const TrainConfig& cfg);

// Runs only the warm-start phase on params. Returns the mean per-token
// cross-entropy of the final warm-start batch (0 when steps = 0).
double warm_start(PolicyParams& params, const TrainConfig& cfg);

std::vector<Task> make_eval_set(const TrainConfig& cfg);

using LogCallback = std::function<void(const TrainLogRecord&)>;

TrainResult run_training(const TrainConfig& cfg, const PolicyParams& initial, const LogCallback& on_record = {});
TrainResult run_training(const TrainConfig& cfg, const LogCallback& on_record = {});

struct EvalResult {
  double accuracy = 0.0;
  double mean_length = 0.0;
  std::size_t rollouts = 0;
};

// n sampled responses per task; stream (decode.seed, task index, sample).
EvalResult evaluate(const PolicyParams& params, std::span<const Task> tasks, int n, const DecodeConfig& decode);

// Token trace of rollouts as sampled. Trace query ids are the rollouts'
// positions in the span, so several samples of one task stay distinct.
// queries is keyed by Rollout::query_id.
TokenTrace make_trace(std::span<const Rollout> rollouts, const std::map<std::int64_t, std::vector<int>>& queries,
                      std::uint64_t source_checkpoint);

}  // namespace rlvr
