#include "rlvr/trainer.hpp"

#include <cmath>

#include "rlvr/error.hpp"
#include "rlvr/rng.hpp"

namespace rlvr {

namespace {

constexpr std::uint64_t kQueryStream = 0x7A5C;
constexpr std::uint64_t kRolloutStream = 0xDEC0;
constexpr std::uint64_t kWarmStartStream = 0x5EED;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

const char* to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw Error(ErrorKind::kConfig, "optimizer must be 'sgd' or 'adam', got '" + name + "'");
}

void WarmStartConfig::validate() const {
  if (clean_steps < 0 || noisy_steps < 0) throw Error(ErrorKind::kConfig, "warm_start step counts must be >= 0");
  if (batch_size <= 0) throw Error(ErrorKind::kConfig, "warm_start.batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw Error(ErrorKind::kConfig, "warm_start.learning_rate must be >= 0");
  if (!(step_accuracy >= 0.0 && step_accuracy <= 1.0)) {
    throw Error(ErrorKind::kConfig, "warm_start.step_accuracy must lie in [0, 1]");
  }
}

void TrainConfig::validate() const {
  rl.validate();
  decode.validate();
  reward.validate();
  model.validate();
  warm_start.validate();
  if (decode.mode == DecodeMode::kGreedy) throw Error(ErrorKind::kConfig, "training rollouts cannot be greedy");
  if (difficulty < 1) throw Error(ErrorKind::kConfig, "difficulty must be >= 1");
  if (train_batch_queries <= 0 || mini_batch_queries <= 0) {
    throw Error(ErrorKind::kConfig, "batch sizes must be positive");
  }
  if (train_batch_queries % mini_batch_queries != 0) {
    throw Error(ErrorKind::kConfig, "mini_batch_queries (" + std::to_string(mini_batch_queries) +
                                        ") must divide train_batch_queries (" +
                                        std::to_string(train_batch_queries) + ")");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::kConfig, "learning_rate must be finite and >= 0");
  }
  if (max_steps < 0) throw Error(ErrorKind::kConfig, "max_steps must be >= 0");
  if (eval_every <= 0) throw Error(ErrorKind::kConfig, "eval_every must be positive");
  if (eval_samples_per_task <= 0) throw Error(ErrorKind::kConfig, "eval_samples_per_task must be positive");
  if (eval_tasks < 0) throw Error(ErrorKind::kConfig, "eval_tasks must be >= 0");
  if (!(oversample_cap >= 1.0)) throw Error(ErrorKind::kConfig, "oversample_cap must be >= 1");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, const PolicyParams& params)
    : kind_(kind), lr_(learning_rate) {
  if (kind_ == OptimizerKind::kAdam) {
    for (const auto& t : params.tensors) {
      m_.emplace_back(t.values.size(), 0.0);
      v_.emplace_back(t.values.size(), 0.0);
    }
  }
}

void Optimizer::ascend(PolicyParams& params, const ParamGrads& grads) {
  if (grads.size() != params.tensors.size()) throw Error(ErrorKind::kShape, "gradient/parameter count mismatch");
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& w = params.tensors[i].values;
      for (std::size_t j = 0; j < w.size(); ++j) w[j] += lr_ * grads[i][j];
    }
    return;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& w = params.tensors[i].values;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j];
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
      w[j] += lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + kAdamEps);
    }
  }
}

double warm_start(PolicyParams& params, const TrainConfig& cfg) {
  const WarmStartConfig& ws = cfg.warm_start;
  ws.validate();
  const int total_steps = ws.clean_steps + ws.noisy_steps;
  if (total_steps == 0) return 0.0;
  Optimizer opt(OptimizerKind::kAdam, ws.learning_rate, params);
  double last_loss = 0.0;
  for (int s = 0; s < total_steps; ++s) {
    const double step_accuracy = s < ws.clean_steps ? 1.0 : ws.step_accuracy;
    graph::Tape tape;
    ModelGraph model(tape, params, true);
    graph::Var total;
    std::size_t tokens = 0;
    for (int b = 0; b < ws.batch_size; ++b) {
      const std::uint64_t seed = derive_seed({cfg.seed, kWarmStartStream, static_cast<std::uint64_t>(s),
                                              static_cast<std::uint64_t>(b)});
      const Task task = generate_task(cfg.task_family, cfg.difficulty, seed);
      Rng rng(derive_seed({seed, kWarmStartStream}));
      const std::vector<int> demo = noisy_solution(task, step_accuracy, rng);
      graph::Var lp = graph::sum(model.score(task.query, demo).log_probs);
      total = total.valid() ? graph::add(total, lp) : lp;
      tokens += demo.size();
    }
    graph::Var objective = graph::scale(total, 1.0 / static_cast<double>(tokens));
    tape.backward(objective);
    opt.ascend(params, model.gradients());
    last_loss = -objective.item();
  }
  return last_loss;
}

PolicyParams make_base_policy(const TrainConfig& cfg) {
  PolicyParams params = init_params(cfg.model);
  warm_start(params, cfg);
  return params;
}

std::vector<Task> make_eval_set(const TrainConfig& cfg) {
  return make_task_set(cfg.task_family, cfg.difficulty, static_cast<std::size_t>(cfg.eval_tasks), cfg.eval_seed);
}

namespace {

DecodeConfig eval_decode_config(const TrainConfig& cfg) {
  DecodeConfig d;
  d.temperature = 1.0;
  d.max_new_tokens = cfg.decode.max_new_tokens;
  d.eos_token = cfg.decode.eos_token;
  d.seed = cfg.eval_seed;
  return d;
}

}  // namespace

TokenTrace make_trace(std::span<const Rollout> rollouts, const std::map<std::int64_t, std::vector<int>>& queries,
                      std::uint64_t source_checkpoint) {
  TokenTrace trace;
  trace.source_checkpoint = source_checkpoint;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const Rollout& r = rollouts[i];
    auto it = queries.find(r.query_id);
    if (it == queries.end()) {
      throw Error(ErrorKind::kInvalidInput, "no query tokens for query " + std::to_string(r.query_id));
    }
    const auto id = static_cast<std::int64_t>(i);
    trace.queries[id] = it->second;
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      trace.records.push_back(
          {id, static_cast<std::int64_t>(t + 1), r.tokens[t], r.entropies[t], r.logprobs[t], source_checkpoint});
    }
  }
  return trace;
}

TrainResult run_training(const TrainConfig& cfg, const LogCallback& on_record) {
  return run_training(cfg, make_base_policy(cfg), on_record);
}

TrainResult run_training(const TrainConfig& cfg, const PolicyParams& initial, const LogCallback& on_record) {
  cfg.validate();
  if (!(initial.config == cfg.model)) throw Error(ErrorKind::kConfig, "initial params do not match model config");
  TrainResult res;
  res.params = initial;
  PolicyParams& params = res.params;
  res.checkpoints.push_back({0, params});
  if (cfg.max_steps == 0) return res;

  Optimizer opt(cfg.optimizer, cfg.learning_rate, params);
  const std::vector<Task> eval_set = make_eval_set(cfg);
  const DecodeConfig eval_decode = eval_decode_config(cfg);
  DecodeConfig rollout_decode = cfg.decode;
  rollout_decode.seed = derive_seed({cfg.seed, kRolloutStream, cfg.decode.seed});

  const auto batch_queries = static_cast<std::size_t>(cfg.train_batch_queries);
  const auto mini_queries = static_cast<std::size_t>(cfg.mini_batch_queries);
  const auto cap = static_cast<std::int64_t>(std::ceil(cfg.oversample_cap * cfg.train_batch_queries));
  std::int64_t next_query = 0;
  int step = 0;

  while (step < cfg.max_steps) {
    // Rollouts come from the snapshot taken at batch start.
    const PolicyParams snapshot = params;
    std::vector<RolloutGroup> batch;
    std::size_t sampled = 0, correct = 0, tokens = 0;
    double entropy_sum = 0.0;
    std::int64_t drawn = 0;
    while (batch.size() < batch_queries) {
      if (drawn >= cap) {
        const double rate = sampled == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(sampled);
        throw Error(ErrorKind::kOversampleCapExhausted,
                    "dynamic sampling collected " + std::to_string(batch.size()) + " of " +
                        std::to_string(batch_queries) + " groups after " + std::to_string(drawn) +
                        " queries; correct-rate " + std::to_string(rate));
      }
      const std::int64_t qid = next_query++;
      ++drawn;
      RolloutGroup group;
      group.query_id = qid;
      group.task = generate_task(cfg.task_family, cfg.difficulty,
                                 derive_seed({cfg.seed, kQueryStream, static_cast<std::uint64_t>(qid)}));
      for (int i = 0; i < cfg.rl.group_size; ++i) {
        Rollout r = sample_response(snapshot, group.task.query, rollout_decode, {qid, i});
        r.outcome = outcome_reward(r.tokens, group.task);
        r.reward = overlong_shaped_reward(r.outcome, static_cast<int>(r.length()), cfg.reward);
        ++sampled;
        correct += r.outcome > 0.5 ? 1 : 0;
        tokens += r.length();
        for (double h : r.entropies) entropy_sum += h;
        group.rewards.push_back(r.reward);
        group.rollouts.push_back(std::move(r));
      }
      std::vector<RolloutGroup> one;
      one.push_back(std::move(group));
      for (auto& kept : dynamic_sampling_filter(std::move(one))) batch.push_back(std::move(kept));
    }
    require_non_degenerate(batch);
    for (auto& g : batch) g.advantages = grpo_advantages(g.rewards);

    std::vector<Rollout> batch_rollouts;
    std::map<std::int64_t, std::vector<int>> batch_queries_map;
    for (const auto& g : batch) {
      batch_queries_map[g.query_id] = g.task.query;
      batch_rollouts.insert(batch_rollouts.end(), g.rollouts.begin(), g.rollouts.end());
    }
    res.last_batch_trace = make_trace(batch_rollouts, batch_queries_map, snapshot.version_tag);

    const double batch_accuracy = static_cast<double>(correct) / static_cast<double>(sampled);
    const double batch_entropy = tokens == 0 ? 0.0 : entropy_sum / static_cast<double>(tokens);
    const double batch_length = static_cast<double>(tokens) / static_cast<double>(sampled);

    for (std::size_t start = 0; start < batch_queries && step < cfg.max_steps; start += mini_queries) {
      graph::Tape tape;
      ModelGraph model(tape, params, true);
      std::vector<ResponseTerms> terms;
      std::vector<double> entropies;
      for (std::size_t q = start; q < start + mini_queries; ++q) {
        const RolloutGroup& g = batch[q];
        for (std::size_t j = 0; j < g.rollouts.size(); ++j) {
          const Rollout& r = g.rollouts[j];
          ModelGraph::Scored sc = model.score(g.task.query, r.tokens);
          const auto z = sc.logits.value();
          const std::size_t vocab = sc.logits.shape().cols;
          // Mask entropies come from the current policy, not the rollout policy.
          for (std::size_t t = 0; t < r.tokens.size(); ++t) entropies.push_back(entropy_of_logits(z.subspan(t * vocab, vocab)));
          terms.push_back({sc.log_probs, r.logprobs, std::vector<double>(r.tokens.size(), g.advantages[j])});
        }
      }
      const std::vector<double> mask = entropy_mask(entropies, cfg.rl);
      graph::Var objective = dapo_batch_objective(terms, mask, cfg.rl);
      tape.backward(objective);
      opt.ascend(params, model.gradients());
      ++step;
      params.version_tag = static_cast<std::uint64_t>(step);

      TrainLogRecord rec;
      rec.step = step;
      rec.train_accuracy = batch_accuracy;
      rec.mean_entropy = batch_entropy;
      rec.mean_length = batch_length;
      rec.objective = objective.item();
      double kept = 0.0;
      for (double m : mask) kept += m;
      rec.mask_fraction = kept / static_cast<double>(mask.size());
      if (step % cfg.eval_every == 0) {
        rec.checkpoint_tag = params.version_tag;
        res.checkpoints.push_back({step, params});
        if (!eval_set.empty()) {
          const EvalResult ev = evaluate(params, eval_set, cfg.eval_samples_per_task, eval_decode);
          rec.eval_accuracy = ev.accuracy;
          rec.eval_length = ev.mean_length;
        }
      }
      if (on_record) on_record(rec);
      res.log.push_back(rec);
    }
  }
  return res;
}

EvalResult evaluate(const PolicyParams& params, std::span<const Task> tasks, int n, const DecodeConfig& decode) {
  if (tasks.empty()) throw Error(ErrorKind::kConfig, "empty evaluation set");
  if (n < 1) throw Error(ErrorKind::kConfig, "evaluation needs n >= 1 samples per task");
  EvalResult out;
  double correct = 0.0, length = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (int s = 0; s < n; ++s) {
      Rollout r = sample_response(params, tasks[i].query, decode, {static_cast<std::int64_t>(i), s});
      correct += outcome_reward(r.tokens, tasks[i]);
      length += static_cast<double>(r.length());
      ++out.rollouts;
    }
  }
  out.accuracy = correct / static_cast<double>(out.rollouts);
  out.mean_length = length / static_cast<double>(out.rollouts);
  return out;
}

}  // namespace rlvr
