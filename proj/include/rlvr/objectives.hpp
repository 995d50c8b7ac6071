#pragma once

// Importance ratios, group-relative advantages, the dynamic-sampling filter,
// the asymmetric clipped token objective and the entropy-masked token-level
// batch objective.

#include <span>
#include <string>
#include <vector>

#include "rlvr/decoder.hpp"
#include "rlvr/graph.hpp"
#include "rlvr/tasks.hpp"

namespace rlvr {

// Which tokens contribute policy gradient when the entropy mask is on.
enum class MaskSide {
  kHighest,  // H >= tau over the top rho fraction
  kLowest,   // H <= tau over the bottom rho fraction (ablation)
};

const char* to_string(MaskSide side);
MaskSide parse_mask_side(const std::string& name);

struct RLConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;
  double rho = 0.2;
  int group_size = 8;
  bool use_entropy_mask = true;
  MaskSide mask_side = MaskSide::kHighest;

  void validate() const;
};

struct RolloutGroup {
  std::int64_t query_id = 0;
  Task task;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;     // shaped
  std::vector<double> advantages;  // one per rollout, broadcast to its tokens

  std::size_t correct_count() const;
};

// exp(logp_new - logp_old) elementwise. Throws kAlignment on length mismatch.
std::vector<double> importance_ratio(std::span<const double> logp_new, std::span<const double> logp_old);

// Advantages are normalized by the population standard deviation (divide by
// G, not G - 1).
inline constexpr bool kPopulationStd = true;

// (R_i - mean) / std. Throws kConfig for G < 2 and kDegenerateGroup when
// every reward is equal.
std::vector<double> grpo_advantages(std::span<const double> rewards);

// Keeps groups with 0 < correct_count < G, judged on binary outcomes.
std::vector<RolloutGroup> dynamic_sampling_filter(std::vector<RolloutGroup> groups);

// min(r A, clip(r, 1 - eps_low, 1 + eps_high) A).
double clipped_token_objective(double ratio, double advantage, const RLConfig& cfg);

// 0/1 indicator over the pooled micro-batch entropies. All ones when the
// mask is disabled.
std::vector<double> entropy_mask(std::span<const double> entropies, const RLConfig& cfg);

struct ResponseTerms {
  graph::Var logp_new;              // [L x 1] under the training policy
  std::vector<double> logp_old;     // L, rollout-policy log-probs
  std::vector<double> advantages;   // L, per-token advantage
};

// Sum over all tokens of mask * clipped objective, divided by the total
// token count (masked tokens stay in the denominator). mask is the pooled
// indicator, responses concatenated in order. Returns a scalar to maximize.
graph::Var dapo_batch_objective(std::span<const ResponseTerms> responses, std::span<const double> mask,
                                const RLConfig& cfg);

// Throws kDegenerateGroup if any group would have zero advantage variance.
void require_non_degenerate(std::span<const RolloutGroup> groups);

}  // namespace rlvr
