#include "rlvr/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "rlvr/entropy.hpp"
#include "rlvr/error.hpp"

namespace rlvr {

const char* to_string(MaskSide side) { return side == MaskSide::kHighest ? "top" : "bottom"; }

MaskSide parse_mask_side(const std::string& name) {
  if (name == "top") return MaskSide::kHighest;
  if (name == "bottom") return MaskSide::kLowest;
  throw Error(ErrorKind::kConfig, "mask_side must be 'top' or 'bottom', got '" + name + "'");
}

void RLConfig::validate() const {
  if (!(eps_low > 0.0) || !(eps_high > 0.0)) throw Error(ErrorKind::kConfig, "clip epsilons must be positive");
  if (!(rho > 0.0 && rho <= 1.0)) throw Error(ErrorKind::kConfig, "rho must lie in (0, 1]");
  if (group_size < 2) throw Error(ErrorKind::kConfig, "group_size must be >= 2");
}

std::size_t RolloutGroup::correct_count() const {
  std::size_t n = 0;
  for (const auto& r : rollouts) n += r.outcome > 0.5 ? 1 : 0;
  return n;
}

std::vector<double> importance_ratio(std::span<const double> logp_new, std::span<const double> logp_old) {
  if (logp_new.size() != logp_old.size()) {
    throw Error(ErrorKind::kAlignment, "ratio of " + std::to_string(logp_new.size()) + " new vs " +
                                           std::to_string(logp_old.size()) + " old log-probs");
  }
  std::vector<double> r(logp_new.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!std::isfinite(logp_new[i]) || !std::isfinite(logp_old[i])) {
      throw Error(ErrorKind::kInvalidInput, "non-finite log-probability");
    }
    r[i] = std::exp(logp_new[i] - logp_old[i]);
  }
  return r;
}

std::vector<double> grpo_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw Error(ErrorKind::kConfig, "group needs at least 2 rewards");
  const double g = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= kPopulationStd ? g : g - 1.0;
  const double sd = std::sqrt(var);
  if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
    throw Error(ErrorKind::kDegenerateGroup, "all rewards in the group are equal");
  }
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

std::vector<RolloutGroup> dynamic_sampling_filter(std::vector<RolloutGroup> groups) {
  std::vector<RolloutGroup> kept;
  for (auto& g : groups) {
    const std::size_t c = g.correct_count();
    if (c > 0 && c < g.rollouts.size()) kept.push_back(std::move(g));
  }
  return kept;
}

double clipped_token_objective(double ratio, double advantage, const RLConfig& cfg) {
  const double clipped = std::clamp(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
  return std::min(ratio * advantage, clipped * advantage);
}

std::vector<double> entropy_mask(std::span<const double> entropies, const RLConfig& cfg) {
  if (entropies.empty()) throw Error(ErrorKind::kEmptyBatch, "entropy mask over empty micro-batch");
  std::vector<double> mask(entropies.size(), 1.0);
  if (!cfg.use_entropy_mask) return mask;
  if (cfg.mask_side == MaskSide::kHighest) {
    const double tau = batch_entropy_threshold(entropies, cfg.rho);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = entropies[i] >= tau ? 1.0 : 0.0;
  } else {
    const double tau = batch_low_entropy_threshold(entropies, cfg.rho);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = entropies[i] <= tau ? 1.0 : 0.0;
  }
  return mask;
}

graph::Var dapo_batch_objective(std::span<const ResponseTerms> responses, std::span<const double> mask,
                                const RLConfig& cfg) {
  using namespace graph;
  if (responses.empty()) throw Error(ErrorKind::kEmptyBatch, "objective over no responses");
  std::size_t total = 0;
  for (const auto& r : responses) {
    const std::size_t n = r.logp_new.shape().rows;
    if (r.logp_new.shape().cols != 1 || r.logp_old.size() != n || r.advantages.size() != n) {
      throw Error(ErrorKind::kAlignment, "response terms disagree on token count");
    }
    total += n;
  }
  if (mask.size() != total) {
    throw Error(ErrorKind::kAlignment, "mask has " + std::to_string(mask.size()) + " entries for " +
                                           std::to_string(total) + " tokens");
  }
  if (total == 0) throw Error(ErrorKind::kEmptyBatch, "objective over zero tokens");
  Tape& tape = *responses.front().logp_new.tape();
  Var acc;
  std::size_t offset = 0;
  for (const auto& r : responses) {
    const std::size_t n = r.logp_new.shape().rows;
    Var old_lp = tape.constant({n, 1}, r.logp_old);
    Var adv = tape.constant({n, 1}, r.advantages);
    Var ratio = graph::exp(sub(r.logp_new, old_lp));
    Var unclipped = mul(ratio, adv);
    Var clipped = mul(clip(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high), adv);
    Var term = minimum(unclipped, clipped);
    std::vector<double> m(mask.begin() + static_cast<std::ptrdiff_t>(offset),
                          mask.begin() + static_cast<std::ptrdiff_t>(offset + n));
    Var s = sum(select_by_mask(term, std::move(m)));
    acc = acc.valid() ? add(acc, s) : s;
    offset += n;
  }
  return scale(acc, 1.0 / static_cast<double>(total));
}

void require_non_degenerate(std::span<const RolloutGroup> groups) {
  for (const auto& g : groups) {
    const std::size_t c = g.correct_count();
    if (c == 0 || c == g.rollouts.size()) {
      throw Error(ErrorKind::kDegenerateGroup,
                  "group for query " + std::to_string(g.query_id) + " has uniform outcomes (" +
                      std::to_string(c) + "/" + std::to_string(g.rollouts.size()) + " correct)");
    }
  }
}

}  // namespace rlvr
