#include "rlvr/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "rlvr/entropy.hpp"
#include "rlvr/error.hpp"
#include "rlvr/rng.hpp"

namespace rlvr {

const char* to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kPlain: return "plain";
    case DecodeMode::kDual: return "dual";
    case DecodeMode::kGreedy: return "greedy";
  }
  return "unknown";
}

DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "plain") return DecodeMode::kPlain;
  if (name == "dual") return DecodeMode::kDual;
  if (name == "greedy") return DecodeMode::kGreedy;
  throw Error(ErrorKind::kConfig, "unknown decode mode '" + name + "'");
}

void DecodeConfig::validate() const {
  auto positive = [](double t) { return t > 0.0 && std::isfinite(t); };
  if (!positive(temperature)) throw Error(ErrorKind::kInvalidTemperature, "decode temperature must be positive");
  if (max_new_tokens <= 0) throw Error(ErrorKind::kConfig, "max_new_tokens must be positive");
  if (mode == DecodeMode::kDual) {
    if (!t_high || !t_low || !h_threshold) {
      throw Error(ErrorKind::kConfig, "dual decoding needs t_high, t_low and h_threshold");
    }
    if (!positive(*t_high) || !positive(*t_low)) {
      throw Error(ErrorKind::kInvalidTemperature, "dual temperatures must be positive");
    }
    if (!(*h_threshold >= 0.0)) throw Error(ErrorKind::kConfig, "h_threshold must be non-negative");
  }
}

DualDistribution dual_temperature_distribution(std::span<const double> logits, const DecodeConfig& cfg) {
  if (!cfg.t_high || !cfg.t_low || !cfg.h_threshold) {
    throw Error(ErrorKind::kConfig, "dual decoding needs t_high, t_low and h_threshold");
  }
  DualDistribution d;
  d.base_entropy = token_entropy(graph::softmax_with_temperature(logits, cfg.temperature));
  d.high_branch = d.base_entropy > *cfg.h_threshold;
  d.probs = graph::softmax_with_temperature(logits, d.high_branch ? *cfg.t_high : *cfg.t_low);
  return d;
}

namespace {

std::size_t draw(std::span<const double> probs, double u) {
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > 0.0) last_positive = j;
    cum += probs[j];
    if (u < cum) return j;
  }
  return last_positive;
}

}  // namespace

Rollout sample_response(const PolicyParams& params, std::span<const int> query, const DecodeConfig& cfg,
                        StreamKey key) {
  cfg.validate();
  check_tokens(params.config, query);
  Rollout r;
  r.query_id = key.query_id;
  r.index = key.index;
  Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(key.query_id), static_cast<std::uint64_t>(key.index)}));
  const auto context = static_cast<std::size_t>(params.config.context_len);

  IncrementalForward fwd(params);
  std::span<const double> logits;
  for (int t : query) logits = fwd.push(t);

  while (true) {
    std::size_t choice = 0;
    if (cfg.mode == DecodeMode::kGreedy) {
      choice = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      r.entropies.push_back(0.0);
      r.logprobs.push_back(0.0);
      r.base_entropies.push_back(entropy_of_logits(logits, cfg.temperature));
    } else {
      std::vector<double> probs;
      if (cfg.mode == DecodeMode::kDual) {
        DualDistribution d = dual_temperature_distribution(logits, cfg);
        r.base_entropies.push_back(d.base_entropy);
        probs = std::move(d.probs);
      } else {
        probs = graph::softmax_with_temperature(logits, cfg.temperature);
      }
      choice = draw(probs, rng.uniform());
      r.entropies.push_back(token_entropy(probs));
      r.logprobs.push_back(std::log(probs[choice]));
    }
    const int token = static_cast<int>(choice);
    r.tokens.push_back(token);
    if (token == cfg.eos_token) break;
    if (r.tokens.size() >= static_cast<std::size_t>(cfg.max_new_tokens)) break;
    if (fwd.length() >= context) {
      r.truncated = true;
      break;
    }
    logits = fwd.push(token);
  }
  return r;
}

}  // namespace rlvr
