#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rlvr/model.hpp"
#include "rlvr/tasks.hpp"

namespace rlvr {

enum class DecodeMode {
  kPlain,   // sample from softmax(z / T)
  kDual,    // fork-aware: T_high where base entropy > h_threshold, else T_low
  kGreedy,  // argmax, the T -> 0 limit
};

const char* to_string(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& name);

struct DecodeConfig {
  double temperature = 1.0;
  int max_new_tokens = 64;
  int eos_token = tok::kEos;
  DecodeMode mode = DecodeMode::kPlain;
  std::optional<double> t_high;
  std::optional<double> t_low;
  std::optional<double> h_threshold;
  std::uint64_t seed = 0;

  // Throws kConfig (missing dual fields, non-positive values) or
  // kInvalidTemperature.
  void validate() const;
};

struct Rollout {
  std::int64_t query_id = 0;
  std::int64_t index = 0;
  std::vector<int> tokens;
  // Entropy and log-probability of the distribution each token was drawn
  // from.
  std::vector<double> entropies;
  std::vector<double> logprobs;
  // Entropy at the base temperature; filled in dual and greedy modes.
  std::vector<double> base_entropies;
  double outcome = 0.0;  // binary verifier result
  double reward = 0.0;   // after overlong shaping
  bool truncated = false;

  std::size_t length() const { return tokens.size(); }
  bool operator==(const Rollout&) const = default;
};

// Identifies an independent random stream: (cfg.seed, query_id, index).
struct StreamKey {
  std::int64_t query_id = 0;
  std::int64_t index = 0;
};

struct DualDistribution {
  std::vector<double> probs;
  double base_entropy = 0.0;
  bool high_branch = false;
};

DualDistribution dual_temperature_distribution(std::span<const double> logits, const DecodeConfig& cfg);

// Samples one response token by token until EOS, max_new_tokens or the end
// of the context window (flagged as truncated).
Rollout sample_response(const PolicyParams& params, std::span<const int> query, const DecodeConfig& cfg,
                        StreamKey key);

}  // namespace rlvr
