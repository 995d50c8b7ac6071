#pragma once

// Token-entropy measurement and the statistics built on it: batch top-rho
// thresholds, nearest-rank percentiles, checkpoint rescoring, position
// overlap, per-percentile-bin change and per-token-id averages.
//
// All entropies are in nats.

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "rlvr/model.hpp"

namespace rlvr {

// Default forking threshold from the 80th percentile of a large reasoning
// trace at T = 1. Model-specific; analysis tooling recomputes it per trace.
inline constexpr double kDefaultForkingThreshold = 0.672;

struct TokenRecord {
  std::int64_t query_id = 0;
  std::int64_t position = 0;  // 1-based within the response
  int token_id = 0;
  double entropy = 0.0;
  double logprob_old = 0.0;
  std::uint64_t source_checkpoint = 0;

  bool operator==(const TokenRecord&) const = default;
};

struct TokenTrace {
  std::uint64_t source_checkpoint = 0;
  // Prompt tokens per query id; needed to rescore a trace under another
  // checkpoint.
  std::map<std::int64_t, std::vector<int>> queries;
  std::vector<TokenRecord> records;

  bool operator==(const TokenTrace&) const = default;

  // Response token ids of one query, in position order.
  std::vector<int> response_tokens(std::int64_t query_id) const;
  std::vector<double> entropies() const;
};

struct TokenPosition {
  std::int64_t query_id = 0;
  std::int64_t position = 0;
  auto operator<=>(const TokenPosition&) const = default;
};

using PositionSet = std::set<TokenPosition>;

// Shannon entropy with 0 log 0 = 0. Throws kInvalidDistribution when an
// entry is negative/non-finite or the sum is off by more than 1e-9.
double token_entropy(std::span<const double> probs);

// token_entropy(softmax(logits / temperature)).
double entropy_of_logits(std::span<const double> logits, double temperature = 1.0);

// k-th largest entropy with k = ceil(rho * N). {H >= tau} keeps every tie.
double batch_entropy_threshold(std::span<const double> entropies, double rho);

// k-th smallest entropy with k = ceil(fraction * N); {H <= tau} selects the
// lowest-entropy fraction (ties included).
double batch_low_entropy_threshold(std::span<const double> entropies, double fraction);

// Nearest-rank percentiles: for p the value is sorted[ceil(p/100 * N) - 1],
// with p = 0 mapped to the minimum.
std::vector<double> entropy_percentiles(std::span<const double> entropies,
                                        std::span<const double> percentiles);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;  // equal-width bins; last bin closed
  std::size_t below = 0;            // values < lo
  std::size_t above = 0;            // values > hi
};

Histogram entropy_histogram(std::span<const double> entropies, std::size_t bins, double lo, double hi);

// Entropy of every response position under params (T = 1), regardless of
// which policy generated the response.
std::vector<double> rescore_trace(const PolicyParams& params, std::span<const int> query,
                                  std::span<const int> response);

// The same trace with all entropies replaced by their values under params.
TokenTrace rescore_trace(const PolicyParams& params, const TokenTrace& trace);

// Positions whose entropy is >= the batch top-rho threshold over the trace.
PositionSet top_rho_positions(const TokenTrace& trace, double rho);

// |A n B| / |A|. Throws kEmptySet on empty A.
double overlap_ratio(const PositionSet& a, const PositionSet& b);

inline constexpr std::size_t kChangeBins = 20;

struct BinChange {
  std::array<double, kChangeBins> mean_change{};
  std::array<std::size_t, kChangeBins> count{};
};

// Tokens are ranked by base entropy (ties by index) and split into 20
// equal-rank 5% bins; bin i reports mean(new - base). Empty bins report 0
// with count 0.
BinChange per_bin_entropy_change(std::span<const double> base_entropies,
                                 std::span<const double> new_entropies);

struct TokenStat {
  int token_id = 0;
  double mean_entropy = 0.0;
  std::size_t frequency = 0;
  bool operator==(const TokenStat&) const = default;
};

enum class Rank { kHighest, kLowest };

// Token ids with frequency >= min_freq ranked by mean entropy (ties by id
// ascending). Empty when nothing passes the frequency floor.
std::vector<TokenStat> top_tokens_by_avg_entropy(const TokenTrace& trace, std::size_t k,
                                                 std::size_t min_freq, Rank rank = Rank::kHighest);

struct EntropyProfile {
  std::size_t count = 0;
  Histogram histogram;
  std::vector<std::pair<double, double>> percentiles;  // (percentile, value)
  PositionSet top_rho_positions;
};

EntropyProfile build_profile(const TokenTrace& trace, std::span<const double> percentiles,
                             std::size_t histogram_bins, double rho);

}  // namespace rlvr
