#include "rlvr/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rlvr/error.hpp"

namespace rlvr {

std::vector<int> TokenTrace::response_tokens(std::int64_t query_id) const {
  std::vector<std::pair<std::int64_t, int>> rows;
  for (const auto& r : records)
    if (r.query_id == query_id) rows.emplace_back(r.position, r.token_id);
  std::sort(rows.begin(), rows.end());
  std::vector<int> out;
  out.reserve(rows.size());
  for (const auto& [pos, tok] : rows) out.push_back(tok);
  return out;
}

std::vector<double> TokenTrace::entropies() const {
  std::vector<double> h;
  h.reserve(records.size());
  for (const auto& r : records) h.push_back(r.entropy);
  return h;
}

double token_entropy(std::span<const double> probs) {
  if (probs.empty()) throw Error(ErrorKind::kInvalidDistribution, "empty distribution");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw Error(ErrorKind::kInvalidDistribution, "negative or non-finite probability");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::kInvalidDistribution, "probabilities sum to " + std::to_string(total));
  }
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  // Rounding can push a one-hot distribution to -0.0 or a hair below zero.
  return std::max(h, 0.0);
}

double entropy_of_logits(std::span<const double> logits, double temperature) {
  return token_entropy(graph::softmax_with_temperature(logits, temperature));
}

namespace {

std::size_t selection_count(std::size_t n, double fraction) {
  if (n == 0) throw Error(ErrorKind::kEmptyBatch, "no entropies in batch");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::kConfig, "rho must lie in (0, 1], got " + std::to_string(fraction));
  }
  // Guard against 0.2 * 10 evaluating to 2.0000000000000004.
  const double raw = fraction * static_cast<double>(n);
  const double rounded = std::round(raw);
  const double k = std::abs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

}  // namespace

double batch_entropy_threshold(std::span<const double> entropies, double rho) {
  const std::size_t k = selection_count(entropies.size(), rho);
  std::vector<double> v(entropies.begin(), entropies.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end(), std::greater<>());
  return v[k - 1];
}

double batch_low_entropy_threshold(std::span<const double> entropies, double fraction) {
  const std::size_t k = selection_count(entropies.size(), fraction);
  std::vector<double> v(entropies.begin(), entropies.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end());
  return v[k - 1];
}

std::vector<double> entropy_percentiles(std::span<const double> entropies,
                                        std::span<const double> percentiles) {
  if (entropies.empty()) throw Error(ErrorKind::kEmptyBatch, "percentiles of empty vector");
  std::vector<double> sorted(entropies.begin(), entropies.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<double> out;
  out.reserve(percentiles.size());
  for (double p : percentiles) {
    if (!(p >= 0.0 && p <= 100.0)) {
      throw Error(ErrorKind::kConfig, "percentile outside [0, 100]: " + std::to_string(p));
    }
    const double raw = p / 100.0 * n;
    const double rounded = std::round(raw);
    const double rank = std::abs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw);
    const std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
    out.push_back(sorted[std::min(idx, sorted.size() - 1)]);
  }
  return out;
}

Histogram entropy_histogram(std::span<const double> entropies, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw Error(ErrorKind::kConfig, "histogram needs bins > 0 and hi > lo");
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0), 0, 0};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double e : entropies) {
    if (e < lo) {
      ++h.below;
    } else if (e > hi) {
      ++h.above;
    } else {
      auto b = static_cast<std::size_t>((e - lo) / width);
      h.counts[std::min(b, bins - 1)]++;
    }
  }
  return h;
}

std::vector<double> rescore_trace(const PolicyParams& params, std::span<const int> query,
                                  std::span<const int> response) {
  if (response.empty()) return {};
  graph::Tape tape;
  ModelGraph g(tape, params, false);
  const auto scored = g.score(query, response);
  const graph::Var& z = scored.logits;
  const std::size_t v = z.shape().cols;
  std::vector<double> h(z.shape().rows);
  for (std::size_t t = 0; t < h.size(); ++t) h[t] = entropy_of_logits(z.value().subspan(t * v, v), 1.0);
  return h;
}

TokenTrace rescore_trace(const PolicyParams& params, const TokenTrace& trace) {
  TokenTrace out = trace;
  out.source_checkpoint = params.version_tag;
  std::map<std::int64_t, std::vector<double>> by_query;
  for (const auto& [qid, query] : trace.queries) {
    by_query[qid] = rescore_trace(params, query, trace.response_tokens(qid));
  }
  for (auto& r : out.records) {
    auto it = by_query.find(r.query_id);
    if (it == by_query.end()) {
      throw Error(ErrorKind::kInvalidInput, "trace has no query tokens for query " + std::to_string(r.query_id));
    }
    const auto idx = static_cast<std::size_t>(r.position - 1);
    if (r.position < 1 || idx >= it->second.size()) {
      throw Error(ErrorKind::kInvalidInput, "position out of range in query " + std::to_string(r.query_id));
    }
    r.entropy = it->second[idx];
  }
  return out;
}

PositionSet top_rho_positions(const TokenTrace& trace, double rho) {
  const auto h = trace.entropies();
  const double tau = batch_entropy_threshold(h, rho);
  PositionSet out;
  for (const auto& r : trace.records)
    if (r.entropy >= tau) out.insert({r.query_id, r.position});
  return out;
}

double overlap_ratio(const PositionSet& a, const PositionSet& b) {
  if (a.empty()) throw Error(ErrorKind::kEmptySet, "overlap_ratio with empty reference set");
  std::size_t shared = 0;
  for (const auto& p : a) shared += b.count(p);
  return static_cast<double>(shared) / static_cast<double>(a.size());
}

BinChange per_bin_entropy_change(std::span<const double> base_entropies,
                                 std::span<const double> new_entropies) {
  if (base_entropies.size() != new_entropies.size()) {
    throw Error(ErrorKind::kAlignment, "base has " + std::to_string(base_entropies.size()) +
                                           " tokens, new has " + std::to_string(new_entropies.size()));
  }
  const std::size_t n = base_entropies.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return base_entropies[a] < base_entropies[b]; });
  BinChange out;
  std::array<double, kChangeBins> total{};
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t bin = rank * kChangeBins / n;
    const std::size_t i = order[rank];
    total[bin] += new_entropies[i] - base_entropies[i];
    out.count[bin]++;
  }
  for (std::size_t b = 0; b < kChangeBins; ++b)
    out.mean_change[b] = out.count[b] == 0 ? 0.0 : total[b] / static_cast<double>(out.count[b]);
  return out;
}

std::vector<TokenStat> top_tokens_by_avg_entropy(const TokenTrace& trace, std::size_t k,
                                                 std::size_t min_freq, Rank rank) {
  if (trace.records.empty()) throw Error(ErrorKind::kEmptyBatch, "empty trace");
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& r : trace.records) {
    auto& [sum, count] = acc[r.token_id];
    sum += r.entropy;
    ++count;
  }
  std::vector<TokenStat> stats;
  for (const auto& [tok, sc] : acc) {
    if (sc.second >= min_freq) stats.push_back({tok, sc.first / static_cast<double>(sc.second), sc.second});
  }
  std::sort(stats.begin(), stats.end(), [rank](const TokenStat& a, const TokenStat& b) {
    if (a.mean_entropy != b.mean_entropy) {
      return rank == Rank::kHighest ? a.mean_entropy > b.mean_entropy : a.mean_entropy < b.mean_entropy;
    }
    return a.token_id < b.token_id;
  });
  if (stats.size() > k) stats.resize(k);
  return stats;
}

EntropyProfile build_profile(const TokenTrace& trace, std::span<const double> percentiles,
                             std::size_t histogram_bins, double rho) {
  const auto h = trace.entropies();
  if (h.empty()) throw Error(ErrorKind::kEmptyBatch, "empty trace");
  EntropyProfile p;
  p.count = h.size();
  const double hi = std::max(*std::max_element(h.begin(), h.end()), 1e-12);
  p.histogram = entropy_histogram(h, histogram_bins, 0.0, hi);
  const auto values = entropy_percentiles(h, percentiles);
  for (std::size_t i = 0; i < values.size(); ++i) p.percentiles.emplace_back(percentiles[i], values[i]);
  p.top_rho_positions = top_rho_positions(trace, rho);
  return p;
}

}  // namespace rlvr
