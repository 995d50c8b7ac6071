#pragma once

// Synthetic tasks with exactly checkable answers, the answer extractor and
// the outcome / overlong-shaped rewards.
//
// Token vocabulary (ids 0..31, shared by every family):
//   0-9 digits, 10 '+', 11 '-', 12 '*', 13 '=', 14 ';' (step separator),
//   15 ANS marker, 16 EOS, 17 BOS, 18..20 family tags, 21 ',' (list
//   separator), 22..31 unused.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlvr/rng.hpp"

namespace rlvr {

namespace tok {
inline constexpr int kPlus = 10;
inline constexpr int kMinus = 11;
inline constexpr int kTimes = 12;
inline constexpr int kEquals = 13;
inline constexpr int kSep = 14;
inline constexpr int kAns = 15;
inline constexpr int kEos = 16;
inline constexpr int kBos = 17;
inline constexpr int kFamArith = 18;
inline constexpr int kFamMod = 19;
inline constexpr int kFamMax = 20;
inline constexpr int kComma = 21;
inline constexpr int kVocabSize = 32;

inline bool is_digit(int t) { return t >= 0 && t <= 9; }
// Human-readable rendering, e.g. "BOS MOD 7 + 5 ANS".
std::string render(std::span<const int> tokens);
}  // namespace tok

enum class TaskFamily { kArithmeticChain, kModularChain, kListMax };

const char* to_string(TaskFamily family);
// Throws kConfig for unknown names.
TaskFamily parse_family(const std::string& name);

struct Task {
  TaskFamily family = TaskFamily::kModularChain;
  int difficulty = 1;
  std::uint64_t seed = 0;
  std::vector<int> query;
  std::string ground_truth;
  // Worked solution in the response format: intermediate steps, then
  // ANS <answer> EOS. Used for format demonstrations and tests.
  std::vector<int> solution;

  bool operator==(const Task&) const = default;
};

Task generate_task(TaskFamily family, int difficulty, std::uint64_t seed);

// Chain task from explicit operands (size d+1) and operator tokens (size d).
Task make_chain_task(TaskFamily family, std::span<const int> operands, std::span<const int> ops);
Task make_list_max_task(std::span<const int> values);

// Digits following the last ANS marker; nullopt without a marker or digits.
// Demonstration in the solution format where each intermediate result is
// correct (given the written inputs of its step) with probability
// step_accuracy and otherwise replaced by a uniformly drawn wrong value. The
// final answer copies the last written result.
std::vector<int> noisy_solution(const Task& task, double step_accuracy, Rng& rng);

std::optional<std::string> extract_answer(std::span<const int> tokens);

// Strip surrounding whitespace and leading zeros ("042" -> "42", "000" -> "0").
std::string canonical_integer(const std::string& s);
bool is_equivalent(const std::string& ground_truth, const std::optional<std::string>& answer);

// 1.0 iff the answer extracted from query ++ response matches ground truth.
double outcome_reward(std::span<const int> response, const Task& task);

struct RewardConfig {
  int max_response_len = 192;
  int cache_len = 32;
  void validate() const;
};

// base + penalty, penalty 0 up to L_max - L_cache, linear to -1 at L_max,
// -1 beyond.
double overlong_shaped_reward(double base, int response_len, const RewardConfig& cfg);

// Line-delimited JSON records {family, difficulty, seed, ground_truth}.
std::string write_task_set(std::span<const Task> tasks);
// Regenerates every task and checks the stored ground truth (kFormat on
// mismatch, kParse with line number on malformed lines).
std::vector<Task> read_task_set(const std::string& text);

// Tasks with seeds derived from (base_seed, index).
std::vector<Task> make_task_set(TaskFamily family, int difficulty, std::size_t count, std::uint64_t base_seed);

}  // namespace rlvr
