#include "rlvr/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "json.hpp"
#include "rlvr/error.hpp"

namespace rlvr {

namespace tok {

std::string render(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    if (is_digit(t)) {
      out += static_cast<char>('0' + t);
      continue;
    }
    switch (t) {
      case kPlus: out += '+'; break;
      case kMinus: out += '-'; break;
      case kTimes: out += '*'; break;
      case kEquals: out += '='; break;
      case kSep: out += ';'; break;
      case kAns: out += "ANS"; break;
      case kEos: out += "EOS"; break;
      case kBos: out += "BOS"; break;
      case kFamArith: out += "ARITH"; break;
      case kFamMod: out += "MOD"; break;
      case kFamMax: out += "MAX"; break;
      case kComma: out += ','; break;
      default: out += "<" + std::to_string(t) + ">"; break;
    }
  }
  return out;
}

}  // namespace tok

const char* to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::kArithmeticChain: return "arithmetic-chain";
    case TaskFamily::kModularChain: return "modular-chain";
    case TaskFamily::kListMax: return "list-max";
  }
  return "unknown";
}

TaskFamily parse_family(const std::string& name) {
  if (name == "arithmetic-chain") return TaskFamily::kArithmeticChain;
  if (name == "modular-chain") return TaskFamily::kModularChain;
  if (name == "list-max") return TaskFamily::kListMax;
  throw Error(ErrorKind::kConfig, "unknown task family '" + name + "'");
}

namespace {

void append_number(std::vector<int>& out, int value) {
  for (char c : std::to_string(value)) out.push_back(c - '0');
}

int apply(int op, int a, int b, int modulus) {
  int r = 0;
  switch (op) {
    case tok::kPlus: r = a + b; break;
    case tok::kMinus: r = a - b; break;
    case tok::kTimes: r = a * b; break;
    default: throw Error(ErrorKind::kInvalidInput, "not an operator token: " + std::to_string(op));
  }
  return ((r % modulus) + modulus) % modulus;
}

}  // namespace

Task make_chain_task(TaskFamily family, std::span<const int> operands, std::span<const int> ops) {
  if (family == TaskFamily::kListMax) throw Error(ErrorKind::kConfig, "list-max is not a chain family");
  if (ops.empty() || operands.size() != ops.size() + 1) {
    throw Error(ErrorKind::kInvalidInput, "chain task needs d >= 1 operators and d + 1 operands");
  }
  for (int v : operands)
    if (!tok::is_digit(v)) throw Error(ErrorKind::kInvalidInput, "operands must be single digits");
  const int modulus = family == TaskFamily::kModularChain ? 10 : 100;

  Task t;
  t.family = family;
  t.difficulty = static_cast<int>(ops.size());
  t.query = {tok::kBos, family == TaskFamily::kModularChain ? tok::kFamMod : tok::kFamArith, operands[0]};
  for (std::size_t k = 0; k < ops.size(); ++k) {
    t.query.push_back(ops[k]);
    t.query.push_back(operands[k + 1]);
  }
  t.query.push_back(tok::kAns);

  int acc = operands[0];
  for (std::size_t k = 0; k < ops.size(); ++k) {
    append_number(t.solution, acc);
    t.solution.push_back(ops[k]);
    t.solution.push_back(operands[k + 1]);
    t.solution.push_back(tok::kEquals);
    acc = apply(ops[k], acc, operands[k + 1], modulus);
    append_number(t.solution, acc);
    t.solution.push_back(tok::kSep);
  }
  t.solution.push_back(tok::kAns);
  append_number(t.solution, acc);
  t.solution.push_back(tok::kEos);
  t.ground_truth = std::to_string(acc);
  return t;
}

Task make_list_max_task(std::span<const int> values) {
  if (values.empty()) throw Error(ErrorKind::kInvalidInput, "list-max needs at least one value");
  for (int v : values)
    if (!tok::is_digit(v)) throw Error(ErrorKind::kInvalidInput, "list values must be single digits");
  Task t;
  t.family = TaskFamily::kListMax;
  t.difficulty = static_cast<int>(values.size());
  t.query = {tok::kBos, tok::kFamMax, values[0]};
  for (std::size_t k = 1; k < values.size(); ++k) {
    t.query.push_back(tok::kComma);
    t.query.push_back(values[k]);
  }
  t.query.push_back(tok::kAns);
  int best = values[0];
  for (std::size_t k = 1; k < values.size(); ++k) {
    t.solution.push_back(best);
    t.solution.push_back(tok::kComma);
    t.solution.push_back(values[k]);
    t.solution.push_back(tok::kEquals);
    best = std::max(best, values[k]);
    t.solution.push_back(best);
    t.solution.push_back(tok::kSep);
  }
  t.solution.push_back(tok::kAns);
  t.solution.push_back(best);
  t.solution.push_back(tok::kEos);
  t.ground_truth = std::to_string(best);
  return t;
}

Task generate_task(TaskFamily family, int difficulty, std::uint64_t seed) {
  if (difficulty < 1) throw Error(ErrorKind::kConfig, "difficulty must be >= 1");
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(family), static_cast<std::uint64_t>(difficulty)}));
  Task t;
  if (family == TaskFamily::kListMax) {
    std::vector<int> values(static_cast<std::size_t>(difficulty));
    for (int& v : values) v = static_cast<int>(rng.below(10));
    t = make_list_max_task(values);
  } else {
    std::vector<int> operands(static_cast<std::size_t>(difficulty) + 1);
    std::vector<int> ops(static_cast<std::size_t>(difficulty));
    for (int& v : operands) v = static_cast<int>(rng.below(10));
    static constexpr int kOps[3] = {tok::kPlus, tok::kMinus, tok::kTimes};
    for (int& o : ops) o = kOps[rng.below(3)];
    t = make_chain_task(family, operands, ops);
  }
  t.seed = seed;
  return t;
}

std::vector<int> noisy_solution(const Task& task, double step_accuracy, Rng& rng) {
  if (!(step_accuracy >= 0.0 && step_accuracy <= 1.0)) {
    throw Error(ErrorKind::kConfig, "step_accuracy must lie in [0, 1]");
  }
  const bool list = task.family == TaskFamily::kListMax;
  const int modulus = task.family == TaskFamily::kArithmeticChain ? 100 : 10;
  // Query layout: BOS FAM v0 (op v)* ANS, or BOS MAX v0 (, v)* ANS.
  std::vector<int> values, ops;
  for (std::size_t i = 2; i + 1 < task.query.size(); i += 2) {
    if (i > 2) ops.push_back(task.query[i - 1]);
    values.push_back(task.query[i]);
  }
  auto perturb = [&](int truth) {
    if (rng.uniform() < step_accuracy) return truth;
    const int wrong = static_cast<int>(rng.below(static_cast<std::uint64_t>(modulus - 1)));
    return wrong >= truth ? wrong + 1 : wrong;
  };
  std::vector<int> out;
  int acc = values[0];
  for (std::size_t k = 1; k < values.size(); ++k) {
    append_number(out, acc);
    out.push_back(list ? tok::kComma : ops[k - 1]);
    out.push_back(values[k]);
    out.push_back(tok::kEquals);
    acc = perturb(list ? std::max(acc, values[k]) : apply(ops[k - 1], acc, values[k], modulus));
    append_number(out, acc);
    out.push_back(tok::kSep);
  }
  out.push_back(tok::kAns);
  append_number(out, acc);
  out.push_back(tok::kEos);
  return out;
}

std::optional<std::string> extract_answer(std::span<const int> tokens) {
  std::size_t marker = tokens.size();
  for (std::size_t i = tokens.size(); i-- > 0;) {
    if (tokens[i] == tok::kAns) {
      marker = i;
      break;
    }
  }
  if (marker == tokens.size()) return std::nullopt;
  std::string digits;
  for (std::size_t i = marker + 1; i < tokens.size() && tok::is_digit(tokens[i]); ++i) {
    digits += static_cast<char>('0' + tokens[i]);
  }
  if (digits.empty()) return std::nullopt;
  return digits;
}

std::string canonical_integer(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string core = s.substr(b, e - b);
  std::size_t z = 0;
  while (z + 1 < core.size() && core[z] == '0') ++z;
  return core.substr(z);
}

bool is_equivalent(const std::string& ground_truth, const std::optional<std::string>& answer) {
  return answer.has_value() && canonical_integer(*answer) == canonical_integer(ground_truth);
}

double outcome_reward(std::span<const int> response, const Task& task) {
  std::vector<int> full(task.query.begin(), task.query.end());
  full.insert(full.end(), response.begin(), response.end());
  return is_equivalent(task.ground_truth, extract_answer(full)) ? 1.0 : 0.0;
}

void RewardConfig::validate() const {
  if (max_response_len <= 0 || cache_len <= 0 || cache_len >= max_response_len) {
    throw Error(ErrorKind::kConfig, "reward config needs 0 < cache_len < max_response_len");
  }
}

double overlong_shaped_reward(double base, int response_len, const RewardConfig& cfg) {
  cfg.validate();
  if (response_len < 0) throw Error(ErrorKind::kInvalidInput, "negative response length");
  const int knee = cfg.max_response_len - cfg.cache_len;
  double penalty = 0.0;
  if (response_len >= cfg.max_response_len) {
    penalty = -1.0;
  } else if (response_len > knee) {
    penalty = static_cast<double>(knee - response_len) / static_cast<double>(cfg.cache_len);
  }
  return base + penalty;
}

std::string write_task_set(std::span<const Task> tasks) {
  std::string out;
  for (const Task& t : tasks) {
    nlohmann::ordered_json j;
    j["family"] = to_string(t.family);
    j["difficulty"] = t.difficulty;
    j["seed"] = t.seed;
    j["ground_truth"] = t.ground_truth;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Task> read_task_set(const std::string& text) {
  std::vector<Task> tasks;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Task t = generate_task(parse_family(j.at("family").get<std::string>()), j.at("difficulty").get<int>(),
                             j.at("seed").get<std::uint64_t>());
      if (t.ground_truth != j.at("ground_truth").get<std::string>()) {
        throw Error(ErrorKind::kFormat, "task set line " + std::to_string(line_no) +
                                            ": stored ground truth does not match regeneration");
      }
      tasks.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, "task set line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return tasks;
}

std::vector<Task> make_task_set(TaskFamily family, int difficulty, std::size_t count, std::uint64_t base_seed) {
  std::vector<Task> tasks;
  tasks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) tasks.push_back(generate_task(family, difficulty, derive_seed({base_seed, i})));
  return tasks;
}

}  // namespace rlvr
