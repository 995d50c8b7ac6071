#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "rlvr/decoder.hpp"
#include "rlvr/entropy.hpp"
#include "rlvr/error.hpp"

using namespace rlvr;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::kInvalidInput;
}

ParamTensor& tensor(PolicyParams& p, const std::string& name) {
  for (auto& t : p.tensors)
    if (t.name == name) return t;
  throw std::runtime_error("no tensor " + name);
}

// Output head zeroed, so the logits equal head.b at every position.
PolicyParams constant_logit_params(int vocab, const std::vector<double>& bias) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.context_len = 24;
  PolicyParams p = init_params(c);
  auto& w = tensor(p, "head.w").values;
  std::fill(w.begin(), w.end(), 0.0);
  tensor(p, "head.b").values = bias;
  return p;
}

PolicyParams sharp_params(std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = tok::kVocabSize;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.context_len = 48;
  c.seed = seed;
  PolicyParams p = init_params(c);
  for (auto& w : tensor(p, "head.w").values) w *= 150.0;
  return p;
}

const std::vector<int> kQuery = {tok::kBos, tok::kFamMod, 3, tok::kPlus, 4, tok::kAns};

}  // namespace

TEST_CASE("dual distribution examples") {
  DecodeConfig cfg;
  cfg.mode = DecodeMode::kDual;
  cfg.t_high = 2.0;
  cfg.t_low = 0.5;
  cfg.h_threshold = 0.672;
  const std::vector<double> z = {2.0, 0.0};
  const DualDistribution d = dual_temperature_distribution(z, cfg);
  const double p0 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(d.base_entropy == doctest::Approx(-(p0 * std::log(p0) + (1 - p0) * std::log(1 - p0))).epsilon(1e-14));
  CHECK(std::abs(d.base_entropy - 0.3653) < 1e-4);
  CHECK(d.base_entropy < 0.672);
  CHECK_FALSE(d.high_branch);
  const double q0 = 1.0 / (1.0 + std::exp(-4.0));
  CHECK(d.probs[0] == doctest::Approx(q0).epsilon(1e-14));
  CHECK(std::abs(d.probs[0] - 0.98201) < 1e-5);
  CHECK(std::abs(d.probs[1] - 0.01799) < 1e-5);

  const DualDistribution u = dual_temperature_distribution(std::vector<double>{0, 0, 0, 0}, cfg);
  CHECK(u.high_branch);
  for (double p : u.probs) CHECK(p == 0.25);

  DecodeConfig missing = cfg;
  missing.t_low.reset();
  CHECK(kind_of([&] { dual_temperature_distribution(z, missing); }) == ErrorKind::kConfig);
  CHECK(kind_of([&] { missing.validate(); }) == ErrorKind::kConfig);
}

TEST_CASE("branch condition is strict") {
  DecodeConfig cfg;
  cfg.mode = DecodeMode::kDual;
  cfg.t_high = 2.0;
  cfg.t_low = 0.5;
  const std::vector<double> z = {0, 0, 0, 0};
  cfg.h_threshold = entropy_of_logits(z, 1.0);
  CHECK_FALSE(dual_temperature_distribution(z, cfg).high_branch);
}

TEST_CASE("dual mode with equal temperatures is plain decoding") {
  const PolicyParams p = sharp_params(3);
  DecodeConfig plain;
  plain.seed = 11;
  plain.max_new_tokens = 20;
  DecodeConfig dual = plain;
  dual.mode = DecodeMode::kDual;
  dual.t_high = 1.0;
  dual.t_low = 1.0;
  dual.h_threshold = 0.5;
  for (std::int64_t i = 0; i < 10; ++i) {
    const Rollout a = sample_response(p, kQuery, plain, {0, i});
    const Rollout b = sample_response(p, kQuery, dual, {0, i});
    CHECK(a.tokens == b.tokens);
    CHECK(a.logprobs == b.logprobs);
    CHECK(a.entropies == b.entropies);
    CHECK(b.base_entropies == b.entropies);
  }
}

TEST_CASE("dual branches move entropy in the expected direction") {
  Rng rng(8);
  DecodeConfig cfg;
  cfg.mode = DecodeMode::kDual;
  cfg.t_high = 1.7;
  cfg.t_low = 0.6;
  cfg.h_threshold = 1.0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> z(6);
    for (double& v : z) v = 3.0 * rng.normal();
    const DualDistribution d = dual_temperature_distribution(z, cfg);
    const double h = token_entropy(d.probs);
    if (d.high_branch) {
      CHECK(h >= d.base_entropy - 1e-12);
    } else {
      CHECK(h <= d.base_entropy + 1e-12);
    }
  }
}

TEST_CASE("one-hot policy yields the forced sequence with zero entropy") {
  std::vector<double> bias(6, 0.0);
  bias[4] = 1000.0;
  const PolicyParams p = constant_logit_params(6, bias);
  DecodeConfig cfg;
  cfg.eos_token = 5;
  cfg.max_new_tokens = 7;
  const Rollout r = sample_response(p, std::vector<int>{0, 1}, cfg, {0, 0});
  CHECK(r.tokens == std::vector<int>(7, 4));
  for (double h : r.entropies) CHECK(h == 0.0);
  for (double lp : r.logprobs) CHECK(lp == 0.0);
  CHECK_FALSE(r.truncated);
}

TEST_CASE("uniform policy logs ln V at every step") {
  const PolicyParams p = constant_logit_params(4, std::vector<double>(4, 0.0));
  DecodeConfig cfg;
  cfg.eos_token = 3;
  cfg.max_new_tokens = 12;
  for (std::int64_t i = 0; i < 20; ++i) {
    const Rollout r = sample_response(p, std::vector<int>{0}, cfg, {1, i});
    for (double h : r.entropies) CHECK(h == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    for (double lp : r.logprobs) CHECK(lp == doctest::Approx(-std::log(4.0)).epsilon(1e-15));
  }
}

TEST_CASE("sampling is deterministic per stream and streams are independent of order") {
  const PolicyParams p = sharp_params(4);
  DecodeConfig cfg;
  cfg.seed = 77;
  cfg.max_new_tokens = 30;
  const Rollout a = sample_response(p, kQuery, cfg, {3, 5});
  sample_response(p, kQuery, cfg, {3, 6});
  const Rollout b = sample_response(p, kQuery, cfg, {3, 5});
  CHECK(a == b);
  bool any_diff = false;
  for (std::int64_t i = 0; i < 8 && !any_diff; ++i) any_diff = sample_response(p, kQuery, cfg, {3, i}).tokens != a.tokens;
  CHECK(any_diff);
  cfg.seed = 78;
  CHECK(sample_response(p, kQuery, cfg, {3, 5}).query_id == 3);
}

TEST_CASE("logged log-probs and entropies match the model's distribution") {
  const PolicyParams p = sharp_params(5);
  DecodeConfig cfg;
  cfg.seed = 3;
  cfg.max_new_tokens = 25;
  cfg.temperature = 0.8;
  for (std::int64_t i = 0; i < 6; ++i) {
    const Rollout r = sample_response(p, kQuery, cfg, {0, i});
    std::vector<int> seq = kQuery;
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const Matrix m = forward_logits(p, seq);
      const std::vector<double> z(m.row(seq.size() - 1).begin(), m.row(seq.size() - 1).end());
      const auto probs = graph::softmax_with_temperature(z, cfg.temperature);
      CHECK(std::abs(r.logprobs[t] - std::log(probs[static_cast<std::size_t>(r.tokens[t])])) < 1e-12);
      CHECK(std::abs(r.entropies[t] - oracle::entropy_by_definition(z, cfg.temperature)) < 1e-10);
      seq.push_back(r.tokens[t]);
    }
    // At T = 1 the sampler's log-probs are the policy log-probs used in training.
    DecodeConfig unit = cfg;
    unit.temperature = 1.0;
    const Rollout u = sample_response(p, kQuery, unit, {0, i});
    const auto lp = sequence_log_probs(p, kQuery, u.tokens);
    for (std::size_t t = 0; t < lp.size(); ++t) CHECK(std::abs(lp[t] - u.logprobs[t]) < 1e-12);
  }
}

TEST_CASE("greedy decoding follows the argmax and ignores logit scale") {
  PolicyParams p = sharp_params(6);
  DecodeConfig cfg;
  cfg.mode = DecodeMode::kGreedy;
  cfg.max_new_tokens = 20;
  const Rollout r = sample_response(p, kQuery, cfg, {0, 0});
  std::vector<int> seq = kQuery;
  for (int token : r.tokens) {
    const Matrix m = forward_logits(p, seq);
    const auto row = m.row(seq.size() - 1);
    CHECK(token == static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    seq.push_back(token);
  }
  for (auto* name : {"head.w", "head.b"})
    for (double& v : tensor(p, name).values) v *= 3.5;
  CHECK(sample_response(p, kQuery, cfg, {9, 9}).tokens == r.tokens);
}

TEST_CASE("context overflow truncates instead of failing") {
  const PolicyParams p = constant_logit_params(6, std::vector<double>{0, 0, 0, 0, 0, -1000});
  DecodeConfig cfg;
  cfg.eos_token = 5;
  cfg.max_new_tokens = 100;
  const Rollout r = sample_response(p, std::vector<int>{0, 1, 2}, cfg, {0, 0});
  CHECK(r.truncated);
  CHECK(r.length() + 3 == 25);  // context 24 plus the final sampled token
}

TEST_CASE("config validation") {
  DecodeConfig cfg;
  cfg.temperature = 0.0;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kInvalidTemperature);
  cfg.temperature = 1.0;
  cfg.max_new_tokens = 0;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { parse_decode_mode("beam"); }) == ErrorKind::kConfig);
  CHECK(parse_decode_mode("dual") == DecodeMode::kDual);
  const PolicyParams p = sharp_params(1);
  CHECK(kind_of([&] { sample_response(p, std::vector<int>{99}, DecodeConfig{}, {0, 0}); }) ==
        ErrorKind::kVocabulary);
}
