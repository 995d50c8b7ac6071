#pragma once

// Tiny pre-norm decoder-only transformer with learned positional embeddings.
//
// Parameter layout, in checkpoint order:
//   tok_emb [V x d], pos_emb [C x d],
//   per layer: ln1.gain, ln1.bias [1 x d], attn.w_qkv [d x 3d], attn.b_qkv,
//              attn.w_out [d x d], attn.b_out, ln2.gain, ln2.bias,
//              mlp.w_in [d x 4d], mlp.b_in, mlp.w_out [4d x d], mlp.b_out,
//   lnf.gain, lnf.bias, head.w [d x V], head.b [1 x V].
//
// Initialization: weights ~ N(0, 0.02^2); the two residual output
// projections per layer use std 0.02 / sqrt(2 * n_layers); biases 0,
// layer-norm gains 1.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rlvr/graph.hpp"

namespace rlvr {

struct ModelConfig {
  int vocab_size = 32;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_len = 256;
  std::uint64_t seed = 0;

  int d_ff() const { return 4 * d_model; }
  // Throws kConfig on any inconsistent field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ParamTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

struct PolicyParams {
  ModelConfig config;
  std::vector<ParamTensor> tensors;
  std::uint64_t version_tag = 0;

  std::size_t parameter_count() const;
  bool operator==(const PolicyParams& other) const;
};

// One gradient array per tensor, same order as PolicyParams::tensors.
using ParamGrads = std::vector<std::vector<double>>;

// Closed-form parameter count for a config (used to cross-check layouts).
std::size_t expected_parameter_count(const ModelConfig& config);

PolicyParams init_params(const ModelConfig& config);

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * cols, cols);
  }
};

// Builds forward passes of one PolicyParams on a tape. With trainable=true
// every tensor becomes a leaf and gradients can be read back after
// Tape::backward.
class ModelGraph {
 public:
  ModelGraph(graph::Tape& tape, const PolicyParams& params, bool trainable);

  // Logits [tokens.size() x V]; row t predicts the token after position t.
  graph::Var logits(std::span<const int> tokens) const;

  // Log-probabilities of each response token given query and earlier
  // response tokens, as [L x 1]. Also returns the [L x V] logits rows used.
  struct Scored {
    graph::Var log_probs;
    graph::Var logits;
  };
  Scored score(std::span<const int> query, std::span<const int> response) const;

  ParamGrads gradients() const;
  const PolicyParams& params() const { return *params_; }

 private:
  graph::Tape* tape_;
  const PolicyParams* params_;
  std::vector<graph::Var> leaves_;
};

// Validates ids and length; throws kVocabulary / kContext / kInvalidInput.
void check_tokens(const ModelConfig& config, std::span<const int> tokens);

Matrix forward_logits(const PolicyParams& params, std::span<const int> prefix);

std::vector<double> sequence_log_probs(const PolicyParams& params,
                                       std::span<const int> query,
                                       std::span<const int> response);

// Key/value-cached forward for autoregressive sampling. Produces the same
// logits as forward_logits up to floating-point reassociation.
class IncrementalForward {
 public:
  explicit IncrementalForward(const PolicyParams& params);

  // Appends one token; returns logits for the next position.
  std::span<const double> push(int token);
  std::size_t length() const { return length_; }

 private:
  const PolicyParams* params_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;    // per layer, length x d
  std::vector<std::vector<double>> values_;  // per layer, length x d
  std::vector<double> logits_;
};

// Checkpoint format: "RLVRCKPT" magic, u32 format version, config fields,
// u64 version tag, u64 tensor count, then for each tensor u64 rows, u64 cols
// and rows*cols IEEE-754 doubles. All integers and doubles little-endian.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

std::string serialize_checkpoint(const PolicyParams& params);
PolicyParams deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace rlvr
