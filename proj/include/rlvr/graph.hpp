#pragma once

// Dense double-precision tensors with a recorded forward pass and
// reverse-mode gradient accumulation.
//
// Every tensor is a row-major matrix; a scalar is 1x1 and a vector is either
// n x 1 or 1 x n. No broadcasting is performed except where an op documents
// it (affine adds a 1 x out bias to every row, scale multiplies by a plain
// double).
//
// A Tape is single-threaded. Distinct tapes share no mutable state.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rlvr::graph {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

enum class Op {
  kLeaf,
  kConstant,
  kMatMul,
  kMatMulNT,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kAffine,
  kRelu,
  kGelu,
  kTanh,
  kSoftmax,
  kCausalSoftmax,
  kLogSoftmax,
  kLog,
  kExp,
  kGather,
  kEmbedding,
  kSum,
  kMean,
  kSelectByMask,
  kClip,
  kMinimum,
  kLayerNorm,
  kSliceCols,
  kSliceRows,
  kConcatCols,
};

const char* op_name(Op op);

class Tape;

// Lightweight handle to a node on a tape. Valid as long as the tape lives.
class Var {
 public:
  Var() = default;

  const Shape& shape() const;
  std::span<const double> value() const;
  std::span<const double> grad() const;
  double item() const;
  Op op() const;

  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    Op op = Op::kConstant;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input; receives gradients.
  Var leaf(Shape shape, std::vector<double> values);
  // Input that never receives gradients.
  Var constant(Shape shape, std::vector<double> values);

  // Reverse traversal from a scalar root. Intermediate gradients are
  // recomputed on every call; leaf gradients accumulate across calls until
  // zero_grad().
  void backward(Var root);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }

  // Records a node produced by an op. Intended for op implementations.
  Var emit(Shape shape, std::vector<double> value, Op op,
           std::vector<std::size_t> inputs, BackwardFn backward);

 private:
  std::vector<Node> nodes_;
};

// Plain-vector softmax; max-subtracted. Throws kInvalidTemperature for
// temperature <= 0 and kInvalidInput for non-finite logits.
std::vector<double> softmax_with_temperature(std::span<const double> logits,
                                             double temperature);

// --- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);     // [m x k] . [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] . [n x k]^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
// x [n x in] . w [in x out] + b [1 x out] (bias added to every row).
Var affine(Var x, Var w, Var b);
Var relu(Var a);
Var gelu(Var a);
Var tanh(Var a);
// Row-wise softmax of logits / temperature.
Var softmax(Var logits, double temperature);
// Row-wise softmax over a square score matrix where row i only sees
// columns j <= i; masked entries are exactly 0.
Var causal_softmax(Var scores);
Var log_softmax(Var logits);
Var log(Var a);
Var exp(Var a);
// out[i] = a[i, index[i]]; result is n x 1.
Var gather(Var a, std::vector<std::size_t> index);
// Rows of table selected by ids; result is ids.size() x table.cols.
Var embedding(Var table, std::span<const int> ids);
Var sum(Var a);
Var mean(Var a);
// Entries where mask is nonzero pass through; others become exactly 0 and
// receive exactly 0 gradient.
Var select_by_mask(Var a, std::vector<double> mask);
Var clip(Var a, double lo, double hi);
Var minimum(Var a, Var b);
// Row-wise normalization followed by gain [1 x n] and bias [1 x n].
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);

}  // namespace rlvr::graph
