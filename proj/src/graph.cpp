#include "rlvr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "rlvr/error.hpp"

namespace rlvr::graph {

std::string Shape::str() const {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kMatMulNT: return "matmul_nt";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kAffine: return "affine";
    case Op::kRelu: return "relu";
    case Op::kGelu: return "gelu";
    case Op::kTanh: return "tanh";
    case Op::kSoftmax: return "softmax";
    case Op::kCausalSoftmax: return "causal_softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kGather: return "gather";
    case Op::kEmbedding: return "embedding";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSelectByMask: return "select_by_mask";
    case Op::kClip: return "clip";
    case Op::kMinimum: return "minimum";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSliceRows: return "slice_rows";
    case Op::kConcatCols: return "concat_cols";
  }
  return "unknown";
}

// --- Var -------------------------------------------------------------------

const Shape& Var::shape() const { return tape_->node(id_).shape; }

std::span<const double> Var::value() const { return tape_->node(id_).value; }

std::span<const double> Var::grad() const { return tape_->node(id_).grad; }

double Var::item() const {
  if (!shape().is_scalar()) {
    throw Error(ErrorKind::kRank, "item() on non-scalar " + shape().str());
  }
  return value()[0];
}

Op Var::op() const { return tape_->node(id_).op; }

// --- Tape ------------------------------------------------------------------

Var Tape::leaf(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size()) {
    throw Error(ErrorKind::kShape, "leaf values " + std::to_string(values.size()) +
                                       " do not fill " + shape.str());
  }
  Node n;
  n.shape = shape;
  n.grad.assign(values.size(), 0.0);
  n.value = std::move(values);
  n.op = Op::kLeaf;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size()) {
    throw Error(ErrorKind::kShape, "constant values " + std::to_string(values.size()) +
                                       " do not fill " + shape.str());
  }
  Node n;
  n.shape = shape;
  n.grad.assign(values.size(), 0.0);
  n.value = std::move(values);
  n.op = Op::kConstant;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::emit(Shape shape, std::vector<double> value, Op op,
               std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.shape = shape;
  n.grad.assign(value.size(), 0.0);
  n.value = std::move(value);
  n.op = op;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (root.tape() != this) {
    throw Error(ErrorKind::kInvalidInput, "root belongs to a different tape");
  }
  if (!root.shape().is_scalar()) {
    throw Error(ErrorKind::kRank, "backward root must be scalar, got " + root.shape().str());
  }
  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (n.op != Op::kLeaf) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
  nodes_[root.id()].grad[0] += 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, i);
  }
  // Ops write into every input's buffer; constants discard what they got.
  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kConstant) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

// --- helpers ---------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error(ErrorKind::kInvalidInput, "uninitialized tensor handle");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error(ErrorKind::kInvalidInput, "operands on different tapes");
  return t;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::kShape, std::string(op) + ": " + a.shape().str() + " vs " +
                                       b.shape().str());
  }
}

void softmax_row(const double* z, double* out, std::size_t n, double inv_t) {
  double m = z[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, z[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp((z[j] - m) * inv_t);
    s += out[j];
  }
  const double inv = 1.0 / s;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

// Elementwise unary op with derivative expressed through input and output.
template <typename F, typename D>
Var unary(Var a, Op op, F f, D dfdx) {
  Tape& t = tape_of(a);
  auto x = a.value();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return t.emit(a.shape(), std::move(y), op, {ia}, [ia, dfdx](Tape& tp, std::size_t self) {
    const auto& out = tp.node(self);
    auto& in = tp.node(ia);
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      in.grad[i] += out.grad[i] * dfdx(in.value[i], out.value[i]);
    }
  });
}

}  // namespace

std::vector<double> softmax_with_temperature(std::span<const double> logits,
                                             double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::kInvalidTemperature,
                "temperature must be positive, got " + std::to_string(temperature));
  }
  if (logits.empty()) throw Error(ErrorKind::kInvalidInput, "empty logit vector");
  for (double z : logits) {
    if (!std::isfinite(z)) throw Error(ErrorKind::kInvalidInput, "non-finite logit");
  }
  std::vector<double> p(logits.size());
  softmax_row(logits.data(), p.data(), logits.size(), 1.0 / temperature);
  return p;
}

// --- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) {
    throw Error(ErrorKind::kShape, "matmul: " + sa.str() + " x " + sb.str());
  }
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  std::vector<double> c(m * n, 0.0);
  auto av = a.value();
  auto bv = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* bp = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.emit({m, n}, std::move(c), Op::kMatMul, {ia, ib},
                [ia, ib, m, k, n](Tape& tp, std::size_t self) {
                  const auto& dc = tp.node(self).grad;
                  auto& na = tp.node(ia);
                  auto& nb = tp.node(ib);
                  if (na.requires_grad) {
                    for (std::size_t i = 0; i < m; ++i) {
                      const double* dci = dc.data() + i * n;
                      for (std::size_t p = 0; p < k; ++p) {
                        const double* bp = nb.value.data() + p * n;
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += dci[j] * bp[j];
                        na.grad[i * k + p] += s;
                      }
                    }
                  }
                  if (nb.requires_grad) {
                    for (std::size_t i = 0; i < m; ++i) {
                      const double* dci = dc.data() + i * n;
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = na.value[i * k + p];
                        double* gbp = nb.grad.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbp[j] += aip * dci[j];
                      }
                    }
                  }
                });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.cols) {
    throw Error(ErrorKind::kShape, "matmul_nt: " + sa.str() + " x " + sb.str() + "^T");
  }
  const std::size_t m = sa.rows, k = sa.cols, n = sb.rows;
  std::vector<double> c(m * n);
  auto av = a.value();
  auto bv = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      c[i * n + j] = s;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.emit({m, n}, std::move(c), Op::kMatMulNT, {ia, ib},
                [ia, ib, m, k, n](Tape& tp, std::size_t self) {
                  const auto& dc = tp.node(self).grad;
                  auto& na = tp.node(ia);
                  auto& nb = tp.node(ib);
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                      const double g = dc[i * n + j];
                      if (g == 0.0) continue;
                      if (na.requires_grad) {
                        for (std::size_t p = 0; p < k; ++p) na.grad[i * k + p] += g * nb.value[j * k + p];
                      }
                      if (nb.requires_grad) {
                        for (std::size_t p = 0; p < k; ++p) nb.grad[j * k + p] += g * na.value[i * k + p];
                      }
                    }
                  }
                });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Shape s = a.shape();
  auto av = a.value();
  std::vector<double> y(s.size());
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) y[j * s.rows + i] = av[i * s.cols + j];
  const std::size_t ia = a.id();
  return t.emit({s.cols, s.rows}, std::move(y), Op::kTranspose, {ia},
                [ia, s](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& in = tp.node(ia);
                  for (std::size_t i = 0; i < s.rows; ++i)
                    for (std::size_t j = 0; j < s.cols; ++j)
                      in.grad[i * s.cols + j] += dy[j * s.rows + i];
                });
}

namespace {

template <typename F>
Var binary_elementwise(const char* name, Op op, Var a, Var b, F f) {
  Tape& t = tape_of(a, b);
  require_same_shape(name, a, b);
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(av[i], bv[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return t.emit(a.shape(), std::move(y), op, {ia, ib}, [ia, ib, op](Tape& tp, std::size_t self) {
    const auto& dy = tp.node(self).grad;
    auto& na = tp.node(ia);
    auto& nb = tp.node(ib);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      switch (op) {
        case Op::kAdd:
          na.grad[i] += dy[i];
          nb.grad[i] += dy[i];
          break;
        case Op::kSub:
          na.grad[i] += dy[i];
          nb.grad[i] -= dy[i];
          break;
        case Op::kMul:
          na.grad[i] += dy[i] * nb.value[i];
          nb.grad[i] += dy[i] * na.value[i];
          break;
        default:
          break;
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_elementwise("add", Op::kAdd, a, b, [](double x, double y) { return x + y; });
}

Var sub(Var a, Var b) {
  return binary_elementwise("sub", Op::kSub, a, b, [](double x, double y) { return x - y; });
}

Var mul(Var a, Var b) {
  return binary_elementwise("mul", Op::kMul, a, b, [](double x, double y) { return x * y; });
}

Var scale(Var a, double factor) {
  return unary(
      a, Op::kScale, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      a, Op::kAddScalar, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Var affine(Var x, Var w, Var b) {
  Tape& t = tape_of(x, w);
  tape_of(x, b);
  const Shape sx = x.shape(), sw = w.shape(), sb = b.shape();
  if (sx.cols != sw.rows) {
    throw Error(ErrorKind::kShape, "affine: " + sx.str() + " x " + sw.str());
  }
  if (sb.rows != 1 || sb.cols != sw.cols) {
    throw Error(ErrorKind::kShape, "affine bias: " + sb.str() + " vs weight " + sw.str());
  }
  const std::size_t m = sx.rows, k = sx.cols, n = sw.cols;
  auto xv = x.value();
  auto wv = w.value();
  auto bv = b.value();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double* yi = y.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) yi[j] = bv[j];
    for (std::size_t p = 0; p < k; ++p) {
      const double xip = xv[i * k + p];
      const double* wp = wv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) yi[j] += xip * wp[j];
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return t.emit({m, n}, std::move(y), Op::kAffine, {ix, iw, ib},
                [ix, iw, ib, m, k, n](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& nx = tp.node(ix);
                  auto& nw = tp.node(iw);
                  auto& nb = tp.node(ib);
                  for (std::size_t i = 0; i < m; ++i) {
                    const double* dyi = dy.data() + i * n;
                    if (nb.requires_grad)
                      for (std::size_t j = 0; j < n; ++j) nb.grad[j] += dyi[j];
                    for (std::size_t p = 0; p < k; ++p) {
                      if (nx.requires_grad) {
                        const double* wp = nw.value.data() + p * n;
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += dyi[j] * wp[j];
                        nx.grad[i * k + p] += s;
                      }
                      if (nw.requires_grad) {
                        const double xip = nx.value[i * k + p];
                        double* gwp = nw.grad.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) gwp[j] += xip * dyi[j];
                      }
                    }
                  }
                });
}

Var relu(Var a) {
  return unary(
      a, Op::kRelu, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluK = 0.044715;
}  // namespace

Var gelu(Var a) {
  return unary(
      a, Op::kGelu,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(kGeluC * (x + kGeluK * x * x * x));
        return 0.5 * (1.0 + th) +
               0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
      });
}

Var tanh(Var a) {
  return unary(
      a, Op::kTanh, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var softmax(Var logits, double temperature) {
  Tape& t = tape_of(logits);
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::kInvalidTemperature,
                "temperature must be positive, got " + std::to_string(temperature));
  }
  const Shape s = logits.shape();
  auto z = logits.value();
  for (double v : z) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kInvalidInput, "non-finite logit");
  }
  std::vector<double> y(s.size());
  const double inv_t = 1.0 / temperature;
  for (std::size_t i = 0; i < s.rows; ++i) softmax_row(z.data() + i * s.cols, y.data() + i * s.cols, s.cols, inv_t);
  const std::size_t ia = logits.id();
  return t.emit(s, std::move(y), Op::kSoftmax, {ia}, [ia, s, inv_t](Tape& tp, std::size_t self) {
    const auto& out = tp.node(self);
    auto& in = tp.node(ia);
    for (std::size_t i = 0; i < s.rows; ++i) {
      const double* yi = out.value.data() + i * s.cols;
      const double* dyi = out.grad.data() + i * s.cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < s.cols; ++j) dot += dyi[j] * yi[j];
      for (std::size_t j = 0; j < s.cols; ++j) in.grad[i * s.cols + j] += inv_t * yi[j] * (dyi[j] - dot);
    }
  });
}

Var causal_softmax(Var scores) {
  Tape& t = tape_of(scores);
  const Shape s = scores.shape();
  if (s.rows != s.cols) {
    throw Error(ErrorKind::kShape, "causal_softmax needs a square matrix, got " + s.str());
  }
  auto z = scores.value();
  std::vector<double> y(s.size(), 0.0);
  for (std::size_t i = 0; i < s.rows; ++i) softmax_row(z.data() + i * s.cols, y.data() + i * s.cols, i + 1, 1.0);
  const std::size_t ia = scores.id();
  return t.emit(s, std::move(y), Op::kCausalSoftmax, {ia}, [ia, s](Tape& tp, std::size_t self) {
    const auto& out = tp.node(self);
    auto& in = tp.node(ia);
    for (std::size_t i = 0; i < s.rows; ++i) {
      const double* yi = out.value.data() + i * s.cols;
      const double* dyi = out.grad.data() + i * s.cols;
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += dyi[j] * yi[j];
      for (std::size_t j = 0; j <= i; ++j) in.grad[i * s.cols + j] += yi[j] * (dyi[j] - dot);
    }
  });
}

Var log_softmax(Var logits) {
  Tape& t = tape_of(logits);
  const Shape s = logits.shape();
  auto z = logits.value();
  std::vector<double> y(s.size());
  for (std::size_t i = 0; i < s.rows; ++i) {
    const double* zi = z.data() + i * s.cols;
    double m = zi[0];
    for (std::size_t j = 1; j < s.cols; ++j) m = std::max(m, zi[j]);
    double acc = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) acc += std::exp(zi[j] - m);
    const double lse = m + std::log(acc);
    for (std::size_t j = 0; j < s.cols; ++j) y[i * s.cols + j] = zi[j] - lse;
  }
  const std::size_t ia = logits.id();
  return t.emit(s, std::move(y), Op::kLogSoftmax, {ia}, [ia, s](Tape& tp, std::size_t self) {
    const auto& out = tp.node(self);
    auto& in = tp.node(ia);
    for (std::size_t i = 0; i < s.rows; ++i) {
      const double* yi = out.value.data() + i * s.cols;
      const double* dyi = out.grad.data() + i * s.cols;
      double total = 0.0;
      for (std::size_t j = 0; j < s.cols; ++j) total += dyi[j];
      if (total == 0.0) {
        for (std::size_t j = 0; j < s.cols; ++j) in.grad[i * s.cols + j] += dyi[j];
      } else {
        for (std::size_t j = 0; j < s.cols; ++j)
          in.grad[i * s.cols + j] += dyi[j] - std::exp(yi[j]) * total;
      }
    }
  });
}

Var log(Var a) {
  return unary(
      a, Op::kLog, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return unary(
      a, Op::kExp, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var gather(Var a, std::vector<std::size_t> index) {
  Tape& t = tape_of(a);
  const Shape s = a.shape();
  if (index.size() != s.rows) {
    throw Error(ErrorKind::kShape, "gather: " + std::to_string(index.size()) +
                                       " indices for " + s.str());
  }
  auto av = a.value();
  std::vector<double> y(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) {
    if (index[i] >= s.cols) {
      throw Error(ErrorKind::kInvalidInput, "gather index " + std::to_string(index[i]) +
                                                " out of range for " + s.str());
    }
    y[i] = av[i * s.cols + index[i]];
  }
  const std::size_t ia = a.id();
  return t.emit({s.rows, 1}, std::move(y), Op::kGather, {ia},
                [ia, s, index = std::move(index)](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& in = tp.node(ia);
                  for (std::size_t i = 0; i < s.rows; ++i) in.grad[i * s.cols + index[i]] += dy[i];
                });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Shape s = table.shape();
  auto tv = table.value();
  std::vector<std::size_t> rows(ids.size());
  std::vector<double> y(ids.size() * s.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= s.rows) {
      throw Error(ErrorKind::kInvalidInput, "embedding id " + std::to_string(ids[i]) +
                                                " out of range for " + s.str());
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
    std::copy_n(tv.data() + rows[i] * s.cols, s.cols, y.data() + i * s.cols);
  }
  const std::size_t it = table.id();
  return t.emit({ids.size(), s.cols}, std::move(y), Op::kEmbedding, {it},
                [it, s, rows = std::move(rows)](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& in = tp.node(it);
                  for (std::size_t i = 0; i < rows.size(); ++i)
                    for (std::size_t j = 0; j < s.cols; ++j)
                      in.grad[rows[i] * s.cols + j] += dy[i * s.cols + j];
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  auto av = a.value();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  const std::size_t ia = a.id();
  return t.emit({1, 1}, {total}, Op::kSum, {ia}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.node(self).grad[0];
    for (double& v : tp.node(ia).grad) v += g;
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  auto av = a.value();
  if (av.empty()) throw Error(ErrorKind::kShape, "mean of empty tensor");
  const double n = static_cast<double>(av.size());
  const double m = std::accumulate(av.begin(), av.end(), 0.0) / n;
  const std::size_t ia = a.id();
  return t.emit({1, 1}, {m}, Op::kMean, {ia}, [ia, n](Tape& tp, std::size_t self) {
    const double g = tp.node(self).grad[0] / n;
    for (double& v : tp.node(ia).grad) v += g;
  });
}

Var select_by_mask(Var a, std::vector<double> mask) {
  Tape& t = tape_of(a);
  auto av = a.value();
  if (mask.size() != av.size()) {
    throw Error(ErrorKind::kShape, "select_by_mask: mask of " + std::to_string(mask.size()) +
                                       " for " + a.shape().str());
  }
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = mask[i] != 0.0 ? av[i] * mask[i] : 0.0;
  const std::size_t ia = a.id();
  return t.emit(a.shape(), std::move(y), Op::kSelectByMask, {ia},
                [ia, mask = std::move(mask)](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& in = tp.node(ia);
                  for (std::size_t i = 0; i < dy.size(); ++i)
                    if (mask[i] != 0.0) in.grad[i] += dy[i] * mask[i];
                });
}

Var clip(Var a, double lo, double hi) {
  if (lo > hi) throw Error(ErrorKind::kInvalidInput, "clip bounds inverted");
  return unary(
      a, Op::kClip, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("minimum", a, b);
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] <= bv[i] ? av[i] : bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.emit(a.shape(), std::move(y), Op::kMinimum, {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& dy = tp.node(self).grad;
    auto& na = tp.node(ia);
    auto& nb = tp.node(ib);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (na.value[i] <= nb.value[i]) {
        na.grad[i] += dy[i];
      } else {
        nb.grad[i] += dy[i];
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  tape_of(x, bias);
  const Shape s = x.shape();
  if (gain.shape() != Shape{1, s.cols} || bias.shape() != Shape{1, s.cols}) {
    throw Error(ErrorKind::kShape, "layer_norm: input " + s.str() + " gain " +
                                       gain.shape().str() + " bias " + bias.shape().str());
  }
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  std::vector<double> xhat(s.size());
  std::vector<double> inv_std(s.rows);
  std::vector<double> y(s.size());
  const double n = static_cast<double>(s.cols);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const double* xi = xv.data() + i * s.cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) mu += xi[j];
    mu /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= n;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < s.cols; ++j) {
      const double h = (xi[j] - mu) * inv_std[i];
      xhat[i * s.cols + j] = h;
      y[i * s.cols + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.emit(s, std::move(y), Op::kLayerNorm, {ix, ig, ib},
                [ix, ig, ib, s, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& nx = tp.node(ix);
                  auto& ng = tp.node(ig);
                  auto& nb = tp.node(ib);
                  for (std::size_t i = 0; i < s.rows; ++i) {
                    const double* dyi = dy.data() + i * s.cols;
                    const double* hi = xhat.data() + i * s.cols;
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < s.cols; ++j) {
                      if (ng.requires_grad) ng.grad[j] += dyi[j] * hi[j];
                      if (nb.requires_grad) nb.grad[j] += dyi[j];
                      const double dh = dyi[j] * ng.value[j];
                      mean_dh += dh;
                      mean_dh_h += dh * hi[j];
                    }
                    if (!nx.requires_grad) continue;
                    mean_dh /= n;
                    mean_dh_h /= n;
                    for (std::size_t j = 0; j < s.cols; ++j) {
                      const double dh = dyi[j] * ng.value[j];
                      nx.grad[i * s.cols + j] += inv_std[i] * (dh - mean_dh - hi[j] * mean_dh_h);
                    }
                  }
                });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Shape s = a.shape();
  if (begin + count > s.cols) {
    throw Error(ErrorKind::kShape, "slice_cols [" + std::to_string(begin) + ", " +
                                       std::to_string(begin + count) + ") of " + s.str());
  }
  auto av = a.value();
  std::vector<double> y(s.rows * count);
  for (std::size_t i = 0; i < s.rows; ++i)
    std::copy_n(av.data() + i * s.cols + begin, count, y.data() + i * count);
  const std::size_t ia = a.id();
  return t.emit({s.rows, count}, std::move(y), Op::kSliceCols, {ia},
                [ia, s, begin, count](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& in = tp.node(ia);
                  for (std::size_t i = 0; i < s.rows; ++i)
                    for (std::size_t j = 0; j < count; ++j)
                      in.grad[i * s.cols + begin + j] += dy[i * count + j];
                });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(a);
  const Shape s = a.shape();
  if (begin + count > s.rows) {
    throw Error(ErrorKind::kShape, "slice_rows [" + std::to_string(begin) + ", " +
                                       std::to_string(begin + count) + ") of " + s.str());
  }
  auto av = a.value();
  std::vector<double> y(av.begin() + static_cast<std::ptrdiff_t>(begin * s.cols),
                        av.begin() + static_cast<std::ptrdiff_t>((begin + count) * s.cols));
  const std::size_t ia = a.id();
  return t.emit({count, s.cols}, std::move(y), Op::kSliceRows, {ia},
                [ia, s, begin](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  auto& in = tp.node(ia);
                  for (std::size_t i = 0; i < dy.size(); ++i) in.grad[begin * s.cols + i] += dy[i];
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::kShape, "concat_cols of nothing");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].shape().rows;
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    if (p.shape().rows != rows) {
      throw Error(ErrorKind::kShape, "concat_cols: " + parts[0].shape().str() + " vs " + p.shape().str());
    }
    ids.push_back(p.id());
    widths.push_back(p.shape().cols);
    cols += p.shape().cols;
  }
  std::vector<double> y(rows * cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto pv = p.value();
    const std::size_t w = p.shape().cols;
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(pv.data() + i * w, w, y.data() + i * cols + offset);
    offset += w;
  }
  std::vector<std::size_t> inputs = ids;
  return t.emit({rows, cols}, std::move(y), Op::kConcatCols, std::move(inputs),
                [ids, widths, rows, cols](Tape& tp, std::size_t self) {
                  const auto& dy = tp.node(self).grad;
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < ids.size(); ++k) {
                    auto& in = tp.node(ids[k]);
                    const std::size_t w = widths[k];
                    if (in.requires_grad) {
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < w; ++j) in.grad[i * w + j] += dy[i * cols + off + j];
                    }
                    off += w;
                  }
                });
}

}  // namespace rlvr::graph
