#include "rlvr/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "rlvr/error.hpp"
#include "rlvr/fileutil.hpp"
#include "rlvr/rng.hpp"

namespace rlvr {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;
constexpr std::size_t kTensorsPerLayer = 12;

enum LayerSlot : std::size_t {
  kLn1Gain = 0,
  kLn1Bias,
  kQkvW,
  kQkvB,
  kAttnOutW,
  kAttnOutB,
  kLn2Gain,
  kLn2Bias,
  kMlpInW,
  kMlpInB,
  kMlpOutW,
  kMlpOutB,
};

constexpr std::size_t kTokEmb = 0;
constexpr std::size_t kPosEmb = 1;

std::size_t layer_index(std::size_t layer, LayerSlot slot) {
  return 2 + layer * kTensorsPerLayer + slot;
}

std::size_t final_index(const ModelConfig& c, std::size_t k) {
  return 2 + static_cast<std::size_t>(c.n_layers) * kTensorsPerLayer + k;
}

struct TensorSpec {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

std::vector<TensorSpec> layout(const ModelConfig& c) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ctx = static_cast<std::size_t>(c.context_len);
  const auto ff = static_cast<std::size_t>(c.d_ff());
  std::vector<TensorSpec> specs = {{"tok_emb", v, d}, {"pos_emb", ctx, d}};
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    specs.push_back({p + "ln1.gain", 1, d});
    specs.push_back({p + "ln1.bias", 1, d});
    specs.push_back({p + "attn.w_qkv", d, 3 * d});
    specs.push_back({p + "attn.b_qkv", 1, 3 * d});
    specs.push_back({p + "attn.w_out", d, d});
    specs.push_back({p + "attn.b_out", 1, d});
    specs.push_back({p + "ln2.gain", 1, d});
    specs.push_back({p + "ln2.bias", 1, d});
    specs.push_back({p + "mlp.w_in", d, ff});
    specs.push_back({p + "mlp.b_in", 1, ff});
    specs.push_back({p + "mlp.w_out", ff, d});
    specs.push_back({p + "mlp.b_out", 1, d});
  }
  specs.push_back({"lnf.gain", 1, d});
  specs.push_back({"lnf.bias", 1, d});
  specs.push_back({"head.w", d, v});
  specs.push_back({"head.b", 1, v});
  return specs;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
  if (vocab_size <= 0) fail("vocab_size must be positive");
  if (d_model <= 0) fail("d_model must be positive");
  if (n_layers <= 0) fail("n_layers must be positive");
  if (n_heads <= 0) fail("n_heads must be positive");
  if (context_len <= 0) fail("context_len must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

bool PolicyParams::operator==(const PolicyParams& other) const {
  if (!(config == other.config) || version_tag != other.version_tag ||
      tensors.size() != other.tensors.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = other.tensors[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.values.size() != b.values.size()) {
      return false;
    }
    if (!a.values.empty() &&
        std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto ctx = static_cast<std::size_t>(c.context_len);
  const auto ff = static_cast<std::size_t>(c.d_ff());
  const std::size_t per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d);
  return v * d + ctx * d + static_cast<std::size_t>(c.n_layers) * per_layer + 2 * d + d * v + v;
}

PolicyParams init_params(const ModelConfig& config) {
  config.validate();
  PolicyParams p;
  p.config = config;
  Rng rng(derive_seed({config.seed, 0x1A17ULL}));
  const double resid_std = kInitStd / std::sqrt(2.0 * config.n_layers);
  for (const auto& spec : layout(config)) {
    ParamTensor t{spec.name, spec.rows, spec.cols, std::vector<double>(spec.rows * spec.cols, 0.0)};
    if (ends_with(spec.name, ".gain")) {
      std::fill(t.values.begin(), t.values.end(), 1.0);
    } else if (spec.rows > 1) {
      const bool residual = ends_with(spec.name, "attn.w_out") || ends_with(spec.name, "mlp.w_out");
      const double std_dev = residual ? resid_std : kInitStd;
      for (double& x : t.values) x = std_dev * rng.normal();
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

void check_tokens(const ModelConfig& config, std::span<const int> tokens) {
  if (tokens.empty()) throw Error(ErrorKind::kInvalidInput, "empty token prefix");
  if (tokens.size() > static_cast<std::size_t>(config.context_len)) {
    throw Error(ErrorKind::kContext, "prefix length " + std::to_string(tokens.size()) +
                                         " exceeds context_len " + std::to_string(config.context_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= config.vocab_size) {
      throw Error(ErrorKind::kVocabulary, "token id " + std::to_string(t) + " outside vocabulary of " +
                                              std::to_string(config.vocab_size));
    }
  }
}

// --- ModelGraph ------------------------------------------------------------

ModelGraph::ModelGraph(graph::Tape& tape, const PolicyParams& params, bool trainable)
    : tape_(&tape), params_(&params) {
  leaves_.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    graph::Shape s{t.rows, t.cols};
    leaves_.push_back(trainable ? tape.leaf(s, t.values) : tape.constant(s, t.values));
  }
}

graph::Var ModelGraph::logits(std::span<const int> tokens) const {
  using namespace graph;
  const ModelConfig& c = params_->config;
  check_tokens(c, tokens);
  const std::size_t n = tokens.size();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto heads = static_cast<std::size_t>(c.n_heads);
  const std::size_t hd = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  Var x = add(embedding(leaves_[kTokEmb], tokens), embedding(leaves_[kPosEmb], positions));

  for (std::size_t l = 0; l < static_cast<std::size_t>(c.n_layers); ++l) {
    auto L = [&](LayerSlot s) { return leaves_[layer_index(l, s)]; };
    Var h = layer_norm(x, L(kLn1Gain), L(kLn1Bias), kLayerNormEps);
    Var qkv = affine(h, L(kQkvW), L(kQkvB));
    std::vector<Var> head_out;
    head_out.reserve(heads);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      Var q = slice_cols(qkv, hh * hd, hd);
      Var k = slice_cols(qkv, d + hh * hd, hd);
      Var v = slice_cols(qkv, 2 * d + hh * hd, hd);
      Var att = causal_softmax(scale(matmul_nt(q, k), att_scale));
      head_out.push_back(matmul(att, v));
    }
    Var attn = heads == 1 ? head_out[0] : concat_cols(head_out);
    x = add(x, affine(attn, L(kAttnOutW), L(kAttnOutB)));
    Var h2 = layer_norm(x, L(kLn2Gain), L(kLn2Bias), kLayerNormEps);
    Var ff = gelu(affine(h2, L(kMlpInW), L(kMlpInB)));
    x = add(x, affine(ff, L(kMlpOutW), L(kMlpOutB)));
  }
  Var hf = layer_norm(x, leaves_[final_index(c, 0)], leaves_[final_index(c, 1)], kLayerNormEps);
  return affine(hf, leaves_[final_index(c, 2)], leaves_[final_index(c, 3)]);
}

ModelGraph::Scored ModelGraph::score(std::span<const int> query, std::span<const int> response) const {
  using namespace graph;
  if (query.empty()) throw Error(ErrorKind::kInvalidInput, "empty query");
  if (response.empty()) throw Error(ErrorKind::kInvalidInput, "empty response");
  std::vector<int> tokens(query.begin(), query.end());
  tokens.insert(tokens.end(), response.begin(), response.end());
  check_tokens(params_->config, tokens);
  tokens.pop_back();
  Var all = logits(tokens);
  // Rows |q|-1 .. end predict the response tokens.
  Var rows = slice_rows(all, query.size() - 1, response.size());
  std::vector<std::size_t> idx(response.begin(), response.end());
  Var lp = gather(log_softmax(rows), std::move(idx));
  return {lp, rows};
}

ParamGrads ModelGraph::gradients() const {
  ParamGrads g;
  g.reserve(leaves_.size());
  for (const auto& leaf : leaves_) {
    auto s = leaf.grad();
    g.emplace_back(s.begin(), s.end());
  }
  return g;
}

Matrix forward_logits(const PolicyParams& params, std::span<const int> prefix) {
  graph::Tape tape;
  ModelGraph g(tape, params, false);
  graph::Var z = g.logits(prefix);
  auto v = z.value();
  return Matrix{z.shape().rows, z.shape().cols, std::vector<double>(v.begin(), v.end())};
}

std::vector<double> sequence_log_probs(const PolicyParams& params, std::span<const int> query,
                                       std::span<const int> response) {
  graph::Tape tape;
  ModelGraph g(tape, params, false);
  auto lp = g.score(query, response).log_probs.value();
  return std::vector<double>(lp.begin(), lp.end());
}

// --- IncrementalForward ----------------------------------------------------

namespace {

void layer_norm_row(const double* x, const double* gain, const double* bias, double* y, std::size_t n) {
  const double dn = static_cast<double>(n);
  double mu = 0.0;
  for (std::size_t j = 0; j < n; ++j) mu += x[j];
  mu /= dn;
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= dn;
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mu) * inv * gain[j] + bias[j];
}

void affine_row(const double* x, const ParamTensor& w, const ParamTensor& b, double* y) {
  const std::size_t k = w.rows, n = w.cols;
  for (std::size_t j = 0; j < n; ++j) y[j] = b.values[j];
  for (std::size_t p = 0; p < k; ++p) {
    const double xp = x[p];
    const double* wp = w.values.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xp * wp[j];
  }
}

double gelu_scalar(double x) {
  constexpr double c = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

}  // namespace

IncrementalForward::IncrementalForward(const PolicyParams& params)
    : params_(&params),
      keys_(static_cast<std::size_t>(params.config.n_layers)),
      values_(static_cast<std::size_t>(params.config.n_layers)),
      logits_(static_cast<std::size_t>(params.config.vocab_size)) {}

std::span<const double> IncrementalForward::push(int token) {
  const ModelConfig& c = params_->config;
  if (token < 0 || token >= c.vocab_size) {
    throw Error(ErrorKind::kVocabulary, "token id " + std::to_string(token) + " outside vocabulary");
  }
  if (length_ >= static_cast<std::size_t>(c.context_len)) {
    throw Error(ErrorKind::kContext, "incremental forward exceeded context_len");
  }
  const auto& T = params_->tensors;
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto heads = static_cast<std::size_t>(c.n_heads);
  const std::size_t hd = d / heads;
  const auto ff = static_cast<std::size_t>(c.d_ff());
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t pos = length_;

  std::vector<double> x(d), h(d), qkv(3 * d), attn(d), tmp(d), hidden(ff);
  const auto tok = static_cast<std::size_t>(token);
  for (std::size_t j = 0; j < d; ++j) x[j] = T[kTokEmb].values[tok * d + j] + T[kPosEmb].values[pos * d + j];

  std::vector<double> scores;
  for (std::size_t l = 0; l < static_cast<std::size_t>(c.n_layers); ++l) {
    auto P = [&](LayerSlot s) -> const ParamTensor& { return T[layer_index(l, s)]; };
    layer_norm_row(x.data(), P(kLn1Gain).values.data(), P(kLn1Bias).values.data(), h.data(), d);
    affine_row(h.data(), P(kQkvW), P(kQkvB), qkv.data());
    auto& K = keys_[l];
    auto& V = values_[l];
    K.insert(K.end(), qkv.begin() + static_cast<std::ptrdiff_t>(d), qkv.begin() + static_cast<std::ptrdiff_t>(2 * d));
    V.insert(V.end(), qkv.begin() + static_cast<std::ptrdiff_t>(2 * d), qkv.end());
    const std::size_t n = pos + 1;
    scores.resize(n);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const double* q = qkv.data() + hh * hd;
      for (std::size_t j = 0; j < n; ++j) {
        const double* k = K.data() + j * d + hh * hd;
        double s = 0.0;
        for (std::size_t p = 0; p < hd; ++p) s += q[p] * k[p];
        scores[j] = s * att_scale;
      }
      double m = scores[0];
      for (std::size_t j = 1; j < n; ++j) m = std::max(m, scores[j]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        scores[j] = std::exp((scores[j] - m) * 1.0);
        total += scores[j];
      }
      const double inv = 1.0 / total;
      for (std::size_t j = 0; j < n; ++j) scores[j] *= inv;
      double* out = attn.data() + hh * hd;
      std::fill(out, out + hd, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double a = scores[j];
        const double* v = V.data() + j * d + hh * hd;
        for (std::size_t p = 0; p < hd; ++p) out[p] += a * v[p];
      }
    }
    affine_row(attn.data(), P(kAttnOutW), P(kAttnOutB), tmp.data());
    for (std::size_t j = 0; j < d; ++j) x[j] = x[j] + tmp[j];
    layer_norm_row(x.data(), P(kLn2Gain).values.data(), P(kLn2Bias).values.data(), h.data(), d);
    affine_row(h.data(), P(kMlpInW), P(kMlpInB), hidden.data());
    for (double& u : hidden) u = gelu_scalar(u);
    affine_row(hidden.data(), P(kMlpOutW), P(kMlpOutB), tmp.data());
    for (std::size_t j = 0; j < d; ++j) x[j] = x[j] + tmp[j];
  }
  layer_norm_row(x.data(), T[final_index(c, 0)].values.data(), T[final_index(c, 1)].values.data(), h.data(), d);
  affine_row(h.data(), T[final_index(c, 2)], T[final_index(c, 3)], logits_.data());
  ++length_;
  return logits_;
}

// --- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'L', 'V', 'R', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::kParse, "checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const PolicyParams& params) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointFormatVersion);
  const ModelConfig& c = params.config;
  put_u64(out, static_cast<std::uint64_t>(c.vocab_size));
  put_u64(out, static_cast<std::uint64_t>(c.d_model));
  put_u64(out, static_cast<std::uint64_t>(c.n_layers));
  put_u64(out, static_cast<std::uint64_t>(c.n_heads));
  put_u64(out, static_cast<std::uint64_t>(c.context_len));
  put_u64(out, c.seed);
  put_u64(out, params.version_tag);
  put_u64(out, params.tensors.size());
  for (const auto& t : params.tensors) {
    put_u64(out, t.rows);
    put_u64(out, t.cols);
    for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

PolicyParams deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(ErrorKind::kFormat, "not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorKind::kFormat, "checkpoint format version " + std::to_string(version) +
                                        ", expected " + std::to_string(kCheckpointFormatVersion));
  }
  PolicyParams p;
  p.config.vocab_size = static_cast<int>(r.u64());
  p.config.d_model = static_cast<int>(r.u64());
  p.config.n_layers = static_cast<int>(r.u64());
  p.config.n_heads = static_cast<int>(r.u64());
  p.config.context_len = static_cast<int>(r.u64());
  p.config.seed = r.u64();
  p.config.validate();
  p.version_tag = r.u64();
  const auto specs = layout(p.config);
  if (r.u64() != specs.size()) throw Error(ErrorKind::kFormat, "tensor count does not match config");
  for (const auto& spec : specs) {
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows != spec.rows || cols != spec.cols) {
      throw Error(ErrorKind::kFormat, "tensor " + spec.name + " has unexpected shape");
    }
    ParamTensor t{spec.name, spec.rows, spec.cols, std::vector<double>(spec.rows * spec.cols)};
    for (double& v : t.values) v = r.f64();
    p.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorKind::kFormat, "trailing bytes after checkpoint payload");
  return p;
}

void save_checkpoint(const std::string& path, const PolicyParams& params) {
  write_file_atomic(path, serialize_checkpoint(params));
}

PolicyParams load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace rlvr
