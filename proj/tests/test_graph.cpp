#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "rlvr/error.hpp"
#include "rlvr/graph.hpp"

using namespace rlvr;
using namespace rlvr::graph;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::kInvalidInput;
}

}  // namespace

TEST_CASE("random graphs match central finite differences") {
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const oracle::GradCheck c = oracle::check_random_graph(seed);
    worst = std::max(worst, c.max_rel_error);
    checked += c.checked;
    skipped += c.skipped;
  }
  CHECK(worst < 1e-4);
  CHECK(checked > 1000);
  CHECK(static_cast<double>(skipped) < 0.02 * static_cast<double>(checked));
}

TEST_CASE("matmul forward against hand values") {
  Tape t;
  Var a = t.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  Var b = t.constant({3, 2}, {7, 8, 9, 10, 11, 12});
  CHECK(vec(matmul(a, b).value()) == std::vector<double>{58, 64, 139, 154});
  CHECK(vec(matmul_nt(a, a).value()) == std::vector<double>{14, 32, 32, 77});
  CHECK(vec(transpose(a).value()) == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("affine broadcasts the bias over rows") {
  Tape t;
  Var x = t.constant({2, 2}, {1, 0, 0, 1});
  Var w = t.constant({2, 2}, {2, 3, 4, 5});
  Var b = t.constant({1, 2}, {10, 20});
  CHECK(vec(affine(x, w, b).value()) == std::vector<double>{12, 23, 14, 25});
}

TEST_CASE("softmax rows sum to one and respect temperature") {
  Tape t;
  Var z = t.constant({2, 3}, {1, 2, 3, 0, 0, 0});
  for (double temp : {0.5, 1.0, 4.0}) {
    auto p = vec(softmax(z, temp).value());
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p[3] == doctest::Approx(1.0 / 3.0));
    const double e = std::exp(1.0 / temp);
    CHECK(p[2] / p[1] == doctest::Approx(e));
  }
  CHECK(kind_of([&] { softmax(z, 0.0); }) == ErrorKind::kInvalidTemperature);
  CHECK(kind_of([&] { softmax_with_temperature(std::vector<double>{1.0}, -1.0); }) ==
        ErrorKind::kInvalidTemperature);
}

TEST_CASE("log_softmax equals log of softmax") {
  Tape t;
  Var z = t.constant({1, 4}, {0.3, -1.2, 2.0, 0.7});
  auto a = vec(log_softmax(z).value());
  auto b = vec(log(softmax(z, 1.0)).value());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
}

TEST_CASE("causal softmax zeroes the upper triangle exactly") {
  Tape t;
  Var s = t.leaf({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Var p = causal_softmax(s);
  auto v = vec(p.value());
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 0.0);
  CHECK(v[5] == 0.0);
  CHECK(v[3] + v[4] == doctest::Approx(1.0));
  t.backward(sum(mul(p, t.constant({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}))));
  auto g = vec(s.grad());
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[5] == 0.0);
}

TEST_CASE("layer_norm output has zero mean and unit variance per row") {
  Tape t;
  Var x = t.constant({2, 4}, {1, 2, 3, 4, -5, 0, 5, 10});
  Var y = layer_norm(x, t.constant({1, 4}, {1, 1, 1, 1}), t.constant({1, 4}, {0, 0, 0, 0}), 0.0);
  auto v = vec(y.value());
  for (int r = 0; r < 2; ++r) {
    double m = 0, s = 0;
    for (int c = 0; c < 4; ++c) m += v[r * 4 + c];
    m /= 4;
    for (int c = 0; c < 4; ++c) s += (v[r * 4 + c] - m) * (v[r * 4 + c] - m);
    CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s / 4 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("select_by_mask passes exactly zero gradient to masked entries") {
  Tape t;
  Var a = t.leaf({1, 4}, {1, 2, 3, 4});
  Var y = select_by_mask(exp(a), {1, 0, 1, 0});
  t.backward(sum(y));
  auto g = vec(a.grad());
  CHECK(g[0] == std::exp(1.0));
  CHECK(g[1] == 0.0);
  CHECK(g[3] == 0.0);
  CHECK(vec(y.value())[1] == 0.0);
}

TEST_CASE("clip passes gradient inside the closed interval only") {
  Tape t;
  Var a = t.leaf({1, 4}, {0.5, 0.8, 1.0, 1.5});
  Var y = clip(a, 0.8, 1.28);
  CHECK(vec(y.value()) == std::vector<double>{0.8, 0.8, 1.0, 1.28});
  t.backward(sum(y));
  CHECK(vec(a.grad()) == std::vector<double>{0, 1, 1, 0});
  CHECK(kind_of([&] { clip(a, 1.0, 0.0); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("minimum routes the gradient to the first operand on ties") {
  Tape t;
  Var a = t.leaf({1, 3}, {1, 5, 2});
  Var b = t.leaf({1, 3}, {1, 3, 4});
  t.backward(sum(minimum(a, b)));
  CHECK(vec(a.grad()) == std::vector<double>{1, 0, 1});
  CHECK(vec(b.grad()) == std::vector<double>{0, 1, 0});
}

TEST_CASE("gather and embedding select entries") {
  Tape t;
  Var a = t.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(vec(gather(a, {2, 0}).value()) == std::vector<double>{3, 4});
  std::vector<int> ids = {1, 1, 0};
  Var e = embedding(a, ids);
  CHECK(e.shape() == Shape{3, 3});
  t.backward(sum(e));
  CHECK(vec(a.grad()) == std::vector<double>{1, 1, 1, 2, 2, 2});
  CHECK(kind_of([&] { gather(a, {3, 0}); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("slices and concatenation") {
  Tape t;
  Var a = t.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(vec(slice_cols(a, 1, 2).value()) == std::vector<double>{2, 3, 5, 6});
  CHECK(vec(slice_rows(a, 1, 1).value()) == std::vector<double>{4, 5, 6});
  std::vector<Var> parts = {slice_cols(a, 2, 1), slice_cols(a, 0, 1)};
  CHECK(vec(concat_cols(parts).value()) == std::vector<double>{3, 1, 6, 4});
  CHECK(kind_of([&] { slice_cols(a, 2, 2); }) == ErrorKind::kShape);
  CHECK(kind_of([&] { slice_rows(a, 0, 3); }) == ErrorKind::kShape);
}

TEST_CASE("shape errors name both shapes") {
  Tape t;
  Var a = t.constant({2, 3}, std::vector<double>(6, 1.0));
  Var b = t.constant({3, 2}, std::vector<double>(6, 1.0));
  try {
    add(a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
    CHECK(std::string(e.what()).find("2x3") != std::string::npos);
    CHECK(std::string(e.what()).find("3x2") != std::string::npos);
  }
  CHECK(kind_of([&] { matmul(a, a); }) == ErrorKind::kShape);
}

TEST_CASE("backward requires a scalar root") {
  Tape t;
  Var a = t.leaf({1, 2}, {1, 2});
  CHECK(kind_of([&] { t.backward(a); }) == ErrorKind::kRank);
}

TEST_CASE("leaf gradients accumulate until zero_grad") {
  Tape t;
  Var a = t.leaf({1, 1}, {3.0});
  Var y = mul(a, a);
  t.backward(y);
  t.backward(y);
  CHECK(a.grad()[0] == 12.0);
  t.zero_grad();
  t.backward(y);
  CHECK(a.grad()[0] == 6.0);
}

TEST_CASE("constants receive no gradient") {
  Tape t;
  Var c = t.constant({1, 2}, {1, 2});
  Var a = t.leaf({1, 2}, {3, 4});
  t.backward(sum(mul(a, c)));
  for (double g : c.grad()) CHECK(g == 0.0);
  CHECK(vec(a.grad()) == std::vector<double>{1, 2});
}

TEST_CASE("gelu uses the tanh approximation") {
  Tape t;
  const double x = 0.7;
  Var y = gelu(t.constant({1, 1}, {x}));
  const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
  CHECK(y.item() == doctest::Approx(ref).epsilon(1e-15));
}
