#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "deepself/error.hpp"
#include "deepself/ops.hpp"
#include "deepself/tensor.hpp"
#include "gradcheck.hpp"

using namespace deepself;
using deepself::testing::max_gradient_error;
using deepself::testing::random_dim;
using deepself::testing::random_tensor;

namespace {

// Naive triple loop, independent of the library's loop order.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor64 eye({2, 2}, {1, 0, 0, 1});
  Tensor64 b({2, 2}, {5, 6, 7, 8});
  auto id = matmul(eye, b);
  CHECK(std::vector<double>(id.data().begin(), id.data().end()) == std::vector<double>{5, 6, 7, 8});

  Tensor64 a({2, 2}, {1, 2, 3, 4});
  auto c = matmul(a, b);
  const auto expected = naive_matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2);
  CHECK(expected == std::vector<double>{19, 22, 43, 50});
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == expected);

  try {
    matmul(Tensor64({2, 3}), Tensor64({4, 5}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("convolve_nd examples") {
  Tensor64 x({1, 3}, {1, 2, 3});
  Tensor64 bias({1}, 0.0);
  ConvGeometry g{{1}, {0}};
  auto ident = convolve_nd(x, Tensor64({1, 1, 1}, {1}), bias, g);
  CHECK(ident.shape() == Shape{1, 3});
  CHECK(std::vector<double>(ident.data().begin(), ident.data().end()) == std::vector<double>{1, 2, 3});

  auto sums = convolve_nd(x, Tensor64({1, 1, 2}, {1, 1}), bias, g);
  // Sliding-window sums of width 2.
  CHECK(std::vector<double>(sums.data().begin(), sums.data().end()) == std::vector<double>{3, 5});

  CHECK_THROWS_AS(convolve_nd(x, Tensor64({1, 1, 5}, 1.0), bias, g), ConfigError);
  try {
    convolve_nd(x, Tensor64({1, 1, 5}, 1.0), bias, g);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("axis 0") != std::string::npos);
  }
}

TEST_CASE("convolve_nd is cross-correlation with bias and padding") {
  // Asymmetric kernel reveals whether it is flipped.
  Tensor64 x({1, 4}, {1, 2, 3, 4});
  auto y = convolve_nd(x, Tensor64({1, 1, 2}, {1, 10}), Tensor64({1}, {0.5}), ConvGeometry{{2}, {1}});
  // Padded input [0,1,2,3,4,0], windows at 0,2,4: [0*1+1*10, 2+30, 4+0] + 0.5
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{10.5, 32.5, 4.5});
}

TEST_CASE("convolve_nd identity property over ranks") {
  std::mt19937 rng(7);
  for (std::size_t rank = 1; rank <= 3; ++rank) {
    Shape in{1};
    Shape k{1, 1};
    for (std::size_t a = 0; a < rank; ++a) {
      in.push_back(random_dim(rng));
      k.push_back(1);
    }
    auto x = random_tensor(rng, in);
    ConvGeometry g{std::vector<std::size_t>(rank, 1), std::vector<std::size_t>(rank, 0)};
    auto y = convolve_nd(x, Tensor64(k, 1.0), Tensor64({1}, 0.0), g);
    CHECK(y.shape() == x.shape());
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  }
}

TEST_CASE("activation examples") {
  CHECK(activation(Tensor64({1}, {-1.0}), Activation::relu).item() == 0.0);
  CHECK(activation(Tensor64({1}, {0.0}), Activation::sigmoid).item() == 0.5);
  CHECK(activation(Tensor64({1}, {0.0}), Activation::tanh).item() == 0.0);
  CHECK(activation(Tensor64({1}, {-800.0}), Activation::sigmoid).item() >= 0.0);
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

TEST_CASE("softmax_cross_entropy examples") {
  std::vector<std::size_t> t0{0};
  auto uniform = softmax_cross_entropy(Tensor64({1, 4}, 3.0), t0);
  for (auto p : uniform.probabilities.data()) CHECK(p == doctest::Approx(0.25));
  CHECK(uniform.loss.item() == doctest::Approx(std::log(4.0)));

  std::vector<std::size_t> t1{1};
  auto two = softmax_cross_entropy(Tensor64({1, 2}, {1.0, 2.0}), t1);
  const double oracle = -std::log(1.0 / (1.0 + std::exp(-1.0)));
  CHECK(oracle == doctest::Approx(0.3133).epsilon(1e-3));
  CHECK(two.loss.item() == doctest::Approx(oracle).epsilon(1e-12));

  auto saturated = softmax_cross_entropy(Tensor64({1, 2}, {0.0, 100.0}), t1);
  CHECK(saturated.loss.item() == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<std::size_t> bad{2};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor64({1, 2}), bad), IndexError);
}

TEST_CASE("softmax rows sum to one for wide logits") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = random_dim(rng), c = random_dim(rng, 2, 8);
    auto p32 = softmax(Tensor({b, c}, [&] {
      std::vector<float> v(b * c);
      std::uniform_real_distribution<float> u(-50.f, 50.f);
      for (auto& x : v) x = u(rng);
      return v;
    }()));
    for (std::size_t r = 0; r < b; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < c; ++k) s += p32[r * c + k];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("backward examples") {
  Tensor64 x({3}, {1, -2, 3});
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, -4, 6});
  auto fd = finite_diff_grad<double>([](const Tensor64& v) { return sum(mul(v, v)).item(); }, x, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(fd[i] == doctest::Approx(x.grad()[i]).epsilon(1e-8));
  CHECK(Tape<double>::current().size() == 0);

  Tensor64 y({1}, {4.0});
  y.set_requires_grad(true);
  Tensor64 unrelated({2}, {1.0, 2.0});
  unrelated.set_requires_grad(true);
  backward(sum(mul(y, y)));
  CHECK(unrelated.grad()[0] == 0.0);
  CHECK(unrelated.grad()[1] == 0.0);

  y.zero_grad();
  backward(add(y, y));
  CHECK(y.grad()[0] == 2.0);

  CHECK_THROWS_AS(backward(add(x, x)), ContractError);
  CHECK(Tape<double>::current().size() == 0);
}

TEST_CASE("backward reports the op that produced a non-finite gradient") {
  Tensor64 x({1}, {1e-300});
  x.set_requires_grad(true);
  auto y = affine(affine(x, 1e200, 0.0), 1e200, 0.0);
  try {
    backward(y);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("affine") != std::string::npos);
  }
  CHECK(Tape<double>::current().size() == 0);
}

TEST_CASE("non-finite values are rejected") {
  CHECK_THROWS_AS(Tensor64({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(affine(Tensor64({1}, {1e300}), 1e300, 0.0), NumericError);
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor64 x({2}, {1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(Tape<double>::current().size() == 0);
  }
  auto z = mul(x, x);
  CHECK(z.requires_grad());
  Tape<double>::current().clear();
}

TEST_CASE("finite_diff_grad examples") {
  Tensor64 x({4}, {0.3, -1.0, 2.0, 5.0});
  auto ones = finite_diff_grad<double>([](const Tensor64& v) { return sum(v).item(); }, x, 1e-5);
  for (auto g : ones.data()) CHECK(g == doctest::Approx(1.0).epsilon(1e-9));

  auto six = finite_diff_grad<double>([](const Tensor64& v) { return sum(mul(v, v)).item(); }, Tensor64({1}, {3.0}),
                                      1e-5);
  CHECK(std::abs(six[0] - 6.0) < 1e-6);

  auto zeros = finite_diff_grad<double>([](const Tensor64&) { return 42.0; }, x, 1e-5);
  for (auto g : zeros.data()) CHECK(g == 0.0);
}

TEST_CASE("matmul associativity in 32-bit") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  auto rnd = [&](std::size_t r, std::size_t c) {
    std::vector<float> v(r * c);
    for (auto& x : v) x = u(rng);
    return Tensor({r, c}, std::move(v));
  };
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = random_dim(rng), k = random_dim(rng), l = random_dim(rng), n = random_dim(rng);
    auto a = rnd(m, k), b = rnd(k, l), c = rnd(l, n);
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.numel(); ++i) {
      const double scale = std::max({1.0, std::abs(double(left[i])), std::abs(double(right[i]))});
      CHECK(std::abs(double(left[i]) - double(right[i])) / scale <= 1e-4);
    }
  }
}

TEST_CASE("sequence reshapes permute but never alter values") {
  std::mt19937 rng(5);
  auto x = random_tensor(rng, {2, 3, 4, 5});  // B, C, F, T
  auto seq = to_sequence(x);
  CHECK(seq.shape() == Shape{2, 5, 12});
  // element (b=1, c=2, f=3, t=4) -> (b=1, t=4, feature=c*4+f)
  CHECK(seq[(1 * 5 + 4) * 12 + 2 * 4 + 3] == x[((1 * 3 + 2) * 4 + 3) * 5 + 4]);
  std::vector<double> a(x.data().begin(), x.data().end()), b(seq.data().begin(), seq.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  auto flat = random_tensor(rng, {3, 1, 1, 7});
  auto same = to_sequence(flat);
  CHECK(same.shape() == Shape{3, 7, 1});
  CHECK(std::equal(flat.data().begin(), flat.data().end(), same.data().begin()));
}

TEST_CASE("gradient check: every op, 64-bit, randomized small shapes") {
  std::mt19937 rng(2024);
  const double tol = 1e-4;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = random_dim(rng), k = random_dim(rng), n = random_dim(rng);
    auto a = random_tensor(rng, {m, k});
    auto b = random_tensor(rng, {k, n});
    auto wab = random_tensor(rng, {m, n});
    CHECK(max_gradient_error([&] { return sum(mul(matmul(a, b), wab)); }, {a, b}) <= tol);

    auto p = random_tensor(rng, {m, n});
    auto q = random_tensor(rng, {m, n});
    std::mt19937 fixed = rng;
    auto w = random_tensor(fixed, {m, n});
    CHECK(max_gradient_error([&] { return sum(mul(add(p, q), w)); }, {p, q}) <= tol);
    CHECK(max_gradient_error([&] { return sum(mul(sub(p, q), w)); }, {p, q}) <= tol);
    CHECK(max_gradient_error([&] { return sum(mul(mul(p, q), w)); }, {p, q}) <= tol);
    CHECK(max_gradient_error([&] { return sum(mul(affine(p, 2.5, -1.0), w)); }, {p}) <= tol);

    auto bias = random_tensor(rng, {n});
    CHECK(max_gradient_error([&] { return sum(mul(add_bias(p, bias), w)); }, {p, bias}) <= tol);
    for (auto kind : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
      CHECK(max_gradient_error([&] { return sum(mul(activation(p, kind), w)); }, {p}) <= tol);
    }
    CHECK(max_gradient_error([&] { return sum(mul(reshape(p, {n, m}), reshape(w, {n, m}))); }, {p}) <= tol);
    CHECK(max_gradient_error([&] { return sum(mul(concat_last(p, q), concat_last(w, w))); }, {p, q}) <= tol);

    auto x4 = random_tensor(rng, {2, m, k, n});
    auto wseq = random_tensor(rng, {2, n, m * k});
    CHECK(max_gradient_error([&] { return sum(mul(to_sequence(x4), wseq)); }, {x4}) <= tol);

    auto seq = random_tensor(rng, {m, n, k});
    auto wstep = random_tensor(rng, {m, k});
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    CHECK(max_gradient_error([&] { return sum(mul(select_step(seq, t), wstep)); }, {seq}) <= tol);

    auto s0 = random_tensor(rng, {m, k});
    auto s1 = random_tensor(rng, {m, k});
    auto wstack = random_tensor(rng, {m, 2, k});
    CHECK(max_gradient_error([&] { return sum(mul(stack_steps<double>({s0, s1}), wstack)); }, {s0, s1}) <= tol);

    auto logits = random_tensor(rng, {m, n + 1}, -3, 3);
    std::vector<std::size_t> targets(m);
    for (auto& tt : targets) tt = std::uniform_int_distribution<std::size_t>(0, n)(rng);
    CHECK(max_gradient_error([&] { return softmax_cross_entropy(logits, targets).loss; }, {logits}) <= tol);
  }
}

TEST_CASE("gradient check: convolution 1d/2d/3d with stride and padding") {
  std::mt19937 rng(99);
  for (std::size_t rank = 1; rank <= 3; ++rank) {
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t batch = random_dim(rng, 1, 3), cin = random_dim(rng, 1, 3), cout = random_dim(rng, 1, 3);
      Shape in{batch, cin}, ks{cout, cin};
      ConvGeometry g;
      for (std::size_t a = 0; a < rank; ++a) {
        const std::size_t extent = random_dim(rng, 3, rank == 3 ? 5 : 8);
        const std::size_t kernel = random_dim(rng, 1, 3);
        in.push_back(extent);
        ks.push_back(kernel);
        g.stride.push_back(random_dim(rng, 1, 2));
        g.padding.push_back(random_dim(rng, 0, 1));
      }
      auto x = random_tensor(rng, in);
      auto kern = random_tensor(rng, ks);
      auto bias = random_tensor(rng, {cout});
      auto probe = convolve_nd(x, kern, bias, g);
      Tape<double>::current().clear();
      auto w = random_tensor(rng, probe.shape());
      CHECK(max_gradient_error([&] { return sum(mul(convolve_nd(x, kern, bias, g), w)); }, {x, kern, bias}) <= 1e-4);
    }
  }
}
