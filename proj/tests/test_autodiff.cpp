#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <functional>

#include "exdrop/autodiff.hpp"
#include "exdrop/matrix.hpp"
#include "exdrop/rng.hpp"

using namespace exdrop;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Random values pushed away from zero, for kinked ops like relu where a
// finite-difference probe must not cross the kink.
Matrix random_offzero(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m = random_matrix(rows, cols, rng);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data()[i] += m.data()[i] >= 0.0 ? 0.25 : -0.25;
  }
  return m;
}

// Builds the loss twice: once as a graph for backward(), once numerically
// inside finite_diff_grad. Returns the worst entry disagreement.
double grad_gap(const std::function<Var(const Var&)>& build, const Matrix& x,
                double h = 1e-6) {
  Var input = leaf(x);
  Var loss = build(input);
  REQUIRE(loss.value().rows() == 1);
  REQUIRE(loss.value().cols() == 1);
  backward(loss);
  const Matrix analytic = input.grad();

  const Matrix numeric = finite_diff_grad(
      [&](const Matrix& m) { return build(leaf(m)).value()(0, 0); }, x, h);
  return max_abs_diff(analytic, numeric);
}

constexpr double kGradTol = 5e-7;

}  // namespace

TEST_CASE("matmul gradients in both arguments") {
  Rng rng(31);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(4, 2, rng);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(matmul(v, leaf(b))); }, a) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(matmul(leaf(a), v)); }, b) <
        kGradTol);
}

TEST_CASE("transpose, add, sub, scale gradients") {
  Rng rng(32);
  const Matrix x = random_matrix(3, 5, rng);
  const Matrix c = random_matrix(3, 5, rng);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(transpose(v)); }, x) < kGradTol);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(add(v, leaf(c))); }, x) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(sub(leaf(c), v)); }, x) <
        kGradTol);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(scale(v, -1.7)); }, x) <
        kGradTol);
}

TEST_CASE("hadamard and relu gradients") {
  Rng rng(33);
  const Matrix x = random_offzero(4, 3, rng);
  const Matrix c = random_matrix(4, 3, rng);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(hadamard(v, leaf(c))); }, x) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(hadamard(leaf(c), v)); }, x) <
        kGradTol);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(relu(v)); }, x) < kGradTol);
}

TEST_CASE("row_softmax and row_normalize gradients") {
  Rng rng(34);
  const Matrix s = random_matrix(4, 5, rng);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(row_softmax(v)); }, s) <
        kGradTol);

  Matrix pos = random_matrix(4, 5, rng);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos.data()[i] = std::abs(pos.data()[i]) + 0.5;
  }
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(row_normalize(v)); }, pos) <
        kGradTol);
}

TEST_CASE("layer_norm gradients for input, gain, and bias") {
  Rng rng(35);
  const Matrix x = random_matrix(3, 6, rng);
  const Matrix gain = random_matrix(1, 6, rng);
  const Matrix bias = random_matrix(1, 6, rng);
  CHECK(grad_gap(
            [&](const Var& v) { return frobenius_sq(layer_norm(v, leaf(gain), leaf(bias))); },
            x) < kGradTol);
  CHECK(grad_gap(
            [&](const Var& v) { return frobenius_sq(layer_norm(leaf(x), v, leaf(bias))); },
            gain) < kGradTol);
  CHECK(grad_gap(
            [&](const Var& v) { return frobenius_sq(layer_norm(leaf(x), leaf(gain), v)); },
            bias) < kGradTol);
}

TEST_CASE("reduction gradients: trace, trace_product, frobenius_sq, diag_part") {
  Rng rng(36);
  const Matrix sq = random_matrix(4, 4, rng);
  const Matrix b = random_matrix(4, 4, rng);
  CHECK(grad_gap([](const Var& v) { return trace(v); }, sq) < kGradTol);
  CHECK(grad_gap([&](const Var& v) { return trace_product(v, leaf(b)); }, sq) < kGradTol);
  CHECK(grad_gap([&](const Var& v) { return trace_product(leaf(sq), v); }, b) < kGradTol);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(v); }, sq) < kGradTol);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(diag_part(v)); }, sq) < kGradTol);
}

TEST_CASE("add_rowvec gradients for both operands") {
  Rng rng(37);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(1, 3, rng);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(add_rowvec(v, leaf(b))); }, x) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(add_rowvec(leaf(x), v)); }, b) <
        kGradTol);
}

TEST_CASE("stack and slice gradients scatter into the right rows") {
  Rng rng(38);
  const Matrix x = random_matrix(3, 4, rng);
  const Matrix other = random_matrix(2, 4, rng);
  const Matrix wide = random_matrix(3, 2, rng);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(vstack(v, leaf(other))); }, x) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(vstack(leaf(other), v)); }, x) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return frobenius_sq(hstack(v, leaf(wide))); }, x) <
        kGradTol);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(take_row(v, 1)); }, x) <
        kGradTol);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(take_rows(v, 1, 3)); }, x) <
        kGradTol);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(take_cols(v, 1, 3)); }, x) <
        kGradTol);
}

TEST_CASE("n-ary sum accumulates repeated uses of one input") {
  Rng rng(39);
  const Matrix x = random_matrix(3, 3, rng);
  CHECK(grad_gap(
            [](const Var& v) {
              return frobenius_sq(sum({v, scale(v, 2.0), transpose(transpose(v))}));
            },
            x) < kGradTol);
}

TEST_CASE("concat_rows gradient") {
  Rng rng(40);
  const Matrix x = random_matrix(3, 4, rng);
  CHECK(grad_gap(
            [](const Var& v) {
              return frobenius_sq(concat_rows({take_row(v, 2), take_row(v, 0)}));
            },
            x) < kGradTol);
}

TEST_CASE("softmax_cross_entropy value matches a scalar reference") {
  const Matrix logits{{1.0, 2.0, 0.5}, {-1.0, 0.0, 3.0}};
  const std::vector<int> labels{1, 2};

  double want = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < 3; ++j) mx = std::max(mx, logits(i, j));
    double lse = 0.0;
    for (std::size_t j = 0; j < 3; ++j) lse += std::exp(logits(i, j) - mx);
    lse = mx + std::log(lse);
    want += lse - logits(i, static_cast<std::size_t>(labels[i]));
  }
  want /= 2.0;

  const Var loss = softmax_cross_entropy(leaf(logits), labels);
  CHECK(loss.value()(0, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy gradient") {
  Rng rng(41);
  const Matrix logits = random_matrix(4, 3, rng);
  const std::vector<int> labels{2, 0, 1, 1};
  CHECK(grad_gap([&](const Var& v) { return softmax_cross_entropy(v, labels); },
                 logits) < kGradTol);
}

TEST_CASE("deep composition gradient through a two-layer network") {
  Rng rng(42);
  const Matrix x = random_offzero(4, 5, rng);
  const Matrix w1 = random_matrix(5, 6, rng);
  const Matrix w2 = random_matrix(6, 3, rng);
  const std::vector<int> labels{0, 2, 1, 0};

  auto network = [&](const Var& a, const Var& b, const Var& c) {
    return softmax_cross_entropy(matmul(relu(matmul(a, b)), c), labels);
  };
  CHECK(grad_gap([&](const Var& v) { return network(leaf(x), v, leaf(w2)); }, w1) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return network(leaf(x), leaf(w1), v); }, w2) <
        kGradTol);
  CHECK(grad_gap([&](const Var& v) { return network(v, leaf(w1), leaf(w2)); }, x) <
        kGradTol);
}

TEST_CASE("backward demands a scalar loss") {
  Rng rng(43);
  Var v = leaf(random_matrix(2, 2, rng));
  CHECK_THROWS_AS(backward(v), std::invalid_argument);
}

TEST_CASE("backward twice overwrites instead of accumulating") {
  Rng rng(44);
  const Matrix x = random_matrix(3, 3, rng);
  Var input = leaf(x);
  Var loss = frobenius_sq(input);
  backward(loss);
  const Matrix first = input.grad();
  backward(loss);
  CHECK(max_abs_diff(input.grad(), first) == 0.0);
}

TEST_CASE("a leaf used on two paths receives both contributions") {
  Rng rng(45);
  const Matrix x = random_matrix(3, 3, rng);
  CHECK(grad_gap([](const Var& v) { return frobenius_sq(add(v, v)); }, x) < kGradTol);
  // d/dx ||x + x||^2 = 8x, twice the single-use gradient.
  Var input = leaf(x);
  Var loss = frobenius_sq(add(input, input));
  backward(loss);
  CHECK(max_abs_diff(input.grad(), scale(x, 8.0)) < 1e-12);
}
