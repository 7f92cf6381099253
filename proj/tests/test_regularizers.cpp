#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "exdrop/autodiff.hpp"
#include "exdrop/encoder.hpp"
#include "exdrop/matrix.hpp"
#include "exdrop/regularizers.hpp"
#include "exdrop/rng.hpp"

using namespace exdrop;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix random_attention(std::size_t n, Rng& rng) {
  return row_softmax(random_matrix(n, n, rng));
}

// Everything below is built with bare loops, independent of the library
// kernels, so the closed forms are checked against arithmetic rather than
// against themselves.

Matrix loop_mul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix loop_t(const Matrix& a) {
  Matrix c(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) c(j, i) = a(i, j);
  }
  return c;
}

// Deviation moment by its index definition: p^2 sum_r X_ri X_rj, with the
// diagonal raised to p in the exact form.
Matrix loop_B(const Matrix& x, double p, bool exact) {
  Matrix b(x.cols(), x.cols());
  for (std::size_t i = 0; i < x.cols(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) s += x(r, i) * x(r, j);
      const double factor = (exact && i == j) ? p : p * p;
      b(i, j) = factor * s;
    }
  }
  return b;
}

double half_trace(const Matrix& b, const Matrix& lam) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) s += b(i, j) * lam(j, i);
  }
  return 0.5 * s;
}

double oracle_query(const Matrix& x, const Matrix& w_q, const Matrix& w_k, double p) {
  const Matrix c = loop_mul(loop_t(x), x);
  const Matrix proj = loop_mul(loop_t(w_q), w_k);
  const Matrix lam = loop_mul(loop_mul(proj, c), loop_t(proj));
  return half_trace(loop_B(x, p, false), lam);
}

double oracle_key(const Matrix& x, const Matrix& w_q, const Matrix& w_k, double p) {
  const Matrix c = loop_mul(loop_t(x), x);
  const Matrix proj = loop_mul(loop_t(w_k), w_q);
  const Matrix lam = loop_mul(loop_mul(proj, c), loop_t(proj));
  return half_trace(loop_B(x, p, false), lam);
}

double oracle_value(const Matrix& x, const Matrix& w_v, double p) {
  return half_trace(loop_B(x, p, false), loop_mul(loop_t(w_v), w_v));
}

double oracle_value_attention(const Matrix& x, const Matrix& a, const Matrix& w_v,
                              double p) {
  const Matrix ax = loop_mul(a, x);
  // psi in the paper form is p^2 (AX)^T (AX)
  Matrix psi = loop_mul(loop_t(ax), ax);
  for (std::size_t i = 0; i < psi.size(); ++i) psi.data()[i] *= p * p;
  return half_trace(psi, loop_mul(loop_t(w_v), w_v));
}

}  // namespace

TEST_CASE("closed-form B matches its index definition in both forms") {
  Rng rng(51);
  const Matrix x = random_matrix(5, 4, rng);
  for (double p : {0.0, 0.1, 0.5}) {
    CHECK(max_abs_diff(closed_form_B(x, p, MomentForm::paper).m, loop_B(x, p, false)) <
          1e-12);
    CHECK(max_abs_diff(closed_form_B(x, p, MomentForm::exact).m, loop_B(x, p, true)) <
          1e-12);
  }
  CHECK_THROWS_AS(closed_form_B(x, 1.0, MomentForm::paper), std::invalid_argument);
}

TEST_CASE("exact and paper forms differ on the diagonal only") {
  Rng rng(52);
  const Matrix x = random_matrix(6, 3, rng);
  const double p = 0.3;
  const Matrix paper = closed_form_B(x, p, MomentForm::paper).m;
  const Matrix exact = closed_form_B(x, p, MomentForm::exact).m;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) {
        // diagonal carries p instead of p^2
        CHECK(exact(i, i) == doctest::Approx(paper(i, i) / p).epsilon(1e-12));
      } else {
        CHECK(exact(i, j) == paper(i, j));
      }
    }
  }
}

TEST_CASE("closed-form psi matches a quadruple-loop expansion") {
  Rng rng(53);
  const Matrix x = random_matrix(4, 3, rng);
  const Matrix a = random_attention(4, rng);
  const double p = 0.2;

  // psi_ij = p^2 sum_{r,s} X_ri Y_rs X_sj with Y = A^T A
  const Matrix y = loop_mul(loop_t(a), a);
  Matrix want(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t t = 0; t < 4; ++t) s += x(r, i) * y(r, t) * x(t, j);
      }
      want(i, j) = p * p * s;
    }
  }
  CHECK(max_abs_diff(closed_form_psi(x, a, p, MomentForm::paper).m, want) < 1e-12);

  // exact form adds (p - p^2) diag(X^T diag(Y) X)
  Matrix corrected = want;
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r) s += x(r, i) * y(r, r) * x(r, i);
    corrected(i, i) += (p - p * p) * s;
  }
  CHECK(max_abs_diff(closed_form_psi(x, a, p, MomentForm::exact).m, corrected) < 1e-12);

  CHECK_THROWS_AS(closed_form_psi(x, random_matrix(3, 4, rng), p, MomentForm::paper),
                  std::invalid_argument);
}

TEST_CASE("all five closed forms match independent index-sum oracles") {
  Rng rng(54);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = random_matrix(4, 3, rng);
    const Matrix w_q = random_matrix(4, 3, rng);
    const Matrix w_k = random_matrix(4, 3, rng);
    const Matrix w_v = random_matrix(5, 3, rng);
    const Matrix w_ff = random_matrix(6, 3, rng);
    const Matrix a = random_attention(4, rng);
    const double p = trial % 2 == 0 ? 0.2 : 0.45;

    CHECK(reg_query(x, w_q, w_k, p) ==
          doctest::Approx(oracle_query(x, w_q, w_k, p)).epsilon(1e-10));
    CHECK(reg_key(x, w_q, w_k, p) ==
          doctest::Approx(oracle_key(x, w_q, w_k, p)).epsilon(1e-10));
    CHECK(reg_value_token(x, w_v, p) ==
          doctest::Approx(oracle_value(x, w_v, p)).epsilon(1e-10));
    CHECK(reg_value_attention(x, a, w_v, p) ==
          doctest::Approx(oracle_value_attention(x, a, w_v, p)).epsilon(1e-10));
    CHECK(reg_ff(x, w_ff, p) ==
          doctest::Approx(oracle_value(x, w_ff, p)).epsilon(1e-10));
  }
}

TEST_CASE("regularizers scale as p squared and vanish at p = 0") {
  Rng rng(55);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix w_q = random_matrix(4, 4, rng);
  const Matrix w_k = random_matrix(4, 4, rng);
  const Matrix w_v = random_matrix(4, 4, rng);
  const Matrix w_ff = random_matrix(7, 4, rng);
  const Matrix a = random_attention(5, rng);

  auto all_five = [&](double p) {
    return std::vector<double>{reg_query(x, w_q, w_k, p), reg_key(x, w_q, w_k, p),
                               reg_value_token(x, w_v, p),
                               reg_value_attention(x, a, w_v, p), reg_ff(x, w_ff, p)};
  };
  const auto at_02 = all_five(0.2);
  const auto at_04 = all_five(0.4);
  const auto at_00 = all_five(0.0);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(at_04[i] / at_02[i] == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(at_00[i] == 0.0);
  }
}

TEST_CASE("the weight-side quadratic forms are symmetric and PSD") {
  Rng rng(56);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix w_q = random_matrix(4, 4, rng);
  const Matrix w_k = random_matrix(4, 4, rng);

  const Matrix c = matmul(transpose(x), x);
  const Matrix proj = matmul(transpose(w_q), w_k);
  const Matrix lam_q = matmul(matmul(proj, c), transpose(proj));
  CHECK(is_symmetric(lam_q, 1e-10));
  Rng probe_rng(57);
  CHECK(psd_probe(lam_q, probe_rng, 200, 1e-10));
  CHECK(psd_probe(closed_form_B(x, 0.3, MomentForm::paper).m, probe_rng, 200, 1e-10));
  CHECK_FALSE(psd_probe(Matrix{{-1.0, 0.0}, {0.0, 1.0}}, probe_rng, 200, 1e-10));
}

TEST_CASE("decomposition splits the penalty into diagonal and cross parts") {
  Rng rng(58);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(6, 4, rng);
    const Matrix w = random_matrix(5, 4, rng);
    const double p = 0.1 + 0.08 * trial;
    const Decomposition d = decompose(x, w, p);

    // quadruple-sum reference for the full penalty
    double quad = 0.0;
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t k = 0; k < 5; ++k) {
        for (std::size_t i = 0; i < 4; ++i) {
          for (std::size_t j = 0; j < 4; ++j) {
            quad += x(r, i) * x(r, j) * w(k, i) * w(k, j);
          }
        }
      }
    }
    quad *= p * p / (2.0 * 6.0);
    CHECK(d.r == doctest::Approx(quad).epsilon(1e-10));
    CHECK(d.r == doctest::Approx(d.r_diag + d.r_cross).epsilon(1e-12));
    CHECK(d.alpha == doctest::Approx(p * (1.0 - p) / 2.0));
    CHECK(d.r_diag == doctest::Approx(d.alpha * arora_reg(x, w, p)).epsilon(1e-10));
  }
}

TEST_CASE("per-feature regularizer matches its column-sum definition") {
  Rng rng(59);
  const Matrix x = random_matrix(7, 4, rng);
  const Matrix w = random_matrix(3, 4, rng);
  const double p = 0.3;

  double want = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    double sigma2 = 0.0;
    for (std::size_t r = 0; r < 7; ++r) sigma2 += x(r, j) * x(r, j);
    sigma2 /= 7.0;
    double col_norm = 0.0;
    for (std::size_t k = 0; k < 3; ++k) col_norm += w(k, j) * w(k, j);
    want += sigma2 * col_norm;
  }
  want *= p / (1.0 - p);
  CHECK(arora_reg(x, w, p) == doctest::Approx(want).epsilon(1e-11));
}

TEST_CASE("reg spec validation") {
  RegSpec spec;
  spec.p = 1.0;
  CHECK_THROWS_AS(spec.validate(2), std::invalid_argument);
  spec.p = 0.2;
  spec.lambda_q = {0.1, 0.2, 0.3};
  CHECK_THROWS_AS(spec.validate(2), std::invalid_argument);
  spec.lambda_q = {0.1, -0.2};
  CHECK_THROWS_AS(spec.validate(2), std::invalid_argument);
  spec.lambda_q = {0.1, 0.2};
  CHECK_NOTHROW(spec.validate(2));
  CHECK(spec.any_active());
  spec.lambda_q = {0.0, 0.0};
  CHECK_FALSE(spec.any_active());
}

namespace {

struct AggregateFixture {
  EncoderConfig cfg;
  EncoderParams params;
  std::vector<Matrix> tokens;

  explicit AggregateFixture(std::size_t heads, std::size_t samples) {
    cfg.layers = 1;
    cfg.dim = 6;
    cfg.ff_dim = 8;
    cfg.heads = heads;
    cfg.tokens = 4;
    cfg.token_dim = 3;
    cfg.classes = 2;
    Rng rng(60 + heads);
    params = init_encoder(cfg, rng);
    for (std::size_t s = 0; s < samples; ++s) {
      tokens.push_back(random_matrix(cfg.tokens, cfg.token_dim, rng));
    }
  }

  // Runs the graph path and returns (aggregate - task, breakdown).
  std::pair<double, RegBreakdown> run(const RegSpec& spec) {
    EncoderVars vars = lift_params(params);
    std::vector<ForwardResultT<Var>> fwd;
    const DropoutPlacement off;
    for (const auto& t : tokens) {
      fwd.push_back(encoder_forward<Var>(leaf(t), vars, cfg, off, false, nullptr));
    }
    Var task = leaf(Matrix{{1.5}});
    RegBreakdown bd;
    Var total = aggregate(task, fwd, vars, spec, &bd);
    return {value_of(total) - 1.5, bd};
  }

  // Matrix-path snapshots for building expectations.
  std::vector<ForwardResultT<Matrix>> snapshots() const {
    std::vector<ForwardResultT<Matrix>> out;
    const DropoutPlacement off;
    for (const auto& t : tokens) {
      out.push_back(encoder_forward<Matrix>(t, params, cfg, off, false, nullptr));
    }
    return out;
  }
};

}  // namespace

TEST_CASE("aggregate with zero lambdas returns the task loss untouched") {
  AggregateFixture fx(1, 1);
  RegSpec spec;
  spec.p = 0.2;
  auto [extra, bd] = fx.run(spec);
  CHECK(extra == 0.0);
  CHECK(bd.total() == 0.0);
}

TEST_CASE("single-head aggregate equals the standalone regularizers") {
  AggregateFixture fx(1, 1);
  RegSpec spec;
  spec.p = 0.2;
  spec.lambda_q = {0.7};
  spec.lambda_k = {0.3};
  spec.lambda_v = {1.1};
  spec.lambda_av = {0.9};
  spec.lambda_ff = {0.5};

  const auto snaps = fx.snapshots();
  const Matrix& x = snaps[0].layers[0].attn_in;
  const Matrix& x2 = snaps[0].layers[0].ff_in;
  const Matrix& a = snaps[0].layers[0].attn[0];
  const auto& lw = fx.params.layers[0];

  const double want_q = 0.7 * reg_query(x, lw.w_q, lw.w_k, 0.2);
  const double want_k = 0.3 * reg_key(x, lw.w_q, lw.w_k, 0.2);
  const double want_v = 1.1 * reg_value_token(x, lw.w_v, 0.2);
  const double want_av = 0.9 * reg_value_attention(x, a, lw.w_v, 0.2);
  const double want_ff =
      0.5 * (reg_ff(x2, lw.w_ff1, 0.2) + reg_ff(x2, transpose(lw.w_ff2), 0.2));

  auto [extra, bd] = fx.run(spec);
  CHECK(bd.q == doctest::Approx(want_q).epsilon(1e-11));
  CHECK(bd.k == doctest::Approx(want_k).epsilon(1e-11));
  CHECK(bd.v == doctest::Approx(want_v).epsilon(1e-11));
  CHECK(bd.av == doctest::Approx(want_av).epsilon(1e-11));
  CHECK(bd.ff == doctest::Approx(want_ff).epsilon(1e-11));
  CHECK(extra == doctest::Approx(bd.total()).epsilon(1e-11));
}

TEST_CASE("multi-head aggregate sums per-head projections") {
  AggregateFixture fx(2, 1);
  RegSpec spec;
  spec.p = 0.25;
  spec.lambda_q = {1.0};
  spec.lambda_av = {1.0};

  const auto snaps = fx.snapshots();
  const Matrix& x = snaps[0].layers[0].attn_in;
  const auto& lw = fx.params.layers[0];
  const std::size_t dh = fx.cfg.dim / 2;

  double want_q = 0.0, want_av = 0.0;
  for (std::size_t h = 0; h < 2; ++h) {
    const Matrix wq_h = take_rows(lw.w_q, h * dh, (h + 1) * dh);
    const Matrix wk_h = take_rows(lw.w_k, h * dh, (h + 1) * dh);
    const Matrix wv_h = take_rows(lw.w_v, h * dh, (h + 1) * dh);
    want_q += reg_query(x, wq_h, wk_h, 0.25);
    want_av += reg_value_attention(x, snaps[0].layers[0].attn[h], wv_h, 0.25);
  }

  auto [extra, bd] = fx.run(spec);
  CHECK(bd.q == doctest::Approx(want_q).epsilon(1e-11));
  CHECK(bd.av == doctest::Approx(want_av).epsilon(1e-11));
  CHECK(extra == doctest::Approx(want_q + want_av).epsilon(1e-11));
}

TEST_CASE("aggregate averages regularizers over the batch") {
  AggregateFixture fx(1, 3);
  RegSpec spec;
  spec.p = 0.2;
  spec.lambda_v = {2.0};

  const auto snaps = fx.snapshots();
  double want = 0.0;
  for (const auto& s : snaps) {
    want += 2.0 * reg_value_token(s.layers[0].attn_in, fx.params.layers[0].w_v, 0.2);
  }
  want /= 3.0;

  auto [extra, bd] = fx.run(spec);
  CHECK(bd.v == doctest::Approx(want).epsilon(1e-11));
  CHECK(extra == doctest::Approx(want).epsilon(1e-11));
}

TEST_CASE("the per-feature switch replaces the proposed attention terms") {
  AggregateFixture fx(1, 1);
  RegSpec spec;
  spec.p = 0.2;
  spec.arora = true;
  spec.lambda_q = {1.0};
  spec.lambda_v = {1.0};

  const auto snaps = fx.snapshots();
  const Matrix& x = snaps[0].layers[0].attn_in;
  const auto& lw = fx.params.layers[0];
  auto [extra, bd] = fx.run(spec);
  CHECK(bd.q == doctest::Approx(arora_reg(x, lw.w_q, 0.2)).epsilon(1e-11));
  CHECK(bd.v == doctest::Approx(arora_reg(x, lw.w_v, 0.2)).epsilon(1e-11));
}

TEST_CASE("aggregate gradients reach the regularized weights") {
  AggregateFixture fx(1, 1);
  RegSpec spec;
  spec.p = 0.2;
  spec.lambda_v = {1.0};

  EncoderVars vars = lift_params(fx.params);
  const DropoutPlacement off;
  std::vector<ForwardResultT<Var>> fwd;
  fwd.push_back(encoder_forward<Var>(leaf(fx.tokens[0]), vars, fx.cfg, off, false, nullptr));
  Var task = leaf(Matrix{{0.0}});
  Var total = aggregate(task, fwd, vars, spec, nullptr);
  backward(total);
  CHECK(frobenius_sq(vars.layers[0].w_v.grad()) > 0.0);
}

TEST_CASE("aggregate rejects inconsistent snapshots") {
  AggregateFixture fx(1, 1);
  RegSpec spec;
  spec.p = 0.2;
  spec.lambda_v = {1.0};
  EncoderVars vars = lift_params(fx.params);
  CHECK_THROWS_AS(aggregate(leaf(Matrix{{0.0}}), {}, vars, spec, nullptr),
                  std::invalid_argument);
}
