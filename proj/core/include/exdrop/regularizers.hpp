#pragma once

#include <string>
#include <vector>

#include "exdrop/autodiff.hpp"
#include "exdrop/encoder.hpp"
#include "exdrop/matrix.hpp"

namespace exdrop {

enum class MomentForm { paper, exact };
enum class ValueVariant { token_level, attention_conditioned };

MomentForm moment_form_from_string(const std::string& s);
ValueVariant value_variant_from_string(const std::string& s);

// Dropout rate plus per-layer coefficients for the five regularizer
// families. Empty coefficient vectors mean all-zero (the family is off).
struct RegSpec {
  double p = 0.2;
  std::vector<double> lambda_q, lambda_k, lambda_v, lambda_av, lambda_ff;
  ValueVariant value_variant = ValueVariant::token_level;
  MomentForm moment_form = MomentForm::paper;
  // Swaps the q/k/v terms for the prior-work per-feature form.
  bool arora = false;

  void validate(std::size_t layers) const;
  double lambda_at(const std::vector<double>& v, std::size_t layer) const {
    return layer < v.size() ? v[layer] : 0.0;
  }
  bool any_active() const;
};

// A deviation second moment: B = E[X~^T X~] or psi = E[X~^T A^T A X~],
// by closed form or by mask sampling.
struct MomentMatrix {
  enum class Provenance { closed_form_paper, closed_form_exact, empirical };
  Matrix m;
  Provenance provenance = Provenance::closed_form_paper;
  // Per-entry standard errors; populated only for empirical estimates.
  Matrix std_error;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

MomentMatrix closed_form_B(const Matrix& x, double p,
                           MomentForm form = MomentForm::paper);
MomentMatrix closed_form_psi(const Matrix& x, const Matrix& a, double p,
                             MomentForm form = MomentForm::paper);

bool is_symmetric(const Matrix& m, double tol);
// Positive semidefiniteness probe: v^T M v >= -tol on random unit vectors.
bool psd_probe(const Matrix& m, Rng& rng, std::size_t trials, double tol);

// The dropout deviation moment as a graph expression. The paper form is
// p^2 * X^T X; the exact form corrects the diagonal, where the two mask
// elements in the expectation are the same Bernoulli draw, from p^2 to p.
template <typename M>
M moment_B(const M& x, double p, MomentForm form) {
  auto c = matmul(transpose(x), x);
  auto b = scale(c, p * p);
  if (form == MomentForm::exact) {
    b = add(b, scale(diag_part(c), p - p * p));
  }
  return b;
}

// Attention-mixed moment with Y = A^T A; the exact diagonal correction
// weights each squared column entry by the matching diagonal of Y.
template <typename M>
M moment_psi(const M& x, const M& a, double p, MomentForm form) {
  auto y = matmul(transpose(a), a);
  auto psi = scale(matmul(transpose(x), matmul(y, x)), p * p);
  if (form == MomentForm::exact) {
    auto weighted = matmul(transpose(x), matmul(diag_part(y), x));
    psi = add(psi, scale(diag_part(weighted), p - p * p));
  }
  return psi;
}

// The five closed-form regularizers. Each instantiates for M = Matrix
// (returning double) and M = Var (returning a differentiable scalar node);
// gradients flow through the weights and X alike.

template <typename M>
auto reg_query(const M& x, const M& w_q, const M& w_k, double p,
               MomentForm form = MomentForm::paper) {
  auto c = matmul(transpose(x), x);
  auto proj = matmul(transpose(w_q), w_k);
  auto lambda_q = matmul(matmul(proj, c), transpose(proj));
  return scale(trace_product(moment_B(x, p, form), lambda_q), 0.5);
}

template <typename M>
auto reg_key(const M& x, const M& w_q, const M& w_k, double p,
             MomentForm form = MomentForm::paper) {
  auto c = matmul(transpose(x), x);
  auto proj = matmul(transpose(w_k), w_q);
  auto lambda_k = matmul(matmul(proj, c), transpose(proj));
  return scale(trace_product(moment_B(x, p, form), lambda_k), 0.5);
}

template <typename M>
auto reg_value_token(const M& x, const M& w_v, double p,
                     MomentForm form = MomentForm::paper) {
  auto gram = matmul(transpose(w_v), w_v);
  return scale(trace_product(moment_B(x, p, form), gram), 0.5);
}

template <typename M>
auto reg_value_attention(const M& x, const M& a, const M& w_v, double p,
                         MomentForm form = MomentForm::paper) {
  auto gram = matmul(transpose(w_v), w_v);
  return scale(trace_product(moment_psi(x, a, p, form), gram), 0.5);
}

// Same quadratic form as the token-level value term; callers hand in the
// FFN matrix whose column dimension matches x (the second FFN matrix goes
// in transposed, its rows being the d-sided axis).
template <typename M>
auto reg_ff(const M& x, const M& w_ff, double p,
            MomentForm form = MomentForm::paper) {
  auto gram = matmul(transpose(w_ff), w_ff);
  return scale(trace_product(moment_B(x, p, form), gram), 0.5);
}

// Prior-work per-feature regularizer: (p/(1-p)) * sum_j sigma_j^2 ||W_j||^2
// with sigma_j^2 the column mean square of x and W_j the j-th column.
template <typename M>
auto arora_reg(const M& x, const M& w, double p) {
  const double n = static_cast<double>(raw(x).rows());
  auto data_diag = diag_part(matmul(transpose(x), x));
  auto weight_diag = diag_part(matmul(transpose(w), w));
  return scale(trace_product(data_diag, weight_diag), p / (1.0 - p) / n);
}

// Split of the full quadratic penalty into its same-feature and
// cross-feature parts, with the scaling that ties the diagonal part back
// to the prior-work form: r_diag == alpha * arora_reg, alpha = p(1-p)/2.
struct Decomposition {
  double r = 0.0;
  double r_diag = 0.0;
  double r_cross = 0.0;
  double alpha = 0.0;
};
Decomposition decompose(const Matrix& x, const Matrix& w, double p);

// Per-component values of the regularizer sum, lambda-weighted and
// batch-averaged, for loss logging.
struct RegBreakdown {
  double q = 0.0, k = 0.0, v = 0.0, av = 0.0, ff = 0.0;
  double total() const { return q + k + v + av + ff; }
};

// J_final = J_task + sum over layers of the lambda-weighted regularizers,
// each computed from that layer's snapshot and averaged over the batch.
// Both the token-level and attention-conditioned value terms participate
// when their lambdas are nonzero.
Var aggregate(const Var& task_loss,
              const std::vector<ForwardResultT<Var>>& snapshots,
              const EncoderVars& weights, const RegSpec& spec,
              RegBreakdown* breakdown = nullptr);

}  // namespace exdrop
