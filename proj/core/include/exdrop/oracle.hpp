#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exdrop/matrix.hpp"
#include "exdrop/regularizers.hpp"
#include "exdrop/rng.hpp"

namespace exdrop {

// A reproducible batch of Bernoulli keep-masks (entry 1 = kept).
struct MaskBatch {
  std::vector<Matrix> masks;
  double keep_prob = 1.0;
  std::uint64_t seed = 0;
};

MaskBatch sample_masks(std::size_t rows, std::size_t cols, double p,
                       std::size_t n_t, std::uint64_t seed);

// The dropout deviation X~ = (1 - M) (.) X, unscaled: the part of X the
// mask removes.
Matrix sample_deviation(const Matrix& x, double p, Rng& rng);
Matrix deviation_from_mask(const Matrix& x, const Matrix& mask);

// Empirical moments averaged over mask draws, with per-entry standard
// errors for convergence scoring.
MomentMatrix empirical_B(const Matrix& x, double p, std::size_t n_t, Rng& rng);
MomentMatrix empirical_B_from(const Matrix& x, const MaskBatch& batch);
MomentMatrix empirical_psi(const Matrix& x, const Matrix& a, double p,
                           std::size_t n_t, Rng& rng);
MomentMatrix empirical_psi_from(const Matrix& x, const Matrix& a,
                                const MaskBatch& batch);

enum class RegKind { q, k, v, av, ff };
RegKind reg_kind_from_string(const std::string& s);
std::string to_string(RegKind kind);

// Weight bundle for empirical_J; fill what the kind reads (q/k use w_q and
// w_k, v uses w_v, av uses w_v plus attn, ff uses w_ff).
struct RegInputs {
  Matrix w_q, w_k, w_v, w_ff;
  Matrix attn;
};

// (1 / 2N_T) * sum_t of the kind's squared Frobenius norm, the stochastic
// quantity the closed forms equal in expectation.
double empirical_J(RegKind kind, const Matrix& x, const RegInputs& weights,
                   double p, std::size_t n_t, Rng& rng);
double empirical_J_from(RegKind kind, const Matrix& x, const RegInputs& weights,
                        const MaskBatch& batch);

struct ConvergenceReport {
  Matrix target;
  Matrix estimate;
  Matrix std_error;
  double max_z = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

// Per-entry z-scores of an empirical moment against a closed-form target.
// Entries with zero standard error score 0 when they match exactly and
// infinity otherwise.
ConvergenceReport convergence_report(const MomentMatrix& empirical,
                                     const MomentMatrix& target, std::size_t n_t);

std::string report_to_json(const ConvergenceReport& report);

}  // namespace exdrop
