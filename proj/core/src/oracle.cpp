#include "exdrop/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "exdrop/encoder.hpp"

namespace exdrop {

namespace {

// Streaming mean and standard-error accumulator over same-shaped samples.
struct MomentAccumulator {
  Matrix sum;
  Matrix sum_sq;
  std::size_t n = 0;

  explicit MomentAccumulator(std::size_t rows, std::size_t cols)
      : sum(rows, cols), sum_sq(rows, cols) {}

  void accept(const Matrix& sample) {
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const double v = sample.data()[i];
      sum.data()[i] += v;
      sum_sq.data()[i] += v * v;
    }
    ++n;
  }

  Matrix mean() const { return scale(sum, 1.0 / static_cast<double>(n)); }

  Matrix standard_error() const {
    Matrix se(sum.rows(), sum.cols());
    const double dn = static_cast<double>(n);
    for (std::size_t i = 0; i < se.size(); ++i) {
      const double m = sum.data()[i] / dn;
      double var = (sum_sq.data()[i] - dn * m * m) / (dn - 1.0);
      if (var < 0.0) var = 0.0;  // rounding can push an exact-zero variance negative
      se.data()[i] = std::sqrt(var / dn);
    }
    return se;
  }
};

MomentMatrix finish_empirical(const MomentAccumulator& acc, std::uint64_t seed) {
  MomentMatrix out;
  out.m = acc.mean();
  out.std_error = acc.standard_error();
  out.provenance = MomentMatrix::Provenance::empirical;
  out.n_samples = acc.n;
  out.seed = seed;
  return out;
}

}  // namespace

MaskBatch sample_masks(std::size_t rows, std::size_t cols, double p,
                       std::size_t n_t, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("sample_masks: p must be in [0,1)");
  }
  if (n_t == 0) throw std::invalid_argument("sample_masks: n_t must be >= 1");
  MaskBatch batch;
  batch.keep_prob = 1.0 - p;
  batch.seed = seed;
  batch.masks.reserve(n_t);
  Rng rng(seed);
  for (std::size_t t = 0; t < n_t; ++t) {
    batch.masks.push_back(draw_keep_mask(rows, cols, p, rng));
  }
  return batch;
}

Matrix sample_deviation(const Matrix& x, double p, Rng& rng) {
  return deviation_from_mask(x, draw_keep_mask(x.rows(), x.cols(), p, rng));
}

Matrix deviation_from_mask(const Matrix& x, const Matrix& mask) {
  if (!x.same_shape(mask)) {
    throw std::invalid_argument("deviation_from_mask: mask " + mask.shape_str() +
                                " does not match " + x.shape_str());
  }
  Matrix dev(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dev.data()[i] = (1.0 - mask.data()[i]) * x.data()[i];
  }
  return dev;
}

MomentMatrix empirical_B(const Matrix& x, double p, std::size_t n_t, Rng& rng) {
  return empirical_B_from(x, sample_masks(x.rows(), x.cols(), p, n_t, rng.next_u64()));
}

MomentMatrix empirical_B_from(const Matrix& x, const MaskBatch& batch) {
  MomentAccumulator acc(x.cols(), x.cols());
  for (const Matrix& mask : batch.masks) {
    const Matrix dev = deviation_from_mask(x, mask);
    acc.accept(matmul(transpose(dev), dev));
  }
  return finish_empirical(acc, batch.seed);
}

MomentMatrix empirical_psi(const Matrix& x, const Matrix& a, double p,
                           std::size_t n_t, Rng& rng) {
  return empirical_psi_from(x, a, sample_masks(x.rows(), x.cols(), p, n_t, rng.next_u64()));
}

MomentMatrix empirical_psi_from(const Matrix& x, const Matrix& a,
                                const MaskBatch& batch) {
  if (a.rows() != a.cols() || a.cols() != x.rows()) {
    throw std::invalid_argument("empirical_psi: attention " + a.shape_str() +
                                " does not match tokens " + x.shape_str());
  }
  MomentAccumulator acc(x.cols(), x.cols());
  for (const Matrix& mask : batch.masks) {
    const Matrix mixed = matmul(a, deviation_from_mask(x, mask));
    acc.accept(matmul(transpose(mixed), mixed));
  }
  return finish_empirical(acc, batch.seed);
}

RegKind reg_kind_from_string(const std::string& s) {
  if (s == "q") return RegKind::q;
  if (s == "k") return RegKind::k;
  if (s == "v") return RegKind::v;
  if (s == "av") return RegKind::av;
  if (s == "ff") return RegKind::ff;
  throw std::invalid_argument("unknown regularizer kind '" + s + "'");
}

std::string to_string(RegKind kind) {
  switch (kind) {
    case RegKind::q: return "q";
    case RegKind::k: return "k";
    case RegKind::v: return "v";
    case RegKind::av: return "av";
    case RegKind::ff: return "ff";
  }
  return "q";
}

double empirical_J(RegKind kind, const Matrix& x, const RegInputs& weights,
                   double p, std::size_t n_t, Rng& rng) {
  return empirical_J_from(kind, x, weights,
                          sample_masks(x.rows(), x.cols(), p, n_t, rng.next_u64()));
}

double empirical_J_from(RegKind kind, const Matrix& x, const RegInputs& weights,
                        const MaskBatch& batch) {
  // Mask-independent right factors are hoisted out of the sampling loop.
  Matrix fixed;
  switch (kind) {
    case RegKind::q:
      // || X~ W_q^T W_k X^T ||_F^2
      fixed = matmul(transpose(weights.w_q), matmul(weights.w_k, transpose(x)));
      break;
    case RegKind::k:
      // || X W_q^T W_k X~^T ||_F^2, rewritten with the deviation on the left
      fixed = matmul(transpose(weights.w_k), matmul(weights.w_q, transpose(x)));
      break;
    case RegKind::v:
      fixed = transpose(weights.w_v);
      break;
    case RegKind::av:
      fixed = transpose(weights.w_v);
      break;
    case RegKind::ff:
      fixed = transpose(weights.w_ff);
      break;
  }
  double total = 0.0;
  for (const Matrix& mask : batch.masks) {
    Matrix dev = deviation_from_mask(x, mask);
    if (kind == RegKind::av) dev = matmul(weights.attn, dev);
    total += frobenius_sq(matmul(dev, fixed));
  }
  return total / (2.0 * static_cast<double>(batch.masks.size()));
}

ConvergenceReport convergence_report(const MomentMatrix& empirical,
                                     const MomentMatrix& target, std::size_t n_t) {
  if (!empirical.m.same_shape(target.m)) {
    throw std::invalid_argument("convergence_report: estimate " +
                                empirical.m.shape_str() + " vs target " +
                                target.m.shape_str());
  }
  if (empirical.std_error.size() != empirical.m.size()) {
    throw std::invalid_argument("convergence_report: estimate carries no standard errors");
  }
  ConvergenceReport report;
  report.target = target.m;
  report.estimate = empirical.m;
  report.std_error = empirical.std_error;
  report.n_samples = n_t;
  report.seed = empirical.seed;
  for (std::size_t i = 0; i < empirical.m.size(); ++i) {
    const double diff = std::abs(empirical.m.data()[i] - target.m.data()[i]);
    const double se = empirical.std_error.data()[i];
    double z;
    if (se > 0.0) {
      z = diff / se;
    } else {
      z = diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    report.max_z = std::max(report.max_z, z);
  }
  return report;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string report_to_json(const ConvergenceReport& report) {
  nlohmann::json j;
  j["target"] = matrix_to_json(report.target);
  j["estimate"] = matrix_to_json(report.estimate);
  j["stderr"] = matrix_to_json(report.std_error);
  j["max_z"] = report.max_z;
  j["seed"] = report.seed;
  j["N_T"] = report.n_samples;
  return j.dump(2);
}

}  // namespace exdrop
