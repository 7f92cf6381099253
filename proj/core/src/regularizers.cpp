#include "exdrop/regularizers.hpp"

#include <cmath>
#include <stdexcept>

namespace exdrop {

MomentForm moment_form_from_string(const std::string& s) {
  if (s == "paper") return MomentForm::paper;
  if (s == "exact") return MomentForm::exact;
  throw std::invalid_argument("unknown moment_form '" + s + "'");
}

ValueVariant value_variant_from_string(const std::string& s) {
  if (s == "token_level") return ValueVariant::token_level;
  if (s == "attention_conditioned") return ValueVariant::attention_conditioned;
  throw std::invalid_argument("unknown value_variant '" + s + "'");
}

void RegSpec::validate(std::size_t layers) const {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("reg: p must be in [0,1), got " + std::to_string(p));
  }
  auto check = [layers](const std::vector<double>& v, const char* name) {
    if (!v.empty() && v.size() != layers) {
      throw std::invalid_argument(std::string("reg: ") + name + " has " +
                                  std::to_string(v.size()) + " entries for " +
                                  std::to_string(layers) + " layers");
    }
    for (double lam : v) {
      if (lam < 0.0) {
        throw std::invalid_argument(std::string("reg: ") + name + " must be >= 0");
      }
    }
  };
  check(lambda_q, "lambda_q");
  check(lambda_k, "lambda_k");
  check(lambda_v, "lambda_v");
  check(lambda_av, "lambda_av");
  check(lambda_ff, "lambda_ff");
}

bool RegSpec::any_active() const {
  auto any = [](const std::vector<double>& v) {
    for (double lam : v) {
      if (lam > 0.0) return true;
    }
    return false;
  };
  return any(lambda_q) || any(lambda_k) || any(lambda_v) || any(lambda_av) ||
         any(lambda_ff);
}

MomentMatrix closed_form_B(const Matrix& x, double p, MomentForm form) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("closed_form_B: p must be in [0,1)");
  }
  MomentMatrix out;
  out.m = moment_B(x, p, form);
  out.provenance = form == MomentForm::paper ? MomentMatrix::Provenance::closed_form_paper
                                             : MomentMatrix::Provenance::closed_form_exact;
  return out;
}

MomentMatrix closed_form_psi(const Matrix& x, const Matrix& a, double p,
                             MomentForm form) {
  if (a.rows() != a.cols() || a.cols() != x.rows()) {
    throw std::invalid_argument("closed_form_psi: attention " + a.shape_str() +
                                " does not match tokens " + x.shape_str());
  }
  MomentMatrix out;
  out.m = moment_psi(x, a, p, form);
  out.provenance = form == MomentForm::paper ? MomentMatrix::Provenance::closed_form_paper
                                             : MomentMatrix::Provenance::closed_form_exact;
  return out;
}

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      if (std::abs(m(i, j) - m(j, i)) > tol) return false;
    }
  }
  return true;
}

bool psd_probe(const Matrix& m, Rng& rng, std::size_t trials, double tol) {
  if (m.rows() != m.cols()) return false;
  const std::size_t n = m.rows();
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> v(n);
    double norm = 0.0;
    for (auto& vi : v) {
      vi = rng.normal();
      norm += vi * vi;
    }
    norm = std::sqrt(norm);
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        quad += (v[i] / norm) * m(i, j) * (v[j] / norm);
      }
    }
    if (quad < -tol) return false;
  }
  return true;
}

Decomposition decompose(const Matrix& x, const Matrix& w, double p) {
  if (w.cols() != x.cols()) {
    throw std::invalid_argument("decompose: weight " + w.shape_str() +
                                " does not map data dimension of " + x.shape_str());
  }
  const double n = static_cast<double>(x.rows());
  const double pref = p * p / (2.0 * n);
  const Matrix c = matmul(transpose(x), x);
  const Matrix g = matmul(transpose(w), w);

  Decomposition d;
  d.alpha = p * (1.0 - p) / 2.0;
  double diag = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      const double term = c(i, j) * g(i, j);
      if (i == j) {
        diag += term;
      } else {
        cross += term;
      }
    }
  }
  d.r = pref * trace_product(c, g);
  d.r_diag = pref * diag;
  d.r_cross = pref * cross;

  const double split_err = std::abs(d.r - (d.r_diag + d.r_cross));
  if (split_err > 1e-10 * std::max(1.0, std::abs(d.r))) {
    throw std::logic_error("decompose: diagonal/cross split drifted from the full sum by " +
                           std::to_string(split_err));
  }
  const double prior_err = std::abs(d.r_diag - d.alpha * arora_reg(x, w, p));
  if (prior_err > 1e-10 * std::max(1.0, std::abs(d.r_diag))) {
    throw std::logic_error("decompose: diagonal part drifted from the scaled prior form by " +
                           std::to_string(prior_err));
  }
  return d;
}

namespace {

// B from an already-built Gram C = X^T X, sharing C's node.
Var moment_from_gram(const Var& c, double p, MomentForm form) {
  Var b = scale(c, p * p);
  if (form == MomentForm::exact) {
    b = add(b, scale(diag_part(c), p - p * p));
  }
  return b;
}

Var psi_from_parts(const Var& x, const Var& a, double p, MomentForm form) {
  auto y = matmul(transpose(a), a);
  auto psi = scale(matmul(transpose(x), matmul(y, x)), p * p);
  if (form == MomentForm::exact) {
    auto weighted = matmul(transpose(x), matmul(diag_part(y), x));
    psi = add(psi, scale(diag_part(weighted), p - p * p));
  }
  return psi;
}

Var head_rows(const Var& w, std::size_t h, std::size_t heads, std::size_t dh) {
  return heads == 1 ? w : take_rows(w, h * dh, (h + 1) * dh);
}

}  // namespace

Var aggregate(const Var& task_loss,
              const std::vector<ForwardResultT<Var>>& snapshots,
              const EncoderVars& weights, const RegSpec& spec,
              RegBreakdown* breakdown) {
  const std::size_t layers = weights.layers.size();
  spec.validate(layers);
  if (snapshots.empty()) {
    throw std::invalid_argument("aggregate: empty snapshot batch");
  }
  for (const auto& s : snapshots) {
    if (s.layers.size() != layers) {
      throw std::invalid_argument("aggregate: snapshot covers " +
                                  std::to_string(s.layers.size()) + " layers, weights " +
                                  std::to_string(layers));
    }
  }

  const double p = spec.p;
  const double inv_batch = 1.0 / static_cast<double>(snapshots.size());
  std::vector<Var> q_terms, k_terms, v_terms, av_terms, ff_terms;

  for (std::size_t l = 0; l < layers; ++l) {
    const double lq = spec.lambda_at(spec.lambda_q, l);
    const double lk = spec.lambda_at(spec.lambda_k, l);
    const double lv = spec.lambda_at(spec.lambda_v, l);
    const double lav = spec.lambda_at(spec.lambda_av, l);
    const double lff = spec.lambda_at(spec.lambda_ff, l);
    if (lq == 0.0 && lk == 0.0 && lv == 0.0 && lav == 0.0 && lff == 0.0) continue;

    const auto& lw = weights.layers[l];
    const std::size_t heads = snapshots[0].layers[l].attn.size();
    const std::size_t dim = lw.w_q.value().rows();
    const std::size_t dh = dim / heads;
    const bool proposed_qk = !spec.arora && (lq > 0.0 || lk > 0.0);
    const bool need_attn_gram = proposed_qk || (!spec.arora && lv > 0.0);

    // Weight-side products are the same for every sample in the batch,
    // so build them once per layer.
    std::vector<Var> proj_q;  // per head, W_q^T W_k over that head's rows
    if (proposed_qk) {
      for (std::size_t h = 0; h < heads; ++h) {
        proj_q.push_back(matmul(transpose(head_rows(lw.w_q, h, heads, dh)),
                                head_rows(lw.w_k, h, heads, dh)));
      }
    }
    Var gram_v;
    if (!spec.arora && lv > 0.0) gram_v = matmul(transpose(lw.w_v), lw.w_v);
    std::vector<Var> gram_v_head;
    if (lav > 0.0) {
      for (std::size_t h = 0; h < heads; ++h) {
        auto wvh = head_rows(lw.w_v, h, heads, dh);
        gram_v_head.push_back(matmul(transpose(wvh), wvh));
      }
    }
    Var gram_ff1, gram_ff2;
    if (lff > 0.0) {
      gram_ff1 = matmul(transpose(lw.w_ff1), lw.w_ff1);
      gram_ff2 = matmul(lw.w_ff2, transpose(lw.w_ff2));
    }

    for (const auto& sample : snapshots) {
      const auto& snap = sample.layers[l];
      if (snap.attn.size() != heads) {
        throw std::invalid_argument("aggregate: head count varies across the batch");
      }
      const Var& x = snap.attn_in;

      Var c_attn, b_attn;
      if (need_attn_gram) {
        c_attn = matmul(transpose(x), x);
        b_attn = moment_from_gram(c_attn, p, spec.moment_form);
      }
      if (spec.arora) {
        if (lq > 0.0) q_terms.push_back(scale(arora_reg(x, lw.w_q, p), lq * inv_batch));
        if (lk > 0.0) k_terms.push_back(scale(arora_reg(x, lw.w_k, p), lk * inv_batch));
        if (lv > 0.0) v_terms.push_back(scale(arora_reg(x, lw.w_v, p), lv * inv_batch));
      } else {
        for (std::size_t h = 0; h < heads && (lq > 0.0 || lk > 0.0); ++h) {
          if (lq > 0.0) {
            auto lam = matmul(matmul(proj_q[h], c_attn), transpose(proj_q[h]));
            q_terms.push_back(scale(trace_product(b_attn, lam), 0.5 * lq * inv_batch));
          }
          if (lk > 0.0) {
            // The key form swaps W_q and W_k, which transposes the shared
            // projection product.
            auto lam = matmul(matmul(transpose(proj_q[h]), c_attn), proj_q[h]);
            k_terms.push_back(scale(trace_product(b_attn, lam), 0.5 * lk * inv_batch));
          }
        }
        if (lv > 0.0) {
          v_terms.push_back(scale(trace_product(b_attn, gram_v), 0.5 * lv * inv_batch));
        }
      }
      if (lav > 0.0) {
        for (std::size_t h = 0; h < heads; ++h) {
          auto psi = psi_from_parts(x, snap.attn[h], p, spec.moment_form);
          av_terms.push_back(
              scale(trace_product(psi, gram_v_head[h]), 0.5 * lav * inv_batch));
        }
      }
      if (lff > 0.0) {
        const Var& x2 = snap.ff_in;
        auto b_ff = moment_from_gram(matmul(transpose(x2), x2), p, spec.moment_form);
        auto both = add(trace_product(b_ff, gram_ff1), trace_product(b_ff, gram_ff2));
        ff_terms.push_back(scale(both, 0.5 * lff * inv_batch));
      }
    }
  }

  std::vector<Var> totals{task_loss};
  RegBreakdown bd;
  auto fold = [&totals](std::vector<Var>& terms, double& slot) {
    if (terms.empty()) return;
    Var component = terms.size() == 1 ? terms[0] : sum(terms);
    slot = value_of(component);
    totals.push_back(component);
  };
  fold(q_terms, bd.q);
  fold(k_terms, bd.k);
  fold(v_terms, bd.v);
  fold(av_terms, bd.av);
  fold(ff_terms, bd.ff);
  if (breakdown != nullptr) *breakdown = bd;
  return totals.size() == 1 ? task_loss : sum(totals);
}

}  // namespace exdrop
