#include "exdrop/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace exdrop {

DropoutMode dropout_mode_from_string(const std::string& s) {
  if (s == "none") return DropoutMode::none;
  if (s == "input_tokens") return DropoutMode::input_tokens;
  if (s == "attention_weights") return DropoutMode::attention_weights;
  if (s == "scores_prekey") return DropoutMode::scores_prekey;
  if (s == "ff_hidden") return DropoutMode::ff_hidden;
  throw std::invalid_argument("unknown dropout placement '" + s + "'");
}

std::string to_string(DropoutMode mode) {
  switch (mode) {
    case DropoutMode::none: return "none";
    case DropoutMode::input_tokens: return "input_tokens";
    case DropoutMode::attention_weights: return "attention_weights";
    case DropoutMode::scores_prekey: return "scores_prekey";
    case DropoutMode::ff_hidden: return "ff_hidden";
  }
  return "none";
}

void EncoderConfig::validate() const {
  if (layers == 0) throw std::invalid_argument("encoder: layers must be >= 1");
  if (dim == 0 || ff_dim == 0 || tokens == 0 || token_dim == 0) {
    throw std::invalid_argument("encoder: dim, ff_dim, tokens, token_dim must be positive");
  }
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("encoder: heads must divide dim (" +
                                std::to_string(heads) + " vs " + std::to_string(dim) + ")");
  }
  if (classes < 2) throw std::invalid_argument("encoder: classes must be >= 2");
}

namespace {

Matrix init_weight(std::size_t out, std::size_t in, Rng& rng) {
  Matrix w(out, in);
  const double std = std::sqrt(2.0 / static_cast<double>(out + in));
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, std);
  return w;
}

Matrix init_small(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix w(rows, cols);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, 0.02);
  return w;
}

// Keep-mask rescaled by 1/(1-p): the inverted-dropout multiplier.
Matrix inverted_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix m = draw_keep_mask(rows, cols, p, rng);
  const double inv = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= inv;
  return m;
}

// Additive pre-softmax mask: dropped score positions get the sentinel.
Matrix sentinel_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix m = draw_keep_mask(rows, cols, p, rng);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data()[i] = (m.data()[i] == 0.0) ? kScoreMaskSentinel : 0.0;
  }
  return m;
}

// Post-softmax keep-mask; a row with every entry dropped is restored to
// all-keep because renormalization has nothing to work with.
Matrix attention_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix m = draw_keep_mask(rows, cols, p, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (m(i, j) != 0.0) {
        any = true;
        break;
      }
    }
    if (!any) {
      for (std::size_t j = 0; j < cols; ++j) m(i, j) = 1.0;
    }
  }
  return m;
}

template <typename M>
M attention_block(const M& xn, const LayerWeightsT<M>& lw, const EncoderConfig& cfg,
                  const DropoutPlacement& placement, bool train_mode, Rng* rng,
                  std::vector<M>& attn_out_snaps) {
  auto q = matmul(xn, transpose(lw.w_q));
  auto k = matmul(xn, transpose(lw.w_k));
  auto v = matmul(xn, transpose(lw.w_v));
  const std::size_t heads = cfg.heads;
  const std::size_t dh = cfg.dim / heads;
  const std::size_t n = raw(xn).rows();
  const bool drop_scores = train_mode && placement.rate > 0.0 &&
                           placement.mode == DropoutMode::scores_prekey;
  const bool drop_attn = train_mode && placement.rate > 0.0 &&
                         placement.mode == DropoutMode::attention_weights;

  M cat;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : take_cols(q, h * dh, (h + 1) * dh);
    auto kh = heads == 1 ? k : take_cols(k, h * dh, (h + 1) * dh);
    auto vh = heads == 1 ? v : take_cols(v, h * dh, (h + 1) * dh);
    auto s = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (drop_scores) {
      s = add(s, lift<M>(sentinel_mask(n, n, placement.rate, *rng)));
    }
    auto a = row_softmax(s);
    if (drop_attn) {
      a = row_normalize(hadamard(a, lift<M>(attention_mask(n, n, placement.rate, *rng))));
    }
    attn_out_snaps.push_back(a);
    auto oh = matmul(a, vh);
    cat = (h == 0) ? oh : hstack(cat, oh);
  }
  return matmul(cat, transpose(lw.w_o));
}

template <typename M>
M ffn_block(const M& xn, const LayerWeightsT<M>& lw,
            const DropoutPlacement& placement, bool train_mode, Rng* rng) {
  auto hidden = relu(matmul(xn, transpose(lw.w_ff1)));
  if (train_mode && placement.rate > 0.0 && placement.mode == DropoutMode::ff_hidden) {
    const Matrix& hv = raw(hidden);
    hidden = hadamard(hidden, lift<M>(inverted_mask(hv.rows(), hv.cols(),
                                                    placement.rate, *rng)));
  }
  return matmul(hidden, transpose(lw.w_ff2));
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  p.embed = init_weight(cfg.dim, cfg.token_dim, rng);
  p.cls = init_small(1, cfg.dim, rng);
  p.pos = init_small(cfg.seq_len(), cfg.dim, rng);
  p.layers.resize(cfg.layers);
  for (auto& lw : p.layers) {
    lw.w_q = init_weight(cfg.dim, cfg.dim, rng);
    lw.w_k = init_weight(cfg.dim, cfg.dim, rng);
    lw.w_v = init_weight(cfg.dim, cfg.dim, rng);
    lw.w_o = init_weight(cfg.dim, cfg.dim, rng);
    lw.w_ff1 = init_weight(cfg.ff_dim, cfg.dim, rng);
    lw.w_ff2 = init_weight(cfg.dim, cfg.ff_dim, rng);
    lw.ln1_gain = Matrix(1, cfg.dim, 1.0);
    lw.ln1_bias = Matrix(1, cfg.dim, 0.0);
    lw.ln2_gain = Matrix(1, cfg.dim, 1.0);
    lw.ln2_bias = Matrix(1, cfg.dim, 0.0);
  }
  p.final_gain = Matrix(1, cfg.dim, 1.0);
  p.final_bias = Matrix(1, cfg.dim, 0.0);
  p.head_w = init_weight(cfg.classes, cfg.dim, rng);
  p.head_b = Matrix(1, cfg.classes, 0.0);
  return p;
}

namespace {

// One canonical walk over the weight set; callers get matching name order
// regardless of the carrier type.
template <typename M, typename F>
void visit_weights(EncoderWeightsT<M>& w, F&& f) {
  f("embed", w.embed);
  f("cls", w.cls);
  f("pos", w.pos);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const std::string base = "layer" + std::to_string(l) + ".";
    auto& lw = w.layers[l];
    f(base + "w_q", lw.w_q);
    f(base + "w_k", lw.w_k);
    f(base + "w_v", lw.w_v);
    f(base + "w_o", lw.w_o);
    f(base + "w_ff1", lw.w_ff1);
    f(base + "w_ff2", lw.w_ff2);
    f(base + "ln1_gain", lw.ln1_gain);
    f(base + "ln1_bias", lw.ln1_bias);
    f(base + "ln2_gain", lw.ln2_gain);
    f(base + "ln2_bias", lw.ln2_bias);
  }
  f("final_gain", w.final_gain);
  f("final_bias", w.final_bias);
  f("head_w", w.head_w);
  f("head_b", w.head_b);
}

}  // namespace

EncoderVars lift_params(const EncoderParams& params) {
  EncoderVars v;
  v.embed = leaf(params.embed);
  v.cls = leaf(params.cls);
  v.pos = leaf(params.pos);
  v.layers.reserve(params.layers.size());
  for (const auto& lw : params.layers) {
    LayerWeightsT<Var> lv;
    lv.w_q = leaf(lw.w_q);
    lv.w_k = leaf(lw.w_k);
    lv.w_v = leaf(lw.w_v);
    lv.w_o = leaf(lw.w_o);
    lv.w_ff1 = leaf(lw.w_ff1);
    lv.w_ff2 = leaf(lw.w_ff2);
    lv.ln1_gain = leaf(lw.ln1_gain);
    lv.ln1_bias = leaf(lw.ln1_bias);
    lv.ln2_gain = leaf(lw.ln2_gain);
    lv.ln2_bias = leaf(lw.ln2_bias);
    v.layers.push_back(std::move(lv));
  }
  v.final_gain = leaf(params.final_gain);
  v.final_bias = leaf(params.final_bias);
  v.head_w = leaf(params.head_w);
  v.head_b = leaf(params.head_b);
  return v;
}

std::vector<std::pair<std::string, Matrix*>> named_params(EncoderParams& params) {
  std::vector<std::pair<std::string, Matrix*>> out;
  visit_weights(params, [&](const std::string& name, Matrix& m) {
    out.emplace_back(name, &m);
  });
  return out;
}

std::vector<std::pair<std::string, Var>> named_vars(const EncoderVars& vars) {
  std::vector<std::pair<std::string, Var>> out;
  visit_weights(const_cast<EncoderVars&>(vars), [&](const std::string& name, Var& v) {
    out.emplace_back(name, v);
  });
  return out;
}

template <typename M>
ForwardResultT<M> encoder_forward(const M& tokens, const EncoderWeightsT<M>& w,
                                  const EncoderConfig& cfg,
                                  const DropoutPlacement& placement,
                                  bool train_mode, Rng* rng) {
  cfg.validate();
  const Matrix& tv = raw(tokens);
  if (tv.rows() != cfg.tokens || tv.cols() != cfg.token_dim) {
    throw std::invalid_argument("encoder_forward: tokens " + tv.shape_str() +
                                ", config expects (" + std::to_string(cfg.tokens) +
                                "x" + std::to_string(cfg.token_dim) + ")");
  }
  if (w.layers.size() != cfg.layers) {
    throw std::invalid_argument("encoder_forward: weight set has " +
                                std::to_string(w.layers.size()) + " layers, config " +
                                std::to_string(cfg.layers));
  }
  const bool masks_needed = train_mode && placement.mode != DropoutMode::none &&
                            placement.rate > 0.0;
  if (masks_needed && rng == nullptr) {
    throw std::invalid_argument("encoder_forward: placement " +
                                to_string(placement.mode) + " needs an rng in train mode");
  }

  auto x = add(vstack(w.cls, matmul(tokens, transpose(w.embed))), w.pos);
  if (masks_needed && placement.mode == DropoutMode::input_tokens) {
    x = hadamard(x, lift<M>(inverted_mask(cfg.seq_len(), cfg.dim, placement.rate, *rng)));
  }

  ForwardResultT<M> result;
  result.layers.resize(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& lw = w.layers[l];
    auto& snap = result.layers[l];
    if (cfg.norm == NormPlacement::pre) {
      auto xn = layer_norm(x, lw.ln1_gain, lw.ln1_bias);
      snap.attn_in = xn;
      x = add(x, attention_block(xn, lw, cfg, placement, train_mode, rng, snap.attn));
      auto xn2 = layer_norm(x, lw.ln2_gain, lw.ln2_bias);
      snap.ff_in = xn2;
      x = add(x, ffn_block(xn2, lw, placement, train_mode, rng));
    } else {
      snap.attn_in = x;
      auto attn_out = attention_block(x, lw, cfg, placement, train_mode, rng, snap.attn);
      x = layer_norm(add(x, attn_out), lw.ln1_gain, lw.ln1_bias);
      snap.ff_in = x;
      auto ff_out = ffn_block(x, lw, placement, train_mode, rng);
      x = layer_norm(add(x, ff_out), lw.ln2_gain, lw.ln2_bias);
    }
  }
  // Post-norm blocks already end in a norm; pre-norm needs the final one.
  if (cfg.norm == NormPlacement::pre) {
    x = layer_norm(x, w.final_gain, w.final_bias);
  }
  result.logits = add_rowvec(matmul(take_row(x, 0), transpose(w.head_w)), w.head_b);
  return result;
}

template ForwardResultT<Matrix> encoder_forward<Matrix>(
    const Matrix&, const EncoderWeightsT<Matrix>&, const EncoderConfig&,
    const DropoutPlacement&, bool, Rng*);
template ForwardResultT<Var> encoder_forward<Var>(
    const Var&, const EncoderWeightsT<Var>&, const EncoderConfig&,
    const DropoutPlacement&, bool, Rng*);

QkvResult project_qkv(const Matrix& x, const Matrix& w_q, const Matrix& w_k,
                      const Matrix& w_v) {
  return {matmul(x, transpose(w_q)), matmul(x, transpose(w_k)),
          matmul(x, transpose(w_v))};
}

AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw std::invalid_argument("attention: incompatible shapes q" + q.shape_str() +
                                " k" + k.shape_str() + " v" + v.shape_str());
  }
  const Matrix s =
      scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  AttentionResult r;
  r.attn = row_softmax(s);
  r.out = matmul(r.attn, v);
  return r;
}

Matrix feed_forward(const Matrix& x, const Matrix& w_ff1, const Matrix& w_ff2) {
  return matmul(relu(matmul(x, transpose(w_ff1))), transpose(w_ff2));
}

Matrix draw_keep_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.bernoulli(p) ? 0.0 : 1.0;
  }
  return m;
}

Matrix apply_implicit_dropout(const Matrix& target, const DropoutPlacement& placement,
                              double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("apply_implicit_dropout: p must be in [0,1)");
  }
  if (placement.mode == DropoutMode::none || p == 0.0) return target;
  switch (placement.mode) {
    case DropoutMode::input_tokens:
    case DropoutMode::ff_hidden:
      return hadamard(target, inverted_mask(target.rows(), target.cols(), p, rng));
    case DropoutMode::attention_weights:
      return row_normalize(
          hadamard(target, attention_mask(target.rows(), target.cols(), p, rng)));
    case DropoutMode::scores_prekey:
      return add(target, sentinel_mask(target.rows(), target.cols(), p, rng));
    case DropoutMode::none:
      break;
  }
  return target;
}

}  // namespace exdrop
