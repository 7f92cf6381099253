#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "exdrop/autodiff.hpp"
#include "exdrop/matrix.hpp"
#include "exdrop/rng.hpp"

namespace exdrop {

enum class NormPlacement { pre, post };

enum class DropoutMode { none, input_tokens, attention_weights, scores_prekey, ff_hidden };

struct DropoutPlacement {
  DropoutMode mode = DropoutMode::none;
  double rate = 0.0;
};

DropoutMode dropout_mode_from_string(const std::string& s);
std::string to_string(DropoutMode mode);

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t dim = 32;      // model width d
  std::size_t ff_dim = 64;
  std::size_t heads = 1;     // must divide dim
  NormPlacement norm = NormPlacement::pre;
  std::size_t tokens = 8;    // sequence length before the CLS token
  std::size_t token_dim = 16;  // raw input token width
  std::size_t classes = 2;

  std::size_t seq_len() const { return tokens + 1; }  // with CLS
  void validate() const;
};

// Weight containers are templated so one forward-pass body serves both the
// plain numeric path (M = Matrix) and the differentiable path (M = Var).
// Every projection is stored out x in and applied as X * W^T.
template <typename M>
struct LayerWeightsT {
  M w_q, w_k, w_v, w_o;  // dim x dim
  M w_ff1;               // ff_dim x dim
  M w_ff2;               // dim x ff_dim
  M ln1_gain, ln1_bias;  // 1 x dim
  M ln2_gain, ln2_bias;  // 1 x dim
};

template <typename M>
struct EncoderWeightsT {
  M embed;                // dim x token_dim
  M cls;                  // 1 x dim
  M pos;                  // seq_len x dim
  std::vector<LayerWeightsT<M>> layers;
  M final_gain, final_bias;  // 1 x dim, applied before the head in pre-norm
  M head_w;               // classes x dim
  M head_b;               // 1 x classes
};

using EncoderParams = EncoderWeightsT<Matrix>;
using EncoderVars = EncoderWeightsT<Var>;

// What the regularizers consume: the exact tensor each sublayer projects.
template <typename M>
struct LayerSnapshotT {
  M attn_in;           // input to the Q/K/V projections, seq_len x dim
  std::vector<M> attn;  // per-head attention weights, seq_len x seq_len
  M ff_in;             // input to W_ff1, seq_len x dim
};

template <typename M>
struct ForwardResultT {
  M logits;  // 1 x classes
  std::vector<LayerSnapshotT<M>> layers;
};

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng);

// Lifts plain weights into graph leaves; the returned Vars own the grads
// the optimizer reads after backward().
EncoderVars lift_params(const EncoderParams& params);

// Stable name -> matrix walk in a fixed order, used by the optimizer,
// checkpointing, and the gradient checker. The two overloads visit the
// same names in the same order.
std::vector<std::pair<std::string, Matrix*>> named_params(EncoderParams& params);
std::vector<std::pair<std::string, Var>> named_vars(const EncoderVars& vars);

// Single-sample forward pass. tokens is tokens x token_dim; the embedded
// sequence gets a CLS row and positional embeddings, then runs through the
// encoder stack; logits come off the CLS row. rng is consulted only when
// train_mode is on and the placement draws masks.
template <typename M>
ForwardResultT<M> encoder_forward(const M& tokens, const EncoderWeightsT<M>& w,
                                  const EncoderConfig& cfg,
                                  const DropoutPlacement& placement,
                                  bool train_mode, Rng* rng);

// Standalone attention-path pieces with the same math the forward uses.
struct QkvResult {
  Matrix q, k, v;
};
QkvResult project_qkv(const Matrix& x, const Matrix& w_q, const Matrix& w_k,
                      const Matrix& w_v);

struct AttentionResult {
  Matrix attn;  // N x N row-stochastic
  Matrix out;   // N x head dim
};
AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v);

Matrix feed_forward(const Matrix& x, const Matrix& w_ff1, const Matrix& w_ff2);

// Binary keep-mask with P(1) = 1 - p, drawn row-major.
Matrix draw_keep_mask(std::size_t rows, std::size_t cols, double p, Rng& rng);

// The implicit-dropout baselines, applied to whatever tensor the mode
// targets: inverted dropout for input_tokens/ff_hidden, post-softmax
// masking with row renormalization for attention_weights (a fully dropped
// row is kept intact since it has no distribution left to renormalize),
// and pre-softmax score masking with a -1e9 sentinel for scores_prekey.
Matrix apply_implicit_dropout(const Matrix& target, const DropoutPlacement& placement,
                              double p, Rng& rng);

inline constexpr double kScoreMaskSentinel = -1e9;

// Adapters that let templated code lift plain matrices (e.g. freshly drawn
// dropout masks) into whichever carrier it is instantiated with.
template <typename M>
M lift(Matrix m);
template <>
inline Matrix lift<Matrix>(Matrix m) {
  return m;
}
template <>
inline Var lift<Var>(Matrix m) {
  return leaf(std::move(m));
}

inline const Matrix& raw(const Matrix& m) { return m; }
inline const Matrix& raw(const Var& v) { return v.value(); }

inline double value_of(double s) { return s; }
inline double value_of(const Var& v) { return v.value()(0, 0); }

}  // namespace exdrop
