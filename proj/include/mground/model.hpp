#pragma once

// Frozen attention-pooling encoder head and its toy contrastive pretraining.

#include <cstdint>
#include <span>
#include <vector>

#include "mground/numerics.hpp"

namespace mground {

// Per-frame motion features, one row per frame (L×d).
class FrameFeatures {
 public:
  FrameFeatures() = default;
  explicit FrameFeatures(Mat features);

  std::size_t frames() const noexcept { return f_.rows(); }
  std::size_t dim() const noexcept { return f_.cols(); }
  std::span<const double> frame(std::size_t t) const { return f_.row(t); }
  const Mat& matrix() const noexcept { return f_; }

  bool operator==(const FrameFeatures&) const = default;

 private:
  Mat f_;
};

// Unit-norm embedding. Inputs already unit within 1e-12 are kept bit-for-bit,
// anything else is normalized.
class UnitEmbedding {
 public:
  UnitEmbedding() = default;
  explicit UnitEmbedding(std::span<const double> v);

  std::size_t dim() const noexcept { return v_.size(); }
  const Vec& vec() const noexcept { return v_; }
  operator std::span<const double>() const noexcept { return v_.span(); }

  bool operator==(const UnitEmbedding&) const = default;

 private:
  Vec v_;
};

struct TextEmbedding : UnitEmbedding {
  using UnitEmbedding::UnitEmbedding;
};

struct MotionEmbedding : UnitEmbedding {
  using UnitEmbedding::UnitEmbedding;
};

// Single learned-query scaled dot-product attention pool:
//   s_t = q·(Wk f_t) / √d,  a = softmax(s),  m = normalize(Σ_t a_t Wv f_t)
struct AttentionPoolParams {
  Mat wk;
  Mat wv;
  Vec q;

  static AttentionPoolParams identity(std::size_t d);

  std::size_t dim() const noexcept { return q.size(); }
  double scale() const;
  void validate() const;

  bool operator==(const AttentionPoolParams&) const = default;
};

MotionEmbedding attention_pool(const AttentionPoolParams& params, const FrameFeatures& feats);

// Intermediates kept by the forward pass for the backward pass.
struct PoolTrace {
  Vec key_query;  // u = Wkᵀq, so s_t = scale·u·f_t
  Vec attn;       // a
  Vec pooled;     // Σ_t a_t f_t
  Vec raw;        // Wv·pooled
  double raw_norm = 0.0;
  Vec out;        // raw / ‖raw‖
};

// Forward over a raw L×d matrix (rows may be mask-scaled frames).
PoolTrace attention_pool_forward(const AttentionPoolParams& params, const Mat& feats);

struct PoolParamGrads {
  Mat wk;
  Mat wv;
  Vec q;

  explicit PoolParamGrads(std::size_t d = 0) : wk(d, d), wv(d, d), q(d) {}
};

// Backpropagates dLoss/dout through the pool. Returns dLoss/dfeats (L×d) and,
// when param_grads is non-null, accumulates parameter gradients into it.
Mat attention_pool_backward(const AttentionPoolParams& params, const Mat& feats,
                            const PoolTrace& trace, std::span<const double> grad_out,
                            PoolParamGrads* param_grads);

// −log softmax over {pos} ∪ negs of cos(m, t)/τ, taken at pos.
double sequence_contrastive_loss(const MotionEmbedding& m, const TextEmbedding& pos,
                                 std::span<const TextEmbedding> negs, double tau);

struct PretrainPair {
  FrameFeatures motion;
  TextEmbedding text;
};

struct PretrainConfig {
  double tau = 0.1;
  int steps = 300;
  double lr = 1e-2;
  int batch = 16;
  double init_jitter = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainGradients {
  double loss = 0.0;
  PoolParamGrads grads;
};

// In-batch contrastive loss (each pair's text is the positive, every other
// text in the batch a negative), averaged over the batch, with its gradient
// with respect to Wk, Wv and q.
PretrainGradients grad_pretrain_params(const AttentionPoolParams& params,
                                       std::span<const PretrainPair> batch, double tau);
double pretrain_loss(const AttentionPoolParams& params, std::span<const PretrainPair> batch,
                     double tau);

struct PretrainResult {
  AttentionPoolParams params;
  std::vector<double> loss_trace;  // minibatch loss per step
  double initial_loss = 0.0;       // full-dataset loss before the first step
  double final_loss = 0.0;         // full-dataset loss after the last step
};

// Adam on (Wk, Wv, q) from Wk = Wv = I, q = 0 plus seeded Gaussian jitter.
PretrainResult pretrain(std::span<const PretrainPair> dataset, const PretrainConfig& cfg);

// Fraction of pairs whose own text is the most similar text to their motion.
double retrieval_recall_at_1(const AttentionPoolParams& params,
                             std::span<const PretrainPair> pairs);

}  // namespace mground
