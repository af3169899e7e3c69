#include "mground/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mground/adam.hpp"
#include "mground/errors.hpp"

namespace mground {

FrameFeatures::FrameFeatures(Mat features) : f_(std::move(features)) {
  if (f_.rows() < 1 || f_.cols() < 1) {
    fail(ErrorCode::kInvalidInput, "FrameFeatures: need at least one frame and one dimension");
  }
  if (!all_finite(f_.flat())) fail(ErrorCode::kInvalidInput, "FrameFeatures: non-finite entry");
}

UnitEmbedding::UnitEmbedding(std::span<const double> v) {
  if (v.empty()) fail(ErrorCode::kInvalidInput, "embedding: empty vector");
  if (!all_finite(v)) fail(ErrorCode::kInvalidInput, "embedding: non-finite entry");
  const double n = norm(v);
  if (std::abs(n - 1.0) <= 1e-12) {
    v_ = Vec(v);
  } else {
    v_ = l2_normalize(v);
  }
}

AttentionPoolParams AttentionPoolParams::identity(std::size_t d) {
  return {Mat::identity(d), Mat::identity(d), Vec(d)};
}

double AttentionPoolParams::scale() const { return 1.0 / std::sqrt(static_cast<double>(dim())); }

void AttentionPoolParams::validate() const {
  const std::size_t d = q.size();
  if (d == 0) fail(ErrorCode::kShape, "AttentionPoolParams: empty query vector");
  if (wk.rows() != d || wk.cols() != d || wv.rows() != d || wv.cols() != d) {
    fail(ErrorCode::kShape, "AttentionPoolParams: wk/wv must be " + std::to_string(d) + "x" +
                                std::to_string(d));
  }
  if (!all_finite(wk.flat()) || !all_finite(wv.flat()) || !all_finite(q.span())) {
    fail(ErrorCode::kInvalidInput, "AttentionPoolParams: non-finite weight");
  }
}

PoolTrace attention_pool_forward(const AttentionPoolParams& params, const Mat& feats) {
  const std::size_t d = params.dim();
  if (feats.cols() != d) {
    fail(ErrorCode::kShape, "attention_pool: feature dim " + std::to_string(feats.cols()) +
                                " != pool dim " + std::to_string(d));
  }
  if (feats.rows() == 0) fail(ErrorCode::kShape, "attention_pool: no frames");

  PoolTrace tr;
  tr.key_query = matvec_t(params.wk, params.q);
  const double scale = params.scale();
  Vec scores(feats.rows());
  for (std::size_t t = 0; t < feats.rows(); ++t) scores[t] = scale * dot(tr.key_query, feats.row(t));
  tr.attn = softmax(scores);
  tr.pooled = Vec(d);
  for (std::size_t t = 0; t < feats.rows(); ++t) axpy(tr.attn[t], feats.row(t), tr.pooled.span());
  tr.raw = matvec(params.wv, tr.pooled);
  tr.raw_norm = norm(tr.raw);
  if (!std::isfinite(tr.raw_norm)) fail(ErrorCode::kNumerical, "attention_pool: non-finite output");
  if (tr.raw_norm < 1e-12) {
    fail(ErrorCode::kDegeneratePooling, "attention_pool: pooled vector has near-zero norm");
  }
  tr.out = scaled(tr.raw, 1.0 / tr.raw_norm);
  return tr;
}

MotionEmbedding attention_pool(const AttentionPoolParams& params, const FrameFeatures& feats) {
  return MotionEmbedding(attention_pool_forward(params, feats.matrix()).out);
}

Mat attention_pool_backward(const AttentionPoolParams& params, const Mat& feats,
                            const PoolTrace& tr, std::span<const double> grad_out,
                            PoolParamGrads* param_grads) {
  const std::size_t L = feats.rows();
  const double scale = params.scale();

  // Through the final normalization: (I − m mᵀ)/‖r‖.
  Vec d_raw(grad_out);
  axpy(-dot(tr.out, grad_out), tr.out, d_raw.span());
  for (double& x : d_raw) x /= tr.raw_norm;

  const Vec d_pooled = matvec_t(params.wv, d_raw);

  Vec d_attn(L);
  for (std::size_t t = 0; t < L; ++t) d_attn[t] = dot(d_pooled, feats.row(t));
  const double mean_d_attn = dot(tr.attn, d_attn);
  Vec d_scores(L);
  for (std::size_t t = 0; t < L; ++t) d_scores[t] = tr.attn[t] * (d_attn[t] - mean_d_attn);

  Mat d_feats(L, feats.cols());
  for (std::size_t t = 0; t < L; ++t) {
    auto row = d_feats.row(t);
    axpy(tr.attn[t], d_pooled, row);
    axpy(scale * d_scores[t], tr.key_query, row);
  }

  if (param_grads != nullptr) {
    add_outer(param_grads->wv, 1.0, d_raw, tr.pooled);
    Vec d_key_query(feats.cols());
    for (std::size_t t = 0; t < L; ++t) axpy(scale * d_scores[t], feats.row(t), d_key_query.span());
    // u = Wkᵀq  ⇒  dWk = q duᵀ, dq = Wk du
    add_outer(param_grads->wk, 1.0, params.q, d_key_query);
    axpy(1.0, matvec(params.wk, d_key_query), param_grads->q.span());
  }
  return d_feats;
}

double sequence_contrastive_loss(const MotionEmbedding& m, const TextEmbedding& pos,
                                 std::span<const TextEmbedding> negs, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "sequence_contrastive_loss: tau must be > 0");
  std::vector<double> logits;
  logits.reserve(negs.size() + 1);
  logits.push_back(cosine(m, pos) / tau);
  for (const auto& n : negs) logits.push_back(cosine(m, n) / tau);
  return log_sum_exp(logits) - logits.front();
}

void PretrainConfig::validate() const {
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "pretrain: tau must be > 0");
  if (steps < 1) fail(ErrorCode::kConfig, "pretrain: steps must be >= 1");
  if (!(lr > 0.0)) fail(ErrorCode::kConfig, "pretrain: lr must be > 0");
  if (batch < 2) fail(ErrorCode::kConfig, "pretrain: batch must be >= 2");
  if (init_jitter < 0.0) fail(ErrorCode::kConfig, "pretrain: init_jitter must be >= 0");
}

namespace {

void check_batch(const AttentionPoolParams& params, std::span<const PretrainPair> batch) {
  const std::size_t d = params.dim();
  for (const auto& p : batch) {
    if (p.motion.dim() != d || p.text.dim() != d) {
      fail(ErrorCode::kShape, "pretrain: pair dimension does not match pool dimension " +
                                  std::to_string(d));
    }
  }
}

}  // namespace

PretrainGradients grad_pretrain_params(const AttentionPoolParams& params,
                                       std::span<const PretrainPair> batch, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "pretrain: tau must be > 0");
  if (batch.empty()) fail(ErrorCode::kInvalidInput, "pretrain: empty batch");
  check_batch(params, batch);

  const std::size_t B = batch.size();
  const std::size_t d = params.dim();
  PretrainGradients out{0.0, PoolParamGrads(d)};
  std::vector<double> logits(B);
  for (std::size_t b = 0; b < B; ++b) {
    const Mat& feats = batch[b].motion.matrix();
    const PoolTrace tr = attention_pool_forward(params, feats);
    for (std::size_t j = 0; j < B; ++j) logits[j] = dot(tr.out, batch[j].text) / tau;
    out.loss += log_sum_exp(logits) - logits[b];

    const Vec probs = softmax(logits);
    Vec grad_m(d);
    for (std::size_t j = 0; j < B; ++j) axpy(probs[j], batch[j].text.vec(), grad_m.span());
    axpy(-1.0, batch[b].text.vec(), grad_m.span());
    for (double& g : grad_m) g /= (tau * static_cast<double>(B));
    attention_pool_backward(params, feats, tr, grad_m, &out.grads);
  }
  out.loss /= static_cast<double>(B);
  return out;
}

double pretrain_loss(const AttentionPoolParams& params, std::span<const PretrainPair> batch,
                     double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "pretrain: tau must be > 0");
  check_batch(params, batch);
  std::vector<MotionEmbedding> motions;
  motions.reserve(batch.size());
  for (const auto& p : batch) motions.push_back(attention_pool(params, p.motion));
  std::vector<double> logits(batch.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t j = 0; j < batch.size(); ++j) logits[j] = dot(motions[b], batch[j].text) / tau;
    total += log_sum_exp(logits) - logits[b];
  }
  return total / static_cast<double>(batch.size());
}

namespace {

// Inputs are validated by the initial loss, so later failures of these kinds
// come from the weights blowing up.
bool numeric_failure(ErrorCode c) {
  return c == ErrorCode::kNumerical || c == ErrorCode::kDegeneratePooling || c == ErrorCode::kInvalidInput;
}

}  // namespace

PretrainResult pretrain(std::span<const PretrainPair> dataset, const PretrainConfig& cfg) {
  cfg.validate();
  if (dataset.size() < 2) fail(ErrorCode::kInvalidInput, "pretrain: need at least 2 pairs");
  const std::size_t d = dataset.front().motion.dim();

  Rng rng(cfg.seed);
  AttentionPoolParams params = AttentionPoolParams::identity(d);
  for (double& w : params.wk.flat()) w += cfg.init_jitter * rng.normal();
  for (double& w : params.wv.flat()) w += cfg.init_jitter * rng.normal();
  for (double& w : params.q) w += cfg.init_jitter * rng.normal();
  check_batch(params, dataset);

  const AdamOptions opts{cfg.lr, 0.9, 0.999, 1e-8};
  Adam adam_wk(d * d, opts);
  Adam adam_wv(d * d, opts);
  Adam adam_q(d, opts);

  const std::size_t n = dataset.size();
  const std::size_t batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;  // forces a shuffle on the first step

  PretrainResult result;
  result.initial_loss = pretrain_loss(params, dataset, cfg.tau);
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));

  std::vector<PretrainPair> batch;
  for (int step = 0; step < cfg.steps; ++step) {
    if (cursor + batch_size > n) {
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      cursor = 0;
    }
    batch.clear();
    for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(dataset[order[cursor + i]]);
    cursor += batch_size;

    PretrainGradients g;
    try {
      g = grad_pretrain_params(params, batch, cfg.tau);
    } catch (const Error& e) {
      if (!numeric_failure(e.code())) throw;
      fail(ErrorCode::kDiverged, "pretrain: step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(g.loss) || !all_finite(g.grads.wk.flat()) || !all_finite(g.grads.wv.flat()) ||
        !all_finite(g.grads.q)) {
      fail(ErrorCode::kDiverged, "pretrain: non-finite loss at step " + std::to_string(step));
    }
    result.loss_trace.push_back(g.loss);
    adam_wk.step(params.wk.flat(), g.grads.wk.flat());
    adam_wv.step(params.wv.flat(), g.grads.wv.flat());
    adam_q.step(params.q.span(), g.grads.q.span());
    if (!all_finite(params.wk.flat()) || !all_finite(params.wv.flat()) || !all_finite(params.q)) {
      fail(ErrorCode::kDiverged, "pretrain: non-finite weights after step " + std::to_string(step));
    }
  }

  try {
    result.final_loss = pretrain_loss(params, dataset, cfg.tau);
  } catch (const Error& e) {
    if (!numeric_failure(e.code())) throw;
    fail(ErrorCode::kDiverged, std::string("pretrain: final loss: ") + e.what());
  }
  if (!std::isfinite(result.final_loss)) {
    fail(ErrorCode::kDiverged, "pretrain: non-finite final loss");
  }
  result.params = std::move(params);
  return result;
}

double retrieval_recall_at_1(const AttentionPoolParams& params,
                             std::span<const PretrainPair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const MotionEmbedding m = attention_pool(params, pairs[i].motion);
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      const double s = dot(m, pairs[j].text);
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    if (best == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace mground
