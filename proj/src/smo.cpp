#include "mground/smo.hpp"

#include <cmath>
#include <string>

#include "mground/adam.hpp"
#include "mground/errors.hpp"

namespace mground {

void SmoConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    fail(ErrorCode::kConfig, "smo: alpha, beta and gamma must be >= 0");
  }
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "smo: tau must be > 0");
  if (steps < 0) fail(ErrorCode::kConfig, "smo: steps must be >= 0");
  if (!(lr > 0.0)) fail(ErrorCode::kConfig, "smo: lr must be > 0");
  if (init_jitter < 0.0) fail(ErrorCode::kConfig, "smo: init_jitter must be >= 0");
}

MaskLogits init_masks(std::size_t k, std::size_t frames, const SmoConfig& cfg) {
  if (k < 1 || frames < 1) fail(ErrorCode::kInvalidInput, "init_masks: k and L must be >= 1");
  MaskLogits logits{Mat(k, frames)};
  if (cfg.init_jitter > 0.0) {
    Rng rng(cfg.seed);
    for (double& x : logits.values.flat()) x = cfg.init_jitter * rng.normal();
  }
  return logits;
}

NormalizedMasks normalize_masks(const MaskLogits& logits) {
  const Mat& m = logits.values;
  if (m.rows() < 1 || m.cols() < 1) fail(ErrorCode::kInvalidInput, "normalize_masks: empty logits");
  if (!all_finite(m.flat())) fail(ErrorCode::kInvalidInput, "normalize_masks: non-finite logit");
  NormalizedMasks out{Mat(m.rows(), m.cols())};
  Vec column(m.rows());
  for (std::size_t t = 0; t < m.cols(); ++t) {
    for (std::size_t i = 0; i < m.rows(); ++i) column[i] = m(i, t);
    const Vec p = softmax(column);
    for (std::size_t i = 0; i < m.rows(); ++i) out.values(i, t) = p[i];
  }
  return out;
}

namespace {

Mat reweight_matrix(std::span<const double> weights, const Mat& feats) {
  if (weights.size() != feats.rows()) {
    fail(ErrorCode::kShape, "reweight: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(feats.rows()) + " frames");
  }
  Mat out(feats.rows(), feats.cols());
  for (std::size_t t = 0; t < feats.rows(); ++t) {
    const auto src = feats.row(t);
    auto dst = out.row(t);
    for (std::size_t c = 0; c < feats.cols(); ++c) dst[c] = weights[t] * src[c];
  }
  return out;
}

void check_problem(const AttentionPoolParams& params, const MaskLogits& logits,
                   const FrameFeatures& feats, std::span<const TextEmbedding> queries) {
  const std::size_t d = params.dim();
  if (feats.dim() != d) fail(ErrorCode::kShape, "smo: feature dim does not match pool dim");
  if (logits.frames() != feats.frames()) {
    fail(ErrorCode::kShape, "smo: mask has " + std::to_string(logits.frames()) +
                                " frames, features have " + std::to_string(feats.frames()));
  }
  if (logits.queries() != queries.size() || queries.empty()) {
    fail(ErrorCode::kShape, "smo: need one mask row per query (k >= 1)");
  }
  for (const auto& q : queries) {
    if (q.dim() != d) fail(ErrorCode::kShape, "smo: query dim does not match pool dim");
  }
}

}  // namespace

FrameFeatures reweight(std::span<const double> weights, const FrameFeatures& feats) {
  return FrameFeatures(reweight_matrix(weights, feats.matrix()));
}

MotionEmbedding sub_action_embedding(const AttentionPoolParams& params, const MaskLogits& logits,
                                     std::size_t i, const FrameFeatures& feats) {
  if (i >= logits.queries()) fail(ErrorCode::kInvalidInput, "sub_action_embedding: bad index");
  const NormalizedMasks masks = normalize_masks(logits);
  const Mat masked = reweight_matrix(masks.values.row(i), feats.matrix());
  return MotionEmbedding(attention_pool_forward(params, masked).out);
}

double intra_contrastive_loss(std::span<const MotionEmbedding> embeds,
                              std::span<const TextEmbedding> queries, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "intra_contrastive_loss: tau must be > 0");
  if (embeds.size() != queries.size()) {
    fail(ErrorCode::kShape, "intra_contrastive_loss: embedding/query count mismatch");
  }
  const std::size_t k = embeds.size();
  if (k <= 1) return 0.0;
  std::vector<double> logits(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) logits[j] = cosine(embeds[i], queries[j]) / tau;
    total += log_sum_exp(logits) - logits[i];
  }
  return total / static_cast<double>(k);
}

double exclusivity_loss(const NormalizedMasks& masks) {
  const Mat& mh = masks.values;
  const std::size_t k = mh.rows();
  if (k < 2) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) total += dot(mh.row(i), mh.row(j));
    }
  }
  return total / static_cast<double>(k * (k - 1));
}

double smoothness_loss(const NormalizedMasks& masks) {
  const Mat& mh = masks.values;
  const std::size_t k = mh.rows();
  const std::size_t L = mh.cols();
  if (L < 2 || k < 1) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t t = 0; t + 1 < L; ++t) {
      const double diff = mh(i, t + 1) - mh(i, t);
      total += diff * diff;
    }
  }
  return total / static_cast<double>(k * (L - 1));
}

namespace {

LossAndGrad evaluate(const AttentionPoolParams& params, const MaskLogits& logits,
                     const FrameFeatures& feats, std::span<const TextEmbedding> queries,
                     const SmoConfig& cfg, bool want_grad) {
  cfg.validate();
  check_problem(params, logits, feats, queries);

  const std::size_t k = logits.queries();
  const std::size_t L = logits.frames();
  const std::size_t d = params.dim();
  const NormalizedMasks masks = normalize_masks(logits);
  const Mat& mh = masks.values;
  const Mat& f = feats.matrix();

  LossAndGrad out;
  Mat grad_mh(k, L);
  if (want_grad) out.grad = Mat(k, L);

  if (k >= 2) {
    std::vector<Mat> masked(k);
    std::vector<PoolTrace> traces(k);
    for (std::size_t i = 0; i < k; ++i) {
      masked[i] = reweight_matrix(mh.row(i), f);
      traces[i] = attention_pool_forward(params, masked[i]);
    }
    std::vector<double> sims(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) sims[j] = dot(traces[i].out, queries[j]) / cfg.tau;
      total += log_sum_exp(sims) - sims[i];
      if (!want_grad) continue;

      const Vec p = softmax(sims);
      Vec grad_m(d);
      for (std::size_t j = 0; j < k; ++j) axpy(p[j], queries[j].vec(), grad_m.span());
      axpy(-1.0, queries[i].vec(), grad_m.span());
      for (double& g : grad_m) g *= cfg.alpha / (cfg.tau * static_cast<double>(k));

      const Mat d_masked = attention_pool_backward(params, masked[i], traces[i], grad_m, nullptr);
      for (std::size_t t = 0; t < L; ++t) grad_mh(i, t) += dot(d_masked.row(t), f.row(t));
    }
    out.loss.contrastive = total / static_cast<double>(k);
    out.loss.exclusivity = exclusivity_loss(masks);

    if (want_grad) {
      const double c = 2.0 * cfg.beta / static_cast<double>(k * (k - 1));
      for (std::size_t t = 0; t < L; ++t) {
        double col = 0.0;
        for (std::size_t i = 0; i < k; ++i) col += mh(i, t);
        for (std::size_t i = 0; i < k; ++i) grad_mh(i, t) += c * (col - mh(i, t));
      }
    }
  }

  out.loss.smoothness = smoothness_loss(masks);
  if (want_grad && L >= 2) {
    const double c = 2.0 * cfg.gamma / static_cast<double>(k * (L - 1));
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t t = 0; t + 1 < L; ++t) {
        const double diff = c * (mh(i, t + 1) - mh(i, t));
        grad_mh(i, t + 1) += diff;
        grad_mh(i, t) -= diff;
      }
    }
  }

  out.loss.total = cfg.alpha * out.loss.contrastive + cfg.beta * out.loss.exclusivity +
                   cfg.gamma * out.loss.smoothness;
  if (!std::isfinite(out.loss.total)) fail(ErrorCode::kNumerical, "smo: non-finite loss");

  if (want_grad) {
    // Column softmax Jacobian: dM_it = Mh_it (g_it − Σ_j Mh_jt g_jt).
    for (std::size_t t = 0; t < L; ++t) {
      double mean = 0.0;
      for (std::size_t i = 0; i < k; ++i) mean += mh(i, t) * grad_mh(i, t);
      for (std::size_t i = 0; i < k; ++i) out.grad(i, t) = mh(i, t) * (grad_mh(i, t) - mean);
    }
    if (!all_finite(out.grad.flat())) fail(ErrorCode::kNumerical, "smo: non-finite gradient");
  }
  return out;
}

}  // namespace

LossBreakdown total_loss(const AttentionPoolParams& params, const MaskLogits& logits,
                         const FrameFeatures& feats, std::span<const TextEmbedding> queries,
                         const SmoConfig& cfg) {
  return evaluate(params, logits, feats, queries, cfg, false).loss;
}

LossAndGrad total_loss_and_grad(const AttentionPoolParams& params, const MaskLogits& logits,
                                const FrameFeatures& feats,
                                std::span<const TextEmbedding> queries, const SmoConfig& cfg) {
  return evaluate(params, logits, feats, queries, cfg, true);
}

Mat grad_total_loss(const AttentionPoolParams& params, const MaskLogits& logits,
                    const FrameFeatures& feats, std::span<const TextEmbedding> queries,
                    const SmoConfig& cfg) {
  return evaluate(params, logits, feats, queries, cfg, true).grad;
}

GroundingResult optimize_masks(const AttentionPoolParams& params, const FrameFeatures& feats,
                               std::span<const TextEmbedding> queries, const SmoConfig& cfg,
                               Decoder decoder, const StepObserver& observer) {
  cfg.validate();
  params.validate();
  if (queries.empty()) fail(ErrorCode::kInvalidInput, "optimize_masks: need at least one query");

  MaskLogits logits = init_masks(queries.size(), feats.frames(), cfg);
  Adam adam(logits.param_count(), AdamOptions{cfg.lr, 0.9, 0.999, 1e-8});

  GroundingResult result;
  result.param_count = logits.param_count();
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.steps) + 1);

  auto at_step = [](int step, auto&& fn) -> decltype(fn()) {
    try {
      return fn();
    } catch (const Error& e) {
      const ErrorCode code =
          e.code() == ErrorCode::kNumerical ? ErrorCode::kDiverged : e.code();
      throw Error(code, std::string(e.what()) + " (step " + std::to_string(step) + ")");
    }
  };

  for (int step = 0; step < cfg.steps; ++step) {
    LossAndGrad lg =
        at_step(step, [&] { return total_loss_and_grad(params, logits, feats, queries, cfg); });
    result.loss_trace.push_back(lg.loss);
    adam.step(logits.values.flat(), lg.grad.flat());
    if (!all_finite(logits.values.flat())) {
      fail(ErrorCode::kDiverged, "optimize_masks: non-finite logits after step " +
                                     std::to_string(step + 1));
    }
    if (observer) observer(step + 1, logits);
  }
  result.loss_trace.push_back(
      at_step(cfg.steps, [&] { return total_loss(params, logits, feats, queries, cfg); }));
  result.steps_run = cfg.steps;

  result.masks = normalize_masks(logits);
  Decoding dec = decoder == Decoder::kOrdered
                     ? decoding_from_ordered(result.masks, decode_segments_ordered(result.masks))
                     : decode_segments(result.masks);
  result.labels = std::move(dec.labels);
  result.segments = std::move(dec.segments);
  result.fragments = std::move(dec.fragments);
  result.absent_queries = std::move(dec.absent_queries);
  return result;
}

}  // namespace mground
