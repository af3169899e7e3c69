#pragma once

// Test-time soft-mask optimization: k×L mask logits over frozen frame
// features, optimized so that each masked-and-pooled sub-action embedding
// matches its own query and not the others.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mground/model.hpp"
#include "mground/numerics.hpp"

namespace mground {

struct SmoConfig {
  double alpha = 1.0;    // alignment weight
  double beta = 0.005;   // exclusivity weight
  double gamma = 100.0;  // smoothness weight
  double tau = 0.1;
  int steps = 100;  // 0 is allowed and only decodes the initial masks
  double lr = 0.01;
  double init_jitter = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

// Raw learnable logits, one row per sub-action query, one column per frame.
struct MaskLogits {
  Mat values;

  std::size_t queries() const noexcept { return values.rows(); }
  std::size_t frames() const noexcept { return values.cols(); }
  std::size_t param_count() const noexcept { return values.size(); }
};

// Column-wise softmax of MaskLogits; each column sums to one.
struct NormalizedMasks {
  Mat values;

  std::size_t queries() const noexcept { return values.rows(); }
  std::size_t frames() const noexcept { return values.cols(); }
};

struct LossBreakdown {
  double total = 0.0;
  double contrastive = 0.0;
  double exclusivity = 0.0;
  double smoothness = 0.0;
};

// Half-open frame span [start, end) assigned to one query.
struct Segment {
  int query_idx = 0;
  int start = 0;
  int end = 0;
  double confidence = 0.0;  // mean mask activation over the span

  int length() const noexcept { return end - start; }
  bool operator==(const Segment&) const = default;
};

struct Decoding {
  std::vector<int> labels;
  std::vector<Segment> segments;   // at most one per query, sorted by start
  std::vector<Segment> fragments;  // every other run, sorted by start
  std::vector<int> absent_queries;
};

enum class Decoder { kArgmax, kOrdered };

struct GroundingResult {
  std::vector<int> labels;
  std::vector<Segment> segments;
  std::vector<Segment> fragments;
  std::vector<int> absent_queries;
  NormalizedMasks masks;
  std::vector<LossBreakdown> loss_trace;  // entry s is the loss before update s; last is final
  int steps_run = 0;
  std::size_t param_count = 0;
};

MaskLogits init_masks(std::size_t k, std::size_t frames, const SmoConfig& cfg);
NormalizedMasks normalize_masks(const MaskLogits& logits);

// Row t of the result is weights[t] · f_t.
FrameFeatures reweight(std::span<const double> weights, const FrameFeatures& feats);

MotionEmbedding sub_action_embedding(const AttentionPoolParams& params, const MaskLogits& logits,
                                     std::size_t i, const FrameFeatures& feats);

double intra_contrastive_loss(std::span<const MotionEmbedding> embeds,
                              std::span<const TextEmbedding> queries, double tau);
double exclusivity_loss(const NormalizedMasks& masks);
double smoothness_loss(const NormalizedMasks& masks);

LossBreakdown total_loss(const AttentionPoolParams& params, const MaskLogits& logits,
                         const FrameFeatures& feats, std::span<const TextEmbedding> queries,
                         const SmoConfig& cfg);

struct LossAndGrad {
  LossBreakdown loss;
  Mat grad;  // dtotal/dlogits, k×L
};

LossAndGrad total_loss_and_grad(const AttentionPoolParams& params, const MaskLogits& logits,
                                const FrameFeatures& feats,
                                std::span<const TextEmbedding> queries, const SmoConfig& cfg);

Mat grad_total_loss(const AttentionPoolParams& params, const MaskLogits& logits,
                    const FrameFeatures& feats, std::span<const TextEmbedding> queries,
                    const SmoConfig& cfg);

// Called after every optimizer update with the 1-based step index.
using StepObserver = std::function<void(int step, const MaskLogits& logits)>;

GroundingResult optimize_masks(const AttentionPoolParams& params, const FrameFeatures& feats,
                               std::span<const TextEmbedding> queries, const SmoConfig& cfg,
                               Decoder decoder = Decoder::kArgmax,
                               const StepObserver& observer = {});

// Per-frame argmax (lowest index wins ties), runs grouped, longest run per
// query is primary.
Decoding decode_segments(const NormalizedMasks& masks);

struct OrderedSegmentation {
  std::vector<int> cuts;          // k+1 cut points, 0 = c_0 ≤ … ≤ c_k = L
  std::vector<Segment> segments;  // exactly k, query i on [c_i, c_{i+1}), may be empty
  double score = 0.0;
};

// Exact DP over ordered contiguous segmentations maximizing total mask mass;
// ties resolve to the lexicographically smallest cut vector.
OrderedSegmentation decode_segments_ordered(const NormalizedMasks& masks);

Decoding decoding_from_ordered(const NormalizedMasks& masks, const OrderedSegmentation& seg);

}  // namespace mground
