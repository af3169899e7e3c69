#pragma once

// Synthetic instances with planted segments, and the brute-force and
// finite-difference oracles that tests check the optimizer against.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mground/eval.hpp"
#include "mground/model.hpp"
#include "mground/smo.hpp"

namespace mground {

struct SynthSpec {
  int d = 16;
  int k = 3;
  int L = 60;
  double noise_sigma = 0.05;
  int transition_width = 2;  // frames of linear cross-fade at each boundary
  int min_seg_len = 8;
  double prototype_min_angle_deg = 60.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthInstance {
  std::string id;
  std::string text;
  std::vector<std::string> query_texts;
  FrameFeatures features;
  std::vector<TextEmbedding> queries;  // also the planted prototypes
  std::vector<GtSegment> gt;
};

SynthInstance generate_instance(const SynthSpec& spec, Rng& rng, std::string id = "synth");

// Instance `index` of the set seeded by spec.seed; independent of the others.
SynthInstance generate_indexed(const SynthSpec& spec, std::uint64_t index);

// Logits of +50 on the labelled query and −50 elsewhere at every frame.
MaskLogits harden_labels(std::span<const int> labels, std::size_t k);

struct BruteForceResult {
  std::vector<int> cuts;   // k+1 cut points of the best segmentation
  std::vector<int> order;  // order[b] = query assigned to block b
  std::vector<int> labels;
  LossBreakdown loss;
  std::size_t evaluated = 0;
};

// Exhaustive search over contiguous segmentations with non-empty blocks,
// scored by the hardened total loss. order_free also permutes which query
// owns which block. Guarded to k ≤ 3, L ≤ 12.
BruteForceResult brute_force_best_segmentation(const AttentionPoolParams& params,
                                               const FrameFeatures& feats,
                                               std::span<const TextEmbedding> queries,
                                               const SmoConfig& cfg, bool order_free);

// Central differences (f(M + h e) − f(M − h e)) / 2h per coordinate.
Mat finite_diff_grad(const std::function<double(const Mat&)>& loss_fn, const Mat& at, double h);

struct GradCheckReport {
  double max_rel_error = 0.0;
  int worst_trial = -1;
  std::size_t worst_row = 0;
  std::size_t worst_col = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int trials = 0;
};

// Relative error used by the gradient checks: |a − n| / max(|a|, |n|, 1e-6).
double gradient_rel_error(double analytic, double numeric);

// Random instances with k ∈ {1,2,3}, L ∈ [4,16], d ∈ [3,8], random pool
// weights, logits and queries, default loss weights. `perturb` is added to
// every analytic coordinate to exercise the failure path.
GradCheckReport run_gradcheck(std::uint64_t seed, int trials, double h, double perturb = 0.0);

}  // namespace mground
