#pragma once

// Temporal-IoU matching, ranked average precision and mAP over an IoU grid,
// plus the segment/query similarity report.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mground/model.hpp"
#include "mground/smo.hpp"

namespace mground {

struct Interval {
  int start = 0;
  int end = 0;  // exclusive
};

// |a ∩ b| / |a ∪ b| on half-open frame intervals. Throws on empty intervals.
double segment_iou(Interval a, Interval b);

struct GtSegment {
  int query_idx = 0;
  int start = 0;
  int end = 0;

  bool operator==(const GtSegment&) const = default;
};

struct Prediction {
  std::string instance_id;
  Segment segment;
};

struct GroundTruth {
  std::string instance_id;
  GtSegment segment;
};

// Detection-style AP. Predictions from all instances are ranked by confidence
// (ties: instance id, query index, start, end); each is matched
// greedily to the unmatched ground truth of the same instance and query when
// IoU ≥ tau_iou. AP = Σ_{true positives} precision@rank / |GT|.
double average_precision(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                         double tau_iou);

struct MatchRecord {
  std::string instance_id;
  int query_idx = 0;
  int gt_start = 0;
  int gt_end = 0;
  bool predicted = false;
  int pred_start = 0;
  int pred_end = 0;
  double confidence = 0.0;
  double iou = 0.0;  // best IoU among same-query predictions, 0 if none
};

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> ap_per_threshold;
  double map_mean = 0.0;
  std::vector<MatchRecord> per_instance;
};

std::vector<double> default_thresholds();

// Parses "start:step:end" (inclusive end), e.g. "0.3:0.1:0.8".
std::vector<double> parse_threshold_range(std::string_view spec);

EvalReport mean_ap(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                   std::span<const double> thresholds);

struct SimilarityInput {
  std::string instance_id;
  FrameFeatures features;
  std::vector<TextEmbedding> queries;
  std::vector<Segment> segments;
};

struct SimilarityRow {
  std::string instance_id;
  int query_idx = 0;
  std::string method;
  double similarity = 0.0;
};

struct SimilaritySummary {
  std::string method;
  std::size_t count = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct SimilarityReport {
  std::vector<SimilarityRow> rows;
  std::vector<SimilaritySummary> summaries;
  std::vector<std::string> notes;  // skipped segments
};

// Cosine between the pool of each segment's frames (hard crop) and the query
// embedding of that segment.
SimilarityReport semantic_similarity_report(const AttentionPoolParams& params,
                                            std::span<const SimilarityInput> instances,
                                            const std::string& method);

// Linear-interpolated quantile (the "type 7" rule) of an unsorted sample.
double quantile(std::vector<double> values, double p);

SimilaritySummary summarize_similarity(const std::string& method, std::span<const double> values);

}  // namespace mground
