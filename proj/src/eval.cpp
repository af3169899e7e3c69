#include "mground/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>
#include <utility>

#include "mground/errors.hpp"

namespace mground {

double segment_iou(Interval a, Interval b) {
  if (a.end <= a.start || b.end <= b.start) fail(ErrorCode::kInvalidInput, "segment_iou: empty interval");
  const int inter = std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const int uni = (a.end - a.start) + (b.end - b.start) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

constexpr double kIouSlack = 1e-12;

using GtKey = std::pair<std::string, int>;

std::map<GtKey, std::size_t> index_ground_truth(std::span<const GroundTruth> gts) {
  std::map<GtKey, std::size_t> index;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto& seg = gts[g].segment;
    if (seg.end <= seg.start || seg.start < 0) {
      fail(ErrorCode::kInvalidInput, "ground truth for '" + gts[g].instance_id + "' query " +
                                         std::to_string(seg.query_idx) + " is empty");
    }
    if (!index.emplace(GtKey{gts[g].instance_id, seg.query_idx}, g).second) {
      fail(ErrorCode::kInvalidInput, "more than one ground-truth span for '" +
                                         gts[g].instance_id + "' query " +
                                         std::to_string(seg.query_idx));
    }
  }
  return index;
}

std::vector<std::size_t> ranking(std::span<const Prediction> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Prediction& pa = preds[a];
    const Prediction& pb = preds[b];
    if (pa.segment.confidence != pb.segment.confidence) {
      return pa.segment.confidence > pb.segment.confidence;
    }
    if (pa.instance_id != pb.instance_id) return pa.instance_id < pb.instance_id;
    if (pa.segment.query_idx != pb.segment.query_idx) {
      return pa.segment.query_idx < pb.segment.query_idx;
    }
    if (pa.segment.start != pb.segment.start) return pa.segment.start < pb.segment.start;
    return pa.segment.end < pb.segment.end;
  });
  return order;
}

double ap_ranked(std::span<const Prediction> preds, std::span<const std::size_t> order,
                 std::span<const GroundTruth> gts, const std::map<GtKey, std::size_t>& index,
                 double tau_iou) {
  std::vector<bool> matched(gts.size(), false);
  std::size_t tp = 0;
  double precision_sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Prediction& p = preds[order[rank]];
    const auto it = index.find({p.instance_id, p.segment.query_idx});
    if (it == index.end() || matched[it->second]) continue;
    const GtSegment& g = gts[it->second].segment;
    const double iou = segment_iou({p.segment.start, p.segment.end}, {g.start, g.end});
    if (iou + kIouSlack >= tau_iou) {
      matched[it->second] = true;
      ++tp;
      precision_sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  }
  return precision_sum / static_cast<double>(gts.size());
}

}  // namespace

double average_precision(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                         double tau_iou) {
  if (gts.empty()) fail(ErrorCode::kInvalidInput, "average_precision: no ground truth");
  const auto index = index_ground_truth(gts);
  const auto order = ranking(preds);
  return ap_ranked(preds, order, gts, index, tau_iou);
}

std::vector<double> default_thresholds() { return {0.3, 0.4, 0.5, 0.6, 0.7, 0.8}; }

std::vector<double> parse_threshold_range(std::string_view spec) {
  std::vector<double> parts;
  std::size_t pos = 0;
  while (true) {
    const std::size_t colon = spec.find(':', pos);
    const std::string_view token = spec.substr(pos, colon == std::string_view::npos ? spec.npos : colon - pos);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size() || token.empty()) {
      fail(ErrorCode::kConfig, "thresholds: cannot parse '" + std::string(token) + "'");
    }
    parts.push_back(value);
    if (colon == std::string_view::npos) break;
    pos = colon + 1;
  }
  if (parts.size() == 1) parts = {parts[0], 1.0, parts[0]};
  if (parts.size() != 3) fail(ErrorCode::kConfig, "thresholds: expected start:step:end");
  const double start = parts[0], step = parts[1], end = parts[2];
  if (!(step > 0.0) || start > end || start <= 0.0 || end > 1.0) {
    fail(ErrorCode::kConfig, "thresholds: need 0 < start <= end <= 1 and step > 0");
  }
  const auto count = static_cast<std::size_t>(std::floor((end - start) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(std::round((start + static_cast<double>(i) * step) * 1e9) / 1e9);
  }
  return out;
}

EvalReport mean_ap(std::span<const Prediction> preds, std::span<const GroundTruth> gts,
                   std::span<const double> thresholds) {
  if (thresholds.empty()) fail(ErrorCode::kConfig, "mean_ap: no thresholds");
  if (gts.empty()) fail(ErrorCode::kInvalidInput, "mean_ap: no ground truth");
  const auto index = index_ground_truth(gts);
  const auto order = ranking(preds);

  EvalReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double tau : thresholds) {
    report.ap_per_threshold.push_back(ap_ranked(preds, order, gts, index, tau));
  }
  report.map_mean = std::accumulate(report.ap_per_threshold.begin(), report.ap_per_threshold.end(), 0.0) /
                    static_cast<double>(thresholds.size());

  std::vector<MatchRecord> records(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    records[g].instance_id = gts[g].instance_id;
    records[g].query_idx = gts[g].segment.query_idx;
    records[g].gt_start = gts[g].segment.start;
    records[g].gt_end = gts[g].segment.end;
  }
  for (const std::size_t p_idx : order) {
    const Prediction& p = preds[p_idx];
    const auto it = index.find({p.instance_id, p.segment.query_idx});
    if (it == index.end()) continue;
    MatchRecord& rec = records[it->second];
    const double iou = segment_iou({p.segment.start, p.segment.end}, {rec.gt_start, rec.gt_end});
    if (!rec.predicted || iou > rec.iou) {
      rec.predicted = true;
      rec.iou = iou;
      rec.pred_start = p.segment.start;
      rec.pred_end = p.segment.end;
      rec.confidence = p.segment.confidence;
    }
  }
  std::sort(records.begin(), records.end(), [](const MatchRecord& a, const MatchRecord& b) {
    return std::tie(a.instance_id, a.query_idx) < std::tie(b.instance_id, b.query_idx);
  });
  report.per_instance = std::move(records);
  return report;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorCode::kInvalidInput, "quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SimilaritySummary summarize_similarity(const std::string& method, std::span<const double> values) {
  SimilaritySummary s;
  s.method = method;
  s.count = values.size();
  if (values.empty()) return s;
  const std::vector<double> v(values.begin(), values.end());
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return s;
}

SimilarityReport semantic_similarity_report(const AttentionPoolParams& params,
                                            std::span<const SimilarityInput> instances,
                                            const std::string& method) {
  SimilarityReport report;
  std::vector<double> values;
  for (const SimilarityInput& inst : instances) {
    const Mat& f = inst.features.matrix();
    for (const Segment& seg : inst.segments) {
      const bool bad_range = seg.start < 0 || seg.end > static_cast<int>(f.rows());
      const bool bad_query = seg.query_idx < 0 || seg.query_idx >= static_cast<int>(inst.queries.size());
      if (seg.length() <= 0 || bad_range || bad_query) {
        report.notes.push_back("skipped " + inst.instance_id + " query " +
                               std::to_string(seg.query_idx) + ": empty or invalid segment [" +
                               std::to_string(seg.start) + "," + std::to_string(seg.end) + ")");
        continue;
      }
      Mat crop(static_cast<std::size_t>(seg.length()), f.cols());
      for (int t = seg.start; t < seg.end; ++t) {
        const auto src = f.row(static_cast<std::size_t>(t));
        std::copy(src.begin(), src.end(), crop.row(static_cast<std::size_t>(t - seg.start)).begin());
      }
      const MotionEmbedding m = attention_pool(params, FrameFeatures(std::move(crop)));
      const double sim = cosine(m, inst.queries[static_cast<std::size_t>(seg.query_idx)]);
      report.rows.push_back({inst.instance_id, seg.query_idx, method, sim});
      values.push_back(sim);
    }
  }
  report.summaries.push_back(summarize_similarity(method, values));
  return report;
}

}  // namespace mground
