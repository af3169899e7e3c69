#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

#include "mground/errors.hpp"
#include "mground/eval.hpp"
#include "mground/synth.hpp"
#include "support.hpp"

using namespace mground;
using namespace mground::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected mground::Error");
  return ErrorCode::kInvalidInput;
}

Prediction pred(std::string id, int q, int s, int e, double c) { return {std::move(id), Segment{q, s, e, c}}; }
GroundTruth gt(std::string id, int q, int s, int e) { return {std::move(id), GtSegment{q, s, e}}; }

// Reference AP: rank by (−confidence, id, query, start, end), then walk the
// precision/recall curve with a set of consumed ground truths.
double reference_ap(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, double tau) {
  std::vector<std::tuple<double, std::string, int, int, int, std::size_t>> keyed;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    keyed.emplace_back(-p.segment.confidence, p.instance_id, p.segment.query_idx, p.segment.start, p.segment.end, i);
  }
  std::sort(keyed.begin(), keyed.end());
  std::set<std::pair<std::string, int>> used;
  std::vector<int> hit;
  for (const auto& key : keyed) {
    const Prediction& p = preds[std::get<5>(key)];
    int h = 0;
    for (const auto& g : gts) {
      if (g.instance_id != p.instance_id || g.segment.query_idx != p.segment.query_idx) continue;
      if (used.count({g.instance_id, g.segment.query_idx})) break;
      const int inter = std::max(0, std::min(p.segment.end, g.segment.end) - std::max(p.segment.start, g.segment.start));
      const int uni = p.segment.length() + (g.segment.end - g.segment.start) - inter;
      if (static_cast<double>(inter) >= tau * static_cast<double>(uni) - 1e-9) {
        used.insert({g.instance_id, g.segment.query_idx});
        h = 1;
      }
      break;
    }
    hit.push_back(h);
  }
  double ap = 0.0;
  int tp = 0;
  for (std::size_t r = 0; r < hit.size(); ++r) {
    tp += hit[r];
    if (hit[r]) ap += static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  return ap / static_cast<double>(gts.size());
}

struct RandomSet {
  std::vector<Prediction> preds;
  std::vector<GroundTruth> gts;
};

RandomSet random_set(Rng& rng) {
  RandomSet s;
  const std::size_t n = 1 + rng.below(8);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = "inst" + std::to_string(i);
    const int k = 1 + static_cast<int>(rng.below(3));
    const int L = 20 + static_cast<int>(rng.below(20));
    for (int q = 0; q < k; ++q) {
      const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(L - 1)));
      s.gts.push_back(gt(id, q, a, a + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L - a)))));
      const int m = static_cast<int>(rng.below(3));
      for (int j = 0; j < m; ++j) {
        const int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(L - 1)));
        const int e = b + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(L - b)));
        // Quantized confidences so ties occur.
        s.preds.push_back(pred(id, q, b, e, static_cast<double>(rng.below(5)) / 4.0));
      }
    }
  }
  return s;
}

}  // namespace

TEST_CASE("segment_iou examples") {
  CHECK(segment_iou({3, 9}, {3, 9}) == 1.0);
  CHECK(segment_iou({0, 4}, {4, 8}) == 0.0);
  CHECK(segment_iou({0, 10}, {5, 15}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(segment_iou({0, 10}, {2, 4}) == 0.2);
  CHECK(code_of([] { segment_iou({3, 3}, {0, 4}); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { segment_iou({0, 4}, {5, 2}); }) == ErrorCode::kInvalidInput);

  Rng rng(30);
  for (int trial = 0; trial < 500; ++trial) {
    const int a = static_cast<int>(rng.below(20)), b = static_cast<int>(rng.below(20));
    const Interval x{a, a + 1 + static_cast<int>(rng.below(10))};
    const Interval y{b, b + 1 + static_cast<int>(rng.below(10))};
    const double v = segment_iou(x, y);
    CHECK(v == segment_iou(y, x));
    CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("average_precision examples") {
  const std::vector<GroundTruth> gts{gt("a", 0, 0, 10), gt("a", 1, 10, 20)};
  CHECK(average_precision(std::vector<Prediction>{pred("a", 0, 0, 10, 0.9), pred("a", 1, 10, 20, 0.8)}, gts, 0.8) ==
        1.0);
  CHECK(average_precision(std::vector<Prediction>{}, gts, 0.3) == 0.0);

  // IoU 0.5 for the confident one, 0.2 for the other.
  const std::vector<Prediction> mixed{pred("a", 0, 0, 5, 0.9), pred("a", 1, 18, 28, 0.4)};
  CHECK(segment_iou({0, 5}, {0, 10}) == 0.5);
  CHECK(segment_iou({18, 28}, {10, 20}) == doctest::Approx(2.0 / 18.0));
  CHECK(average_precision(mixed, gts, 0.3) == 0.5);

  // A false positive ranked first halves the precision of the later hit.
  const std::vector<Prediction> fp_first{pred("a", 1, 0, 2, 0.9), pred("a", 0, 0, 10, 0.5)};
  CHECK(average_precision(fp_first, gts, 0.5) == 0.25);

  // A duplicate prediction for an already matched ground truth is a false positive.
  const std::vector<Prediction> dup{pred("a", 0, 0, 10, 0.9), pred("a", 0, 0, 10, 0.8), pred("a", 1, 10, 20, 0.7)};
  CHECK(average_precision(dup, gts, 0.5) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));

  // Predictions for unknown instances count against precision.
  const std::vector<Prediction> stray{pred("zz", 0, 0, 10, 0.9), pred("a", 0, 0, 10, 0.5), pred("a", 1, 10, 20, 0.4)};
  CHECK(average_precision(stray, gts, 0.5) == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0).epsilon(1e-15));

  CHECK(code_of([&] { average_precision(mixed, std::vector<GroundTruth>{}, 0.5); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([&] { average_precision(mixed, std::vector<GroundTruth>{gt("a", 0, 0, 5), gt("a", 0, 5, 9)}, 0.5); }) ==
        ErrorCode::kInvalidInput);
}

TEST_CASE("average_precision agrees with the reference construction") {
  Rng rng(31);
  for (int trial = 0; trial < 400; ++trial) {
    const RandomSet s = random_set(rng);
    for (double tau : default_thresholds()) {
      CAPTURE(trial);
      CAPTURE(tau);
      CHECK(average_precision(s.preds, s.gts, tau) == doctest::Approx(reference_ap(s.preds, s.gts, tau)).epsilon(1e-12));
    }
  }
}

TEST_CASE("mean_ap examples") {
  std::vector<GroundTruth> gts;
  std::vector<Prediction> exact, half;
  for (int i = 0; i < 5; ++i) {
    const std::string id = "i" + std::to_string(i);
    gts.push_back(gt(id, 0, 0, 8));
    gts.push_back(gt(id, 1, 8, 20));
    exact.push_back(pred(id, 0, 0, 8, 0.7));
    exact.push_back(pred(id, 1, 8, 20, 0.6));
    half.push_back(pred(id, 0, 0, 4, 0.7));      // 4/8
    half.push_back(pred(id, 1, 8, 14, 0.6));     // 6/12
  }
  const auto taus = default_thresholds();
  const EvalReport perfect = mean_ap(exact, gts, taus);
  CHECK(perfect.map_mean == 1.0);
  for (double ap : perfect.ap_per_threshold) CHECK(ap == 1.0);

  const EvalReport r = mean_ap(half, gts, taus);
  CHECK(r.ap_per_threshold == std::vector<double>{1.0, 1.0, 1.0, 0.0, 0.0, 0.0});
  CHECK(r.map_mean == 0.5);
  REQUIRE(r.per_instance.size() == 10);
  CHECK(r.per_instance[0].instance_id == "i0");
  CHECK(r.per_instance[0].query_idx == 0);
  CHECK(r.per_instance[0].predicted);
  CHECK(r.per_instance[0].iou == 0.5);
  CHECK(r.per_instance[0].pred_end == 4);

  const EvalReport none = mean_ap(std::vector<Prediction>{}, gts, taus);
  CHECK(none.map_mean == 0.0);
  CHECK_FALSE(none.per_instance[3].predicted);
  CHECK(code_of([&] { mean_ap(exact, gts, std::vector<double>{}); }) == ErrorCode::kConfig);
}

TEST_CASE("mean_ap invariants on random sets") {
  Rng rng(32);
  for (int trial = 0; trial < 300; ++trial) {
    RandomSet s = random_set(rng);
    const auto taus = default_thresholds();
    const EvalReport r = mean_ap(s.preds, s.gts, taus);
    const double mean = std::accumulate(r.ap_per_threshold.begin(), r.ap_per_threshold.end(), 0.0) / 6.0;
    CHECK(std::abs(r.map_mean - mean) <= 1e-12);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      CHECK((r.ap_per_threshold[i] >= 0.0 && r.ap_per_threshold[i] <= 1.0));
      if (i > 0) CHECK(r.ap_per_threshold[i] <= r.ap_per_threshold[i - 1]);
    }

    std::vector<Prediction> as_pred;
    for (const auto& g : s.gts) as_pred.push_back(pred(g.instance_id, g.segment.query_idx, g.segment.start, g.segment.end, 0.5));
    CHECK(mean_ap(as_pred, s.gts, taus).map_mean == 1.0);

    // Shuffle both lists; every number must be unchanged.
    RandomSet shuffled = s;
    for (std::size_t i = shuffled.preds.size(); i > 1; --i) std::swap(shuffled.preds[i - 1], shuffled.preds[rng.below(i)]);
    for (std::size_t i = shuffled.gts.size(); i > 1; --i) std::swap(shuffled.gts[i - 1], shuffled.gts[rng.below(i)]);
    const EvalReport r2 = mean_ap(shuffled.preds, shuffled.gts, taus);
    CHECK(r2.ap_per_threshold == r.ap_per_threshold);
    CHECK(r2.map_mean == r.map_mean);
    REQUIRE(r2.per_instance.size() == r.per_instance.size());
    for (std::size_t i = 0; i < r.per_instance.size(); ++i) {
      CHECK(r2.per_instance[i].instance_id == r.per_instance[i].instance_id);
      CHECK(r2.per_instance[i].iou == r.per_instance[i].iou);
    }
  }
}

TEST_CASE("threshold ranges") {
  const auto t = parse_threshold_range("0.3:0.1:0.8");
  CHECK(t == default_thresholds());
  CHECK(parse_threshold_range("0.5") == std::vector<double>{0.5});
  CHECK(parse_threshold_range("0.5:0.25:1") == std::vector<double>{0.5, 0.75, 1.0});
  for (const char* bad : {"", "a:b:c", "0.3:0:0.8", "0.8:0.1:0.3", "0:0.1:0.5", "0.3:0.1", "0.3:0.1:1.5"}) {
    CAPTURE(bad);
    CHECK(code_of([&] { parse_threshold_range(bad); }) == ErrorCode::kConfig);
  }
}

TEST_CASE("quantile and summary") {
  CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.5) == 2.5);
  CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.25) == 1.75);
  CHECK(quantile({7.0}, 0.9) == 7.0);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 1.0) == 5.0);
  CHECK(code_of([] { quantile({}, 0.5); }) == ErrorCode::kInvalidInput);
  const std::vector<double> v{0.1, 0.9, 0.5};
  const SimilaritySummary s = summarize_similarity("smo", v);
  CHECK(s.count == 3);
  CHECK(s.min == 0.1);
  CHECK(s.max == 0.9);
  CHECK(s.median == 0.5);
  CHECK(s.q1 == doctest::Approx(0.3));
  CHECK(s.mean == doctest::Approx(0.5));
}

TEST_CASE("semantic similarity on planted segments") {
  SynthSpec spec;
  spec.seed = 3;
  const AttentionPoolParams params = AttentionPoolParams::identity(static_cast<std::size_t>(spec.d));
  std::vector<SimilarityInput> inputs;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const SynthInstance inst = generate_indexed(spec, i);
    std::vector<Segment> segs;
    for (const GtSegment& g : inst.gt) segs.push_back({g.query_idx, g.start, g.end, 1.0});
    inputs.push_back({inst.id, inst.features, inst.queries, segs});
  }
  const SimilarityReport r = semantic_similarity_report(params, inputs, "oracle");
  CHECK(r.rows.size() == 60);
  CHECK(r.notes.empty());
  for (const auto& row : r.rows) CHECK(row.similarity >= 0.95);
  REQUIRE(r.summaries.size() == 1);
  CHECK(r.summaries[0].method == "oracle");
  CHECK(r.summaries[0].count == 60);
}

TEST_CASE("semantic similarity against an orthogonal prototype") {
  Rng rng(33);
  const std::size_t d = 16;
  const AttentionPoolParams params = AttentionPoolParams::identity(d);
  double sum = 0.0;
  const int n = 200;
  for (int trial = 0; trial < n; ++trial) {
    const TextEmbedding p = random_unit(rng, d);
    Vec o = random_vec(rng, d);
    const double proj = dot(o, p.vec());
    for (std::size_t j = 0; j < d; ++j) o[j] -= proj * p.vec()[j];
    const TextEmbedding orth(o.span());
    Mat f(10, d);
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t j = 0; j < d; ++j) f(t, j) = p.vec()[j] + 0.05 * rng.normal();
    }
    const SimilarityInput in{"x", FrameFeatures(f), {orth}, {Segment{0, 0, 10, 1.0}}};
    const SimilarityReport r = semantic_similarity_report(params, std::span(&in, 1), "random");
    REQUIRE(r.rows.size() == 1);
    CHECK(std::abs(r.rows[0].similarity) <= 0.2);
    sum += r.rows[0].similarity;
  }
  CHECK(std::abs(sum / n) <= 0.05);
}

TEST_CASE("semantic similarity edge cases") {
  const AttentionPoolParams params = AttentionPoolParams::identity(2);
  const FrameFeatures f(Mat::from_rows({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}));
  const SimilarityInput in{"e", f,
                           {TextEmbedding(Vec{1.0, 0.0}), TextEmbedding(Vec{0.0, 1.0})},
                           {Segment{0, 0, 2, 0.9}, Segment{1, 2, 2, 0.0}, Segment{1, 2, 3, 0.8}}};
  const SimilarityReport r = semantic_similarity_report(params, std::span(&in, 1), "smo");
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].similarity == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.rows[1].similarity == doctest::Approx(1.0).epsilon(1e-15));
  REQUIRE(r.notes.size() == 1);
  CHECK(r.notes[0].find("query 1") != std::string::npos);
}
