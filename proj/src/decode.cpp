#include <algorithm>
#include <cmath>
#include <limits>

#include "mground/errors.hpp"
#include "mground/smo.hpp"

namespace mground {

namespace {

double mean_activation(const Mat& mh, int query, int start, int end) {
  double s = 0.0;
  for (int t = start; t < end; ++t) s += mh(static_cast<std::size_t>(query), static_cast<std::size_t>(t));
  return s / static_cast<double>(end - start);
}

bool by_start(const Segment& a, const Segment& b) { return a.start < b.start; }

}  // namespace

Decoding decode_segments(const NormalizedMasks& masks) {
  const Mat& mh = masks.values;
  const std::size_t k = mh.rows();
  const std::size_t L = mh.cols();
  if (k < 1 || L < 1) fail(ErrorCode::kInvalidInput, "decode_segments: empty masks");

  Decoding dec;
  dec.labels.resize(L);
  for (std::size_t t = 0; t < L; ++t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i) {
      if (mh(i, t) > mh(best, t)) best = i;
    }
    dec.labels[t] = static_cast<int>(best);
  }

  std::vector<Segment> runs;
  for (std::size_t start = 0; start < L;) {
    std::size_t end = start + 1;
    while (end < L && dec.labels[end] == dec.labels[start]) ++end;
    const int q = dec.labels[start];
    const int s = static_cast<int>(start);
    const int e = static_cast<int>(end);
    runs.push_back({q, s, e, mean_activation(mh, q, s, e)});
    start = end;
  }

  std::vector<int> primary(k, -1);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    int& p = primary[static_cast<std::size_t>(runs[r].query_idx)];
    if (p < 0 || runs[r].length() > runs[static_cast<std::size_t>(p)].length()) p = static_cast<int>(r);
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (primary[static_cast<std::size_t>(runs[r].query_idx)] == static_cast<int>(r)) {
      dec.segments.push_back(runs[r]);
    } else {
      dec.fragments.push_back(runs[r]);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (primary[i] < 0) dec.absent_queries.push_back(static_cast<int>(i));
  }
  return dec;
}

OrderedSegmentation decode_segments_ordered(const NormalizedMasks& masks) {
  const Mat& mh = masks.values;
  const std::size_t k = mh.rows();
  const std::size_t L = mh.cols();
  if (k < 1 || L < 1) fail(ErrorCode::kInvalidInput, "decode_segments_ordered: empty masks");

  // prefix[i][t] = Σ_{u<t} Mh_iu
  std::vector<std::vector<double>> prefix(k, std::vector<double>(L + 1, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t t = 0; t < L; ++t) prefix[i][t + 1] = prefix[i][t] + mh(i, t);
  }

  // best[i][c]: max mass of queries i..k-1 covering [c, L).
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(k + 1, std::vector<double>(L + 1, kNegInf));
  best[k][L] = 0.0;
  for (std::size_t i = k; i-- > 0;) {
    for (std::size_t c = 0; c <= L; ++c) {
      for (std::size_t next = c; next <= L; ++next) {
        if (best[i + 1][next] == kNegInf) continue;
        const double v = prefix[i][next] - prefix[i][c] + best[i + 1][next];
        best[i][c] = std::max(best[i][c], v);
      }
    }
  }

  OrderedSegmentation out;
  out.score = best[0][0];
  out.cuts.push_back(0);
  std::size_t c = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double target = best[i][c];
    const double tol = 1e-12 * std::max(1.0, std::abs(target));
    std::size_t chosen = L;
    for (std::size_t next = c; next <= L; ++next) {
      if (best[i + 1][next] == kNegInf) continue;
      if (prefix[i][next] - prefix[i][c] + best[i + 1][next] >= target - tol) {
        chosen = next;
        break;
      }
    }
    const int s = static_cast<int>(c);
    const int e = static_cast<int>(chosen);
    const int q = static_cast<int>(i);
    out.segments.push_back({q, s, e, e > s ? mean_activation(mh, q, s, e) : 0.0});
    out.cuts.push_back(e);
    c = chosen;
  }
  return out;
}

Decoding decoding_from_ordered(const NormalizedMasks& masks, const OrderedSegmentation& seg) {
  Decoding dec;
  dec.labels.assign(masks.frames(), 0);
  for (const Segment& s : seg.segments) {
    if (s.length() <= 0) {
      dec.absent_queries.push_back(s.query_idx);
      continue;
    }
    for (int t = s.start; t < s.end; ++t) dec.labels[static_cast<std::size_t>(t)] = s.query_idx;
    dec.segments.push_back(s);
  }
  std::sort(dec.segments.begin(), dec.segments.end(), by_start);
  return dec;
}

}  // namespace mground
