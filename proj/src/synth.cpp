#include "mground/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <limits>
#include <numeric>

#include "mground/errors.hpp"

namespace mground {

namespace {

constexpr const char* kActionNames[] = {
    "walks forward", "jumps",        "sits down",     "waves",        "turns around",
    "kicks",         "squats",       "raises arms",   "runs",         "crouches",
    "steps back",    "claps",        "bows",          "spins",        "stretches",
};
constexpr std::size_t kActionCount = sizeof(kActionNames) / sizeof(kActionNames[0]);

}  // namespace

void SynthSpec::validate() const {
  if (d < 1 || k < 1 || L < 1) fail(ErrorCode::kConfig, "synth: d, k and L must be >= 1");
  if (min_seg_len < 1) fail(ErrorCode::kConfig, "synth: min_seg_len must be >= 1");
  if (static_cast<long>(k) * min_seg_len > L) {
    fail(ErrorCode::kConfig, "synth: k * min_seg_len = " + std::to_string(k * min_seg_len) +
                                 " exceeds L = " + std::to_string(L));
  }
  if (!(noise_sigma >= 0.0)) fail(ErrorCode::kConfig, "synth: noise_sigma must be >= 0");
  if (transition_width < 0 || transition_width > min_seg_len) {
    fail(ErrorCode::kConfig, "synth: transition_width must lie in [0, min_seg_len]");
  }
  if (!(prototype_min_angle_deg >= 0.0 && prototype_min_angle_deg < 180.0)) {
    fail(ErrorCode::kConfig, "synth: prototype_min_angle_deg must lie in [0, 180)");
  }
  if (static_cast<std::size_t>(k) > kActionCount) {
    fail(ErrorCode::kConfig, "synth: at most " + std::to_string(kActionCount) + " sub-actions");
  }
}

SynthInstance generate_instance(const SynthSpec& spec, Rng& rng, std::string id) {
  spec.validate();
  const auto k = static_cast<std::size_t>(spec.k);
  const auto d = static_cast<std::size_t>(spec.d);
  const auto L = static_cast<std::size_t>(spec.L);

  const double max_cos = std::cos(spec.prototype_min_angle_deg * std::numbers::pi / 180.0);
  std::vector<Vec> protos;
  constexpr int kMaxAttempts = 10000;
  for (std::size_t i = 0; i < k; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
      Vec v(d);
      for (double& x : v) x = rng.normal();
      if (norm(v) <= 1e-12) continue;
      v = l2_normalize(v);
      accepted = std::all_of(protos.begin(), protos.end(),
                             [&](const Vec& p) { return dot(p, v) <= max_cos + 1e-15; });
      if (accepted) protos.push_back(std::move(v));
    }
    if (!accepted) {
      fail(ErrorCode::kConfig, "synth: cannot place " + std::to_string(k) +
                                   " prototypes at the requested minimum angle in d = " +
                                   std::to_string(d));
    }
  }

  // Ordered lengths ≥ min_seg_len summing to L: spread the slack with k−1
  // sorted uniform cut points.
  const std::uint64_t slack = L - k * static_cast<std::size_t>(spec.min_seg_len);
  std::vector<std::uint64_t> marks(k - 1);
  for (auto& m : marks) m = rng.below(slack + 1);
  std::sort(marks.begin(), marks.end());
  std::vector<int> bounds{0};
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::uint64_t mark = i + 1 < k ? marks[i] : slack;
    bounds.push_back(bounds.back() + spec.min_seg_len + static_cast<int>(mark - prev));
    prev = mark;
  }

  std::vector<std::size_t> names(kActionCount);
  std::iota(names.begin(), names.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(names[i], names[i + rng.below(kActionCount - i)]);

  SynthInstance inst;
  inst.id = std::move(id);
  for (std::size_t i = 0; i < k; ++i) {
    inst.query_texts.emplace_back(kActionNames[names[i]]);
    inst.gt.push_back({static_cast<int>(i), bounds[i], bounds[i + 1]});
  }
  inst.text = "a person " + inst.query_texts.front();
  for (std::size_t i = 1; i < k; ++i) inst.text += ", then " + inst.query_texts[i];

  Mat frames(L, d);
  const double half = spec.transition_width / 2.0;
  for (std::size_t t = 0; t < L; ++t) {
    const double centre = static_cast<double>(t) + 0.5;
    std::size_t seg = 0;
    while (static_cast<int>(t) >= bounds[seg + 1]) ++seg;
    auto row = frames.row(t);
    std::copy(protos[seg].begin(), protos[seg].end(), row.begin());
    if (spec.transition_width > 0) {
      for (std::size_t b = 1; b < k; ++b) {
        const double edge = bounds[b];
        if (centre > edge - half && centre < edge + half) {
          const double lambda = (centre - (edge - half)) / spec.transition_width;
          for (std::size_t c = 0; c < d; ++c) {
            row[c] = (1.0 - lambda) * protos[b - 1][c] + lambda * protos[b][c];
          }
        }
      }
    }
    for (double& x : row) x += spec.noise_sigma * rng.normal();
  }
  inst.features = FrameFeatures(std::move(frames));
  for (const Vec& p : protos) inst.queries.emplace_back(p.span());
  return inst;
}

SynthInstance generate_indexed(const SynthSpec& spec, std::uint64_t index) {
  Rng rng = Rng::derive(spec.seed, index);
  char id[32];
  std::snprintf(id, sizeof(id), "inst_%05llu", static_cast<unsigned long long>(index));
  return generate_instance(spec, rng, id);
}

MaskLogits harden_labels(std::span<const int> labels, std::size_t k) {
  MaskLogits logits{Mat(k, labels.size(), -50.0)};
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= k) {
      fail(ErrorCode::kInvalidInput, "harden_labels: label out of range at frame " + std::to_string(t));
    }
    logits.values(static_cast<std::size_t>(labels[t]), t) = 50.0;
  }
  return logits;
}

namespace {

void enumerate_cuts(std::size_t k, int L, std::vector<int>& cuts,
                    const std::function<void(const std::vector<int>&)>& visit) {
  if (cuts.size() == k) {
    cuts.push_back(L);
    visit(cuts);
    cuts.pop_back();
    return;
  }
  const std::size_t remaining_blocks = k - cuts.size();  // blocks still to open after this cut
  for (int c = cuts.back() + 1; c <= L - static_cast<int>(remaining_blocks); ++c) {
    cuts.push_back(c);
    enumerate_cuts(k, L, cuts, visit);
    cuts.pop_back();
  }
}

}  // namespace

BruteForceResult brute_force_best_segmentation(const AttentionPoolParams& params,
                                               const FrameFeatures& feats,
                                               std::span<const TextEmbedding> queries,
                                               const SmoConfig& cfg, bool order_free) {
  const std::size_t k = queries.size();
  const auto L = static_cast<int>(feats.frames());
  if (k < 1) fail(ErrorCode::kInvalidInput, "brute_force: need at least one query");
  if (k > 3 || L > 12) fail(ErrorCode::kTooLarge, "brute_force: limited to k <= 3 and L <= 12");
  if (static_cast<int>(k) > L) fail(ErrorCode::kInvalidInput, "brute_force: more queries than frames");

  BruteForceResult best;
  best.loss.total = std::numeric_limits<double>::infinity();
  std::vector<int> cuts{0};
  enumerate_cuts(k, L, cuts, [&](const std::vector<int>& c) {
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    do {
      std::vector<int> labels(static_cast<std::size_t>(L));
      for (std::size_t b = 0; b < k; ++b) {
        for (int t = c[b]; t < c[b + 1]; ++t) labels[static_cast<std::size_t>(t)] = order[b];
      }
      const LossBreakdown loss = total_loss(params, harden_labels(labels, k), feats, queries, cfg);
      ++best.evaluated;
      if (loss.total < best.loss.total) {
        best.loss = loss;
        best.cuts = c;
        best.order = order;
        best.labels = std::move(labels);
      }
    } while (order_free && std::next_permutation(order.begin(), order.end()));
  });
  return best;
}

Mat finite_diff_grad(const std::function<double(const Mat&)>& loss_fn, const Mat& at, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) fail(ErrorCode::kConfig, "finite_diff_grad: h must lie in [1e-7, 1e-3]");
  Mat grad(at.rows(), at.cols());
  Mat probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = probe.flat()[i];
    probe.flat()[i] = orig + h;
    const double up = loss_fn(probe);
    probe.flat()[i] = orig - h;
    const double down = loss_fn(probe);
    probe.flat()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      fail(ErrorCode::kNumerical, "finite_diff_grad: non-finite loss at coordinate " + std::to_string(i));
    }
    grad.flat()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double gradient_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport run_gradcheck(std::uint64_t seed, int trials, double h, double perturb) {
  if (trials < 1) fail(ErrorCode::kConfig, "gradcheck: trials must be >= 1");
  Rng rng(seed);
  GradCheckReport report;
  report.trials = trials;
  const SmoConfig cfg;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t k = 1 + rng.below(3);
    const std::size_t L = 4 + rng.below(13);
    const std::size_t d = 3 + rng.below(6);

    AttentionPoolParams params = AttentionPoolParams::identity(d);
    for (double& w : params.wk.flat()) w += 0.3 * rng.normal();
    for (double& w : params.wv.flat()) w += 0.3 * rng.normal();
    for (double& w : params.q) w = 0.5 * rng.normal();
    Mat f(L, d);
    for (double& x : f.flat()) x = rng.normal();
    const FrameFeatures feats(std::move(f));
    std::vector<TextEmbedding> queries;
    for (std::size_t i = 0; i < k; ++i) {
      Vec v(d);
      for (double& x : v) x = rng.normal();
      queries.emplace_back(v.span());
    }
    MaskLogits logits{Mat(k, L)};
    for (double& x : logits.values.flat()) x = rng.normal();

    Mat analytic = grad_total_loss(params, logits, feats, queries, cfg);
    for (double& g : analytic.flat()) g += perturb;
    const Mat numeric = finite_diff_grad(
        [&](const Mat& m) { return total_loss(params, MaskLogits{m}, feats, queries, cfg).total; },
        logits.values, h);

    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < L; ++c) {
        const double err = gradient_rel_error(analytic(r, c), numeric(r, c));
        if (err > report.max_rel_error || report.worst_trial < 0) {
          report.max_rel_error = err;
          report.worst_trial = trial;
          report.worst_row = r;
          report.worst_col = c;
          report.worst_analytic = analytic(r, c);
          report.worst_numeric = numeric(r, c);
        }
      }
    }
  }
  return report;
}

}  // namespace mground
