#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mground/errors.hpp"
#include "mground/model.hpp"
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

std::vector<PretrainPair> synth_pairs(std::size_t n, std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  std::vector<PretrainPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const SynthInstance inst = generate_indexed(spec, i);
    Vec mean(inst.features.dim());
    for (const auto& q : inst.queries) axpy(1.0, q.vec(), mean.span());
    pairs.push_back({inst.features, TextEmbedding(l2_normalize(mean).span())});
  }
  return pairs;
}

// Central differences of a scalar function over every entry of `m`.
Mat numeric_grad(Mat& m, const std::function<double()>& f, double h = 1e-5) {
  Mat g(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double orig = m.flat()[i];
    m.flat()[i] = orig + h;
    const double up = f();
    m.flat()[i] = orig - h;
    const double down = f();
    m.flat()[i] = orig;
    g.flat()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_rel_error(std::span<const double> a, std::span<const double> n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, gradient_rel_error(a[i], n[i]));
  return worst;
}

// Relative error, except that entries below the central-difference noise floor
// (about 1e-10 absolute at h = 1e-5 for O(1) losses) are compared absolutely.
bool grads_agree(std::span<const double> a, std::span<const double> n, double rel_tol) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool tiny = std::max(std::abs(a[i]), std::abs(n[i])) < 1e-5;
    if (tiny ? std::abs(a[i] - n[i]) > 1e-9 : gradient_rel_error(a[i], n[i]) >= rel_tol) {
      MESSAGE("entry " << i << ": analytic " << a[i] << " numeric " << n[i]);
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("embeddings and frame features validate their inputs") {
  const TextEmbedding t(Vec{3.0, 4.0});
  CHECK(t.vec()[0] == doctest::Approx(0.6));
  const Vec unit{0.6, 0.8};
  CHECK(TextEmbedding(unit).vec() == unit);
  CHECK(code_of([] { TextEmbedding(Vec{0.0, 0.0}); }) == ErrorCode::kDegenerateVector);
  CHECK(code_of([] { TextEmbedding(Vec{}); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { FrameFeatures(Mat(0, 3)); }) == ErrorCode::kInvalidInput);
  CHECK(code_of([] { FrameFeatures(Mat(2, 2, NAN)); }) == ErrorCode::kInvalidInput);
}

TEST_CASE("attention pool with zero query is the normalized mean of value-projected frames") {
  Rng rng(1);
  AttentionPoolParams p = AttentionPoolParams::identity(4);
  const FrameFeatures f = random_feats(rng, 7, 4);
  Vec mean(4);
  for (std::size_t t = 0; t < 7; ++t) axpy(1.0 / 7.0, f.frame(t), mean.span());
  const MotionEmbedding m = attention_pool(p, f);
  CHECK(max_abs_diff(m.vec(), l2_normalize(mean)) <= 1e-12);
}

TEST_CASE("attention pool over one frame ignores the query") {
  Rng rng(2);
  const AttentionPoolParams p = random_params(rng, 5);
  const FrameFeatures f = random_feats(rng, 1, 5);
  const Vec expected = l2_normalize(matvec(p.wv, f.frame(0)));
  CHECK(max_abs_diff(attention_pool(p, f).vec(), expected) <= 1e-12);
}

TEST_CASE("attention pool output is unit norm and permutation invariant") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(7), L = 1 + rng.below(12);
    const AttentionPoolParams p = random_params(rng, d);
    const FrameFeatures f = random_feats(rng, L, d);
    const MotionEmbedding m = attention_pool(p, f);
    CHECK(std::abs(norm(m.vec()) - 1.0) <= 1e-9);

    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = L - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Mat shuffled(L, d);
    for (std::size_t t = 0; t < L; ++t) {
      std::copy(f.frame(perm[t]).begin(), f.frame(perm[t]).end(), shuffled.row(t).begin());
    }
    CHECK(max_abs_diff(m.vec(), attention_pool(p, FrameFeatures(shuffled)).vec()) <= 1e-12);
  }
}

TEST_CASE("attention pool rejects degenerate and mismatched input") {
  const AttentionPoolParams p = AttentionPoolParams::identity(3);
  CHECK(code_of([&] { attention_pool(p, FrameFeatures(Mat(4, 3, 0.0))); }) == ErrorCode::kDegeneratePooling);
  CHECK(code_of([&] { attention_pool(p, FrameFeatures(Mat(4, 2, 1.0))); }) == ErrorCode::kShape);
  AttentionPoolParams bad = p;
  bad.wk = Mat(2, 2);
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::kShape);
}

TEST_CASE("sequence contrastive loss closed forms") {
  const MotionEmbedding m(Vec{1.0, 0.0});
  const TextEmbedding pos(Vec{1.0, 0.0});
  const TextEmbedding orth(Vec{0.0, 1.0});
  CHECK(sequence_contrastive_loss(m, pos, {}, 0.1) == 0.0);

  const std::vector<TextEmbedding> one{orth};
  const double expected = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
  CHECK(sequence_contrastive_loss(m, pos, one, 0.1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(4.54e-5).epsilon(1e-3));

  const std::vector<TextEmbedding> same{pos};
  CHECK(sequence_contrastive_loss(m, pos, same, 0.1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  CHECK(code_of([&] { sequence_contrastive_loss(m, pos, one, 0.0); }) == ErrorCode::kConfig);
  CHECK(code_of([&] { sequence_contrastive_loss(m, pos, one, -1.0); }) == ErrorCode::kConfig);
}

TEST_CASE("sequence contrastive loss is non-negative and decreasing in the positive similarity") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto negs = random_queries(rng, 1 + rng.below(4), 5);
    const TextEmbedding pos = random_unit(rng, 5);
    const MotionEmbedding m(random_vec(rng, 5).span());
    CHECK(sequence_contrastive_loss(m, pos, negs, 0.1) >= 0.0);
  }
  // pos = e1, neg = e2; m = (a, c, √(1 − a² − c²)) keeps cos(m, neg) = c fixed
  // while cos(m, pos) = a rises.
  const TextEmbedding pos(Vec{1.0, 0.0, 0.0});
  const std::vector<TextEmbedding> negs{TextEmbedding(Vec{0.0, 1.0, 0.0})};
  for (double c : {-0.5, 0.0, 0.3}) {
    double prev = INFINITY;
    for (int s = -8; s <= 8; ++s) {
      const double a = s / 10.0;
      const MotionEmbedding m(Vec{a, c, std::sqrt(1.0 - a * a - c * c)});
      const double loss = sequence_contrastive_loss(m, pos, negs, 0.1);
      CHECK(loss < prev);
      prev = loss;
    }
  }
}

TEST_CASE("pool backward matches finite differences for inputs and parameters") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 2 + rng.below(5), L = 1 + rng.below(8);
    AttentionPoolParams p = random_params(rng, d);
    Mat f = random_mat(rng, L, d);
    const Vec c = random_vec(rng, d);
    auto objective = [&] { return dot(c, attention_pool_forward(p, f).out); };

    const PoolTrace tr = attention_pool_forward(p, f);
    PoolParamGrads pg(d);
    const Mat df = attention_pool_backward(p, f, tr, c, &pg);

    CHECK(max_rel_error(df.flat(), numeric_grad(f, objective).flat()) < 1e-6);
    CHECK(max_rel_error(pg.wk.flat(), numeric_grad(p.wk, objective).flat()) < 1e-6);
    CHECK(max_rel_error(pg.wv.flat(), numeric_grad(p.wv, objective).flat()) < 1e-6);
    Mat q_as_mat(1, d, std::vector<double>(p.q.begin(), p.q.end()));
    auto q_objective = [&] {
      std::copy(q_as_mat.flat().begin(), q_as_mat.flat().end(), p.q.begin());
      return objective();
    };
    const Mat dq = numeric_grad(q_as_mat, q_objective);
    std::copy(q_as_mat.flat().begin(), q_as_mat.flat().end(), p.q.begin());
    CHECK(max_rel_error(pg.q, dq.flat()) < 1e-6);
  }
}

TEST_CASE("pretraining gradients match finite differences") {
  for (std::uint64_t seed : {6u, 60u, 600u}) {
    Rng rng(seed);
    const std::size_t d = 4;
    AttentionPoolParams p = random_params(rng, d);
    std::vector<PretrainPair> batch;
    for (int b = 0; b < 3; ++b) batch.push_back({random_feats(rng, 5, d), random_unit(rng, d)});
    const PretrainGradients g = grad_pretrain_params(p, batch, 0.1);
    CHECK(g.loss == doctest::Approx(pretrain_loss(p, batch, 0.1)).epsilon(1e-12));

    auto loss = [&] { return pretrain_loss(p, batch, 0.1); };
    CHECK(grads_agree(g.grads.wk.flat(), numeric_grad(p.wk, loss).flat(), 1e-4));
    CHECK(grads_agree(g.grads.wv.flat(), numeric_grad(p.wv, loss).flat(), 1e-4));
    Mat q(1, d, std::vector<double>(p.q.begin(), p.q.end()));
    auto q_loss = [&] {
      std::copy(q.flat().begin(), q.flat().end(), p.q.begin());
      return loss();
    };
    const Mat dq = numeric_grad(q, q_loss);
    CHECK(grads_agree(g.grads.q, dq.flat(), 1e-4));
  }
}

TEST_CASE("pretraining gradient vanishes when every text in the batch is identical") {
  Rng rng(7);
  const std::size_t d = 4;
  AttentionPoolParams p = random_params(rng, d);
  const TextEmbedding t = random_unit(rng, d);
  std::vector<PretrainPair> batch;
  for (int b = 0; b < 4; ++b) batch.push_back({random_feats(rng, 5, d), t});
  const PretrainGradients g = grad_pretrain_params(p, batch, 0.1);
  CHECK(g.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  for (double x : g.grads.q) CHECK(std::abs(x) < 1e-12);
  for (double x : g.grads.wk.flat()) CHECK(std::abs(x) < 1e-12);
  Mat q(1, d, std::vector<double>(p.q.begin(), p.q.end()));
  const Mat dq = numeric_grad(q, [&] {
    std::copy(q.flat().begin(), q.flat().end(), p.q.begin());
    return pretrain_loss(p, batch, 0.1);
  });
  for (double x : dq.flat()) CHECK(std::abs(x) < 1e-8);
}

TEST_CASE("pretraining lowers the loss, is deterministic and retrieves its pairs") {
  const auto pairs = synth_pairs(64, 21);
  const auto before = pairs;
  PretrainConfig cfg;
  cfg.seed = 3;
  const PretrainResult a = pretrain(pairs, cfg);
  CHECK(a.final_loss < a.initial_loss);
  CHECK(a.loss_trace.size() == 300);
  CHECK(retrieval_recall_at_1(a.params, pairs) >= 0.9);
  CHECK(pairs.size() == before.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].motion == before[i].motion);
    CHECK(pairs[i].text == before[i].text);
  }
  const PretrainResult b = pretrain(pairs, cfg);
  CHECK(a.params == b.params);
  CHECK(a.loss_trace == b.loss_trace);

  cfg.seed = 4;
  CHECK_FALSE(pretrain(pairs, cfg).params == a.params);
}

TEST_CASE("pretraining rejects bad configs and reports divergence") {
  const auto pairs = synth_pairs(4, 2);
  PretrainConfig cfg;
  cfg.tau = 0.0;
  CHECK(code_of([&] { pretrain(pairs, cfg); }) == ErrorCode::kConfig);
  cfg = {};
  cfg.batch = 1;
  CHECK(code_of([&] { pretrain(pairs, cfg); }) == ErrorCode::kConfig);
  cfg = {};
  CHECK(code_of([&] { pretrain(std::span(pairs).first(1), cfg); }) == ErrorCode::kInvalidInput);
  cfg.lr = 1e308;
  cfg.steps = 20;
  CHECK(code_of([&] { pretrain(pairs, cfg); }) == ErrorCode::kDiverged);
}
