#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mground/model.hpp"
#include "mground/numerics.hpp"

namespace mground::testing {

inline Vec random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline Mat random_mat(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Mat m(r, c);
  for (double& x : m.flat()) x = scale * rng.normal();
  return m;
}

inline TextEmbedding random_unit(Rng& rng, std::size_t d) { return TextEmbedding(random_vec(rng, d).span()); }

inline AttentionPoolParams random_params(Rng& rng, std::size_t d, double jitter = 0.3) {
  AttentionPoolParams p = AttentionPoolParams::identity(d);
  for (double& w : p.wk.flat()) w += jitter * rng.normal();
  for (double& w : p.wv.flat()) w += jitter * rng.normal();
  for (double& w : p.q) w = 0.5 * rng.normal();
  return p;
}

inline FrameFeatures random_feats(Rng& rng, std::size_t L, std::size_t d) {
  return FrameFeatures(random_mat(rng, L, d));
}

inline std::vector<TextEmbedding> random_queries(Rng& rng, std::size_t k, std::size_t d) {
  std::vector<TextEmbedding> q;
  for (std::size_t i = 0; i < k; ++i) q.push_back(random_unit(rng, d));
  return q;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mground_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace mground::testing
