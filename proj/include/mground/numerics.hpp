#pragma once

// Small dense linear-algebra kernel. Everything is 64-bit; the gradient
// checks elsewhere rely on that precision.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace mground {

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double value = 0.0) : data_(n, value) {}
  Vec(std::initializer_list<double> init) : data_(init) {}
  explicit Vec(std::vector<double> data) : data_(std::move(data)) {}
  explicit Vec(std::span<const double> data) : data_(data.begin(), data.end()) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  operator std::span<const double>() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  const std::vector<double>& values() const noexcept { return data_; }

  bool operator==(const Vec&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Mat identity(std::size_t n);
  static Mat from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  std::vector<std::vector<double>> to_rows() const;

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

bool all_finite(std::span<const double> v) noexcept;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
double cosine(std::span<const double> a, std::span<const double> b);

// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

Vec add(std::span<const double> a, std::span<const double> b);
Vec sub(std::span<const double> a, std::span<const double> b);
Vec hadamard(std::span<const double> a, std::span<const double> b);
Vec scaled(std::span<const double> v, double s);

Vec matvec(const Mat& m, std::span<const double> v);
// mᵀ·v
Vec matvec_t(const Mat& m, std::span<const double> v);
// m += s · a bᵀ
void add_outer(Mat& m, double s, std::span<const double> a, std::span<const double> b);

// Max-subtracted softmax. Throws kInvalidInput on empty or non-finite input.
Vec softmax(std::span<const double> v);
double log_sum_exp(std::span<const double> v);

// Throws kDegenerateVector when ‖v‖ ≤ 1e-12.
Vec l2_normalize(std::span<const double> v);

/// Deterministic PRNG: xoshiro256** (Blackman & Vigna) with its 256-bit state
/// seeded from four successive SplitMix64 outputs of the 64-bit seed.
///
/// Derived quantities are fixed so the stream is reproducible in any language:
///  - uniform():  (next_u64() >> 11) * 2^-53, in [0, 1)
///  - below(n):   rejection sampling; draw x = next_u64(), reject while
///                x < (2^64 - n) mod n, return x mod n
///  - normal():   Box-Muller using two fresh draws, u1 = 1 - uniform() in (0, 1],
///                u2 = uniform(); returns sqrt(-2 ln u1) * cos(2π u2). The sine
///                branch is discarded so each call consumes exactly two words.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent stream for (seed, index), used to address one instance of a
  // generated set without replaying the ones before it.
  static Rng derive(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64();
  double uniform();
  std::uint64_t below(std::uint64_t n);
  double normal();

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace mground
