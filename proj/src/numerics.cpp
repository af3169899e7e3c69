#include "mground/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mground/errors.hpp"

namespace mground {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kDegenerateVector: return "degenerate-vector";
    case ErrorCode::kDegeneratePooling: return "degenerate-pooling";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kDiverged: return "optimization-diverged";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kLspUnavailable: return "lsp-unavailable";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kTooLarge: return "too-large";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    fail(ErrorCode::kShape, std::string(op) + ": size mismatch " + std::to_string(a) +
                                " vs " + std::to_string(b));
  }
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorCode::kShape, "Mat: data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  Mat m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_same_size(rows[r].size(), cols, "Mat::from_rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

std::vector<std::vector<double>> Mat::to_rows() const {
  std::vector<std::vector<double>> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r].assign(row(r).begin(), row(r).end());
  return out;
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= 1e-12 || nb <= 1e-12) fail(ErrorCode::kDegenerateVector, "cosine: zero vector");
  return dot(a, b) / (na * nb);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

Vec add(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "add");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec sub(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "sub");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec hadamard(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "hadamard");
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Vec scaled(std::span<const double> v, double s) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * s;
  return out;
}

Vec matvec(const Mat& m, std::span<const double> v) {
  require_same_size(m.cols(), v.size(), "matvec");
  Vec out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), v);
  return out;
}

Vec matvec_t(const Mat& m, std::span<const double> v) {
  require_same_size(m.rows(), v.size(), "matvec_t");
  Vec out(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(v[r], m.row(r), out.span());
  return out;
}

void add_outer(Mat& m, double s, std::span<const double> a, std::span<const double> b) {
  require_same_size(m.rows(), a.size(), "add_outer");
  require_same_size(m.cols(), b.size(), "add_outer");
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(s * a[r], b, m.row(r));
}

Vec softmax(std::span<const double> v) {
  if (v.empty()) fail(ErrorCode::kInvalidInput, "softmax: empty input");
  if (!all_finite(v)) fail(ErrorCode::kInvalidInput, "softmax: non-finite input");
  const double mx = *std::max_element(v.begin(), v.end());
  Vec out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) fail(ErrorCode::kInvalidInput, "log_sum_exp: empty input");
  if (!all_finite(v)) fail(ErrorCode::kInvalidInput, "log_sum_exp: non-finite input");
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += std::exp(x - mx);
  return mx + std::log(total);
}

Vec l2_normalize(std::span<const double> v) {
  if (!all_finite(v)) fail(ErrorCode::kInvalidInput, "l2_normalize: non-finite input");
  const double n = norm(v);
  if (n <= 1e-12) fail(ErrorCode::kDegenerateVector, "l2_normalize: near-zero norm");
  return scaled(v, 1.0 / n);
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t state = seed ^ (index * 0xD1B54A32D192ED03ULL);
  splitmix64(state);
  return Rng(splitmix64(state));
}

namespace {
constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) fail(ErrorCode::kInvalidInput, "Rng::below: n must be positive");
  const std::uint64_t threshold = (0 - n) % n;
  std::uint64_t x = next_u64();
  while (x < threshold) x = next_u64();
  return x % n;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mground
