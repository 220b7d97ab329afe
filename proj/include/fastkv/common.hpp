#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fastkv {

// Error taxonomy. The CLI maps these onto exit codes 2/3/4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix. Small and dumb on purpose: every kernel in the
/// library is a plain loop so accumulation order is explicit.
template <typename Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<Real>& data() { return data_; }
  const std::vector<Real>& data() const { return data_; }

  // Appends the rows of `other`; column counts must agree (or this is empty).
  void append_rows(const Matrix& other) {
    if (other.rows_ == 0) return;
    if (rows_ == 0) cols_ = other.cols_;
    if (other.cols_ != cols_) throw std::invalid_argument("append_rows: column mismatch");
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    rows_ += other.rows_;
  }

  void push_row(std::span<const Real> values) {
    if (rows_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw std::invalid_argument("push_row: column mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  template <typename Other>
  Matrix<Other> cast() const {
    Matrix<Other> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](Real v) { return static_cast<Other>(v); });
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

template <typename Out, typename In>
std::vector<Out> cast_vector(const std::vector<In>& in) {
  return std::vector<Out>(in.begin(), in.end());
}

// y = W x, W stored row-major (out × in), accumulated in double.
template <typename Real>
void matvec(std::span<const Real> weight, std::size_t out_dim, std::span<const Real> x,
            std::span<Real> y) {
  const std::size_t in_dim = x.size();
  for (std::size_t o = 0; o < out_dim; ++o) {
    const Real* w = weight.data() + o * in_dim;
    double acc = 0.0;
    for (std::size_t i = 0; i < in_dim; ++i) acc += double(w[i]) * double(x[i]);
    y[o] = static_cast<Real>(acc);
  }
}

template <typename Real>
double dot(std::span<const Real> a, std::span<const Real> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double silu(double x) { return x * sigmoid(x); }

/// Round half up, used for every budget quota.
inline std::size_t round_half_up(double x) {
  if (x <= 0) return 0;
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

/// Fills `out` with N(0, std^2) draws from a mt19937_64 stream.
template <typename Real>
void fill_normal(std::span<Real> out, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out) v = static_cast<Real>(dist(rng));
}

/// Worker count: FASTKV_THREADS if set, otherwise hardware concurrency.
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("FASTKV_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
/// independent; the first exception thrown is rethrown on the caller.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            if (!failed.exchange(true)) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

/// 64-bit FNV-1a, used for provenance hashes and checksums.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (auto b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
std::uint64_t fnv1a_values(std::span<const T> values, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(std::as_bytes(values), h);
}

}  // namespace fastkv
