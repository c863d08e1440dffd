#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sqtag {

/// Dense column vector of 64-bit reals.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t size, double fill = 0.0) : data_(size, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  const std::vector<double>& values() const noexcept { return data_; }

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> data_;
};

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_of(const Matrix& m);

// Element-wise activations.
Vector sigmoid(const Vector& x);
Vector tanh_elem(const Vector& x);
/// Max-shifted softmax; output sums to one for any finite input.
Vector softmax(const Vector& x);

double sigmoid(double x);

// Linear algebra. All of these throw Error(DimensionMismatch) naming both
// shapes when the operands do not conform.
Vector matvec(const Matrix& m, const Vector& v);
/// m^T v without materialising the transpose.
Vector matvec_transposed(const Matrix& m, const Vector& v);
Vector add(const Vector& a, const Vector& b);
Vector sub(const Vector& a, const Vector& b);
Vector hadamard(const Vector& a, const Vector& b);
Vector scale(const Vector& v, double factor);
Matrix outer_product(const Vector& a, const Vector& b);
Vector concat(const Vector& a, const Vector& b);
double dot(const Vector& a, const Vector& b);
double l2_norm(std::span<const double> values);

// In-place accumulation helpers used by the backward passes.
void add_into(Vector& acc, const Vector& v);
void add_outer_into(Matrix& acc, const Vector& a, const Vector& b);
void matvec_into(Vector& acc, const Matrix& m, const Vector& v);
void matvec_transposed_into(Vector& acc, const Matrix& m, const Vector& v);

bool all_finite(std::span<const double> values);

/// Seeded pseudo-random generator. Each instance owns its stream; nothing is
/// global. Draws are bit-identical across platforms for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform01();
  /// Uniform on [lo, hi].
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n); n must be positive.
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform01() < p; }

  /// Child generator whose stream is a deterministic function of this one.
  Rng fork() { return Rng(next_u64()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// sqrt(3 / dim): the half-width that gives unit-scaled variance 1/dim.
double embedding_bound(std::size_t dim);

Vector uniform_vector(Rng& rng, std::size_t dim, double bound);
Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound);

template <typename T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

/// Central-difference gradient of `objective` with respect to `params`.
/// The block is perturbed in place and restored exactly afterwards.
std::vector<double> finite_diff_grad(const std::function<double()>& objective,
                                     std::span<double> params, double epsilon = 1e-5);

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries that are zero on
/// both sides from producing meaningless ratios.
double relative_error(double analytic, double numeric, double floor = 1e-6);

}  // namespace sqtag
