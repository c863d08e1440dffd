#include "sqtag/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sqtag/error.hpp"

namespace sqtag {

namespace {

std::string vec_shape(const Vector& v) { return "vector(" + std::to_string(v.size()) + ")"; }

void require_same(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(op) + ": " + vec_shape(a) + " vs " + vec_shape(b));
  }
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string shape_of(const Matrix& m) {
  return "matrix(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

double sigmoid(double x) {
  // Split by sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Vector sigmoid(const Vector& x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Vector tanh_elem(const Vector& x) {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

Vector softmax(const Vector& x) {
  Vector out(x.size());
  if (x.empty()) return out;
  double max = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - max);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

Vector matvec(const Matrix& m, const Vector& v) {
  Vector out(m.rows());
  matvec_into(out, m, v);
  return out;
}

Vector matvec_transposed(const Matrix& m, const Vector& v) {
  Vector out(m.cols());
  matvec_transposed_into(out, m, v);
  return out;
}

void matvec_into(Vector& acc, const Matrix& m, const Vector& v) {
  if (m.cols() != v.size() || acc.size() != m.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "matvec: " + shape_of(m) + " vs " + vec_shape(v));
  }
  const double* x = v.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    acc[r] += s;
  }
}

void matvec_transposed_into(Vector& acc, const Matrix& m, const Vector& v) {
  if (m.rows() != v.size() || acc.size() != m.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "matvec_transposed: " + shape_of(m) + " vs " + vec_shape(v));
  }
  double* out = acc.data();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double vr = v[r];
    if (vr == 0.0) continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * vr;
  }
}

Vector add(const Vector& a, const Vector& b) {
  require_same(a, b, "add");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vector sub(const Vector& a, const Vector& b) {
  require_same(a, b, "sub");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vector hadamard(const Vector& a, const Vector& b) {
  require_same(a, b, "hadamard");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Vector scale(const Vector& v, double factor) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * factor;
  return out;
}

Matrix outer_product(const Vector& a, const Vector& b) {
  Matrix m(a.size(), b.size());
  add_outer_into(m, a, b);
  return m;
}

Vector concat(const Vector& a, const Vector& b) {
  std::vector<double> values;
  values.reserve(a.size() + b.size());
  values.insert(values.end(), a.begin(), a.end());
  values.insert(values.end(), b.begin(), b.end());
  return Vector(std::move(values));
}

double dot(const Vector& a, const Vector& b) {
  require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

void add_into(Vector& acc, const Vector& v) {
  require_same(acc, v, "add_into");
  for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
}

void add_outer_into(Matrix& acc, const Vector& a, const Vector& b) {
  if (acc.rows() != a.size() || acc.cols() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "outer_product: " + shape_of(acc) + " vs " + vec_shape(a) + " x " + vec_shape(b));
  }
  for (std::size_t r = 0; r < a.size(); ++r) {
    double ar = a[r];
    if (ar == 0.0) continue;
    auto row = acc.row(r);
    for (std::size_t c = 0; c < b.size(); ++c) row[c] += ar * b[c];
  }
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double Rng::uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) {
  double v = lo + (hi - lo) * uniform01();
  return std::min(v, hi);
}

std::size_t Rng::below(std::size_t n) {
  // Rejection keeps the draw unbiased for any n.
  const std::uint64_t range = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % range);
}

double embedding_bound(std::size_t dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidDim, "embedding_bound: dim must be >= 1");
  return std::sqrt(3.0 / static_cast<double>(dim));
}

Vector uniform_vector(Rng& rng, std::size_t dim, double bound) {
  if (dim == 0) throw Error(ErrorCode::InvalidDim, "uniform_vector: dim must be >= 1");
  if (!(bound > 0.0)) throw Error(ErrorCode::InvalidDim, "uniform_vector: bound must be > 0");
  Vector v(dim);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return v;
}

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  Matrix m(rows, cols);
  for (double& x : m.span()) x = rng.uniform(-bound, bound);
  return m;
}

std::vector<double> finite_diff_grad(const std::function<double()>& objective,
                                     std::span<double> params, double epsilon) {
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double plus = objective();
    params[i] = saved - epsilon;
    const double minus = objective();
    params[i] = saved;
    grad[i] = (plus - minus) / (2.0 * epsilon);
  }
  return grad;
}

double relative_error(double analytic, double numeric, double floor) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace sqtag
