#include "ovw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "ovw/errors.hpp"

namespace ovw {
namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename F>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* what, F f) {
  require_same_shape(a, b, what);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i], b.data()[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_{0.0} {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw NonFiniteError("tensor value is not finite");
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(d));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<std::vector<double>> copy;
  for (const auto& r : rows) copy.emplace_back(r);
  return from_rows(copy);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows.front().empty()) throw DimensionError("from_rows: empty matrix");
  const std::size_t cols = rows.front().size();
  std::vector<double> d;
  d.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
    d.insert(d.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(d));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

std::size_t Tensor::rows() const { return data_.size() / cols(); }

std::span<const double> Tensor::row(std::size_t index) const {
  const std::size_t n = cols();
  return std::span<const double>(data_).subspan(index * n, n);
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bd[p * n + j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_transposed");
  require_rank(b, 2, "matmul_transposed");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  if (b.extent(1) != k) {
    throw DimensionError("matmul_transposed: inner extents differ, " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      out[i * n + j] = s;
    }
  }
  return Tensor({m, n}, std::move(out));
}

Tensor transpose(const Tensor& m) {
  require_rank(m, 2, "transpose");
  const std::size_t r = m.extent(0), c = m.extent(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m(i, j);
  return Tensor({c, r}, std::move(out));
}

Tensor l2_normalize(const Tensor& v) {
  std::vector<double> out(v.values());
  const std::size_t n = v.cols();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += out[r * n + i] * out[r * n + i];
    const double norm = std::sqrt(sq);
    if (!(norm > kNormEpsilon)) {
      throw DegenerateInputError("l2_normalize: vector " + std::to_string(r) + " has norm " +
                                 std::to_string(norm));
    }
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] /= norm;
  }
  return Tensor(v.shape(), std::move(out));
}

CellRange grid_cell_range(std::size_t extent, std::size_t cells, std::size_t index) {
  const std::size_t base = extent / cells;
  const std::size_t longer_from = cells - extent % cells;
  const std::size_t begin = index * base + (index > longer_from ? index - longer_from : 0);
  const std::size_t len = base + (index >= longer_from ? 1 : 0);
  return {begin, begin + len};
}

Tensor max_pool_grid(const Tensor& x, std::size_t grid) {
  require_rank(x, 3, "max_pool_grid");
  const std::size_t h = x.extent(0), w = x.extent(1), d = x.extent(2);
  if (grid == 0 || h < grid || w < grid) {
    throw DimensionError("max_pool_grid: map " + shape_string(x.shape()) + " smaller than grid " +
                         std::to_string(grid));
  }
  std::vector<double> out(grid * grid * d);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    const CellRange ry = grid_cell_range(h, grid, gy);
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const CellRange rx = grid_cell_range(w, grid, gx);
      double* cell = &out[(gy * grid + gx) * d];
      for (std::size_t c = 0; c < d; ++c) cell[c] = x(ry.begin, rx.begin, c);
      for (std::size_t y = ry.begin; y < ry.end; ++y)
        for (std::size_t xx = rx.begin; xx < rx.end; ++xx)
          for (std::size_t c = 0; c < d; ++c) cell[c] = std::max(cell[c], x(y, xx, c));
    }
  }
  return Tensor({grid * grid, d}, std::move(out));
}

Tensor softmax_lastdim(const Tensor& x) {
  std::vector<double> out(x.values());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* v = &out[r * n];
    const double mx = *std::max_element(v, v + n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = std::exp(v[i] - mx);
      sum += v[i];
    }
    for (std::size_t i = 0; i < n; ++i) v[i] /= sum;
  }
  return Tensor(x.shape(), std::move(out));
}

double sigmoid(double x) {
  // Branching keeps exp() from overflowing for large |x|.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(x.data()[i]);
  return Tensor(x.shape(), std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "add", [](double p, double q) { return p + q; });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "subtract", [](double p, double q) { return p - q; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "hadamard", [](double p, double q) { return p * q; });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= factor;
  return Tensor(a.shape(), std::move(out));
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.cols();
  if (begin >= end || end > n) throw DimensionError("slice_last: bad range on " + shape_string(x.shape()));
  const std::size_t width = end - begin;
  std::vector<double> out;
  out.reserve(x.rows() * width);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    out.insert(out.end(), row.begin() + begin, row.begin() + end);
  }
  Shape shape = x.shape();
  shape.back() = width;
  return Tensor(std::move(shape), std::move(out));
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_last: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto ra = a.row(r);
    const auto rb = b.row(r);
    out.insert(out.end(), ra.begin(), ra.end());
    out.insert(out.end(), rb.begin(), rb.end());
  }
  Shape shape = a.shape();
  shape.back() = a.cols() + b.cols();
  return Tensor(std::move(shape), std::move(out));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t d = parts.front().cols();
  std::vector<double> out;
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.cols() != d) throw DimensionError("concat_rows: column mismatch");
    out.insert(out.end(), p.data().begin(), p.data().end());
    rows += p.rows();
  }
  return Tensor({rows, d}, std::move(out));
}

double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace ovw
