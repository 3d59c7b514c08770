#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ovw {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major array of doubles.
//
// Every constructed Tensor satisfies product(shape) == size() and holds only
// finite values; constructors throw otherwise. Tensors are immutable values:
// operations return new tensors.
class Tensor {
 public:
  // A rank-0 tensor holding 0.0.
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor identity(std::size_t n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  // Row-major element access for rank-2 and rank-3 tensors.
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Contiguous view of one last-axis slice.
  std::span<const double> row(std::size_t index) const;
  std::size_t rows() const;  // product of all but the last extent
  std::size_t cols() const;  // last extent

  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Standard product of [m x k] and [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T for [m x k] and [n x k]; avoids materializing the transpose.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

// Unit-normalizes every last-axis vector. Throws DegenerateInputError when a
// vector's norm does not exceed kNormEpsilon.
inline constexpr double kNormEpsilon = 1e-12;
Tensor l2_normalize(const Tensor& v);

// Half-open [begin, end) range of cell `index` when an extent is split into
// `cells` near-equal parts. The last (extent % cells) cells are one longer.
struct CellRange {
  std::size_t begin;
  std::size_t end;
};
CellRange grid_cell_range(std::size_t extent, std::size_t cells, std::size_t index);

// Per-channel max over a g x g partition of an [H x W x D] map, flattened
// row-major into [g*g x D].
Tensor max_pool_grid(const Tensor& x, std::size_t grid);

Tensor softmax_lastdim(const Tensor& x);
double sigmoid(double x);
Tensor sigmoid(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor hadamard(const Tensor& a, const Tensor& b);

// Column slice [begin, end) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);
// Concatenates along the last axis; leading extents must match.
Tensor concat_last(const Tensor& a, const Tensor& b);
// Stacks [n_i x D] matrices vertically.
Tensor concat_rows(std::span<const Tensor> parts);

double max_abs(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace ovw
