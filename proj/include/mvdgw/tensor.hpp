#pragma once

// Dense containers shared by every module. All values are 64-bit reals and
// every multi-dimensional index map is row-major (last axis fastest).

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace mvdgw {

using Shape = std::vector<std::size_t>;
using Vec3 = std::array<double, 3>;

/// Row-major dense tensor of finite doubles. Rank 0 holds a single scalar.
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}
    explicit Tensor(Shape shape);  // zero filled
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Product of extents; 1 for rank 0. Throws ValidationError on a zero extent.
std::size_t shape_volume(const Shape& shape);

/// Dense row-major matrix used for couplings, cost matrices and weights.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    Matrix transposed() const;
    std::vector<double> row_sums() const;
    std::vector<double> col_sums() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Plain triple-loop products. Summation runs over the inner index in
// ascending order, so results are reproducible bit for bit.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_transposed(const Matrix& a, const Matrix& b);  // a * b^T
std::vector<double> matvec(const Matrix& a, std::span<const double> x);
double frobenius_distance(const Matrix& a, const Matrix& b);
double frobenius_inner(const Matrix& a, const Matrix& b);

/// Extents of a (t, h, w) grid.
struct GridExtents {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    std::size_t size() const noexcept { return t * h * w; }
    bool operator==(const GridExtents&) const = default;
};

struct GridIndex {
    std::size_t t = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    bool operator==(const GridIndex&) const = default;
};

std::size_t flatten_index(GridIndex coord, GridExtents grid);
GridIndex unflatten_index(std::size_t index, GridExtents grid);

/// Physical spacing of the unit grid along each axis.
struct AxisScales {
    double t = 1.0;
    double h = 1.0;
    double w = 1.0;

    bool operator==(const AxisScales&) const = default;
};

/// Scaled coordinates of every grid point in flattened order.
class GridCoordinates {
public:
    explicit GridCoordinates(GridExtents grid, AxisScales scales = {});

    GridExtents grid() const noexcept { return grid_; }
    AxisScales scales() const noexcept { return scales_; }
    std::size_t size() const noexcept { return coords_.size(); }
    const Vec3& operator[](std::size_t i) const { return coords_[i]; }

private:
    GridExtents grid_;
    AxisScales scales_;
    std::vector<Vec3> coords_;
};

/// Non-negative attention mass on a t x h x w grid.
class AttentionVolume {
public:
    AttentionVolume(GridExtents grid, std::vector<double> mass);
    /// Accepts a rank-3 tensor shaped (t, h, w).
    explicit AttentionVolume(const Tensor& tensor);

    GridExtents grid() const noexcept { return grid_; }
    std::span<const double> mass() const noexcept { return mass_; }
    double at(GridIndex idx) const { return mass_[flatten_index(idx, grid_)]; }

    Tensor to_tensor() const;

private:
    GridExtents grid_;
    std::vector<double> mass_;
};

/// A point of the probability simplex; entries sum to 1 within 1e-9.
class ProbabilityVector {
public:
    static constexpr double kSumTolerance = 1e-9;

    explicit ProbabilityVector(std::vector<double> values);
    static ProbabilityVector uniform(std::size_t n);

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }

private:
    std::vector<double> values_;
};

/// Flattens and rescales attention mass to unit total. A volume whose total
/// mass is below 1e-12 maps to the uniform distribution.
ProbabilityVector normalize_attention(const AttentionVolume& volume);

struct TensorStats {
    double min = 0.0;
    double max = 0.0;
    double sum = 0.0;
    double l2norm = 0.0;
};

TensorStats tensor_stats(const Tensor& tensor);

}  // namespace mvdgw
