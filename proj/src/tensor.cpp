#include "mvdgw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mvdgw/errors.hpp"

namespace mvdgw {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw ValidationError(std::string(what) + ": non-finite value at flat index " +
                                  std::to_string(i));
        }
    }
}

}  // namespace

std::size_t shape_volume(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t axis = 0; axis < shape.size(); ++axis) {
        if (shape[axis] == 0) {
            throw ValidationError("tensor extent " + std::to_string(axis) + " is zero");
        }
        n *= shape[axis];
    }
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(shape_volume(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_volume(shape_) != data_.size()) {
        throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape volume " +
                              std::to_string(shape_volume(shape_)));
    }
    require_finite(data_, "tensor");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ValidationError("matrix data length does not match " + std::to_string(rows_) +
                              "x" + std::to_string(cols_));
    }
}

Matrix Matrix::transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    }
    return out;
}

std::vector<double> Matrix::row_sums() const {
    std::vector<double> sums(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
        double s = 0.0;
        for (double v : row(r)) s += v;
        sums[r] = s;
    }
    return sums;
}

std::vector<double> Matrix::col_sums() const {
    std::vector<double> sums(cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) sums[c] += (*this)(r, c);
    }
    return sums;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ValidationError("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                              " vs " + std::to_string(b.rows()) + ")");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
        }
    }
    return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ValidationError("matmul_transposed: inner dimensions differ");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto bj = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += ai[k] * bj[k];
            out(i, j) = s;
        }
    }
    return out;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw ValidationError("matvec: dimension mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ai = a.row(i);
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) s += ai[k] * x[k];
        y[i] = s;
    }
    return y;
}

double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError("frobenius_distance: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError("frobenius_inner: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
    return s;
}

std::size_t flatten_index(GridIndex coord, GridExtents grid) {
    if (coord.t >= grid.t) {
        throw BoundsError("axis t: index " + std::to_string(coord.t) + " out of range [0, " +
                          std::to_string(grid.t) + ")");
    }
    if (coord.h >= grid.h) {
        throw BoundsError("axis h: index " + std::to_string(coord.h) + " out of range [0, " +
                          std::to_string(grid.h) + ")");
    }
    if (coord.w >= grid.w) {
        throw BoundsError("axis w: index " + std::to_string(coord.w) + " out of range [0, " +
                          std::to_string(grid.w) + ")");
    }
    return coord.t * (grid.h * grid.w) + coord.h * grid.w + coord.w;
}

GridIndex unflatten_index(std::size_t index, GridExtents grid) {
    if (index >= grid.size()) {
        throw BoundsError("flat index " + std::to_string(index) + " out of range [0, " +
                          std::to_string(grid.size()) + ")");
    }
    const std::size_t plane = grid.h * grid.w;
    return {index / plane, (index % plane) / grid.w, index % grid.w};
}

GridCoordinates::GridCoordinates(GridExtents grid, AxisScales scales)
    : grid_(grid), scales_(scales) {
    if (grid.t == 0 || grid.h == 0 || grid.w == 0) {
        throw ValidationError("grid extents must all be >= 1");
    }
    if (!(scales.t > 0.0) || !(scales.h > 0.0) || !(scales.w > 0.0)) {
        throw ValidationError("axis scales must be > 0");
    }
    coords_.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const GridIndex g = unflatten_index(i, grid);
        coords_.push_back({static_cast<double>(g.t) * scales.t,
                           static_cast<double>(g.h) * scales.h,
                           static_cast<double>(g.w) * scales.w});
    }
}

AttentionVolume::AttentionVolume(GridExtents grid, std::vector<double> mass)
    : grid_(grid), mass_(std::move(mass)) {
    if (grid.t == 0 || grid.h == 0 || grid.w == 0) {
        throw ValidationError("attention grid extents must all be >= 1");
    }
    if (mass_.size() != grid.size()) {
        throw ValidationError("attention mass length " + std::to_string(mass_.size()) +
                              " does not match grid size " + std::to_string(grid.size()));
    }
    require_finite(mass_, "attention volume");
    for (std::size_t i = 0; i < mass_.size(); ++i) {
        if (mass_[i] < 0.0) {
            throw ValidationError("attention volume: negative mass at flat index " +
                                  std::to_string(i));
        }
    }
}

namespace {

GridExtents extents_of(const Tensor& tensor) {
    if (tensor.rank() != 3) {
        throw ValidationError("attention volume requires a rank-3 tensor, got rank " +
                              std::to_string(tensor.rank()));
    }
    return {tensor.shape()[0], tensor.shape()[1], tensor.shape()[2]};
}

}  // namespace

AttentionVolume::AttentionVolume(const Tensor& tensor)
    : AttentionVolume(extents_of(tensor), tensor.values()) {}

Tensor AttentionVolume::to_tensor() const {
    return Tensor({grid_.t, grid_.h, grid_.w}, mass_);
}

ProbabilityVector::ProbabilityVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw ValidationError("probability vector is empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i]) || values_[i] < 0.0) {
            throw ValidationError("probability vector: invalid entry at index " +
                                  std::to_string(i));
        }
        sum += values_[i];
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        throw ValidationError("probability vector sums to " + std::to_string(sum) +
                              ", expected 1");
    }
}

ProbabilityVector ProbabilityVector::uniform(std::size_t n) {
    if (n == 0) throw ValidationError("probability vector is empty");
    return ProbabilityVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

ProbabilityVector normalize_attention(const AttentionVolume& volume) {
    const auto mass = volume.mass();
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    if (total < 1e-12) return ProbabilityVector::uniform(mass.size());
    std::vector<double> values(mass.size());
    for (std::size_t i = 0; i < mass.size(); ++i) values[i] = mass[i] / total;
    return ProbabilityVector(std::move(values));
}

TensorStats tensor_stats(const Tensor& tensor) {
    const auto data = tensor.data();
    TensorStats s;
    s.min = *std::min_element(data.begin(), data.end());
    s.max = *std::max_element(data.begin(), data.end());
    double sq = 0.0;
    for (double v : data) {
        s.sum += v;
        sq += v * v;
    }
    s.l2norm = std::sqrt(sq);
    return s;
}

}  // namespace mvdgw
