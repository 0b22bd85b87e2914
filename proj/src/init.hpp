#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mvdgw/tensor.hpp"

namespace mvdgw::detail {

inline Matrix uniform_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                             double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (auto& x : m.values()) x = dist(rng);
    return m;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace mvdgw::detail
