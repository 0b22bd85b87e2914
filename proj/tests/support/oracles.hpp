#pragma once

// Test-only reference computations. Nothing here calls into the solver code
// paths it is used to check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mvdgw/gw.hpp"
#include "mvdgw/tensor.hpp"

namespace mvdgw::testing {

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n,
                                          double zero_prob = 0.0) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::bernoulli_distribution zero(zero_prob);
    std::vector<double> v(n);
    double s = 0.0;
    for (auto& x : v) {
        x = zero(rng) ? 0.0 : u(rng);
        s += x;
    }
    if (s == 0.0) {
        v[0] = 1.0;
        s = 1.0;
    }
    for (auto& x : v) x /= s;
    // Push the rounding error of the sum into the largest entry.
    double total = 0.0;
    std::size_t big = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total += v[i];
        if (v[i] > v[big]) big = i;
    }
    v[big] += 1.0 - total;
    return v;
}

inline std::vector<Vec3> random_points(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
    return pts;
}

inline DistanceMatrix distances_of(const std::vector<Vec3>& pts) {
    const std::size_t n = pts.size();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            if (i == k) continue;
            const double dx = pts[i][0] - pts[k][0];
            const double dy = pts[i][1] - pts[k][1];
            const double dz = pts[i][2] - pts[k][2];
            d(i, k) = std::sqrt(dx * dx + dy * dy + dz * dz);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) d(i, k) = d(k, i);
    }
    return DistanceMatrix(std::move(d));
}

inline IntraVectorMatrix vectors_of(const std::vector<Vec3>& pts) {
    const std::size_t n = pts.size();
    std::vector<Vec3> v(n * n, Vec3{0, 0, 0});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            const Vec3 d{pts[k][0] - pts[i][0], pts[k][1] - pts[i][1], pts[k][2] - pts[i][2]};
            v[i * n + k] = d;
            v[k * n + i] = {-d[0], -d[1], -d[2]};
        }
    }
    return IntraVectorMatrix(n, std::move(v));
}

/// Random non-negative matrix with (roughly) unit mass; not a coupling.
inline Matrix random_plan(std::mt19937_64& rng, std::size_t n, std::size_t m) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix t(n, m);
    double s = 0.0;
    for (auto& x : t.values()) {
        x = u(rng);
        s += x;
    }
    for (auto& x : t.values()) x /= s;
    return t;
}

/// Iterative proportional fitting of a positive matrix onto the coupling
/// polytope of (p, q). Independent of the library's Sinkhorn.
inline Matrix project_to_couplings(Matrix t, const std::vector<double>& p,
                                   const std::vector<double>& q, int sweeps = 5000) {
    for (int s = 0; s < sweeps; ++s) {
        for (std::size_t i = 0; i < t.rows(); ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j < t.cols(); ++j) r += t(i, j);
            const double f = r > 0.0 ? p[i] / r : 0.0;
            for (std::size_t j = 0; j < t.cols(); ++j) t(i, j) *= f;
        }
        double worst = 0.0;
        for (std::size_t j = 0; j < t.cols(); ++j) {
            double c = 0.0;
            for (std::size_t i = 0; i < t.rows(); ++i) c += t(i, j);
            const double f = c > 0.0 ? q[j] / c : 0.0;
            for (std::size_t i = 0; i < t.rows(); ++i) t(i, j) *= f;
        }
        for (std::size_t i = 0; i < t.rows(); ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j < t.cols(); ++j) r += t(i, j);
            worst = std::max(worst, std::abs(r - p[i]));
        }
        if (worst < 1e-13) break;
    }
    return t;
}

/// Quadruple-loop objective sum_{ijkl} L(D_ik, Db_jl) T_ij T_kl, squared loss.
inline double naive_gw_objective(const DistanceMatrix& a, const DistanceMatrix& b,
                                 const Matrix& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            for (std::size_t k = 0; k < a.size(); ++k)
                for (std::size_t l = 0; l < b.size(); ++l) {
                    const double d = a(i, k) - b(j, l);
                    s += 0.5 * d * d * t(i, j) * t(k, l);
                }
    return s;
}

/// Scaled cosine loss written out from its definition.
inline double reference_cosine(const Vec3& u, const Vec3& v) {
    const double nu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    const double nv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    const bool du = nu < 1e-12;
    const bool dv = nv < 1e-12;
    if (du && dv) return 0.0;
    if (du || dv) return 0.5;
    return 0.5 * (1.0 - (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv));
}

inline double naive_dgw_objective(const IntraVectorMatrix& a, const IntraVectorMatrix& b,
                                  const Matrix& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            for (std::size_t k = 0; k < a.size(); ++k)
                for (std::size_t l = 0; l < b.size(); ++l)
                    s += reference_cosine(a(i, k), b(j, l)) * t(i, j) * t(k, l);
    return s;
}

inline double naive_entropy(const Matrix& t) {
    double h = 0.0;
    for (double v : t.values())
        if (v > 0) h -= v * std::log(v);
    return h;
}

}  // namespace mvdgw::testing
