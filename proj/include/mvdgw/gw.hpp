#pragma once

// Entropic Gromov-Wasserstein (GW) and directed Gromov-Wasserstein (DGW)
// discrepancies between two attention volumes.
//
// Both discrepancies minimise a quadratic transport objective
//
//     E(T) = sum_{i,j,k,l} L(A_ik, B_jl) T_ij T_kl
//
// over couplings T with prescribed marginals. GW uses pairwise distances with
// the loss L(a, b) = (a - b)^2 / 2; DGW uses displacement vectors with the
// scaled cosine loss (1 - cos(u, v)) / 2. The entropic problem E(T) - eps H(T)
// is solved by mirror descent: each outer step linearises E at the current
// coupling and solves the resulting entropic transport problem with
// Sinkhorn-Knopp.

#include <cstddef>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <map>
#include <tuple>
#include <vector>

#include "mvdgw/tensor.hpp"

namespace mvdgw {

/// Symmetric, zero-diagonal, non-negative n x n matrix of pairwise distances.
class DistanceMatrix {
public:
    explicit DistanceMatrix(Matrix entries);

    std::size_t size() const noexcept { return entries_.rows(); }
    double operator()(std::size_t i, std::size_t k) const { return entries_(i, k); }
    const Matrix& entries() const noexcept { return entries_; }

    /// Relabels points: entry(i, k) of the result is entry(perm[i], perm[k]).
    DistanceMatrix permuted(const std::vector<std::size_t>& perm) const;

private:
    Matrix entries_;
};

/// Antisymmetric n x n array of displacement vectors, entry(i, k) = x_k - x_i.
class IntraVectorMatrix {
public:
    IntraVectorMatrix(std::size_t n, std::vector<Vec3> entries);

    std::size_t size() const noexcept { return n_; }
    const Vec3& operator()(std::size_t i, std::size_t k) const { return entries_[i * n_ + k]; }

    IntraVectorMatrix negated() const;

private:
    std::size_t n_;
    std::vector<Vec3> entries_;
};

DistanceMatrix intra_distance_matrix(const GridCoordinates& grid);
IntraVectorMatrix intra_vector_matrix(const GridCoordinates& grid);

/// Norm below which a displacement counts as "no direction".
inline constexpr double kDegenerateNorm = 1e-12;

/// (1 - cos(u, v)) / 2, in [0, 1]. Two degenerate vectors give 0, exactly one
/// degenerate vector gives 0.5.
double cosine_loss(const Vec3& u, const Vec3& v);

/// (u - v)^2 / 2.
double squared_loss(double u, double v);

enum class LossKind { SquaredL2, ScaledCosine };

/// Unit-normalised displacement components of an IntraVectorMatrix, split per
/// axis, plus the indicator of degenerate entries. This is the factorisation
/// the DGW cost contraction consumes.
struct DirectionField {
    std::size_t n = 0;
    std::array<Matrix, 3> unit;  // unit[axis](i, k), zero where degenerate
    Matrix degenerate;           // 1 where |V_ik| < kDegenerateNorm, else 0

    explicit DirectionField(const IntraVectorMatrix& vectors);
};

/// Transport plan between a source and a target marginal.
class CouplingMatrix {
public:
    CouplingMatrix(Matrix plan, ProbabilityVector source, ProbabilityVector target);

    /// Independence coupling p p^T.
    static CouplingMatrix independent(const ProbabilityVector& source,
                                      const ProbabilityVector& target);

    const Matrix& plan() const noexcept { return plan_; }
    const ProbabilityVector& source() const noexcept { return source_; }
    const ProbabilityVector& target() const noexcept { return target_; }

    /// max(|T 1 - p|_inf, |T^T 1 - q|_inf)
    double marginal_residual() const;

private:
    Matrix plan_;
    ProbabilityVector source_;
    ProbabilityVector target_;
};

/// Partial contraction C_ij = sum_kl L(D_ik, Db_jl) T_kl for the squared loss,
/// via the factorisation L(a, b) = a^2/2 + b^2/2 - ab.
/// Costs O(n m (n + m)).
Matrix gw_cost_matrix(const DistanceMatrix& source, const DistanceMatrix& target,
                      const Matrix& plan);

/// Partial contraction for the scaled cosine loss. Uses
///   L(u, v) = 1/2 - 1/2 <u_hat, v_hat> - 1/2 [u deg][v deg]
/// with u_hat = 0 for degenerate vectors, which reproduces cosine_loss exactly.
Matrix dgw_cost_matrix(const DirectionField& source, const DirectionField& target,
                       const Matrix& plan);

/// sum_ij C_ij T_ij, i.e. E(T) when C is the contraction at T.
double transport_objective(const Matrix& cost, const Matrix& plan);

/// E(T) = -sum T log T with 0 log 0 = 0.
double entropy(const Matrix& plan);
inline double entropy(const CouplingMatrix& coupling) { return entropy(coupling.plan()); }

enum class LogDomain { Auto, On, Off };

struct SolverConfig {
    double epsilon = 0.05;
    double sinkhorn_tol = 1e-9;
    int sinkhorn_max_iters = 1000;
    double outer_tol = 1e-7;
    int outer_max_iters = 50;
    LogDomain log_domain = LogDomain::Auto;

    /// Log-domain iterations are used when forced on, or in Auto mode when
    /// epsilon < 0.01.
    bool use_log_domain() const noexcept {
        return log_domain == LogDomain::On || (log_domain == LogDomain::Auto && epsilon < 0.01);
    }

    /// Throws ValidationError when a field is out of range.
    void validate() const;
};

struct SinkhornResult {
    CouplingMatrix coupling;
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
    std::vector<double> residual_history;  // L1 marginal violation after each iteration
    std::vector<double> target_potential;  // dual potential g, reusable as a warm start
};

/// Entropic optimal transport: argmin <C, T> - eps H(T) over couplings of
/// (source, target). Returns T = diag(u) exp(-C/eps) diag(v). Iterations stop
/// once the L1 marginal violation drops below sinkhorn_tol; `residual` reports
/// the L-inf marginal residual of the returned plan. `warm_start` optionally
/// seeds the target potential from a previous solve on the same marginals.
SinkhornResult sinkhorn(const Matrix& cost, const ProbabilityVector& source,
                        const ProbabilityVector& target, const SolverConfig& config,
                        std::span<const double> warm_start = {});

struct DiscrepancyResult {
    double value = 0.0;              // E(T) at the returned coupling
    double regularized_value = 0.0;  // E(T) - eps H(T)
    CouplingMatrix coupling;
    int outer_iterations = 0;
    bool converged = false;
};

DiscrepancyResult solve_gw(const DistanceMatrix& source, const DistanceMatrix& target,
                           const ProbabilityVector& p, const ProbabilityVector& q,
                           const SolverConfig& config);

DiscrepancyResult solve_dgw(const IntraVectorMatrix& source, const IntraVectorMatrix& target,
                            const ProbabilityVector& p, const ProbabilityVector& q,
                            const SolverConfig& config);

/// Same as solve_dgw but with the direction factorisation already built.
DiscrepancyResult solve_dgw(const DirectionField& source, const DirectionField& target,
                            const ProbabilityVector& p, const ProbabilityVector& q,
                            const SolverConfig& config);

/// Thread-safe cache of per-grid structures keyed by (extents, scales).
class GeometryCache {
public:
    std::shared_ptr<const DirectionField> directions(GridExtents grid, AxisScales scales);
    std::shared_ptr<const DistanceMatrix> distances(GridExtents grid, AxisScales scales);

    std::size_t size() const;
    void clear();

    static GeometryCache& global();

private:
    using Key = std::tuple<std::size_t, std::size_t, std::size_t, double, double, double>;
    static Key key_of(GridExtents grid, AxisScales scales);

    mutable std::shared_mutex mutex_;
    std::map<Key, std::shared_ptr<const DirectionField>> directions_;
    std::map<Key, std::shared_ptr<const DistanceMatrix>> distances_;
};

/// DGW discrepancy between two attention volumes (grids may differ).
DiscrepancyResult dgw_consistency(const AttentionVolume& a, const AttentionVolume& b,
                                  const SolverConfig& config, AxisScales scales = {});

/// GW discrepancy between two attention volumes using Euclidean intra-distances.
DiscrepancyResult gw_consistency(const AttentionVolume& a, const AttentionVolume& b,
                                 const SolverConfig& config, AxisScales scales = {});

double dgw_consistency_loss(const AttentionVolume& a, const AttentionVolume& b,
                            const SolverConfig& config, AxisScales scales = {});

}  // namespace mvdgw
