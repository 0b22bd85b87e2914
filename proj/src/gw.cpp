#include "mvdgw/gw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mvdgw/errors.hpp"

namespace mvdgw {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) {
        throw ValidationError(std::string(what) + " must be square");
    }
}

void require_plan_shape(const Matrix& plan, std::size_t n, std::size_t m) {
    if (plan.rows() != n || plan.cols() != m) {
        throw ValidationError("coupling is " + std::to_string(plan.rows()) + "x" +
                              std::to_string(plan.cols()) + ", expected " + std::to_string(n) +
                              "x" + std::to_string(m));
    }
}

double total_mass(const Matrix& plan) {
    double s = 0.0;
    for (double v : plan.values()) s += v;
    return s;
}

// Couples the i-th unit of source mass with the i-th unit of target mass in
// index order. Exact marginals, deterministic.
Matrix north_west_corner(const ProbabilityVector& p, const ProbabilityVector& q) {
    Matrix plan(p.size(), q.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double row_left = p[0];
    double col_left = q[0];
    while (i < p.size() && j < q.size()) {
        const double moved = std::min(row_left, col_left);
        plan(i, j) += moved;
        row_left -= moved;
        col_left -= moved;
        if (row_left <= col_left) {
            if (++i < p.size()) row_left = p[i];
        } else {
            if (++j < q.size()) col_left = q[j];
        }
    }
    return plan;
}

double log_sum_exp(std::span<const double> xs) {
    double hi = kNegInf;
    for (double x : xs) hi = std::max(hi, x);
    if (hi == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - hi);
    return hi + std::log(s);
}

double marginal_residual_of(const Matrix& plan, std::span<const double> p,
                            std::span<const double> q) {
    double r = 0.0;
    const auto rows = plan.row_sums();
    const auto cols = plan.col_sums();
    for (std::size_t i = 0; i < p.size(); ++i) r = std::max(r, std::abs(rows[i] - p[i]));
    for (std::size_t j = 0; j < q.size(); ++j) r = std::max(r, std::abs(cols[j] - q[j]));
    return r;
}

void require_finite_plan(const Matrix& plan, double epsilon) {
    for (double v : plan.values()) {
        if (!std::isfinite(v)) {
            throw NumericalError("sinkhorn: non-finite transport plan at epsilon=" +
                                 std::to_string(epsilon) +
                                 "; use a larger epsilon or log-domain iterations");
        }
    }
}

// Both iterations stop on the L1 violation of the row marginal (the column
// marginal is exact after each v/g update). The L1 violation is
// non-increasing across Sinkhorn iterations and bounds the L-inf residual.

SinkhornResult sinkhorn_scaling(const Matrix& cost, const ProbabilityVector& p,
                                const ProbabilityVector& q, const SolverConfig& cfg,
                                std::span<const double> warm_start) {
    const std::size_t n = p.size();
    const std::size_t m = q.size();
    // Shifting C by its minimum leaves the optimal plan unchanged and keeps
    // the largest kernel entry at exactly 1.
    const double shift = *std::min_element(cost.values().begin(), cost.values().end());
    Matrix kernel(n, m);
    for (std::size_t k = 0; k < kernel.values().size(); ++k) {
        kernel.values()[k] = std::exp(-(cost.values()[k] - shift) / cfg.epsilon);
    }

    std::vector<double> u(n, 1.0);
    std::vector<double> v(m, 1.0);
    if (!warm_start.empty()) {
        double hi = kNegInf;
        for (double g : warm_start) hi = std::max(hi, g);
        for (std::size_t j = 0; j < m; ++j) {
            v[j] = hi == kNegInf ? 1.0 : std::exp((warm_start[j] - hi) / cfg.epsilon);
        }
    }
    std::vector<double> history;
    int it = 0;
    const auto fail = [&] {
        throw NumericalError("sinkhorn: kernel exp(-C/eps) underflowed at epsilon=" +
                             std::to_string(cfg.epsilon) +
                             "; use a larger epsilon or log-domain iterations");
    };
    while (it < cfg.sinkhorn_max_iters) {
        ++it;
        const auto kv = matvec(kernel, v);
        for (std::size_t i = 0; i < n; ++i) {
            if (p[i] == 0.0) {
                u[i] = 0.0;
            } else {
                u[i] = p[i] / kv[i];
                if (!std::isfinite(u[i])) fail();
            }
        }
        std::vector<double> ktu(m, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (u[i] == 0.0) continue;
            auto ki = kernel.row(i);
            for (std::size_t j = 0; j < m; ++j) ktu[j] += ki[j] * u[i];
        }
        for (std::size_t j = 0; j < m; ++j) {
            if (q[j] == 0.0) {
                v[j] = 0.0;
            } else {
                v[j] = q[j] / ktu[j];
                if (!std::isfinite(v[j])) fail();
            }
        }
        const auto kv2 = matvec(kernel, v);
        double violation = 0.0;
        for (std::size_t i = 0; i < n; ++i) violation += std::abs(u[i] * kv2[i] - p[i]);
        history.push_back(violation);
        if (violation < cfg.sinkhorn_tol) break;
    }

    Matrix plan(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) plan(i, j) = u[i] * kernel(i, j) * v[j];
    }
    require_finite_plan(plan, cfg.epsilon);
    std::vector<double> potential(m);
    for (std::size_t j = 0; j < m; ++j) {
        potential[j] = v[j] > 0.0 ? cfg.epsilon * std::log(v[j]) : kNegInf;
    }
    const double residual = marginal_residual_of(plan, p.values(), q.values());
    const bool converged = !history.empty() && history.back() < cfg.sinkhorn_tol;
    return {CouplingMatrix(std::move(plan), p, q), it, residual, converged, std::move(history),
            std::move(potential)};
}

SinkhornResult sinkhorn_log(const Matrix& cost, const ProbabilityVector& p,
                            const ProbabilityVector& q, const SolverConfig& cfg,
                            std::span<const double> warm_start) {
    const std::size_t n = p.size();
    const std::size_t m = q.size();
    const double eps = cfg.epsilon;
    std::vector<double> log_p(n);
    std::vector<double> log_q(m);
    for (std::size_t i = 0; i < n; ++i) log_p[i] = p[i] > 0.0 ? std::log(p[i]) : kNegInf;
    for (std::size_t j = 0; j < m; ++j) log_q[j] = q[j] > 0.0 ? std::log(q[j]) : kNegInf;

    std::vector<double> f(n, 0.0);
    std::vector<double> g(m, 0.0);
    if (!warm_start.empty()) {
        for (std::size_t j = 0; j < m; ++j) g[j] = log_q[j] == kNegInf ? kNegInf : warm_start[j];
        if (std::all_of(g.begin(), g.end(), [](double x) { return x == kNegInf; })) {
            std::fill(g.begin(), g.end(), 0.0);
        }
    }
    std::vector<double> scratch(std::max(n, m));
    std::vector<double> history;
    int it = 0;

    const auto update_f = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            if (log_p[i] == kNegInf) {
                f[i] = kNegInf;
                continue;
            }
            for (std::size_t j = 0; j < m; ++j) scratch[j] = (g[j] - cost(i, j)) / eps;
            f[i] = eps * (log_p[i] - log_sum_exp({scratch.data(), m}));
        }
    };
    const auto update_g = [&] {
        for (std::size_t j = 0; j < m; ++j) {
            if (log_q[j] == kNegInf) {
                g[j] = kNegInf;
                continue;
            }
            for (std::size_t i = 0; i < n; ++i) scratch[i] = (f[i] - cost(i, j)) / eps;
            g[j] = eps * (log_q[j] - log_sum_exp({scratch.data(), n}));
        }
    };
    const auto row_violation = [&] {
        double r = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            if (f[i] != kNegInf) {
                for (std::size_t j = 0; j < m; ++j) {
                    if (g[j] != kNegInf) s += std::exp((f[i] + g[j] - cost(i, j)) / eps);
                }
            }
            r += std::abs(s - p[i]);
        }
        return r;
    };

    while (it < cfg.sinkhorn_max_iters) {
        ++it;
        update_f();
        update_g();
        const double violation = row_violation();
        history.push_back(violation);
        if (!std::isfinite(violation) || violation < cfg.sinkhorn_tol) break;
    }

    Matrix plan(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            plan(i, j) = (f[i] == kNegInf || g[j] == kNegInf)
                             ? 0.0
                             : std::exp((f[i] + g[j] - cost(i, j)) / eps);
        }
    }
    require_finite_plan(plan, eps);
    const double residual = marginal_residual_of(plan, p.values(), q.values());
    const bool converged = !history.empty() && history.back() < cfg.sinkhorn_tol;
    return {CouplingMatrix(std::move(plan), p, q), it, residual, converged, std::move(history),
            std::move(g)};
}

template <typename CostFn>
DiscrepancyResult mirror_descent(CostFn&& contraction, const ProbabilityVector& p,
                                 const ProbabilityVector& q, const SolverConfig& cfg) {
    cfg.validate();
    Matrix plan = CouplingMatrix::independent(p, q).plan();
    bool converged = false;
    int outer = 0;
    bool tie_broken = false;
    std::vector<double> potential;
    while (outer < cfg.outer_max_iters) {
        ++outer;
        Matrix cost = contraction(plan);
        // The gradient of the quadratic objective is C + C' where C' is the
        // contraction over transposed index pairs. Both losses are invariant
        // under (u, v) -> (-u, -v) and distances are symmetric, so C' = C and
        // the linearised cost is 2C.
        for (double& c : cost.values()) c *= 2.0;
        SinkhornResult step = sinkhorn(cost, p, q, cfg, potential);
        potential = std::move(step.target_potential);
        const double delta = frobenius_distance(step.coupling.plan(), plan);
        plan = step.coupling.plan();
        if (delta < cfg.outer_tol) {
            if (outer == 1 && !tie_broken) {
                // The independence coupling is a critical point when every
                // point of a space looks alike (e.g. two-point spaces). Any
                // relabeling-equivariant update stays there, so nudge towards
                // the index-ordered coupling and keep descending.
                tie_broken = true;
                Matrix nudge = north_west_corner(p, q);
                for (std::size_t k = 0; k < plan.values().size(); ++k) {
                    plan.values()[k] = 0.9 * plan.values()[k] + 0.1 * nudge.values()[k];
                }
                outer = 0;
                continue;
            }
            converged = step.converged;
            break;
        }
    }
    const double value = transport_objective(contraction(plan), plan);
    const double regularized = value - cfg.epsilon * entropy(plan);
    return {.value = value,
            .regularized_value = regularized,
            .coupling = CouplingMatrix(std::move(plan), p, q),
            .outer_iterations = outer,
            .converged = converged};
}

}  // namespace

DistanceMatrix::DistanceMatrix(Matrix entries) : entries_(std::move(entries)) {
    require_square(entries_, "distance matrix");
    const std::size_t n = entries_.rows();
    for (std::size_t i = 0; i < n; ++i) {
        if (entries_(i, i) != 0.0) throw ValidationError("distance matrix diagonal must be zero");
        for (std::size_t k = 0; k < n; ++k) {
            const double d = entries_(i, k);
            if (!std::isfinite(d) || d < 0.0) {
                throw ValidationError("distance matrix entries must be finite and >= 0");
            }
            if (d != entries_(k, i)) throw ValidationError("distance matrix must be symmetric");
        }
    }
}

DistanceMatrix DistanceMatrix::permuted(const std::vector<std::size_t>& perm) const {
    const std::size_t n = size();
    if (perm.size() != n) throw ValidationError("permutation length mismatch");
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) out(i, k) = entries_(perm[i], perm[k]);
    }
    return DistanceMatrix(std::move(out));
}

IntraVectorMatrix::IntraVectorMatrix(std::size_t n, std::vector<Vec3> entries)
    : n_(n), entries_(std::move(entries)) {
    if (entries_.size() != n * n) throw ValidationError("intra-vector matrix must be n x n");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const Vec3& a = entries_[i * n + k];
            const Vec3& b = entries_[k * n + i];
            for (int axis = 0; axis < 3; ++axis) {
                if (!std::isfinite(a[axis]) || a[axis] != -b[axis]) {
                    throw ValidationError("intra-vector matrix must be finite and antisymmetric");
                }
            }
        }
    }
}

IntraVectorMatrix IntraVectorMatrix::negated() const {
    std::vector<Vec3> out(entries_.size());
    for (std::size_t k = 0; k < entries_.size(); ++k) {
        out[k] = {-entries_[k][0], -entries_[k][1], -entries_[k][2]};
    }
    return IntraVectorMatrix(n_, std::move(out));
}

DistanceMatrix intra_distance_matrix(const GridCoordinates& grid) {
    const std::size_t n = grid.size();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            const Vec3& a = grid[i];
            const Vec3& b = grid[k];
            const double dist = norm3({b[0] - a[0], b[1] - a[1], b[2] - a[2]});
            d(i, k) = dist;
            d(k, i) = dist;
        }
    }
    return DistanceMatrix(std::move(d));
}

IntraVectorMatrix intra_vector_matrix(const GridCoordinates& grid) {
    const std::size_t n = grid.size();
    std::vector<Vec3> v(n * n, Vec3{0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            const Vec3& a = grid[i];
            const Vec3& b = grid[k];
            const Vec3 d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
            v[i * n + k] = d;
            v[k * n + i] = {-d[0], -d[1], -d[2]};
        }
    }
    return IntraVectorMatrix(n, std::move(v));
}

double cosine_loss(const Vec3& u, const Vec3& v) {
    const double nu = norm3(u);
    const double nv = norm3(v);
    const bool du = nu < kDegenerateNorm;
    const bool dv = nv < kDegenerateNorm;
    if (du && dv) return 0.0;
    if (du || dv) return 0.5;
    const double cosine = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv);
    return std::clamp(0.5 * (1.0 - cosine), 0.0, 1.0);
}

double squared_loss(double u, double v) {
    const double d = u - v;
    return 0.5 * d * d;
}

DirectionField::DirectionField(const IntraVectorMatrix& vectors)
    : n(vectors.size()),
      unit{Matrix(n, n), Matrix(n, n), Matrix(n, n)},
      degenerate(n, n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const Vec3& d = vectors(i, k);
            const double len = norm3(d);
            if (len < kDegenerateNorm) {
                degenerate(i, k) = 1.0;
                continue;
            }
            for (int axis = 0; axis < 3; ++axis) unit[axis](i, k) = d[axis] / len;
        }
    }
}

CouplingMatrix::CouplingMatrix(Matrix plan, ProbabilityVector source, ProbabilityVector target)
    : plan_(std::move(plan)), source_(std::move(source)), target_(std::move(target)) {
    require_plan_shape(plan_, source_.size(), target_.size());
    for (double v : plan_.values()) {
        if (!std::isfinite(v) || v < 0.0) {
            throw ValidationError("coupling entries must be finite and >= 0");
        }
    }
}

CouplingMatrix CouplingMatrix::independent(const ProbabilityVector& source,
                                           const ProbabilityVector& target) {
    Matrix plan(source.size(), target.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
        for (std::size_t j = 0; j < target.size(); ++j) plan(i, j) = source[i] * target[j];
    }
    return CouplingMatrix(std::move(plan), source, target);
}

double CouplingMatrix::marginal_residual() const {
    return marginal_residual_of(plan_, source_.values(), target_.values());
}

Matrix gw_cost_matrix(const DistanceMatrix& source, const DistanceMatrix& target,
                      const Matrix& plan) {
    const std::size_t n = source.size();
    const std::size_t m = target.size();
    require_plan_shape(plan, n, m);
    const auto rows = plan.row_sums();
    const auto cols = plan.col_sums();

    std::vector<double> a_term(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += source(i, k) * source(i, k) * rows[k];
        a_term[i] = 0.5 * s;
    }
    std::vector<double> b_term(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < m; ++l) s += target(j, l) * target(j, l) * cols[l];
        b_term[j] = 0.5 * s;
    }
    // Cross term D T Db^T.
    Matrix cost = matmul_transposed(matmul(source.entries(), plan), target.entries());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) cost(i, j) = a_term[i] + b_term[j] - cost(i, j);
    }
    return cost;
}

Matrix dgw_cost_matrix(const DirectionField& source, const DirectionField& target,
                       const Matrix& plan) {
    const std::size_t n = source.n;
    const std::size_t m = target.n;
    require_plan_shape(plan, n, m);
    Matrix cross(n, m);
    const auto accumulate = [&](const Matrix& a, const Matrix& b) {
        const Matrix term = matmul_transposed(matmul(a, plan), b);
        for (std::size_t k = 0; k < cross.values().size(); ++k) {
            cross.values()[k] += term.values()[k];
        }
    };
    for (int axis = 0; axis < 3; ++axis) accumulate(source.unit[axis], target.unit[axis]);
    accumulate(source.degenerate, target.degenerate);

    const double half_mass = 0.5 * total_mass(plan);
    Matrix cost(n, m);
    for (std::size_t k = 0; k < cost.values().size(); ++k) {
        cost.values()[k] = half_mass - 0.5 * cross.values()[k];
    }
    return cost;
}

double transport_objective(const Matrix& cost, const Matrix& plan) {
    return frobenius_inner(cost, plan);
}

double entropy(const Matrix& plan) {
    double h = 0.0;
    for (double v : plan.values()) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

void SolverConfig::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw ValidationError("solver epsilon must be > 0");
    }
    if (!(sinkhorn_tol > 0.0) || !(outer_tol > 0.0)) {
        throw ValidationError("solver tolerances must be > 0");
    }
    if (sinkhorn_max_iters < 1 || outer_max_iters < 1) {
        throw ValidationError("solver iteration caps must be >= 1");
    }
}

SinkhornResult sinkhorn(const Matrix& cost, const ProbabilityVector& source,
                        const ProbabilityVector& target, const SolverConfig& config,
                        std::span<const double> warm_start) {
    config.validate();
    require_plan_shape(cost, source.size(), target.size());
    for (double c : cost.values()) {
        if (!std::isfinite(c)) throw ValidationError("sinkhorn: cost matrix must be finite");
    }
    if (!warm_start.empty() && warm_start.size() != target.size()) {
        throw ValidationError("sinkhorn: warm-start potential has the wrong length");
    }
    return config.use_log_domain() ? sinkhorn_log(cost, source, target, config, warm_start)
                                   : sinkhorn_scaling(cost, source, target, config, warm_start);
}

DiscrepancyResult solve_gw(const DistanceMatrix& source, const DistanceMatrix& target,
                           const ProbabilityVector& p, const ProbabilityVector& q,
                           const SolverConfig& config) {
    if (source.size() != p.size() || target.size() != q.size()) {
        throw ValidationError("solve_gw: marginal sizes do not match distance matrices");
    }
    return mirror_descent(
        [&](const Matrix& plan) { return gw_cost_matrix(source, target, plan); }, p, q, config);
}

DiscrepancyResult solve_dgw(const DirectionField& source, const DirectionField& target,
                            const ProbabilityVector& p, const ProbabilityVector& q,
                            const SolverConfig& config) {
    if (source.n != p.size() || target.n != q.size()) {
        throw ValidationError("solve_dgw: marginal sizes do not match intra-vector matrices");
    }
    return mirror_descent(
        [&](const Matrix& plan) { return dgw_cost_matrix(source, target, plan); }, p, q, config);
}

DiscrepancyResult solve_dgw(const IntraVectorMatrix& source, const IntraVectorMatrix& target,
                            const ProbabilityVector& p, const ProbabilityVector& q,
                            const SolverConfig& config) {
    return solve_dgw(DirectionField(source), DirectionField(target), p, q, config);
}

GeometryCache::Key GeometryCache::key_of(GridExtents grid, AxisScales scales) {
    return {grid.t, grid.h, grid.w, scales.t, scales.h, scales.w};
}

std::shared_ptr<const DirectionField> GeometryCache::directions(GridExtents grid,
                                                                AxisScales scales) {
    const Key key = key_of(grid, scales);
    {
        std::shared_lock lock(mutex_);
        if (auto it = directions_.find(key); it != directions_.end()) return it->second;
    }
    auto built = std::make_shared<const DirectionField>(
        intra_vector_matrix(GridCoordinates(grid, scales)));
    std::unique_lock lock(mutex_);
    return directions_.try_emplace(key, std::move(built)).first->second;
}

std::shared_ptr<const DistanceMatrix> GeometryCache::distances(GridExtents grid,
                                                               AxisScales scales) {
    const Key key = key_of(grid, scales);
    {
        std::shared_lock lock(mutex_);
        if (auto it = distances_.find(key); it != distances_.end()) return it->second;
    }
    auto built = std::make_shared<const DistanceMatrix>(
        intra_distance_matrix(GridCoordinates(grid, scales)));
    std::unique_lock lock(mutex_);
    return distances_.try_emplace(key, std::move(built)).first->second;
}

std::size_t GeometryCache::size() const {
    std::shared_lock lock(mutex_);
    return directions_.size() + distances_.size();
}

void GeometryCache::clear() {
    std::unique_lock lock(mutex_);
    directions_.clear();
    distances_.clear();
}

GeometryCache& GeometryCache::global() {
    static GeometryCache cache;
    return cache;
}

DiscrepancyResult dgw_consistency(const AttentionVolume& a, const AttentionVolume& b,
                                  const SolverConfig& config, AxisScales scales) {
    auto& cache = GeometryCache::global();
    const auto va = cache.directions(a.grid(), scales);
    const auto vb = cache.directions(b.grid(), scales);
    return solve_dgw(*va, *vb, normalize_attention(a), normalize_attention(b), config);
}

DiscrepancyResult gw_consistency(const AttentionVolume& a, const AttentionVolume& b,
                                 const SolverConfig& config, AxisScales scales) {
    auto& cache = GeometryCache::global();
    const auto da = cache.distances(a.grid(), scales);
    const auto db = cache.distances(b.grid(), scales);
    return solve_gw(*da, *db, normalize_attention(a), normalize_attention(b), config);
}

double dgw_consistency_loss(const AttentionVolume& a, const AttentionVolume& b,
                            const SolverConfig& config, AxisScales scales) {
    return dgw_consistency(a, b, config, scales).value;
}

}  // namespace mvdgw
