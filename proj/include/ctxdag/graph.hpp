#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ctxdag {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// One weighted adjacency matrix per observation; all items share p.
using AdjacencyBatch = std::vector<Matrix>;

// Support of a weighted adjacency matrix: ordered pairs (j,k), no self-loops.
struct BinaryGraph {
    int p = 0;
    std::vector<std::pair<int, int>> edges;
};

inline Matrix zeroed_diagonal(Matrix w) {
    w.diagonal().setZero();
    return w;
}

inline BinaryGraph support(const Matrix& w, double tol = 0.0) {
    BinaryGraph g;
    g.p = static_cast<int>(w.rows());
    for (int j = 0; j < g.p; ++j)
        for (int k = 0; k < g.p; ++k)
            if (j != k && std::abs(w(j, k)) > tol) g.edges.emplace_back(j, k);
    return g;
}

// Kahn elimination: true iff a topological ordering exists.
inline bool is_acyclic(const BinaryGraph& g) {
    std::vector<int> indegree(g.p, 0);
    std::vector<std::vector<int>> out(g.p);
    for (const auto& [j, k] : g.edges) {
        ++indegree[k];
        out[j].push_back(k);
    }
    std::vector<int> stack;
    for (int j = 0; j < g.p; ++j)
        if (indegree[j] == 0) stack.push_back(j);
    int removed = 0;
    while (!stack.empty()) {
        const int j = stack.back();
        stack.pop_back();
        ++removed;
        for (int k : out[j])
            if (--indegree[k] == 0) stack.push_back(k);
    }
    return removed == g.p;
}

// Spectral radius of W∘W by power iteration. W∘W is entrywise non-negative,
// so the iteration converges to the Perron root in the generic case.
inline double spectral_radius_squared(const Matrix& w) {
    if (!w.allFinite()) throw std::invalid_argument("spectral_radius_squared: non-finite input");
    const Eigen::Index p = w.rows();
    const Matrix a = w.cwiseProduct(w);
    if (a.isZero(0.0)) return 0.0;
    // Nilpotent A (acyclic support) has spectral radius exactly 0, and the
    // power iteration converges only sublinearly on its defective spectrum.
    if (is_acyclic(support(w))) return 0.0;

    // Iterate on A + I instead of A: the shift keeps the Perron root strictly
    // dominant in modulus, so the iteration cannot oscillate on periodic
    // supports (e.g. pure cycles, where A itself has eigenvalues ±ρ).
    Vector v = Vector::Ones(p) / std::sqrt(static_cast<double>(p));
    double rho = 0.0;
    constexpr int max_iters = 10000;
    constexpr double tol = 1e-8;
    for (int it = 0; it < max_iters; ++it) {
        const Vector av = a * v;
        const double rho_next = v.dot(av);
        Vector next = av + v;
        const double norm = next.norm();
        if (norm <= 1e-300) return 0.0;
        next /= norm;
        if (it > 0 && std::abs(rho_next - rho) <= tol * std::max(1.0, std::abs(rho_next))) {
            return std::max(rho_next, 0.0);
        }
        rho = rho_next;
        v = std::move(next);
    }
    throw std::runtime_error("spectral_radius_squared: power iteration did not converge");
}

namespace detail {

inline bool support_above_is_acyclic(const Matrix& w, double t) {
    return is_acyclic(support(w, t));
}

}  // namespace detail

// Zeroes all entries with magnitude <= t, for the smallest candidate t that
// makes the support acyclic. Acyclicity is monotone in t, so a binary search
// over the sorted entry magnitudes suffices. t = max|w| always succeeds.
inline std::pair<Matrix, double> threshold_to_dag(const Matrix& w) {
    if (!w.allFinite()) throw std::invalid_argument("threshold_to_dag: non-finite input");
    if (detail::support_above_is_acyclic(w, 0.0)) return {zeroed_diagonal(w), 0.0};

    std::vector<double> mags;
    const Eigen::Index p = w.rows();
    mags.reserve(static_cast<std::size_t>(p * p));
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index k = 0; k < p; ++k)
            if (j != k && w(j, k) != 0.0) mags.push_back(std::abs(w(j, k)));
    std::sort(mags.begin(), mags.end());
    mags.erase(std::unique(mags.begin(), mags.end()), mags.end());

    // Find the smallest magnitude whose removal (with everything below it)
    // yields an acyclic support.
    std::size_t lo = 0, hi = mags.size() - 1;
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (detail::support_above_is_acyclic(w, mags[mid]))
            hi = mid;
        else
            lo = mid + 1;
    }
    const double t = mags[lo];
    Matrix out = w;
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index k = 0; k < p; ++k)
            if (j == k || std::abs(out(j, k)) <= t) out(j, k) = 0.0;
    return {out, t};
}

}  // namespace ctxdag
