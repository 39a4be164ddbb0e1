#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ctxdag/graph.hpp"
#include "ctxdag/l1.hpp"
#include "ctxdag/logdet.hpp"

namespace ctxdag {

// Captured at the forward pass for the analytical backward pass: the active
// triples (i,j,k) with nonzero projected weight, their signs, and whether the
// averaged l1 budget is binding.
struct GradientContext {
    struct ActiveTriple {
        std::int32_t item;
        std::int32_t row;
        std::int32_t col;
        double sign;
    };
    std::vector<ActiveTriple> active_set;
    bool binding = false;
    double kappa = 0.0;
    std::size_t n = 0;
    Eigen::Index p = 0;
};

// Entries straddling zero after the log-det step destabilize the active set;
// anything this small is treated as inactive.
inline constexpr double kActiveSetTol = 1e-12;

// Composed projection: log-det level set first, then the averaged l1 ball.
// The composition is feasible for both constraints (l1 shrinkage cannot
// create cycles or grow the spectral radius). An optional hat_cache carries
// the pre-l1 log-det outputs across repeated calls on slowly-moving inputs
// (successive training epochs): it warm-starts the solver when its size
// matches and is overwritten with the new outputs.
inline std::pair<AdjacencyBatch, GradientContext> projection_forward(
    const AdjacencyBatch& batch_tilde, const ProjectionConfig& cfg, const SparsityBudget& budget,
    ProjectionMode mode, AdjacencyBatch* hat_cache = nullptr) {
    AdjacencyBatch hat = project_logdet_batch(batch_tilde, cfg, hat_cache);
    if (hat_cache) *hat_cache = hat;
    auto [star, kappa] = project_l1(hat, budget, mode);

    GradientContext ctx;
    ctx.kappa = kappa;
    ctx.binding = kappa > kActiveSetTol;
    ctx.n = star.size();
    ctx.p = star.empty() ? 0 : star.front().rows();
    for (std::size_t i = 0; i < star.size(); ++i) {
        const Matrix& w = star[i];
        for (Eigen::Index j = 0; j < w.rows(); ++j) {
            for (Eigen::Index k = 0; k < w.cols(); ++k) {
                if (j == k) continue;
                const double v = w(j, k);
                if (v > kActiveSetTol || v < -kActiveSetTol) {
                    ctx.active_set.push_back({static_cast<std::int32_t>(i),
                                              static_cast<std::int32_t>(j),
                                              static_cast<std::int32_t>(k), v > 0.0 ? 1.0 : -1.0});
                }
            }
        }
    }
    return {std::move(star), std::move(ctx)};
}

// Analytical backward pass. With the budget binding, the Jacobian restricted
// to the active set is I - s s^T/|A| (s the active sign vector) and inactive
// triples get zero: they were thresholded away, so small input perturbations
// leave them at zero. With a non-binding budget the threshold is zero and the
// sparsity step is locally the identity on every entry, zeros included.
// O(n p^2) work, no factorizations.
inline AdjacencyBatch projection_backward(const AdjacencyBatch& upstream,
                                          const GradientContext& ctx) {
    if (upstream.size() != ctx.n)
        throw std::invalid_argument("projection_backward: batch size mismatch");
    for (const auto& u : upstream)
        if (u.rows() != ctx.p || u.cols() != ctx.p)
            throw std::invalid_argument("projection_backward: matrix shape mismatch");

    if (!ctx.binding) {
        AdjacencyBatch grad = upstream;
        for (auto& g : grad) g.diagonal().setZero();
        return grad;
    }

    AdjacencyBatch grad(ctx.n, Matrix::Zero(ctx.p, ctx.p));
    double coupling = 0.0;
    if (!ctx.active_set.empty()) {
        long double dot = 0.0L;
        for (const auto& t : ctx.active_set) dot += t.sign * upstream[t.item](t.row, t.col);
        coupling = static_cast<double>(dot / static_cast<long double>(ctx.active_set.size()));
    }
    for (const auto& t : ctx.active_set) {
        const double u = upstream[t.item](t.row, t.col);
        grad[t.item](t.row, t.col) = u - t.sign * coupling;
    }
    return grad;
}

}  // namespace ctxdag
