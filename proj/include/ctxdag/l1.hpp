#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ctxdag/graph.hpp"

namespace ctxdag {

// lambda is the averaged l1 budget used in training; kappa is the
// soft-threshold derived at train time and replayed at inference.
struct SparsityBudget {
    double lambda = std::numeric_limits<double>::infinity();
    double kappa = -1.0;  // < 0 means unset

    bool has_kappa() const { return kappa >= 0.0; }
};

enum class ProjectionMode { train, inference };

inline double soft_threshold(double w, double kappa) {
    const double m = std::abs(w) - kappa;
    return m > 0.0 ? (w < 0.0 ? -m : m) : 0.0;
}

// Sorted-threshold computation: kappa such that soft-thresholding the batch
// lands exactly on the averaged l1 ball of radius lambda. Returns 0 when the
// batch is already inside the ball.
inline double compute_kappa(const AdjacencyBatch& batch, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("compute_kappa: lambda must be >= 0");
    const double n = static_cast<double>(batch.size());
    std::vector<double> u;
    for (const auto& w : batch) {
        u.reserve(u.size() + static_cast<std::size_t>(w.size()));
        for (Eigen::Index idx = 0; idx < w.size(); ++idx) {
            const double a = std::abs(w(idx));
            if (a > 0.0) u.push_back(a);
        }
    }
    long double total = 0.0L;
    for (double a : u) total += a;
    if (std::isinf(lambda) || static_cast<double>(total) <= n * lambda) return 0.0;
    if (lambda == 0.0) return u.empty() ? 0.0 : *std::max_element(u.begin(), u.end());

    std::sort(u.begin(), u.end(), std::greater<double>());
    long double prefix = 0.0L;
    const long double budget = static_cast<long double>(n) * lambda;
    std::size_t k_max = 0;
    long double kappa = 0.0L;
    for (std::size_t k = 1; k <= u.size(); ++k) {
        prefix += u[k - 1];
        const long double candidate = (prefix - budget) / static_cast<long double>(k);
        if (u[k - 1] > static_cast<double>(candidate)) {
            k_max = k;
            kappa = candidate;
        }
    }
    if (k_max == 0) throw std::logic_error("compute_kappa: empty active prefix");
    return std::max(0.0, static_cast<double>(kappa));
}

// Exact Euclidean projection onto the averaged l1 ball (train mode), or a
// replay of a stored threshold (inference mode).
inline std::pair<AdjacencyBatch, double> project_l1(const AdjacencyBatch& batch,
                                                    const SparsityBudget& budget,
                                                    ProjectionMode mode) {
    double kappa = 0.0;
    if (mode == ProjectionMode::train) {
        kappa = compute_kappa(batch, budget.lambda);
    } else {
        if (!budget.has_kappa())
            throw std::invalid_argument("project_l1: inference mode requires a stored kappa");
        kappa = budget.kappa;
    }
    AdjacencyBatch out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out[i] = batch[i].unaryExpr([kappa](double w) { return soft_threshold(w, kappa); });
    }
    return {std::move(out), kappa};
}

inline double mean_l1_norm(const AdjacencyBatch& batch) {
    long double total = 0.0L;
    for (const auto& w : batch) total += w.cwiseAbs().sum();
    return batch.empty() ? 0.0 : static_cast<double>(total / batch.size());
}

}  // namespace ctxdag
