#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ctxdag/graph.hpp"
#include "ctxdag/network.hpp"

namespace ctxdag {

enum class SkeletonKind { erdos_renyi, scale_free };

// Skeleton type, node centers, and sparsity margin driving data generation.
// The centers are p points in [-1,1]^m; phi < 0 means not yet calibrated.
struct GeneratorSpec {
    int p = 0;
    int m = 0;
    SkeletonKind skeleton = SkeletonKind::erdos_renyi;
    int n_skeleton_edges = 10;
    Matrix centers;  // p x m
    double phi = -1.0;
    double target_active_edges = 5.0;
    std::uint64_t seed = 0;       // graph-level draws (centers, skeleton, calibration)
    std::uint64_t data_seed = 0;  // per-observation draws; differs across splits
};

// Undirected edges stored as pairs with j < k.
using UndirectedEdges = std::vector<std::pair<int, int>>;

struct GroundTruth {
    AdjacencyBatch w;                     // per-observation true graphs
    std::vector<Matrix> masks;            // full triangular mask under the true order
    std::vector<std::vector<int>> order;  // true topological order (farthest center first)
};

namespace detail {

// splitmix64: derive independent per-index streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

inline GeneratorSpec make_spec(int p, int m, SkeletonKind kind, int n_edges, double target,
                               std::uint64_t seed) {
    if (p < 2 || m < 1) throw std::invalid_argument("make_spec: need p >= 2 and m >= 1");
    GeneratorSpec spec;
    spec.p = p;
    spec.m = m;
    spec.skeleton = kind;
    spec.n_skeleton_edges = n_edges;
    spec.target_active_edges = target;
    spec.seed = seed;
    spec.data_seed = seed;
    std::mt19937_64 rng(detail::mix_seed(seed, 0xC0FFEE));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    spec.centers = Matrix(p, m);
    for (int j = 0; j < p; ++j)
        for (int c = 0; c < m; ++c) spec.centers(j, c) = unit(rng);
    return spec;
}

inline UndirectedEdges sample_skeleton(const GeneratorSpec& spec) {
    const int max_edges = spec.p * (spec.p - 1) / 2;
    if (spec.n_skeleton_edges < 0 || spec.n_skeleton_edges > max_edges)
        throw std::invalid_argument("sample_skeleton: edge count out of range");
    std::mt19937_64 rng(detail::mix_seed(spec.seed, 0x5CELL));
    UndirectedEdges all;
    all.reserve(max_edges);
    for (int j = 0; j < spec.p; ++j)
        for (int k = j + 1; k < spec.p; ++k) all.emplace_back(j, k);

    if (spec.skeleton == SkeletonKind::erdos_renyi) {
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(spec.n_skeleton_edges);
        std::sort(all.begin(), all.end());
        return all;
    }

    // Preferential attachment, then trim or top up to the exact edge budget.
    std::vector<int> degree(spec.p, 0);
    UndirectedEdges edges;
    auto has_edge = [&](int a, int b) {
        if (a > b) std::swap(a, b);
        return std::find(edges.begin(), edges.end(), std::make_pair(a, b)) != edges.end();
    };
    edges.emplace_back(0, 1);
    degree[0] = degree[1] = 1;
    for (int v = 2; v < spec.p; ++v) {
        // one attachment per new node, degree-proportional target
        std::vector<double> weights(v);
        for (int u = 0; u < v; ++u) weights[u] = degree[u] + 1e-9;
        std::discrete_distribution<int> pick(weights.begin(), weights.end());
        const int u = pick(rng);
        edges.emplace_back(std::min(u, v), std::max(u, v));
        ++degree[u];
        ++degree[v];
    }
    while (static_cast<int>(edges.size()) > spec.n_skeleton_edges) {
        std::uniform_int_distribution<std::size_t> pick(0, edges.size() - 1);
        edges.erase(edges.begin() + pick(rng));
    }
    while (static_cast<int>(edges.size()) < spec.n_skeleton_edges) {
        // attach preferentially between existing nodes
        std::vector<double> weights(spec.p);
        for (int u = 0; u < spec.p; ++u) weights[u] = degree[u] + 1e-9;
        std::discrete_distribution<int> pick(weights.begin(), weights.end());
        const int a = pick(rng);
        const int b = pick(rng);
        if (a == b || has_edge(a, b)) continue;
        edges.emplace_back(std::min(a, b), std::max(a, b));
        ++degree[a];
        ++degree[b];
    }
    std::sort(edges.begin(), edges.end());
    return edges;
}

// Orientation rule: edge {j,k} points from the node farther from z (in center
// distance) to the nearer one, with weight equal to the distance gap, and is
// dropped when the gap does not exceed phi. Distance ordering is a strict
// order for distinct distances, so the result is always acyclic.
inline Matrix orient_and_weight(const UndirectedEdges& skeleton, const GeneratorSpec& spec,
                                const Eigen::Ref<const Vector>& z) {
    Matrix w = Matrix::Zero(spec.p, spec.p);
    Vector dist(spec.p);
    for (int j = 0; j < spec.p; ++j)
        dist(j) = (z.transpose() - spec.centers.row(j)).norm();
    for (const auto& [j, k] : skeleton) {
        const double gap = dist(j) - dist(k);
        if (gap > spec.phi)
            w(j, k) = gap;
        else if (-gap > spec.phi)
            w(k, j) = -gap;
    }
    return w;
}

inline std::vector<int> distance_order(const GeneratorSpec& spec,
                                       const Eigen::Ref<const Vector>& z) {
    Vector dist(spec.p);
    for (int j = 0; j < spec.p; ++j)
        dist(j) = (z.transpose() - spec.centers.row(j)).norm();
    std::vector<int> order(spec.p);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dist(a) > dist(b); });
    return order;
}

// Bisection on phi against a Monte Carlo estimate of the mean active edge
// count (common random numbers keep the estimate monotone in phi).
inline double calibrate_phi(const GeneratorSpec& spec, const UndirectedEdges& skeleton,
                            int mc_samples = 10000) {
    std::mt19937_64 rng(detail::mix_seed(spec.seed, 0xCA11));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    // |d_j - d_k| per sample per edge
    std::vector<std::vector<double>> gaps(mc_samples);
    for (int i = 0; i < mc_samples; ++i) {
        Vector z(spec.m);
        for (int c = 0; c < spec.m; ++c) z(c) = unit(rng);
        Vector dist(spec.p);
        for (int j = 0; j < spec.p; ++j)
            dist(j) = (z.transpose() - spec.centers.row(j)).norm();
        gaps[i].reserve(skeleton.size());
        for (const auto& [j, k] : skeleton) gaps[i].push_back(std::abs(dist(j) - dist(k)));
    }
    auto mean_active = [&](double phi) {
        long long active = 0;
        for (const auto& g : gaps)
            for (double gap : g) active += gap > phi ? 1 : 0;
        return static_cast<double>(active) / mc_samples;
    };
    constexpr double tol = 0.05;
    double lo = 0.0, hi = 2.0 * std::sqrt(static_cast<double>(spec.m));
    if (mean_active(lo) <= spec.target_active_edges + tol) return lo;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double mean = mean_active(mid);
        if (std::abs(mean - spec.target_active_edges) <= tol) return mid;
        if (mean > spec.target_active_edges)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

namespace detail {

inline void sample_observation(const GeneratorSpec& spec, const UndirectedEdges& skeleton,
                               std::uint64_t obs_seed, bool fixed_graph, const Matrix& fixed_w,
                               const std::vector<int>& fixed_order, Eigen::RowVectorXd& z_row,
                               Eigen::RowVectorXd& x_row, Matrix& w_out,
                               std::vector<int>& order_out) {
    std::mt19937_64 rng(obs_seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector z(spec.m);
    for (int c = 0; c < spec.m; ++c) z(c) = unit(rng);
    Vector eps(spec.p);
    for (int j = 0; j < spec.p; ++j) eps(j) = gauss(rng);
    if (fixed_graph) {
        w_out = fixed_w;
        order_out = fixed_order;
    } else {
        w_out = orient_and_weight(skeleton, spec, z);
        order_out = distance_order(spec, z);
    }
    // x = (I - W)^{-T} eps, i.e. solve (I - W)^T x = eps
    const Matrix a = (Matrix::Identity(spec.p, spec.p) - w_out).transpose();
    x_row = a.partialPivLu().solve(eps).transpose().eval();
    z_row = z.transpose().eval();
}

inline std::pair<DataBatch, GroundTruth> sample_impl(const GeneratorSpec& spec,
                                                     const UndirectedEdges& skeleton, int n,
                                                     bool fixed_graph) {
    if (spec.phi < 0.0) throw std::invalid_argument("sample_dataset: phi not calibrated");
    DataBatch data;
    data.x = Matrix(n, spec.p);
    data.z = Matrix(n, spec.m);
    GroundTruth truth;
    truth.w.resize(n);
    truth.masks.resize(n);
    truth.order.resize(n);

    Matrix fixed_w;
    std::vector<int> fixed_order;
    if (fixed_graph) {
        std::mt19937_64 rng(mix_seed(spec.seed, 0xF17ED));
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        Vector z0(spec.m);
        for (int c = 0; c < spec.m; ++c) z0(c) = unit(rng);
        fixed_w = orient_and_weight(skeleton, spec, z0);
        fixed_order = distance_order(spec, z0);
    }
    for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd z_row, x_row;
        sample_observation(spec, skeleton, mix_seed(spec.data_seed, static_cast<std::uint64_t>(i) + 1),
                           fixed_graph, fixed_w, fixed_order, z_row, x_row, truth.w[i],
                           truth.order[i]);
        data.z.row(i) = z_row;
        data.x.row(i) = x_row;
        truth.masks[i] = mask_from_order(truth.order[i]);
    }
    return {std::move(data), std::move(truth)};
}

}  // namespace detail

inline std::pair<DataBatch, GroundTruth> sample_dataset(const GeneratorSpec& spec,
                                                        const UndirectedEdges& skeleton, int n) {
    return detail::sample_impl(spec, skeleton, n, false);
}

// Control setting: W(z) frozen at a single draw, so the contextual features
// carry no information about the graph.
inline std::pair<DataBatch, GroundTruth> sample_fixed_dataset(const GeneratorSpec& spec,
                                                              const UndirectedEdges& skeleton,
                                                              int n) {
    return detail::sample_impl(spec, skeleton, n, true);
}

// The three data splits derive observation seeds seed+{0,1,2}; graph-level
// quantities (centers, skeleton, the frozen fixed graph) stay shared.
inline GeneratorSpec split_spec(const GeneratorSpec& spec, int split) {
    GeneratorSpec s = spec;
    s.data_seed = spec.seed + static_cast<std::uint64_t>(split);
    return s;
}

}  // namespace ctxdag
