#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctxdag/graph.hpp"
#include "ctxdag/network.hpp"
#include "ctxdag/synthetic.hpp"

namespace ctxdag {

// Structural Hamming distance over directed edges; a reversal counts as one
// edit.
inline int shd(const BinaryGraph& truth, const BinaryGraph& est) {
    if (truth.p != est.p) throw std::invalid_argument("shd: node count mismatch");
    std::set<std::pair<int, int>> t(truth.edges.begin(), truth.edges.end());
    std::set<std::pair<int, int>> e(est.edges.begin(), est.edges.end());
    int edits = 0;
    for (int j = 0; j < truth.p; ++j) {
        for (int k = j + 1; k < truth.p; ++k) {
            const bool tjk = t.count({j, k}), tkj = t.count({k, j});
            const bool ejk = e.count({j, k}), ekj = e.count({k, j});
            if (tjk == ejk && tkj == ekj) continue;
            const bool reversal =
                (tjk && !tkj && ekj && !ejk) || (tkj && !tjk && ejk && !ekj);
            if (reversal)
                ++edits;
            else
                edits += (tjk != ejk) + (tkj != ekj);
        }
    }
    return edits;
}

// F1 over directed edges. Empty vs empty is perfect recovery by convention.
inline double f1(const BinaryGraph& truth, const BinaryGraph& est) {
    if (truth.p != est.p) throw std::invalid_argument("f1: node count mismatch");
    std::set<std::pair<int, int>> t(truth.edges.begin(), truth.edges.end());
    int tp = 0;
    for (const auto& edge : est.edges) tp += t.count(edge) ? 1 : 0;
    if (truth.edges.empty() && est.edges.empty()) return 1.0;
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / est.edges.size();
    const double recall = static_cast<double>(tp) / truth.edges.size();
    return 2.0 * precision * recall / (precision + recall);
}

// Path entry whose mean thresholded edge count is closest to the target;
// ties go to the sparser model.
template <typename Path>
int select_lambda_index(const Path& path, double target_mean_edges) {
    if (path.entries.empty()) throw std::invalid_argument("select_lambda_index: empty path");
    int best = 0;
    for (int t = 1; t < static_cast<int>(path.entries.size()); ++t) {
        const double d = std::abs(path.entries[t].mean_edges - target_mean_edges);
        const double d_best = std::abs(path.entries[best].mean_edges - target_mean_edges);
        if (d < d_best ||
            (d == d_best && path.entries[t].mean_edges < path.entries[best].mean_edges))
            best = t;
    }
    return best;
}

struct RecoveryReport {
    double shd_mean = 0.0;
    double f1_mean = 0.0;
    double edge_count_mean = 0.0;
    std::vector<int> shd_values;
    std::vector<double> f1_values;
    std::vector<int> edge_counts;
    std::string method;
};

// Predicts W(z_i) per observation, thresholds to a DAG, and scores against
// the per-observation truth.
inline RecoveryReport evaluate_method(
    const std::function<Matrix(int, const Eigen::Ref<const Eigen::RowVectorXd>&)>& predict,
    const DataBatch& test, const GroundTruth& truth, std::string method = {}) {
    RecoveryReport report;
    report.method = std::move(method);
    const int n = static_cast<int>(test.n());
    long double shd_sum = 0.0L, f1_sum = 0.0L, edge_sum = 0.0L;
    for (int i = 0; i < n; ++i) {
        const auto [west, t] = threshold_to_dag(predict(i, test.z.row(i)));
        const BinaryGraph est = support(west);
        const BinaryGraph g_true = support(truth.w[i]);
        const int d = shd(g_true, est);
        const double f = f1(g_true, est);
        report.shd_values.push_back(d);
        report.f1_values.push_back(f);
        report.edge_counts.push_back(static_cast<int>(est.edges.size()));
        shd_sum += d;
        f1_sum += f;
        edge_sum += static_cast<double>(est.edges.size());
    }
    if (n > 0) {
        report.shd_mean = static_cast<double>(shd_sum / n);
        report.f1_mean = static_cast<double>(f1_sum / n);
        report.edge_count_mean = static_cast<double>(edge_sum / n);
    }
    return report;
}

}  // namespace ctxdag
