#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctxdag/graph.hpp"
#include "ctxdag/metrics.hpp"
#include "ctxdag/network.hpp"
#include "ctxdag/synthetic.hpp"

namespace ctxdag {

struct TrainConfig {
    double learning_rate = 0.001;
    int patience = 10;       // validation evaluations without improvement
    int path_length = 20;    // number of lambda values
    int max_epochs = 300;
    // epoch cap for the preliminary (unprojected) network; 0 falls back to
    // max_epochs. Unprojected epochs are cheap, so a larger budget here buys
    // a better theta^(0) without touching the projected path cost.
    int pretrain_epochs = 0;
    std::vector<int> hidden = {128, 128};
    std::uint64_t seed = 0;

    void validate() const {
        if (patience < 1 || path_length < 2 || max_epochs < 1 || learning_rate <= 0.0 ||
            pretrain_epochs < 0)
            throw std::invalid_argument("TrainConfig: invalid field");
    }
};

struct TrainLogRow {
    int epoch;
    double lambda;
    double train_loss;
    double val_loss;
    double mean_edges;
    double wall_time_ms;
};

struct PathEntry {
    double lambda = 0.0;
    NetworkWeights weights;
    double val_loss = 0.0;
    double mean_edges = 0.0;
    int epochs = 0;
};

struct PathResult {
    std::vector<PathEntry> entries;
    std::vector<TrainLogRow> log;
};

// --- adaptive moment optimizer ----------------------------------------------

struct AdamState {
    Matrix m, v;
};

inline void adam_update(Matrix& param, const Matrix& grad, AdamState& state, int t, double lr,
                        double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    if (state.m.size() == 0) {
        state.m = Matrix::Zero(param.rows(), param.cols());
        state.v = Matrix::Zero(param.rows(), param.cols());
    }
    state.m = b1 * state.m + (1.0 - b1) * grad;
    state.v = b2 * state.v.array().matrix() + (1.0 - b2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(b1, t);
    const double bc2 = 1.0 - std::pow(b2, t);
    param.array() -=
        lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + eps);
}

struct NetworkAdam {
    std::vector<AdamState> w_state, b_state;
    int t = 0;

    void step(NetworkWeights& net, const NetworkGradient& grad, double lr) {
        if (w_state.empty()) {
            w_state.resize(net.layers.size());
            b_state.resize(net.layers.size());
        }
        ++t;
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            adam_update(net.layers[l].w, grad[l].w, w_state[l], t, lr);
            Matrix b = net.layers[l].b;
            Matrix gb = grad[l].b;
            adam_update(b, gb, b_state[l], t, lr);
            net.layers[l].b = b;
        }
    }
};

// --- network training --------------------------------------------------------

enum class TrainMode { unprojected, projected };

namespace detail {

inline double mean_thresholded_edges(const AdjacencyBatch& batch) {
    if (batch.empty()) return 0.0;
    long double total = 0.0L;
    for (const auto& w : batch)
        total += static_cast<double>(support(threshold_to_dag(w).first).edges.size());
    return static_cast<double>(total / batch.size());
}

// Unprojected loss/gradient path used to pretrain theta^(0): the raw W~ is
// plugged straight into the SEM residual.
inline std::pair<double, NetworkGradient> unprojected_pass(const NetworkWeights& net,
                                                           const DataBatch& data) {
    ForwardArtifacts art;
    net_forward_stack(net, data.z, art);
    const Eigen::Index n = data.n();
    AdjacencyBatch w(n);
    Matrix delta(n, net.output_dim());
    long double loss = 0.0L;
    for (Eigen::Index i = 0; i < n; ++i) {
        w[i] = unflatten_offdiag(art.raw_output.row(i), net.p);
        const Vector xi = data.x.row(i).transpose();
        const Vector r = w[i].transpose() * xi - xi;
        loss += r.squaredNorm();
        delta.row(i) =
            flatten_offdiag(zeroed_diagonal((2.0 / static_cast<double>(n)) * xi * r.transpose()));
    }
    NetworkGradient grad = zero_gradient(net);
    const std::size_t last = net.layers.size() - 1;
    grad[last].w = delta.transpose() * art.activations[last];
    grad[last].b = delta.colwise().sum().transpose();
    Matrix d = delta * net.layers[last].w;
    for (std::size_t l = last; l-- > 0;) {
        d = d.cwiseProduct((art.activations[l + 1].array() > 0.0).cast<double>().matrix());
        grad[l].w = d.transpose() * art.activations[l];
        grad[l].b = d.colwise().sum().transpose();
        if (l > 0) d = d * net.layers[l].w;
    }
    return {static_cast<double>(loss / n), std::move(grad)};
}

}  // namespace detail

struct TrainOutcome {
    NetworkWeights weights;  // best checkpoint, kappa_cache set for projected fits
    double val_loss = 0.0;
    double mean_edges = 0.0;
    int epochs = 0;
};

// Full-batch training with validation early stopping and best-weights
// checkpointing. The lambda budget applies in train mode; validation uses the
// kappa of the latest train forward (inference semantics).
inline TrainOutcome train_network(NetworkWeights net, const DataBatch& train, const DataBatch& val,
                                  const TrainConfig& cfg, const ProjectionConfig& proj_cfg,
                                  double lambda, const MaskSpec& mask, TrainMode mode,
                                  std::vector<TrainLogRow>* log = nullptr,
                                  const MaskSpec* val_mask = nullptr,
                                  AdjacencyBatch* train_hat_io = nullptr,
                                  AdjacencyBatch* val_hat_io = nullptr) {
    cfg.validate();
    // per-observation masks are split-specific; fall back to the train mask
    const MaskSpec& vmask = val_mask ? *val_mask : mask;
    NetworkAdam adam;
    TrainOutcome best;
    best.val_loss = std::numeric_limits<double>::infinity();
    int stall = 0;
    // pre-l1 projection outputs of the previous epoch, used as warm starts;
    // callers fitting a lambda path can pass caches that persist across calls
    AdjacencyBatch local_train_hat, local_val_hat;
    AdjacencyBatch& train_hat = train_hat_io ? *train_hat_io : local_train_hat;
    AdjacencyBatch& val_hat = val_hat_io ? *val_hat_io : local_val_hat;
    const auto start = std::chrono::steady_clock::now();

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double train_loss = 0.0;
        double kappa = -1.0;
        if (mode == TrainMode::unprojected) {
            auto [loss, grad] = detail::unprojected_pass(net, train);
            train_loss = loss;
            adam.step(net, grad, cfg.learning_rate);
        } else {
            SparsityBudget budget;
            budget.lambda = lambda;
            ForwardArtifacts art =
                model_forward(net, train, proj_cfg, budget, mask, ProjectionMode::train,
                              &train_hat);
            train_loss = art.loss;
            kappa = art.kappa;
            NetworkGradient grad = model_backward(net, train, art);
            adam.step(net, grad, cfg.learning_rate);
        }

        double val_loss = 0.0;
        double mean_edges = 0.0;
        if (mode == TrainMode::unprojected) {
            ForwardArtifacts art;
            detail::net_forward_stack(net, val.z, art);
            AdjacencyBatch w(val.n());
            for (Eigen::Index i = 0; i < val.n(); ++i)
                w[i] = unflatten_offdiag(art.raw_output.row(i), net.p);
            val_loss = sem_loss(val.x, w);
        } else {
            SparsityBudget budget;
            budget.lambda = lambda;
            budget.kappa = std::max(kappa, 0.0);
            ForwardArtifacts art = model_forward(net, val, proj_cfg, budget, vmask,
                                                 ProjectionMode::inference, &val_hat);
            val_loss = art.loss;
            mean_edges = detail::mean_thresholded_edges(art.w_star);
        }
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw std::runtime_error("train_network: training diverged (non-finite loss)");

        if (log) {
            const double ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
            log->push_back({epoch, lambda, train_loss, val_loss, mean_edges, ms});
        }

        if (val_loss < best.val_loss) {
            best.val_loss = val_loss;
            best.weights = net;
            best.weights.kappa_cache = kappa >= 0.0 ? kappa : -1.0;
            best.mean_edges = mean_edges;
            best.epochs = epoch;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
    }
    if (mode == TrainMode::projected) {
        // pin the training-set kappa of the returned weights
        SparsityBudget budget;
        budget.lambda = lambda;
        ForwardArtifacts art = model_forward(best.weights, train, proj_cfg, budget, mask,
                                             ProjectionMode::train, &train_hat);
        best.weights.kappa_cache = art.kappa;
    }
    return best;
}

// Preliminary network with no projection layer (theta^(0) of the pathwise
// optimizer).
inline NetworkWeights pretrain_unprojected(const DataBatch& train, const DataBatch& val,
                                           const TrainConfig& cfg) {
    NetworkWeights net = init_network(static_cast<int>(train.m()), static_cast<int>(train.p()),
                                      cfg.hidden, cfg.seed);
    TrainConfig pre_cfg = cfg;
    if (cfg.pretrain_epochs > 0) pre_cfg.max_epochs = cfg.pretrain_epochs;
    return train_network(std::move(net), train, val, pre_cfg, ProjectionConfig{},
                         std::numeric_limits<double>::infinity(), MaskSpec{},
                         TrainMode::unprojected)
        .weights;
}

inline std::vector<double> lambda_grid(double lambda1, int T) {
    std::vector<double> grid(T);
    for (int t = 0; t < T; ++t)
        grid[t] = lambda1 * static_cast<double>(T - 1 - t) / static_cast<double>(T - 1);
    return grid;
}

// Pathwise optimization: the first model is fit unconstrained in l1
// (projection still enforces acyclicity), lambda^(1) is read off its output,
// and the remaining grid points warm-start from the previous weights.
inline PathResult fit_path(const DataBatch& train, const DataBatch& val, const TrainConfig& cfg,
                           const ProjectionConfig& proj_cfg, const MaskSpec& mask = {},
                           const MaskSpec* val_mask = nullptr) {
    cfg.validate();
    PathResult path;
    NetworkWeights warm = pretrain_unprojected(train, val, cfg);
    AdjacencyBatch train_hat, val_hat;  // projection warm starts shared along the path

    TrainOutcome first =
        train_network(warm, train, val, cfg, proj_cfg, std::numeric_limits<double>::infinity(),
                      mask, TrainMode::projected, &path.log, val_mask, &train_hat, &val_hat);
    SparsityBudget unconstrained;
    ForwardArtifacts art = model_forward(first.weights, train, proj_cfg, unconstrained, mask,
                                         ProjectionMode::train, &train_hat);
    const double lambda1 = mean_l1_norm(art.w_star);
    const std::vector<double> grid = lambda_grid(lambda1, cfg.path_length);

    path.entries.push_back(
        {grid.front(), first.weights, first.val_loss, first.mean_edges, first.epochs});
    warm = first.weights;
    for (std::size_t t = 1; t < grid.size(); ++t) {
        TrainOutcome out =
            train_network(warm, train, val, cfg, proj_cfg, grid[t], mask, TrainMode::projected,
                          &path.log, val_mask, &train_hat, &val_hat);
        path.entries.push_back({grid[t], out.weights, out.val_loss, out.mean_edges, out.epochs});
        warm = out.weights;
    }
    return path;
}

// --- fixed DAG (no network) --------------------------------------------------

struct FixedPathEntry {
    double lambda = 0.0;
    Matrix w_tilde;  // raw optimization variable
    Matrix w_star;   // projected output
    double val_loss = 0.0;
    double mean_edges = 0.0;
};

struct FixedPathResult {
    std::vector<FixedPathEntry> entries;
};

namespace detail {

inline double fixed_loss(const Matrix& x, const Matrix& w) {
    long double total = 0.0L;
    const Matrix r = x - x * w;  // row i: x_i^T - x_i^T W = (x_i - W^T x_i)^T
    total = r.squaredNorm();
    return static_cast<double>(total / x.rows());
}

}  // namespace detail

// Optimizes one shared W over the whole sample through the same projection
// machinery (batch of one).
inline std::pair<Matrix, Matrix> fit_fixed_dag(const DataBatch& train, const DataBatch& val,
                                               const TrainConfig& cfg,
                                               const ProjectionConfig& proj_cfg, double lambda,
                                               const Matrix* warm_start = nullptr) {
    cfg.validate();
    const int p = static_cast<int>(train.p());
    Matrix w_tilde = warm_start ? *warm_start : Matrix::Zero(p, p);
    w_tilde.diagonal().setZero();
    AdamState state;
    Matrix best_tilde = w_tilde;
    Matrix best_star = Matrix::Zero(p, p);
    double best_val = std::numeric_limits<double>::infinity();
    int stall = 0;
    const double n = static_cast<double>(train.n());
    AdjacencyBatch hat_cache;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        SparsityBudget budget;
        budget.lambda = lambda;
        auto [star, ctx] =
            projection_forward({w_tilde}, proj_cfg, budget, ProjectionMode::train, &hat_cache);
        const Matrix& w_star = star.front();
        // dL/dW* summed over observations
        const Matrix r = train.x * w_star - train.x;  // n x p, row i = (W*^T x_i - x_i)^T
        Matrix upstream = zeroed_diagonal((2.0 / n) * train.x.transpose() * r);
        Matrix grad = projection_backward({upstream}, ctx).front();

        const double val_loss = detail::fixed_loss(val.x, w_star);
        if (!std::isfinite(val_loss))
            throw std::runtime_error("fit_fixed_dag: training diverged");
        if (val_loss < best_val) {
            best_val = val_loss;
            best_tilde = w_tilde;
            best_star = w_star;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            break;
        }
        adam_update(w_tilde, grad, state, epoch, cfg.learning_rate);
        w_tilde.diagonal().setZero();
    }
    return {best_tilde, best_star};
}

inline FixedPathResult fit_fixed_path(const DataBatch& train, const DataBatch& val,
                                      const TrainConfig& cfg, const ProjectionConfig& proj_cfg) {
    FixedPathResult path;
    auto [tilde1, star1] =
        fit_fixed_dag(train, val, cfg, proj_cfg, std::numeric_limits<double>::infinity());
    const double lambda1 = star1.cwiseAbs().sum();
    const std::vector<double> grid = lambda_grid(lambda1, cfg.path_length);
    Matrix warm = tilde1;
    for (std::size_t t = 0; t < grid.size(); ++t) {
        Matrix tilde, star;
        if (t == 0) {
            tilde = tilde1;
            star = star1;
        } else {
            std::tie(tilde, star) = fit_fixed_dag(train, val, cfg, proj_cfg, grid[t], &warm);
        }
        FixedPathEntry entry;
        entry.lambda = grid[t];
        entry.w_tilde = tilde;
        entry.w_star = star;
        entry.val_loss = detail::fixed_loss(val.x, star);
        entry.mean_edges =
            static_cast<double>(support(threshold_to_dag(star).first).edges.size());
        path.entries.push_back(std::move(entry));
        warm = tilde;
    }
    return path;
}

// --- clustered DAG -----------------------------------------------------------

struct KMeansResult {
    Matrix centroids;             // k x m
    std::vector<int> assignment;  // n
};

inline KMeansResult kmeans(const Matrix& z, int k, std::uint64_t seed, int restarts = 20,
                           int max_iters = 100) {
    const int n = static_cast<int>(z.rows());
    if (k < 1 || k > n) throw std::invalid_argument("kmeans: bad cluster count");
    std::mt19937_64 rng(seed);
    KMeansResult best;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        Matrix centroids(k, z.cols());
        for (int c = 0; c < k; ++c) centroids.row(c) = z.row(idx[c]);
        std::vector<int> assignment(n, 0);
        for (int it = 0; it < max_iters; ++it) {
            bool changed = false;
            for (int i = 0; i < n; ++i) {
                int arg = 0;
                double d_min = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    const double d = (z.row(i) - centroids.row(c)).squaredNorm();
                    if (d < d_min) {
                        d_min = d;
                        arg = c;
                    }
                }
                if (assignment[i] != arg) {
                    assignment[i] = arg;
                    changed = true;
                }
            }
            Matrix sums = Matrix::Zero(k, z.cols());
            std::vector<int> counts(k, 0);
            for (int i = 0; i < n; ++i) {
                sums.row(assignment[i]) += z.row(i);
                ++counts[assignment[i]];
            }
            for (int c = 0; c < k; ++c) {
                if (counts[c] > 0) {
                    centroids.row(c) = sums.row(c) / counts[c];
                } else {
                    // empty cluster: reseed at the farthest point
                    int far = 0;
                    double d_max = -1.0;
                    for (int i = 0; i < n; ++i) {
                        const double d =
                            (z.row(i) - centroids.row(assignment[i])).squaredNorm();
                        if (d > d_max) {
                            d_max = d;
                            far = i;
                        }
                    }
                    centroids.row(c) = z.row(far);
                    changed = true;
                }
            }
            if (!changed) break;
        }
        double inertia = 0.0;
        for (int i = 0; i < n; ++i)
            inertia += (z.row(i) - centroids.row(assignment[i])).squaredNorm();
        if (inertia < best_inertia) {
            best_inertia = inertia;
            best.centroids = centroids;
            best.assignment = assignment;
        }
    }
    return best;
}

struct ClusteredPathResult {
    Matrix centroids;
    std::vector<FixedPathResult> cluster_paths;  // one per cluster
    std::vector<int> cluster_sizes;
};

// k-means on z into ceil(n/size_target) clusters, then a fixed-DAG path per
// cluster. Prediction for new z uses the nearest centroid.
inline ClusteredPathResult fit_clustered_path(const DataBatch& train, const DataBatch& val,
                                              const TrainConfig& cfg,
                                              const ProjectionConfig& proj_cfg,
                                              int cluster_size_target = 100) {
    const int n = static_cast<int>(train.n());
    const int k = (n + cluster_size_target - 1) / cluster_size_target;
    KMeansResult km = kmeans(train.z, k, cfg.seed);
    ClusteredPathResult out;
    out.centroids = km.centroids;
    for (int c = 0; c < k; ++c) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i)
            if (km.assignment[i] == c) members.push_back(i);
        out.cluster_sizes.push_back(static_cast<int>(members.size()));
        DataBatch sub;
        sub.x = Matrix(members.size(), train.p());
        sub.z = Matrix(members.size(), train.m());
        for (std::size_t i = 0; i < members.size(); ++i) {
            sub.x.row(i) = train.x.row(members[i]);
            sub.z.row(i) = train.z.row(members[i]);
        }
        out.cluster_paths.push_back(fit_fixed_path(sub, val, cfg, proj_cfg));
    }
    return out;
}

inline int nearest_centroid(const Matrix& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& z) {
    int arg = 0;
    double d_min = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (z - centroids.row(c)).squaredNorm();
        if (d < d_min) {
            d_min = d;
            arg = static_cast<int>(c);
        }
    }
    return arg;
}

// --- sorted DAG baselines ----------------------------------------------------

inline std::vector<int> topological_order(const BinaryGraph& g) {
    std::vector<int> indegree(g.p, 0);
    std::vector<std::vector<int>> out(g.p);
    for (const auto& [j, k] : g.edges) {
        ++indegree[k];
        out[j].push_back(k);
    }
    std::vector<int> order, stack;
    for (int j = g.p - 1; j >= 0; --j)
        if (indegree[j] == 0) stack.push_back(j);
    while (!stack.empty()) {
        const int j = stack.back();
        stack.pop_back();
        order.push_back(j);
        for (int k : out[j])
            if (--indegree[k] == 0) stack.push_back(k);
    }
    if (static_cast<int>(order.size()) != g.p)
        throw std::invalid_argument("topological_order: graph has a cycle");
    return order;
}

// Same architecture as the contextual DAG but with a binary mask instead of
// the acyclicity projection. The fixed-order variant takes its order from an
// estimated fixed DAG; the truth variant consumes ground-truth masks.
inline PathResult fit_sorted_path(const DataBatch& train, const DataBatch& val,
                                  const TrainConfig& cfg, const ProjectionConfig& proj_cfg,
                                  const MaskSpec& mask, const MaskSpec* val_mask = nullptr) {
    if (mask.kind == MaskSpec::Kind::none)
        throw std::invalid_argument("fit_sorted_path: mask required");
    return fit_path(train, val, cfg, proj_cfg, mask, val_mask);
}

}  // namespace ctxdag
