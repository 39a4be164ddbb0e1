#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxdag/graph.hpp"
#include "ctxdag/projection_layer.hpp"

namespace ctxdag {

// Node observations x (n x p) and contextual features z (n x m).
struct DataBatch {
    Matrix x;
    Matrix z;

    Eigen::Index n() const { return x.rows(); }
    Eigen::Index p() const { return x.cols(); }
    Eigen::Index m() const { return z.cols(); }

    void validate() const {
        if (x.rows() != z.rows()) throw std::invalid_argument("DataBatch: x/z row mismatch");
    }
};

// Acyclicity-by-construction alternative to the projection: binary masks
// whose support is triangular under some node permutation.
struct MaskSpec {
    enum class Kind { none, fixed_order, per_observation };
    Kind kind = Kind::none;
    std::vector<int> order;      // fixed_order: order[r] = node at rank r
    std::vector<Matrix> masks;   // per_observation: one binary p x p per row
};

inline Matrix mask_from_order(const std::vector<int>& order) {
    const int p = static_cast<int>(order.size());
    std::vector<int> rank(p);
    for (int r = 0; r < p; ++r) rank[order[r]] = r;
    Matrix m = Matrix::Zero(p, p);
    for (int j = 0; j < p; ++j)
        for (int k = 0; k < p; ++k)
            if (rank[j] < rank[k]) m(j, k) = 1.0;
    return m;
}

struct DenseLayer {
    Matrix w;  // out x in
    Vector b;  // out
};

struct NetworkWeights {
    int m = 0;
    int p = 0;
    std::vector<int> hidden;
    std::vector<DenseLayer> layers;  // hidden layers (relu) then the linear output layer
    double kappa_cache = -1.0;       // < 0 means unset

    int output_dim() const { return p * (p - 1); }
    bool has_kappa() const { return kappa_cache >= 0.0; }
};

using NetworkGradient = std::vector<DenseLayer>;

inline NetworkWeights init_network(int m, int p, const std::vector<int>& hidden,
                                   std::uint64_t seed) {
    if (m < 0 || p < 2) throw std::invalid_argument("init_network: need m >= 0 and p >= 2");
    NetworkWeights net;
    net.m = m;
    net.p = p;
    net.hidden = hidden;
    std::mt19937_64 rng(seed);
    int in = m;
    std::vector<int> widths = hidden;
    widths.push_back(net.output_dim());
    for (int out : widths) {
        const double bound = std::sqrt(6.0 / std::max(in, 1));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseLayer layer;
        layer.w = Matrix::NullaryExpr(out, in, [&]() { return dist(rng); });
        layer.b = Vector::Zero(out);
        net.layers.push_back(std::move(layer));
        in = out;
    }
    return net;
}

inline NetworkGradient zero_gradient(const NetworkWeights& net) {
    NetworkGradient g;
    for (const auto& layer : net.layers)
        g.push_back({Matrix::Zero(layer.w.rows(), layer.w.cols()), Vector::Zero(layer.b.size())});
    return g;
}

// Off-diagonal flattening convention: row-major, skipping the diagonal.
inline Matrix unflatten_offdiag(const Eigen::Ref<const Eigen::RowVectorXd>& v, int p) {
    Matrix w = Matrix::Zero(p, p);
    int idx = 0;
    for (int j = 0; j < p; ++j)
        for (int k = 0; k < p; ++k)
            if (j != k) w(j, k) = v(idx++);
    return w;
}

inline Eigen::RowVectorXd flatten_offdiag(const Matrix& w) {
    const int p = static_cast<int>(w.rows());
    Eigen::RowVectorXd v(p * (p - 1));
    int idx = 0;
    for (int j = 0; j < p; ++j)
        for (int k = 0; k < p; ++k)
            if (j != k) v(idx++) = w(j, k);
    return v;
}

// Everything the backward pass needs from a forward pass.
struct ForwardArtifacts {
    std::vector<Matrix> activations;  // activations[0] = z batch, then post-relu layers
    Matrix raw_output;                // n x p(p-1), pre-projection
    AdjacencyBatch w_tilde;
    AdjacencyBatch w_star;
    GradientContext ctx;
    double kappa = 0.0;
    double loss = 0.0;
    bool masked = false;
    std::vector<Matrix> applied_masks;  // one per observation when masked
};

namespace detail {

// Hidden stack evaluation shared by the projected and masked paths.
inline void net_forward_stack(const NetworkWeights& net, const Matrix& z, ForwardArtifacts& art) {
    if (z.cols() != net.m) throw std::invalid_argument("net_forward: z column count != m");
    art.activations.clear();
    art.activations.push_back(z);
    Matrix a = z;
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
        a = ((a * net.layers[l].w.transpose()).rowwise() + net.layers[l].b.transpose())
                .cwiseMax(0.0);
        art.activations.push_back(a);
    }
    const auto& out = net.layers.back();
    art.raw_output = (a * out.w.transpose()).rowwise() + out.b.transpose();
}

}  // namespace detail

inline AdjacencyBatch net_forward(const NetworkWeights& net, const Matrix& z) {
    ForwardArtifacts art;
    detail::net_forward_stack(net, z, art);
    AdjacencyBatch batch(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        batch[i] = unflatten_offdiag(art.raw_output.row(i), net.p);
    return batch;
}

inline double sem_loss(const Matrix& x, const AdjacencyBatch& w) {
    long double total = 0.0L;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Vector r = x.row(i).transpose() - w[i].transpose() * x.row(i).transpose();
        total += r.squaredNorm();
    }
    return static_cast<double>(total / x.rows());
}

// Full model forward. With no mask, the projection layer runs; with a mask,
// W~ is masked entrywise (masks are acyclic by construction) and only the l1
// step applies.
inline ForwardArtifacts model_forward(const NetworkWeights& net, const DataBatch& data,
                                      const ProjectionConfig& cfg, const SparsityBudget& budget,
                                      const MaskSpec& mask, ProjectionMode mode,
                                      AdjacencyBatch* hat_cache = nullptr) {
    data.validate();
    if (data.p() != net.p) throw std::invalid_argument("model_forward: x column count != p");
    ForwardArtifacts art;
    detail::net_forward_stack(net, data.z, art);
    const Eigen::Index n = data.n();
    art.w_tilde.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
        art.w_tilde[i] = unflatten_offdiag(art.raw_output.row(i), net.p);

    if (mask.kind == MaskSpec::Kind::none) {
        auto [star, ctx] = projection_forward(art.w_tilde, cfg, budget, mode, hat_cache);
        art.w_star = std::move(star);
        art.ctx = std::move(ctx);
        art.kappa = art.ctx.kappa;
    } else {
        art.masked = true;
        art.applied_masks.resize(n);
        if (mask.kind == MaskSpec::Kind::fixed_order) {
            if (static_cast<int>(mask.order.size()) != net.p)
                throw std::invalid_argument("model_forward: order size != p");
            const Matrix m = mask_from_order(mask.order);
            for (Eigen::Index i = 0; i < n; ++i) art.applied_masks[i] = m;
        } else {
            if (static_cast<Eigen::Index>(mask.masks.size()) != n)
                throw std::invalid_argument("model_forward: mask count != n");
            art.applied_masks = mask.masks;
        }
        AdjacencyBatch masked(n);
        for (Eigen::Index i = 0; i < n; ++i)
            masked[i] = art.w_tilde[i].cwiseProduct(art.applied_masks[i]);
        auto [star, kappa] = project_l1(masked, budget, mode);
        art.w_star = std::move(star);
        art.kappa = kappa;
        art.ctx.kappa = kappa;
        art.ctx.binding = kappa > kActiveSetTol;
        art.ctx.n = art.w_star.size();
        art.ctx.p = net.p;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Matrix& w = art.w_star[i];
            for (int j = 0; j < net.p; ++j)
                for (int k = 0; k < net.p; ++k)
                    if (j != k && std::abs(w(j, k)) > kActiveSetTol)
                        art.ctx.active_set.push_back({static_cast<std::int32_t>(i), j, k,
                                                      w(j, k) > 0.0 ? 1.0 : -1.0});
        }
    }
    art.loss = sem_loss(data.x, art.w_star);
    return art;
}

// Backpropagation: loss -> W* -> (projection backward) -> W~ -> hidden stack.
inline NetworkGradient model_backward(const NetworkWeights& net, const DataBatch& data,
                                      const ForwardArtifacts& art) {
    const Eigen::Index n = data.n();
    AdjacencyBatch upstream(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector xi = data.x.row(i).transpose();
        const Vector r = art.w_star[i].transpose() * xi - xi;
        upstream[i] = zeroed_diagonal((2.0 / static_cast<double>(n)) * xi * r.transpose());
    }
    AdjacencyBatch d_tilde = projection_backward(upstream, art.ctx);
    if (art.masked)
        for (Eigen::Index i = 0; i < n; ++i)
            d_tilde[i] = d_tilde[i].cwiseProduct(art.applied_masks[i]);

    Matrix delta(n, net.output_dim());
    for (Eigen::Index i = 0; i < n; ++i) delta.row(i) = flatten_offdiag(d_tilde[i]);

    NetworkGradient grad = zero_gradient(net);
    const std::size_t last = net.layers.size() - 1;
    grad[last].w = delta.transpose() * art.activations[last];
    grad[last].b = delta.colwise().sum().transpose();
    Matrix d = delta * net.layers[last].w;
    for (std::size_t l = last; l-- > 0;) {
        // relu subgradient: 0 at 0
        d = d.cwiseProduct(
            (art.activations[l + 1].array() > 0.0).cast<double>().matrix());
        grad[l].w = d.transpose() * art.activations[l];
        grad[l].b = d.colwise().sum().transpose();
        if (l > 0) d = d * net.layers[l].w;
    }
    return grad;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const NetworkWeights& net) {
    nlohmann::json j;
    j["version"] = 1;
    j["m"] = net.m;
    j["p"] = net.p;
    j["hidden"] = net.hidden;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        nlohmann::json jw = nlohmann::json::array();
        for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < layer.w.cols(); ++c) row.push_back(layer.w(r, c));
            jw.push_back(std::move(row));
        }
        nlohmann::json jb = nlohmann::json::array();
        for (Eigen::Index r = 0; r < layer.b.size(); ++r) jb.push_back(layer.b(r));
        j["layers"].push_back({{"w", std::move(jw)}, {"b", std::move(jb)}});
    }
    if (net.has_kappa())
        j["kappa"] = net.kappa_cache;
    else
        j["kappa"] = nullptr;
    return j;
}

inline NetworkWeights network_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1)
        throw std::invalid_argument("network_from_json: unsupported version");
    NetworkWeights net;
    net.m = j.at("m").get<int>();
    net.p = j.at("p").get<int>();
    net.hidden = j.at("hidden").get<std::vector<int>>();
    for (const auto& jl : j.at("layers")) {
        const auto& jw = jl.at("w");
        const auto& jb = jl.at("b");
        DenseLayer layer;
        layer.w = Matrix(jw.size(), jw.empty() ? 0 : jw[0].size());
        for (std::size_t r = 0; r < jw.size(); ++r)
            for (std::size_t c = 0; c < jw[r].size(); ++c) layer.w(r, c) = jw[r][c].get<double>();
        layer.b = Vector(jb.size());
        for (std::size_t r = 0; r < jb.size(); ++r) layer.b(r) = jb[r].get<double>();
        net.layers.push_back(std::move(layer));
    }
    net.kappa_cache = j.at("kappa").is_null() ? -1.0 : j.at("kappa").get<double>();
    return net;
}

inline void save_network(const NetworkWeights& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_network: cannot open " + path);
    out << to_json(net).dump(2) << "\n";
}

inline NetworkWeights load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_network: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return network_from_json(j);
}

}  // namespace ctxdag
