#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "ctxdag/projection_layer.hpp"

using namespace ctxdag;

namespace {

Matrix cyc2(double a, double b) {
    Matrix w(2, 2);
    w << 0.0, a, b, 0.0;
    return w;
}

}  // namespace

TEST_CASE("forward: already-feasible batch passes through") {
    Matrix w = Matrix::Zero(3, 3);
    w(0, 1) = 0.3;
    w(1, 2) = -0.2;
    SparsityBudget budget;
    budget.lambda = 10.0;
    const auto [out, ctx] =
        projection_forward({w, w}, ProjectionConfig{}, budget, ProjectionMode::train);
    CHECK_FALSE(ctx.binding);
    CHECK((out[0] - w).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(ctx.active_set.size() == 4);
}

TEST_CASE("forward: lambda=0 gives an all-zero batch and empty active set") {
    SparsityBudget budget;
    budget.lambda = 0.0;
    const auto [out, ctx] =
        projection_forward({cyc2(1.0, 0.5)}, ProjectionConfig{}, budget, ProjectionMode::train);
    CHECK(out[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(ctx.active_set.empty());
}

TEST_CASE("forward: tight budget on a 2-cycle") {
    SparsityBudget budget;
    budget.lambda = 0.5;
    const auto [out, ctx] =
        projection_forward({cyc2(1.0, 1.0)}, ProjectionConfig{}, budget, ProjectionMode::train);
    CHECK(h_s(out[0], 1.0) <= kFeasibilityTol);
    CHECK(out[0].cwiseAbs().sum() <= 0.5 + 1e-10);
    const auto [dag, t] = threshold_to_dag(out[0]);
    CHECK(support(dag).edges.size() <= 1);
    for (const auto& e : support(dag).edges) CHECK(std::abs(dag(e.first, e.second)) <= 0.5 + 1e-10);
}

TEST_CASE("backward: non-binding budget passes upstream through") {
    // with kappa = 0 the soft threshold is the identity map, so the gradient
    // flows to every off-diagonal entry, zeros included
    GradientContext ctx;
    ctx.n = 1;
    ctx.p = 3;
    ctx.binding = false;
    ctx.active_set = {{0, 0, 1, 1.0}, {0, 1, 2, -1.0}};
    Matrix up = Matrix::Constant(3, 3, 5.0);
    const AdjacencyBatch g = projection_backward({up}, ctx);
    CHECK(g[0](0, 1) == 5.0);
    CHECK(g[0](1, 2) == 5.0);
    CHECK(g[0](0, 2) == 5.0);
    CHECK(g[0](2, 0) == 5.0);
    CHECK(g[0].diagonal().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward: binding with a single active entry vanishes") {
    GradientContext ctx;
    ctx.n = 1;
    ctx.p = 2;
    ctx.binding = true;
    ctx.active_set = {{0, 0, 1, 1.0}};
    Matrix up = Matrix::Constant(2, 2, 3.7);
    const AdjacencyBatch g = projection_backward({up}, ctx);
    CHECK(g[0](0, 1) == doctest::Approx(0.0));
}

TEST_CASE("backward: binding with two same-sign entries") {
    GradientContext ctx;
    ctx.n = 1;
    ctx.p = 3;
    ctx.binding = true;
    ctx.active_set = {{0, 0, 1, 1.0}, {0, 1, 2, 1.0}};
    Matrix up = Matrix::Zero(3, 3);
    up(0, 1) = 1.0;
    const AdjacencyBatch g = projection_backward({up}, ctx);
    CHECK(g[0](0, 1) == doctest::Approx(0.5));
    CHECK(g[0](1, 2) == doctest::Approx(-0.5));
}

TEST_CASE("backward: shape mismatch is rejected") {
    GradientContext ctx;
    ctx.n = 2;
    ctx.p = 3;
    CHECK_THROWS_AS(projection_backward({Matrix::Zero(3, 3)}, ctx), std::invalid_argument);
}

TEST_CASE("binding Jacobian restricted to the active set is I - ss^T/|A|") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 3);
        const int p = 2 + static_cast<int>(rng() % 4);
        AdjacencyBatch batch(n);
        for (int i = 0; i < n; ++i) {
            batch[i] = Matrix::NullaryExpr(p, p, [&]() { return dist(rng); });
            batch[i].diagonal().setZero();
        }
        SparsityBudget budget;
        budget.lambda = 0.4;
        const auto [out, ctx] =
            projection_forward(batch, ProjectionConfig{}, budget, ProjectionMode::train);
        if (!ctx.binding || ctx.active_set.empty()) continue;
        const int a = static_cast<int>(ctx.active_set.size());
        // materialize the Jacobian column by column via the backward map
        Matrix jac(a, a);
        for (int c = 0; c < a; ++c) {
            AdjacencyBatch unit(n, Matrix::Zero(p, p));
            const auto& t = ctx.active_set[c];
            unit[t.item](t.row, t.col) = 1.0;
            const AdjacencyBatch col = projection_backward(unit, ctx);
            for (int r = 0; r < a; ++r) {
                const auto& tr = ctx.active_set[r];
                jac(r, c) = col[tr.item](tr.row, tr.col);
            }
        }
        Vector s(a);
        for (int r = 0; r < a; ++r) s(r) = ctx.active_set[r].sign;
        const Matrix expect = Matrix::Identity(a, a) - s * s.transpose() / a;
        CHECK((jac - expect).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((jac * s).cwiseAbs().maxCoeff() <= 1e-12);             // annihilates s
        CHECK((jac * jac - jac).cwiseAbs().maxCoeff() <= 1e-12);     // idempotent
        CHECK((jac - jac.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("backward matches finite differences through the forward") {
    // The analytical gradient is the Jacobian of the sparsity step on the
    // active set; it does not differentiate through the iterative acyclicity
    // solver. Feasible inputs make that solver exactly the identity, so
    // central differences through the forward isolate the claimed Jacobian.
    // Inputs are random DAG-supported matrices (strictly lower triangular
    // under a random permutation).
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const double eps = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 40 && checked < 10; ++trial) {
        const int p = 3;
        std::vector<int> perm{0, 1, 2};
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix w = Matrix::Zero(p, p);
        for (int j = 0; j < p; ++j)
            for (int k = 0; k < j; ++k) w(perm[j], perm[k]) = dist(rng);
        SparsityBudget budget;
        budget.lambda = 0.8;
        ProjectionConfig cfg;
        const auto [out, ctx] = projection_forward({w}, cfg, budget, ProjectionMode::train);
        if (ctx.active_set.empty() || !ctx.binding) continue;

        // upstream = d/dW* of sum of entries, i.e. ones
        const AdjacencyBatch grad =
            projection_backward({Matrix::Ones(p, p)}, ctx);
        bool usable = true;
        Matrix fd = Matrix::Zero(p, p);
        Matrix fd_mask = Matrix::Zero(p, p);
        for (int j = 0; j < p && usable; ++j) {
            for (int k = 0; k < p && usable; ++k) {
                // perturb support entries only: touching a structural zero
                // creates a tiny cycle and re-engages the acyclicity solver
                if (j == k || w(j, k) == 0.0) continue;
                fd_mask(j, k) = 1.0;
                Matrix wp = w, wm = w;
                wp(j, k) += eps;
                wm(j, k) -= eps;
                const auto [op, cp] = projection_forward({wp}, cfg, budget, ProjectionMode::train);
                const auto [om, cm] = projection_forward({wm}, cfg, budget, ProjectionMode::train);
                // skip perturbations that change the active set
                if (cp.active_set.size() != ctx.active_set.size() ||
                    cm.active_set.size() != ctx.active_set.size()) {
                    usable = false;
                    break;
                }
                fd(j, k) = (op[0].sum() - om[0].sum()) / (2.0 * eps);
            }
        }
        if (!usable) continue;
        ++checked;
        CHECK((fd - grad[0].cwiseProduct(fd_mask)).cwiseAbs().maxCoeff() <= 1e-3);
        // structural zeros stay inactive, so their analytical gradient is zero
        CHECK((grad[0].cwiseProduct(Matrix::Ones(p, p) - fd_mask)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK(checked >= 5);
}

TEST_CASE("forward is deterministic") {
    Matrix w = cyc2(0.9, -0.7);
    SparsityBudget budget;
    budget.lambda = 0.6;
    const auto [a, ca] = projection_forward({w}, ProjectionConfig{}, budget, ProjectionMode::train);
    const auto [b, cb] = projection_forward({w}, ProjectionConfig{}, budget, ProjectionMode::train);
    CHECK((a[0] - b[0]).cwiseAbs().maxCoeff() == 0.0);
}
