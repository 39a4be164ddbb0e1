#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>

#include <algorithm>

#include <cmath>
#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxdag/graph.hpp"
#include "ctxdag/parallel.hpp"

namespace ctxdag {

// Knobs of the path-following log-det projection. step_constant <= 0 selects
// the aggressive default 1/p step; the conservative theoretical constant is
// max(mu/2, 2*sqrt(p) + 4*p*||W~||_F).
struct ProjectionConfig {
    double s = 1.0;
    double mu0 = 1.0;
    double alpha = 0.5;
    int T = 10;
    double step_constant = 0.0;
    double inner_tol = 1e-9;
    int inner_max_iters = 300;

    void validate() const {
        if (s <= 0.0 || mu0 <= 0.0 || alpha <= 0.0 || alpha >= 1.0 || T < 1)
            throw std::invalid_argument("ProjectionConfig: need s>0, mu0>0, 0<alpha<1, T>=1");
    }
};

// h reaches this level before the projection declares the output feasible.
inline constexpr double kFeasibilityTol = 1e-8;
inline constexpr int kMaxStepHalvings = 30;
inline constexpr int kMaxExtraAnnealRounds = 12;

namespace detail {

// One LU factorization of sI - W∘W yields both the log-det value and the
// inverse needed by the gradient.
struct HsEval {
    bool in_domain = false;
    double h = 0.0;
    Matrix lu;  // unpivoted LU factors (unit lower / upper) of sI - W∘W
};

// Domain membership is rho(W∘W) < s, not just det(sI - W∘W) > 0: with
// complex or negative eigenvalues the determinant can stay positive after
// the Perron root crosses s, where h turns negative and descent would chase
// h -> -inf. Since sI - W∘W is a Z-matrix, it is a nonsingular M-matrix
// (equivalently rho < s) iff every leading principal minor is positive, so
// an unpivoted LU doubles as the membership test: all pivots positive.
inline HsEval eval_h_s(const Matrix& w, double s) {
    HsEval out;
    const Eigen::Index p = w.rows();
    Matrix a = -w.cwiseProduct(w);
    a.diagonal().array() += s;
    double logdet = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) {
        const double pivot = a(k, k);
        if (!(pivot > 0.0) || !std::isfinite(pivot)) return out;
        logdet += std::log(pivot);
        const Eigen::Index r = p - k - 1;
        if (r > 0) {
            a.col(k).tail(r) /= pivot;
            a.bottomRightCorner(r, r).noalias() -= a.col(k).tail(r) * a.row(k).tail(r);
        }
    }
    out.lu = std::move(a);
    out.h = -logdet + static_cast<double>(p) * std::log(s);
    out.in_domain = true;
    return out;
}

inline Matrix grad_from_eval(const HsEval& eval, const Matrix& w) {
    const Eigen::Index p = w.rows();
    Matrix inv = Matrix::Identity(p, p);
    eval.lu.triangularView<Eigen::UnitLower>().solveInPlace(inv);
    eval.lu.triangularView<Eigen::Upper>().solveInPlace(inv);
    return 2.0 * inv.transpose().cwiseProduct(w);
}

}  // namespace detail

// h_s(W) = -log det(sI - W∘W) + p log s. Zero exactly on DAG supports within
// the domain rho(W∘W) < s.
inline double h_s(const Matrix& w, double s) {
    const auto eval = detail::eval_h_s(w, s);
    if (!eval.in_domain) throw std::domain_error("h_s: sI - W∘W has non-positive determinant");
    return eval.h;
}

// ∇h_s(W) = 2 (sI - W∘W)^{-T} ∘ W; zero diagonal is preserved automatically.
inline Matrix grad_h_s(const Matrix& w, double s) {
    const auto eval = detail::eval_h_s(w, s);
    if (!eval.in_domain) throw std::domain_error("grad_h_s: sI - W∘W is singular or indefinite");
    return detail::grad_from_eval(eval, w);
}

// Minimizes f(W) = mu/2 ||W~ - W||_F^2 + h_s(W) by fixed-step gradient
// descent. If a step leaves the domain or increases the objective, the step
// is halved and retried; exhausting the halvings on a domain escape is a
// solver failure, on an objective increase we are at the numerical floor.
inline Matrix inner_descent(const Matrix& w_init, const Matrix& w_tilde, double mu,
                            const ProjectionConfig& cfg) {
    cfg.validate();
    const Eigen::Index p = w_tilde.rows();
    const double cbar =
        cfg.step_constant > 0.0 ? cfg.step_constant : std::max<double>(1.0, static_cast<double>(p));
    const double base_step = 1.0 / cbar;

    Matrix w = w_init;
    w.diagonal().setZero();
    auto eval = detail::eval_h_s(w, cfg.s);
    if (!eval.in_domain) throw std::domain_error("inner_descent: initial point outside domain");
    double f = 0.5 * mu * (w_tilde - w).squaredNorm() + eval.h;

    // With an explicit step constant the step stays fixed at 1/c̄ (the
    // Lipschitz regime of the convergence theorem). Otherwise the step is
    // chosen spectrally (Barzilai-Borwein) from the last secant pair: near
    // flat minima of h (e.g. symmetric near-cycles) a fixed small step decays
    // the objective sublinearly, while the secant step tracks the local
    // curvature. Every step is still acceptance-checked, so descent stays
    // monotone either way.
    const bool spectral = cfg.step_constant <= 0.0;
    const double max_step = base_step * 1048576.0;
    double trial_step = base_step;
    int small_decreases = 0;
    Matrix w_prev, grad_prev;
    for (int k = 0; k < cfg.inner_max_iters; ++k) {
        const Matrix grad = mu * (w - w_tilde) + detail::grad_from_eval(eval, w);
        if (spectral && k > 0) {
            const Matrix dw = w - w_prev;
            const Matrix dg = grad - grad_prev;
            const double sg = dw.cwiseProduct(dg).sum();
            if (sg > 0.0)
                trial_step = std::clamp(dw.squaredNorm() / sg, 1e-6 * base_step, max_step);
        }
        if (spectral) {
            w_prev = w;
            grad_prev = grad;
        }
        double step = trial_step;
        Matrix w_next;
        detail::HsEval eval_next;
        double f_next = 0.0;
        bool accepted = false;
        bool floored = false;
        for (int halving = 0; halving <= kMaxStepHalvings; ++halving) {
            w_next = w - step * grad;
            eval_next = detail::eval_h_s(w_next, cfg.s);
            if (eval_next.in_domain) {
                f_next = 0.5 * mu * (w_tilde - w_next).squaredNorm() + eval_next.h;
                if (f_next <= f) {
                    accepted = true;
                    break;
                }
            }
            if (halving == kMaxStepHalvings) {
                if (!eval_next.in_domain)
                    throw std::runtime_error("inner_descent: iterate escaped the domain");
                floored = true;
            }
            step *= 0.5;
        }
        if (floored) break;
        trial_step = spectral ? std::min(step * 2.0, max_step) : base_step;
        const double decrease = f - f_next;
        w = std::move(w_next);
        eval = std::move(eval_next);
        f = f_next;
        // A single sub-tolerance decrease is not convergence: growth has to
        // run through its whole range first (near-flat quartic basins start
        // with vanishing decreases that double along with the step).
        if (accepted && decrease < cfg.inner_tol * (1.0 + std::abs(f))) {
            if (++small_decreases > 4) break;
        } else {
            small_decreases = 0;
        }
    }
    return w;
}

namespace detail {

// Zeroes the smallest cycle-closing entries until the support is a DAG
// (making h exactly zero). Entries above max_entry are never touched; returns
// false if a cycle cannot be broken within that budget. Each round finds the
// strongly connected components and drops the smallest in-component edge of
// every nontrivial component: an edge inside an SCC always lies on a cycle,
// and edges between components never do.
inline bool trim_to_dag(Matrix& w, double max_entry) {
    const int p = static_cast<int>(w.rows());
    std::vector<int> comp(p), low(p), num(p), state(p);
    std::vector<int> call, path;
    while (true) {
        // iterative Tarjan
        std::fill(state.begin(), state.end(), 0);
        std::fill(comp.begin(), comp.end(), -1);
        int counter = 0, ncomp = 0;
        for (int root = 0; root < p; ++root) {
            if (state[root] != 0) continue;
            call.assign(1, root);
            while (!call.empty()) {
                const int u = call.back();
                if (state[u] == 0) {
                    state[u] = 1;
                    num[u] = low[u] = counter++;
                    path.push_back(u);
                }
                bool descended = false;
                for (int v = 0; v < p && !descended; ++v) {
                    if (v == u || w(u, v) == 0.0) continue;
                    if (state[v] == 0) {
                        call.push_back(v);
                        descended = true;
                    } else if (comp[v] < 0) {
                        low[u] = std::min(low[u], num[v]);
                    }
                }
                if (descended) continue;
                call.pop_back();
                if (!call.empty()) low[call.back()] = std::min(low[call.back()], low[u]);
                if (low[u] == num[u]) {
                    while (true) {
                        const int v = path.back();
                        path.pop_back();
                        comp[v] = ncomp;
                        if (v == u) break;
                    }
                    ++ncomp;
                }
            }
        }
        // smallest in-component edge per component
        std::vector<int> bj(ncomp, -1), bk(ncomp, -1);
        std::vector<double> best(ncomp, max_entry);
        bool cyclic = false;
        for (int j = 0; j < p; ++j) {
            for (int k = 0; k < p; ++k) {
                if (j == k || w(j, k) == 0.0 || comp[j] != comp[k]) continue;
                cyclic = true;
                const double mag = std::abs(w(j, k));
                const int c = comp[j];
                if (mag <= best[c]) {
                    best[c] = mag;
                    bj[c] = j;
                    bk[c] = k;
                }
            }
        }
        if (!cyclic) return true;
        bool removed = false;
        for (int c = 0; c < ncomp; ++c) {
            if (bj[c] < 0) continue;
            w(bj[c], bk[c]) = 0.0;
            removed = true;
        }
        if (!removed) return false;
    }
}

// Decays mu from mu_start until h_s drops below tol (or the round cap hits).
inline Matrix anneal(Matrix w, const Matrix& w_tilde, double mu_start, const ProjectionConfig& cfg,
                     int rounds, bool to_tol) {
    ProjectionConfig inner_cfg = cfg;
    if (to_tol) inner_cfg.inner_tol = std::min(cfg.inner_tol, 1e-4 * kFeasibilityTol);
    double mu = mu_start;
    for (int t = 0; t < rounds; ++t) {
        w = inner_descent(w, w_tilde, mu, inner_cfg);
        mu *= cfg.alpha;
        if (to_tol && eval_h_s(w, cfg.s).h <= kFeasibilityTol) return w;
    }
    return w;
}

}  // namespace detail

// Path-following projection onto the log-det level set. Inputs are scaled to
// |w~_jk| <= 1, projected from W=0 over T annealing rounds, then annealed
// further until h_s <= 1e-8. The output is rescaled; if rescaling breaks
// feasibility (projection and scaling do not commute), the unscaled problem
// is re-solved from the rescaled point with the conservative step constant.
//
// An optional warm start (a feasible point from projecting a nearby input,
// e.g. the previous training epoch's output for the same observation) skips
// the cold annealing schedule: the proximal solve runs directly at the
// terminal mu from that point, falling back to the cold path if it fails to
// reach the tolerance.
inline Matrix project_logdet(const Matrix& w_tilde, const ProjectionConfig& cfg,
                             const Matrix* warm = nullptr) {
    cfg.validate();
    if (!w_tilde.allFinite()) throw std::invalid_argument("project_logdet: non-finite input");
    const Eigen::Index p = w_tilde.rows();
    const Matrix input = zeroed_diagonal(w_tilde);
    const auto input_eval = detail::eval_h_s(input, cfg.s);
    if (input_eval.in_domain && input_eval.h <= kFeasibilityTol) return input;
    const double scale = std::max(1.0, input.cwiseAbs().maxCoeff());
    const Matrix scaled = input / scale;
    const double mu_final = cfg.mu0 * std::pow(cfg.alpha, cfg.T);

    // Escalating cycle trim: the annealing can stall in a flat valley above
    // the tolerance, held up by small cycle-closing entries. Zeroing those
    // lands exactly on a DAG support (h = 0). The budget starts at 1% of the
    // input scale and escalates only as far as breaking the cycles requires.
    const auto trim = [&](Matrix& m) {
        double budget = 0.01 * scale;
        while (!detail::trim_to_dag(m, budget)) budget *= 2.0;
    };

    if (warm && warm->rows() == p && warm->cols() == p && warm->allFinite()) {
        // scale >= 1 shrinks the warm point, which preserves feasibility
        Matrix w_warm = *warm / scale;
        w_warm.diagonal().setZero();
        if (detail::eval_h_s(w_warm, cfg.s).in_domain) {
            // Tracking solve: the warm point is already near the solution, so
            // keep the budget small and let the trim close the feasibility gap.
            ProjectionConfig warm_cfg = cfg;
            warm_cfg.inner_max_iters = std::min(cfg.inner_max_iters, 80);
            warm_cfg.inner_tol = std::max(cfg.inner_tol, 1e-7);
            Matrix out = scale * inner_descent(w_warm, scaled, mu_final, warm_cfg);
            auto ev = detail::eval_h_s(out, cfg.s);
            if (!ev.in_domain || ev.h > kFeasibilityTol) {
                // the trim lands on a DAG support whether or not the rescale
                // kept the iterate inside the domain
                trim(out);
                ev = detail::eval_h_s(out, cfg.s);
            }
            if (ev.in_domain && ev.h <= kFeasibilityTol) return out;
            // rare: rescaling broke feasibility badly; re-solve cold
        }
    }

    Matrix w = detail::anneal(Matrix::Zero(p, p), scaled, cfg.mu0, cfg, cfg.T, false);
    if (detail::eval_h_s(w, cfg.s).h > kFeasibilityTol)
        w = detail::anneal(std::move(w), scaled, mu_final, cfg, kMaxExtraAnnealRounds, true);

    Matrix out = scale * w;
    auto out_eval = detail::eval_h_s(out, cfg.s);
    if (!out_eval.in_domain) {
        // Rescaling the solution left the domain: re-solve the unscaled
        // problem with the theorem's conservative step constant.
        ProjectionConfig conservative = cfg;
        conservative.step_constant = std::max(
            mu_final / 2.0, 2.0 * std::sqrt(static_cast<double>(p)) + 4.0 * p * input.norm());
        out = detail::anneal(Matrix::Zero(p, p), input, mu_final, conservative,
                             kMaxExtraAnnealRounds, true);
        out_eval = detail::eval_h_s(out, cfg.s);
    }
    if (out_eval.in_domain && out_eval.h > kFeasibilityTol) {
        trim(out);
        out_eval = detail::eval_h_s(out, cfg.s);
    }
    if (!out_eval.in_domain || out_eval.h > kFeasibilityTol)
        throw std::runtime_error("project_logdet: failed to reach the feasibility tolerance");
    return out;
}

inline AdjacencyBatch project_logdet_batch(const AdjacencyBatch& batch,
                                           const ProjectionConfig& cfg,
                                           const AdjacencyBatch* warm = nullptr) {
    AdjacencyBatch out(batch.size());
    std::vector<std::exception_ptr> errors(batch.size());
    const bool use_warm = warm && warm->size() == batch.size();
    parallel_for(batch.size(), [&](std::size_t i) {
        try {
            out[i] = project_logdet(batch[i], cfg, use_warm ? &(*warm)[i] : nullptr);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                throw std::runtime_error("project_logdet_batch: item " + std::to_string(i) + ": " +
                                         e.what());
            }
        }
    }
    return out;
}

}  // namespace ctxdag
