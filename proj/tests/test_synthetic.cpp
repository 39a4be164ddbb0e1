#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "ctxdag/synthetic.hpp"

using namespace ctxdag;

TEST_CASE("make_spec") {
    const auto spec = make_spec(6, 3, SkeletonKind::erdos_renyi, 10, 5.0, 42);
    CHECK(spec.centers.rows() == 6);
    CHECK(spec.centers.cols() == 3);
    CHECK(spec.centers.cwiseAbs().maxCoeff() <= 1.0);
    const auto again = make_spec(6, 3, SkeletonKind::erdos_renyi, 10, 5.0, 42);
    CHECK((spec.centers - again.centers).cwiseAbs().maxCoeff() == 0.0);
    const auto other = make_spec(6, 3, SkeletonKind::erdos_renyi, 10, 5.0, 43);
    CHECK((spec.centers - other.centers).cwiseAbs().maxCoeff() > 0.0);
    CHECK_THROWS_AS(make_spec(1, 3, SkeletonKind::erdos_renyi, 10, 5.0, 0),
                    std::invalid_argument);
}

TEST_CASE("sample_skeleton") {
    SUBCASE("p=5 with 10 edges is the complete graph") {
        const auto spec = make_spec(5, 2, SkeletonKind::erdos_renyi, 10, 5.0, 1);
        const auto edges = sample_skeleton(spec);
        REQUIRE(edges.size() == 10);
        std::set<std::pair<int, int>> got(edges.begin(), edges.end());
        for (int j = 0; j < 5; ++j)
            for (int k = j + 1; k < 5; ++k) CHECK(got.count({j, k}) == 1);
    }

    SUBCASE("edge count, dedup, canonical orientation, determinism") {
        for (auto kind : {SkeletonKind::erdos_renyi, SkeletonKind::scale_free}) {
            const auto spec = make_spec(12, 2, kind, 10, 5.0, 7);
            const auto edges = sample_skeleton(spec);
            CHECK(edges.size() == 10);
            std::set<std::pair<int, int>> got(edges.begin(), edges.end());
            CHECK(got.size() == 10);
            for (const auto& [j, k] : edges) {
                CHECK(j < k);
                CHECK(k < 12);
                CHECK(j >= 0);
            }
            const auto again = sample_skeleton(spec);
            CHECK(edges == again);
        }
    }

    SUBCASE("preferential attachment concentrates degree") {
        double sf_max = 0.0, er_max = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            for (auto kind : {SkeletonKind::erdos_renyi, SkeletonKind::scale_free}) {
                const auto spec = make_spec(30, 2, kind, 29, 5.0, seed);
                const auto edges = sample_skeleton(spec);
                std::vector<int> deg(30, 0);
                for (const auto& [j, k] : edges) {
                    ++deg[j];
                    ++deg[k];
                }
                const double mx = *std::max_element(deg.begin(), deg.end());
                (kind == SkeletonKind::scale_free ? sf_max : er_max) += mx;
            }
        }
        CHECK(sf_max > er_max);
    }

    SUBCASE("out-of-range edge budget throws") {
        const auto spec = make_spec(4, 2, SkeletonKind::erdos_renyi, 7, 5.0, 1);
        CHECK_THROWS_AS(sample_skeleton(spec), std::invalid_argument);
    }
}

TEST_CASE("orient_and_weight hand-traced") {
    GeneratorSpec spec;
    spec.p = 2;
    spec.m = 1;
    spec.centers = Matrix(2, 1);
    spec.centers << 0.0, 0.5;
    const UndirectedEdges skel{{0, 1}};
    Vector z(1);
    z << 0.4;
    // d0 = 0.4, d1 = 0.1, gap = 0.3: node 0 is farther, edge 0 -> 1
    spec.phi = 0.2;
    Matrix w = orient_and_weight(skel, spec, z);
    CHECK(w(0, 1) == doctest::Approx(0.3));
    CHECK(w(1, 0) == 0.0);
    spec.phi = 0.35;  // gap below the margin: edge dropped
    w = orient_and_weight(skel, spec, z);
    CHECK(w.cwiseAbs().maxCoeff() == 0.0);
    // flip sides: z near node 0
    spec.phi = 0.2;
    z << 0.05;
    w = orient_and_weight(skel, spec, z);
    CHECK(w(1, 0) == doctest::Approx(0.4));  // d1 = 0.45, d0 = 0.05
    CHECK(w(0, 1) == 0.0);
}

TEST_CASE("oriented graphs are acyclic and follow the distance order") {
    auto spec = make_spec(8, 3, SkeletonKind::erdos_renyi, 10, 5.0, 5);
    spec.phi = 0.1;
    const auto skel = sample_skeleton(spec);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vector z(3);
        for (int c = 0; c < 3; ++c) z(c) = unit(rng);
        const Matrix w = orient_and_weight(skel, spec, z);
        CHECK(is_acyclic(support(w)));
        // every edge weight exceeds the margin
        for (int j = 0; j < 8; ++j)
            for (int k = 0; k < 8; ++k)
                if (w(j, k) != 0.0) CHECK(w(j, k) > spec.phi);
        // edges point from farther to nearer: covered by the order's mask
        const Matrix mask = mask_from_order(distance_order(spec, z));
        CHECK((w.cwiseProduct(Matrix::Ones(8, 8) - mask)).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("calibrate_phi hits the target on held-out draws") {
    auto spec = make_spec(10, 5, SkeletonKind::erdos_renyi, 10, 5.0, 11);
    const auto skel = sample_skeleton(spec);
    spec.phi = calibrate_phi(spec, skel);
    CHECK(spec.phi >= 0.0);
    // independent Monte Carlo estimate of the mean active edge count
    std::mt19937_64 rng(0xD00D);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const int mc = 20000;
    long long active = 0;
    for (int i = 0; i < mc; ++i) {
        Vector z(5);
        for (int c = 0; c < 5; ++c) z(c) = unit(rng);
        const Matrix w = orient_and_weight(skel, spec, z);
        active += support(w).edges.size();
    }
    const double mean = static_cast<double>(active) / mc;
    CHECK(std::abs(mean - 5.0) < 0.3);
}

TEST_CASE("sampled observations satisfy the linear SEM") {
    auto spec = make_spec(4, 2, SkeletonKind::erdos_renyi, 6, 3.0, 21);
    const auto skel = sample_skeleton(spec);
    spec.phi = calibrate_phi(spec, skel);
    const int n = 4000;
    const auto [data, truth] = sample_dataset(spec, skel, n);
    CHECK(data.x.rows() == n);
    CHECK(data.z.cols() == 2);
    CHECK(data.z.cwiseAbs().maxCoeff() <= 1.0);
    // recovered noise eps_i = (I - W_i)^T x_i must be standard normal
    Matrix eps(n, 4);
    for (int i = 0; i < n; ++i) {
        eps.row(i) = ((Matrix::Identity(4, 4) - truth.w[i]).transpose() *
                      data.x.row(i).transpose())
                         .transpose();
        CHECK(is_acyclic(support(truth.w[i])));
    }
    for (int j = 0; j < 4; ++j) {
        const double mean = eps.col(j).mean();
        const double var = (eps.col(j).array() - mean).square().sum() / (n - 1);
        CHECK(std::abs(mean) < 0.08);
        CHECK(std::abs(var - 1.0) < 0.1);
    }
}

TEST_CASE("closed-form SEM solve for a single edge") {
    // with only w(0,1) = a: x0 = eps0, x1 = eps1 + a*eps0
    GeneratorSpec spec;
    spec.p = 2;
    spec.m = 1;
    spec.phi = 0.0;
    spec.centers = Matrix(2, 1);
    spec.centers << -1.0, 1.0;
    Matrix w = Matrix::Zero(2, 2);
    w(0, 1) = 0.7;
    Vector eps(2);
    eps << 0.3, -0.2;
    const Matrix a = (Matrix::Identity(2, 2) - w).transpose();
    const Vector x = a.partialPivLu().solve(eps);
    CHECK(x(0) == doctest::Approx(0.3));
    CHECK(x(1) == doctest::Approx(-0.2 + 0.7 * 0.3));
}

TEST_CASE("fixed dataset freezes one graph") {
    auto spec = make_spec(6, 2, SkeletonKind::erdos_renyi, 8, 4.0, 31);
    const auto skel = sample_skeleton(spec);
    spec.phi = calibrate_phi(spec, skel);
    const auto [data, truth] = sample_fixed_dataset(spec, skel, 50);
    for (int i = 1; i < 50; ++i) {
        CHECK((truth.w[i] - truth.w[0]).cwiseAbs().maxCoeff() == 0.0);
        CHECK(truth.order[i] == truth.order[0]);
    }
    // z still varies
    CHECK((data.z.row(0) - data.z.row(1)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("splits: shared graph-level draws, disjoint observation streams") {
    auto spec = make_spec(6, 2, SkeletonKind::erdos_renyi, 8, 4.0, 57);
    const auto skel = sample_skeleton(spec);
    spec.phi = calibrate_phi(spec, skel);

    const auto s0 = split_spec(spec, 0);
    const auto s1 = split_spec(spec, 1);
    CHECK(s0.seed == s1.seed);
    CHECK(s0.data_seed != s1.data_seed);
    CHECK(sample_skeleton(s0) == sample_skeleton(s1));
    CHECK((s0.centers - s1.centers).cwiseAbs().maxCoeff() == 0.0);

    const auto [d0, t0] = sample_dataset(s0, skel, 20);
    const auto [d1, t1] = sample_dataset(s1, skel, 20);
    CHECK((d0.z - d1.z).cwiseAbs().maxCoeff() > 0.0);
    // frozen fixed graph is shared across splits
    const auto [f0, ft0] = sample_fixed_dataset(s0, skel, 5);
    const auto [f1, ft1] = sample_fixed_dataset(s1, skel, 5);
    CHECK((ft0.w[0] - ft1.w[0]).cwiseAbs().maxCoeff() == 0.0);

    // full determinism of a split
    const auto [d0b, t0b] = sample_dataset(s0, skel, 20);
    CHECK((d0.x - d0b.x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((d0.z - d0b.z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sampling without calibration throws") {
    auto spec = make_spec(6, 2, SkeletonKind::erdos_renyi, 8, 4.0, 3);
    const auto skel = sample_skeleton(spec);
    CHECK_THROWS_AS(sample_dataset(spec, skel, 10), std::invalid_argument);
}
