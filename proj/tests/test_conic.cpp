#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "bfm/conic.hpp"
#include "support/conic_oracles.hpp"

using namespace bfm;
using Catch::Approx;

namespace {

ConicProblem make_problem(const Eigen::VectorXd& c, const Eigen::MatrixXd& A,
                          const Eigen::VectorXd& b, ConeSpec cones) {
    ConicProblem prob;
    prob.c = c;
    prob.A = A.sparseView();
    prob.b = b;
    prob.cones = std::move(cones);
    return prob;
}

// strictly feasible random SOCP: x0 interior primal, (y0, z0 interior) dual
ConicProblem random_socp(unsigned seed, int n_lp, std::vector<int> soc_dims, int p) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ConeSpec cones;
    if (n_lp > 0) cones.blocks.push_back({ConeKind::Nonnegative, n_lp});
    for (int d : soc_dims) cones.blocks.push_back({ConeKind::SecondOrder, d});
    int n = cones.total_dim();
    Eigen::MatrixXd A(p, n);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = gauss(rng);
    auto interior = [&](Eigen::VectorXd& v) {
        for (int i = 0; i < n; ++i) v(i) = gauss(rng);
        int at = 0;
        for (auto& blk : cones.blocks) {
            if (blk.kind == ConeKind::Nonnegative)
                v.segment(at, blk.dim) = v.segment(at, blk.dim).cwiseAbs().array() + 0.5;
            else
                v(at) = v.segment(at + 1, blk.dim - 1).norm() + 0.5 + std::abs(v(at));
            at += blk.dim;
        }
    };
    Eigen::VectorXd x0(n), z0(n), y0(p);
    interior(x0);
    interior(z0);
    for (int i = 0; i < p; ++i) y0(i) = gauss(rng);
    Eigen::VectorXd b = A * x0;
    Eigen::VectorXd c = A.transpose() * y0 + z0;
    return make_problem(c, A, b, cones);
}

}  // namespace

TEST_CASE("analytic second-order cone minimum") {
    // min x0 s.t. (x0, 3, 4) in SOC3  ->  x0* = 5
    Eigen::VectorXd c(3);
    c << 1, 0, 0;
    Eigen::MatrixXd A(2, 3);
    A << 0, 1, 0, 0, 0, 1;
    Eigen::VectorXd b(2);
    b << 3, 4;
    auto sol = solve(make_problem(c, A, b, {{{ConeKind::SecondOrder, 3}}}));
    REQUIRE(sol.status == SolveStatus::Optimal);
    REQUIRE(sol.objective == Approx(5.0).margin(1e-6));
    REQUIRE(sol.x(0) == Approx(5.0).margin(1e-6));
    REQUIRE(sol.primal_residual < 1e-8);
    REQUIRE(sol.dual_residual < 1e-8);
    REQUIRE(sol.gap < 1e-7);
}

TEST_CASE("analytic rotated cone minimum") {
    // min t s.t. (t, v, 3, 4) rotated with v = 5 fixed; t v >= 25 forces t* = 5
    Eigen::VectorXd c(4);
    c << 1, 0, 0, 0;
    Eigen::MatrixXd A(3, 4);
    A << 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1;
    Eigen::VectorXd b(3);
    b << 5, 3, 4;
    auto sol = solve(make_problem(c, A, b, {{{ConeKind::RotatedSecondOrder, 4}}}));
    REQUIRE(sol.status == SolveStatus::Optimal);
    REQUIRE(sol.objective == Approx(5.0).margin(1e-6));
    REQUIRE(cone_violation(ConeSpec{{{ConeKind::RotatedSecondOrder, 4}}}, sol.x) < 1e-7);
}

TEST_CASE("degenerate LP") {
    Eigen::VectorXd c(2);
    c << 1, 1;
    Eigen::MatrixXd A(1, 2);
    A << 1, 1;
    Eigen::VectorXd b(1);
    b << 1;
    auto sol = solve(make_problem(c, A, b, {{{ConeKind::Nonnegative, 2}}}));
    REQUIRE(sol.status == SolveStatus::Optimal);
    REQUIRE(sol.objective == Approx(1.0).margin(1e-7));
}

TEST_CASE("rotated_to_soc examples") {
    SECTION("boundary point") {
        auto v = rotated_to_soc({1, 25, 3, 4});
        REQUIRE(v == std::vector<double>{26, -24, 6, 8});
        double norm = std::sqrt(24.0 * 24 + 6 * 6 + 8 * 8);
        REQUIRE(norm == Approx(26.0));
    }
    SECTION("interior point") {
        auto v = rotated_to_soc({2, 25, 3, 4});
        REQUIRE(v == std::vector<double>{27, -23, 6, 8});
        double norm = std::sqrt(23.0 * 23 + 6 * 6 + 8 * 8);
        REQUIRE(norm == Approx(std::sqrt(629.0)));
        REQUIRE(norm < 27.0);
    }
    SECTION("zero-flow line") {
        auto v = rotated_to_soc({0, 1, 0, 0});
        REQUIRE(v == std::vector<double>{1, -1, 0, 0});
    }
}

TEST_CASE("zero cone variables are pinned") {
    // min x1 s.t. x0 + x1 = 1, x0 in {0}, x1 >= 0
    Eigen::VectorXd c(2);
    c << 0, 1;
    Eigen::MatrixXd A(1, 2);
    A << 1, 1;
    Eigen::VectorXd b(1);
    b << 1;
    auto sol = solve(make_problem(c, A, b, {{{ConeKind::Zero, 1}, {ConeKind::Nonnegative, 1}}}));
    REQUIRE(sol.status == SolveStatus::Optimal);
    REQUIRE(sol.x(0) == 0.0);
    REQUIRE(sol.x(1) == Approx(1.0).margin(1e-7));
}

TEST_CASE("infeasible and unbounded probes") {
    SECTION("primal infeasible, sign conflict") {
        Eigen::VectorXd c(1);
        c << 1;
        Eigen::MatrixXd A(1, 1);
        A << 1;
        Eigen::VectorXd b(1);
        b << -1;
        auto sol = solve(make_problem(c, A, b, {{{ConeKind::Nonnegative, 1}}}));
        REQUIRE(sol.status == SolveStatus::PrimalInfeasible);
    }
    SECTION("primal infeasible, two rows") {
        Eigen::VectorXd c(2);
        c << 0, 0;
        Eigen::MatrixXd A(2, 2);
        A << 1, 1, 1, -1;
        Eigen::VectorXd b(2);
        b << 1, 3;  // forces x = (2, -1)
        auto sol = solve(make_problem(c, A, b, {{{ConeKind::Nonnegative, 2}}}));
        REQUIRE(sol.status == SolveStatus::PrimalInfeasible);
    }
    SECTION("unbounded (dual infeasible)") {
        Eigen::VectorXd c(1);
        c << -1;
        Eigen::MatrixXd A(0, 1);
        Eigen::VectorXd b(0);
        auto sol = solve(make_problem(c, A, b, {{{ConeKind::Nonnegative, 1}}}));
        REQUIRE(sol.status == SolveStatus::DualInfeasible);
    }
}

TEST_CASE("max_iter returns the best iterate") {
    SolverOptions opt;
    opt.max_iter = 1;
    auto prob = random_socp(5, 4, {3}, 3);
    auto sol = solve(prob, opt);
    REQUIRE(sol.status == SolveStatus::MaxIter);
    REQUIRE(sol.iterations <= 1);
}

TEST_CASE("duplicate rows are removed, conflicting ones are infeasible") {
    Eigen::VectorXd c(2);
    c << 1, 2;
    Eigen::MatrixXd A(2, 2);
    A << 1, 1, 1, 1;
    SECTION("exact duplicate") {
        Eigen::VectorXd b(2);
        b << 1, 1;
        auto sol = solve(make_problem(c, A, b, {{{ConeKind::Nonnegative, 2}}}));
        REQUIRE(sol.status == SolveStatus::Optimal);
        REQUIRE(sol.objective == Approx(1.0).margin(1e-7));
    }
    SECTION("conflict") {
        Eigen::VectorXd b(2);
        b << 1, 2;
        auto sol = solve(make_problem(c, A, b, {{{ConeKind::Nonnegative, 2}}}));
        REQUIRE(sol.status == SolveStatus::PrimalInfeasible);
    }
}

TEST_CASE("determinism") {
    auto prob = random_socp(17, 5, {4, 3}, 6);
    auto s1 = solve(prob);
    auto s2 = solve(prob);
    REQUIRE(s1.status == s2.status);
    REQUIRE((s1.x - s2.x).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(s1.objective == s2.objective);
}

TEST_CASE("scaling the objective leaves the argmin") {
    auto prob = random_socp(23, 4, {3}, 4);
    auto s1 = solve(prob);
    ConicProblem scaled = prob;
    scaled.c *= 7.0;
    auto s2 = solve(scaled);
    REQUIRE(s1.status == SolveStatus::Optimal);
    REQUIRE(s2.status == SolveStatus::Optimal);
    REQUIRE((s1.x - s2.x).cwiseAbs().maxCoeff() < 2e-6);
    REQUIRE(s2.objective == Approx(7.0 * s1.objective).epsilon(1e-6));
}

TEST_CASE("random strictly feasible corpus: certificates and oracles") {
    for (unsigned seed = 1; seed <= 10; ++seed) {
        ConicProblem prob;
        bool lp_only = (seed % 3 == 0);
        if (lp_only)
            prob = random_socp(seed, 8, {}, 4);
        else
            prob = random_socp(seed, 4, {3, 4}, 5);
        auto sol = solve(prob);
        INFO("seed " << seed);
        REQUIRE(sol.status == SolveStatus::Optimal);
        REQUIRE(sol.primal_residual <= 1e-8);
        REQUIRE(sol.dual_residual <= 1e-8);
        REQUIRE(sol.gap <= 1e-7);
        REQUIRE(cone_violation(prob.cones, sol.x) <= 1e-8);
        REQUIRE(cone_violation(prob.cones, sol.z) <= 1e-8);
        // weak duality, recomputed from raw data
        double ctx = prob.c.dot(sol.x), bty = prob.b.dot(sol.y);
        REQUIRE(ctx - bty >= -1e-6 * std::max(1.0, std::abs(ctx)));
        if (lp_only) {
            double exact = testsup::lp_vertex_optimum(prob.c, Eigen::MatrixXd(prob.A), prob.b);
            REQUIRE(sol.objective == Approx(exact).epsilon(1e-7).margin(1e-7));
            // Polyak subgradient converges linearly on sharp (polyhedral) minima
            double sub = testsup::subgradient_objective(prob, sol.objective, 1000000, 2.0 * sol.y.norm() + 2.0);
            REQUIRE(sub == Approx(sol.objective).epsilon(1e-5).margin(1e-5));
        } else {
            // on curved cones the subgradient oracle is slow; it still bounds
            // the optimum from above and must not undercut the solver
            double sub = testsup::subgradient_objective(prob, sol.objective, 50000);
            REQUIRE(sub >= sol.objective - 1e-5 * std::max(1.0, std::abs(sol.objective)));
            REQUIRE(sub == Approx(sol.objective).epsilon(0.5).margin(0.5));
        }
    }
}

TEST_CASE("rotated route agrees with the hand-rotated problem") {
    // min c'x with one rotated block, versus the same data rotated by hand
    unsigned seed = 99;
    std::mt19937 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    int d = 4, p = 3;
    Eigen::MatrixXd A(p, d);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = gauss(rng);
    Eigen::VectorXd x0(d);
    x0 << 2.0, 3.0, 1.0, -1.5;  // 2*3 = 6 >= 1 + 2.25
    Eigen::VectorXd b = A * x0;
    Eigen::VectorXd c(d);
    c << 1.0, 1.0, 0.2, -0.1;
    auto rsoc = solve(make_problem(c, A, b, {{{ConeKind::RotatedSecondOrder, 4}}}));

    // x = M xs with M = [[1,1],[1,-1]] (+) I maps soc vars to rotated vars
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(d, d);
    M(0, 0) = 1; M(0, 1) = 1; M(1, 0) = 1; M(1, 1) = -1;
    auto soc = solve(make_problem(M.transpose() * c, A * M, b, {{{ConeKind::SecondOrder, 4}}}));
    REQUIRE(rsoc.status == SolveStatus::Optimal);
    REQUIRE(soc.status == SolveStatus::Optimal);
    REQUIRE(rsoc.objective == Approx(soc.objective).epsilon(1e-6));
}

TEST_CASE("problem dump is readable text") {
    auto prob = random_socp(3, 2, {3}, 2);
    std::ostringstream os;
    dump_problem(prob, os);
    std::string s = os.str();
    REQUIRE(s.find("conic-problem v1") == 0);
    REQUIRE(s.find("cones") != std::string::npos);
    REQUIRE(s.find("soc 3") != std::string::npos);
}
