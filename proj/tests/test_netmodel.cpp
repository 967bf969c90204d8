#include <catch2/catch_amalgamated.hpp>

#include <Eigen/SparseLU>

#include "bfm/netmodel.hpp"
#include "support/test_networks.hpp"

using namespace bfm;
using Catch::Approx;

namespace {

Eigen::MatrixXd dense(const Eigen::SparseMatrix<double>& s) { return Eigen::MatrixXd(s); }

// signed entry recount straight from the edge list
double recount_entry(const Network& net, const SpanningTree& tree, int row, int col) {
    int e = tree.line_of_row[row];
    int bus = col + 1;
    double v = 0.0;
    if (net.lines[e].from == bus) v += 1.0;
    if (net.lines[e].to == bus) v -= 1.0;
    return v;
}

}  // namespace

TEST_CASE("incidence matrix on a path") {
    Network net = testsup::path3();
    auto tree = spanning_tree(net, TreeStrategy::Bfs);
    auto mats = incidence_matrix(net, tree);
    REQUIRE(mats.n == 2);
    REQUIRE(mats.m == 2);
    Eigen::MatrixXd B = dense(mats.B);
    REQUIRE(B(0, 0) == -1.0);
    REQUIRE(B(0, 1) == 0.0);
    REQUIRE(B(1, 0) == 1.0);
    REQUIRE(B(1, 1) == -1.0);
    REQUIRE(mats.B_perp.rows() == 0);
    REQUIRE((dense(mats.B_tree) - B).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("incidence matrix on the triangle") {
    Network net = testsup::triangle();
    auto tree = spanning_tree(net, TreeStrategy::MstByReactance);
    REQUIRE(tree.tree_lines == std::vector<int>{0, 1});
    REQUIRE(tree.non_tree_lines == std::vector<int>{2});
    auto mats = incidence_matrix(net, tree);
    Eigen::MatrixXd BT = dense(mats.B_tree), BP = dense(mats.B_perp);
    REQUIRE(BT(0, 0) == -1.0);
    REQUIRE(BT(0, 1) == 0.0);
    REQUIRE(BT(1, 0) == 1.0);
    REQUIRE(BT(1, 1) == -1.0);
    REQUIRE(BP(0, 0) == 0.0);
    REQUIRE(BP(0, 1) == -1.0);
}

TEST_CASE("incidence entries match a brute-force recount") {
    for (unsigned seed : {1u, 2u, 3u, 4u, 5u}) {
        Network net = testsup::random_connected(seed, 8, 4);
        auto tree = spanning_tree(net, TreeStrategy::Bfs);
        auto mats = incidence_matrix(net, tree);
        Eigen::MatrixXd B = dense(mats.B);
        for (int r = 0; r < mats.m; ++r)
            for (int c = 0; c < mats.n; ++c)
                REQUIRE(B(r, c) == recount_entry(net, tree, r, c));
    }
}

TEST_CASE("spanning tree of a radial network uses every line") {
    Network net = testsup::random_radial(7, 12);
    auto tree = spanning_tree(net, TreeStrategy::MstByReactance);
    REQUIRE(tree.non_tree_lines.empty());
    REQUIRE(static_cast<int>(tree.tree_lines.size()) == net.n());
}

TEST_CASE("MST by reactance picks the light lines of the triangle") {
    Network net = testsup::triangle(0.1, 0.1, 0.5);
    auto tree = spanning_tree(net, TreeStrategy::MstByReactance);
    REQUIRE(tree.non_tree_lines == std::vector<int>{2});
}

TEST_CASE("spanning tree on a disconnected graph fails") {
    Network net = testsup::path3();
    net.buses.push_back(net.buses.back());
    net.buses.back().id = 3;
    net.buses.back().is_slack = false;
    REQUIRE_THROWS_AS(spanning_tree(net, TreeStrategy::Bfs), Error);
}

TEST_CASE("cycle basis") {
    SECTION("radial network has none") {
        Network net = testsup::path3();
        auto tree = spanning_tree(net, TreeStrategy::Bfs);
        REQUIRE(cycle_basis(net, tree).empty());
    }
    SECTION("triangle basis cycle matches hand orientation") {
        Network net = testsup::triangle();
        auto tree = spanning_tree(net, TreeStrategy::MstByReactance);
        auto cycles = cycle_basis(net, tree);
        REQUIRE(cycles.size() == 1);
        const auto& c = cycles[0];
        REQUIRE(c.chord == 2);
        std::vector<std::pair<int, int>> expect{{0, +1}, {1, +1}, {2, -1}};
        REQUIRE(c.edges == expect);
    }
    SECTION("cardinality is m - n") {
        for (unsigned seed : {11u, 12u, 13u}) {
            Network net = testsup::random_connected(seed, 9, 5);
            auto tree = spanning_tree(net, TreeStrategy::MstByReactance);
            REQUIRE(cycle_basis(net, tree).size() == static_cast<size_t>(net.m() - net.n()));
        }
    }
}

TEST_CASE("tree_solve equals a sparse direct solve of B_T") {
    for (unsigned seed : {21u, 22u, 23u, 24u}) {
        Network net = testsup::random_connected(seed, 10, 4);
        for (auto strat : {TreeStrategy::Bfs, TreeStrategy::MstByReactance}) {
            auto tree = spanning_tree(net, strat);
            auto mats = incidence_matrix(net, tree);
            Eigen::VectorXd beta = testsup::random_beta(seed * 31, net.n());
            Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(mats.B_tree);
            REQUIRE(lu.info() == Eigen::Success);
            Eigen::VectorXd direct = lu.solve(beta);
            Eigen::VectorXd via_tree = tree_solve(tree, beta);
            REQUIRE((direct - via_tree).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("B_T inverse has the path structure on away-from-root orientations") {
    // to_network's BFS orientation guarantees every tree line of the BFS tree
    // points away from the root, so columns of B_T^-1 live in {0, -1}.
    Network net = testsup::random_radial(33, 9);
    auto tree = spanning_tree(net, TreeStrategy::Bfs);
    auto mats = incidence_matrix(net, tree);
    for (int i = 0; i < net.n(); ++i) {
        Eigen::VectorXd unit = Eigen::VectorXd::Zero(net.n());
        unit(i) = 1.0;
        Eigen::VectorXd col = tree_solve(tree, unit);
        for (int k = 0; k < net.n(); ++k) {
            double v = col(k);
            REQUIRE((v == 0.0 || v == -1.0));
        }
    }
}

TEST_CASE("basis-cycle sums match the incidence algebra") {
    for (unsigned seed : {41u, 42u, 43u, 44u, 45u}) {
        Network net = testsup::random_connected(seed, 10, 5);
        auto tree = spanning_tree(net, TreeStrategy::MstByReactance);
        auto mats = incidence_matrix(net, tree);
        auto cycles = cycle_basis(net, tree);
        Eigen::VectorXd beta = testsup::random_beta(seed, net.m());

        Eigen::VectorXd beta_tree(net.n());
        for (int row = 0; row < net.n(); ++row) beta_tree(row) = beta(tree.line_of_row[row]);
        Eigen::VectorXd theta = tree_solve(tree, beta_tree);
        Eigen::VectorXd implied = mats.B_perp * theta;  // B_perp B_T^-1 beta_T

        for (size_t k = 0; k < cycles.size(); ++k) {
            double cycle_sum = 0.0;
            for (auto [line, sign] : cycles[k].edges) cycle_sum += sign * beta(line);
            int chord = cycles[k].chord;
            double delta = beta(chord) - implied(tree.row_of_line[chord] - net.n());
            // the cycle runs path(+), chord(-): its sum is the negated mismatch
            REQUIRE(wrap_angle(cycle_sum + delta) == Approx(0.0).margin(1e-12));
            REQUIRE(std::abs(cycle_sum + delta) < 1e-9);
        }
    }
}
