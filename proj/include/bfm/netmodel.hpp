#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <queue>
#include <vector>

#include <Eigen/Sparse>

#include "bfm/common.hpp"

namespace bfm {

/// One bus of the network. Bounds are per-unit; voltage bounds are on the
/// squared magnitude. Shunt admittance is stored in the injection sign
/// convention (Gs + i Bs)/baseMVA, so a capacitor has positive imaginary part.
struct Bus {
    int id = 0;
    Complex shunt{0.0, 0.0};
    double v_min = 0.0, v_max = kInf;
    double pg_min = 0.0, pg_max = 0.0;
    double qg_min = 0.0, qg_max = 0.0;
    double pc_min = 0.0, pc_max = 0.0;
    double qc_min = 0.0, qc_max = 0.0;
    bool is_slack = false;

    // Coefficients of the power-balance rows: consumed shunt power is
    // conj(shunt) * v, so p picks up gs()*v and q picks up bq()*v.
    double gs() const { return shunt.real(); }
    double bq() const { return -shunt.imag(); }
};

struct Line {
    int from = 0, to = 0;
    Complex z{0.0, 0.0};
    double i_max = kInf;  // current magnitude limit, pu
    double s_max = kInf;  // apparent power limit, pu
    // Off-nominal turns ratio of an ideal transformer in series with z.
    // The squared-magnitude model sees it as a fixed scale on the tapped
    // terminal: v_term = scale * v_bus with scale = 1 / ratio^2.
    double tap = 1.0;
    bool tap_at_to = false;  // flipped lines carry the tap on their to side

    double r() const { return z.real(); }
    double x() const { return z.imag(); }
    Complex y() const { return 1.0 / z; }
    double from_scale() const { return tap_at_to ? 1.0 : 1.0 / (tap * tap); }
    double to_scale() const { return tap_at_to ? 1.0 / (tap * tap) : 1.0; }
};

/// Directed network graph. Buses are indexed 0..n with the slack at 0; the
/// underlying undirected graph must be connected.
struct Network {
    std::vector<Bus> buses;
    std::vector<Line> lines;
    double base_mva = 100.0;
    double slack_vm = 1.0;  // |V0|, pu
    std::vector<int> external_id;  // original bus numbers (empty if synthetic)

    int n_buses() const { return static_cast<int>(buses.size()); }
    int n_lines() const { return static_cast<int>(lines.size()); }
    // n in the reduced-incidence sense: buses are 0..n.
    int n() const { return n_buses() - 1; }
    int m() const { return n_lines(); }

    int ext_id(int bus) const {
        return external_id.empty() ? bus : external_id[bus];
    }

    std::vector<std::vector<std::pair<int, int>>> adjacency() const {
        // per bus: (line index, other endpoint)
        std::vector<std::vector<std::pair<int, int>>> adj(buses.size());
        for (int e = 0; e < n_lines(); ++e) {
            adj[lines[e].from].push_back({e, lines[e].to});
            adj[lines[e].to].push_back({e, lines[e].from});
        }
        return adj;
    }

    bool connected() const {
        if (buses.empty()) return false;
        auto adj = adjacency();
        std::vector<char> seen(buses.size(), 0);
        std::deque<int> q{0};
        seen[0] = 1;
        int count = 1;
        while (!q.empty()) {
            int u = q.front();
            q.pop_front();
            for (auto [e, v] : adj[u])
                if (!seen[v]) {
                    seen[v] = 1;
                    ++count;
                    q.push_back(v);
                }
        }
        return count == n_buses();
    }

    void validate() const {
        if (buses.empty()) throw Error("topology", "network has no buses");
        int slacks = 0;
        for (const auto& b : buses) slacks += b.is_slack ? 1 : 0;
        if (slacks != 1) throw Error("topology", "network must have exactly one slack bus");
        if (!buses[0].is_slack) throw Error("topology", "slack bus must be index 0");
        for (const auto& b : buses) {
            if (b.v_min > b.v_max || b.pg_min > b.pg_max || b.qg_min > b.qg_max ||
                b.pc_min > b.pc_max || b.qc_min > b.qc_max)
                throw Error("bounds", "bus " + std::to_string(b.id) + " has inverted bounds");
        }
        for (int e = 0; e < n_lines(); ++e) {
            const auto& l = lines[e];
            if (l.from == l.to) throw Error("topology", "line " + std::to_string(e) + " is a self-loop");
            if (l.from < 0 || l.from >= n_buses() || l.to < 0 || l.to >= n_buses())
                throw Error("topology", "line " + std::to_string(e) + " references missing bus");
            if (std::abs(l.z) <= 0.0)
                throw Error("bounds", "line " + std::to_string(e) + " has zero impedance");
        }
        if (!connected()) throw Error("topology", "network graph is disconnected");
    }
};

enum class TreeStrategy { MstByReactance, Bfs };

/// Spanning tree rooted at bus 0. tree_lines are listed in BFS order from the
/// root so parents always precede children; non_tree_lines keep ascending
/// line order. away_sign[b] is +1 when the tree line into bus b is stored
/// parent->b, -1 when stored b->parent.
struct SpanningTree {
    std::vector<int> tree_lines;
    std::vector<int> non_tree_lines;
    std::vector<int> parent;       // per bus, -1 at root
    std::vector<int> parent_line;  // per bus, -1 at root
    std::vector<int> bfs_order;    // root first
    std::vector<signed char> away_sign;  // per bus, 0 at root
    std::vector<int> row_of_line;  // line -> row in tree-first ordering
    std::vector<int> line_of_row;

    int n() const { return static_cast<int>(tree_lines.size()); }
    int m() const { return static_cast<int>(tree_lines.size() + non_tree_lines.size()); }
    bool is_tree_line(int e) const { return row_of_line[e] < n(); }
};

namespace detail {

// Roots a set of tree edges at bus 0 and fills the traversal arrays.
inline SpanningTree root_tree(const Network& net, const std::vector<char>& in_tree) {
    const int nb = net.n_buses();
    SpanningTree t;
    t.parent.assign(nb, -1);
    t.parent_line.assign(nb, -1);
    t.away_sign.assign(nb, 0);
    auto adj = net.adjacency();
    std::vector<char> seen(nb, 0);
    std::deque<int> q{0};
    seen[0] = 1;
    t.bfs_order.push_back(0);
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (auto [e, v] : adj[u]) {
            if (!in_tree[e] || seen[v]) continue;
            seen[v] = 1;
            t.parent[v] = u;
            t.parent_line[v] = e;
            t.away_sign[v] = (net.lines[e].from == u) ? +1 : -1;
            t.bfs_order.push_back(v);
            t.tree_lines.push_back(e);
            q.push_back(v);
        }
    }
    if (static_cast<int>(t.bfs_order.size()) != nb)
        throw Error("topology", "spanning tree does not reach every bus");
    std::vector<char> used(net.n_lines(), 0);
    for (int e : t.tree_lines) used[e] = 1;
    for (int e = 0; e < net.n_lines(); ++e)
        if (!used[e]) t.non_tree_lines.push_back(e);
    t.row_of_line.assign(net.n_lines(), -1);
    t.line_of_row.assign(net.n_lines(), -1);
    int row = 0;
    for (int e : t.tree_lines) { t.row_of_line[e] = row; t.line_of_row[row] = e; ++row; }
    for (int e : t.non_tree_lines) { t.row_of_line[e] = row; t.line_of_row[row] = e; ++row; }
    return t;
}

}  // namespace detail

inline SpanningTree spanning_tree(const Network& net, TreeStrategy strategy) {
    if (!net.connected()) throw Error("topology", "network graph is disconnected");
    const int nb = net.n_buses();
    std::vector<char> in_tree(net.n_lines(), 0);
    if (strategy == TreeStrategy::Bfs) {
        auto adj = net.adjacency();
        std::vector<char> seen(nb, 0);
        std::deque<int> q{0};
        seen[0] = 1;
        while (!q.empty()) {
            int u = q.front();
            q.pop_front();
            for (auto [e, v] : adj[u])
                if (!seen[v]) {
                    seen[v] = 1;
                    in_tree[e] = 1;
                    q.push_back(v);
                }
        }
    } else {
        // Kruskal on |x| with smallest line index breaking ties.
        std::vector<int> order(net.n_lines());
        for (int e = 0; e < net.n_lines(); ++e) order[e] = e;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return std::abs(net.lines[a].x()) < std::abs(net.lines[b].x());
        });
        std::vector<int> root(nb);
        for (int i = 0; i < nb; ++i) root[i] = i;
        auto find = [&](int a) {
            while (root[a] != a) { root[a] = root[root[a]]; a = root[a]; }
            return a;
        };
        int picked = 0;
        for (int e : order) {
            int a = find(net.lines[e].from), b = find(net.lines[e].to);
            if (a == b) continue;
            root[a] = b;
            in_tree[e] = 1;
            if (++picked == nb - 1) break;
        }
    }
    return detail::root_tree(net, in_tree);
}

/// Reduced transposed incidence matrix in tree-first row order. Entries are
/// exact +-1; column i-1 corresponds to bus i (the slack column is dropped).
struct IncidenceMatrices {
    Eigen::SparseMatrix<double> B;       // m x n
    Eigen::SparseMatrix<double> B_tree;  // n x n
    Eigen::SparseMatrix<double> B_perp;  // (m-n) x n
    SpanningTree tree;
    int n = 0, m = 0;
};

inline IncidenceMatrices incidence_matrix(const Network& net, const SpanningTree& tree) {
    net.validate();
    if (tree.m() != net.n_lines() || tree.n() != net.n())
        throw Error("topology", "spanning tree does not match network");
    IncidenceMatrices out;
    out.tree = tree;
    out.n = net.n();
    out.m = net.m();
    std::vector<Eigen::Triplet<double>> tb, tt, tp;
    for (int e = 0; e < net.m(); ++e) {
        int row = tree.row_of_line[e];
        const Line& l = net.lines[e];
        if (l.from >= 1) tb.emplace_back(row, l.from - 1, +1.0);
        if (l.to >= 1) tb.emplace_back(row, l.to - 1, -1.0);
        if (row < out.n) {
            if (l.from >= 1) tt.emplace_back(row, l.from - 1, +1.0);
            if (l.to >= 1) tt.emplace_back(row, l.to - 1, -1.0);
        } else {
            if (l.from >= 1) tp.emplace_back(row - out.n, l.from - 1, +1.0);
            if (l.to >= 1) tp.emplace_back(row - out.n, l.to - 1, -1.0);
        }
    }
    out.B.resize(out.m, out.n);
    out.B.setFromTriplets(tb.begin(), tb.end());
    out.B_tree.resize(out.n, out.n);
    out.B_tree.setFromTriplets(tt.begin(), tt.end());
    out.B_perp.resize(out.m - out.n, out.n);
    out.B_perp.setFromTriplets(tp.begin(), tp.end());
    return out;
}

/// Solves B_T theta = beta_T by the root-to-node path recursion, O(n).
/// beta_tree is indexed by tree row (0..n-1); the result is indexed by bus-1.
inline Eigen::VectorXd tree_solve(const SpanningTree& tree, const Eigen::VectorXd& beta_tree) {
    if (beta_tree.size() != tree.n()) throw Error("dim", "tree_solve: wrong beta size");
    Eigen::VectorXd theta(tree.n());
    std::vector<double> by_bus(tree.n() + 1, 0.0);
    for (int bus : tree.bfs_order) {
        if (bus == 0) continue;
        int e = tree.parent_line[bus];
        double step = tree.away_sign[bus] * beta_tree(tree.row_of_line[e]);
        by_bus[bus] = by_bus[tree.parent[bus]] - step;
        theta(bus - 1) = by_bus[bus];
    }
    return theta;
}

/// One basis cycle: the tree path chord.from ~> chord.to closed by the chord
/// traversed against its orientation. edges holds (line index, sign) with
/// sign +1 when the traversal matches the stored line direction.
struct Cycle {
    int chord = -1;
    std::vector<std::pair<int, int>> edges;
};

inline std::vector<Cycle> cycle_basis(const Network& net, const SpanningTree& tree) {
    std::vector<Cycle> cycles;
    const int nb = net.n_buses();
    std::vector<int> depth(nb, 0);
    for (int bus : tree.bfs_order)
        if (bus != 0) depth[bus] = depth[tree.parent[bus]] + 1;
    for (int e : tree.non_tree_lines) {
        Cycle c;
        c.chord = e;
        int a = net.lines[e].from, b = net.lines[e].to;
        // climb to the common ancestor, collecting both half-paths
        std::vector<std::pair<int, int>> down;  // b-side, to be reversed
        std::vector<std::pair<int, int>> up;    // a-side
        int ua = a, ub = b;
        while (depth[ua] > depth[ub]) {
            int pl = tree.parent_line[ua];
            up.emplace_back(pl, net.lines[pl].to == ua ? -1 : +1);
            ua = tree.parent[ua];
        }
        while (depth[ub] > depth[ua]) {
            int pl = tree.parent_line[ub];
            down.emplace_back(pl, net.lines[pl].to == ub ? +1 : -1);
            ub = tree.parent[ub];
        }
        while (ua != ub) {
            int pl = tree.parent_line[ua];
            up.emplace_back(pl, net.lines[pl].to == ua ? -1 : +1);
            ua = tree.parent[ua];
            pl = tree.parent_line[ub];
            down.emplace_back(pl, net.lines[pl].to == ub ? +1 : -1);
            ub = tree.parent[ub];
        }
        c.edges = std::move(up);
        c.edges.insert(c.edges.end(), down.rbegin(), down.rend());
        c.edges.emplace_back(e, -1);
        cycles.push_back(std::move(c));
    }
    return cycles;
}

}  // namespace bfm
