#pragma once

#include <vector>

#include "bfm/netmodel.hpp"

namespace bfm {

struct SweepResult {
    bool converged = false;
    int iterations = 0;
    std::vector<Complex> V;  // per bus
    std::vector<Complex> S;  // per line, sending end
    std::vector<Complex> I;  // per line
    double mismatch = kInf;
    bool monotone_after_warmup = true;  // mismatch decreased after iteration 3
};

/// Forward-backward sweep power flow on a radial network with fixed complex
/// injections at the non-slack buses (generation minus load, per-unit).
/// Flat start at the slack voltage. Bus shunts join the aggregated demand of
/// each backward pass.
inline SweepResult sweep_power_flow(const Network& net, const std::vector<Complex>& injections,
                                    double tol = 1e-10, int max_iter = 100) {
    if (net.m() != net.n()) throw Error("topology", "sweep_power_flow needs a radial network");
    if (static_cast<int>(injections.size()) != net.n_buses())
        throw Error("dim", "one injection per bus expected (slack entry ignored)");
    net.validate();
    SpanningTree tree = spanning_tree(net, TreeStrategy::Bfs);

    const int nb = net.n_buses();
    SweepResult out;
    out.V.assign(nb, Complex(net.slack_vm, 0.0));
    out.S.assign(net.m(), Complex(0.0, 0.0));
    out.I.assign(net.m(), Complex(0.0, 0.0));

    std::vector<Complex> branch_current(net.m());
    double prev_mismatch = kInf;
    int grow_streak = 0;
    for (int it = 1; it <= max_iter; ++it) {
        // backward: aggregate currents from the leaves towards the root
        std::fill(branch_current.begin(), branch_current.end(), Complex(0, 0));
        for (int k = nb - 1; k >= 1; --k) {
            int bus = tree.bfs_order[k];
            const Bus& b = net.buses[bus];
            Complex consumed = -injections[bus] + std::conj(b.shunt) * std::norm(out.V[bus]);
            Complex draw = std::conj(consumed / out.V[bus]);
            for (int e = 0; e < net.m(); ++e)
                if (net.lines[e].from == bus) draw += branch_current[e];
            branch_current[tree.parent_line[bus]] = draw;
        }
        // forward: propagate voltages from the root
        for (int k = 1; k < nb; ++k) {
            int bus = tree.bfs_order[k];
            int e = tree.parent_line[bus];
            out.V[bus] = out.V[tree.parent[bus]] - net.lines[e].z * branch_current[e];
        }
        for (int e = 0; e < net.m(); ++e) {
            out.I[e] = branch_current[e];
            out.S[e] = out.V[net.lines[e].from] * std::conj(out.I[e]);
        }
        // mismatch: power balance residual at every non-slack bus
        double mis = 0.0;
        for (int bus = 1; bus < nb; ++bus) {
            const Bus& b = net.buses[bus];
            Complex acc = std::conj(b.shunt) * std::norm(out.V[bus]) - injections[bus];
            for (int e = 0; e < net.m(); ++e) {
                const Line& ln = net.lines[e];
                if (ln.from == bus) acc += out.S[e];
                if (ln.to == bus) acc -= out.S[e] - net.lines[e].z * std::norm(out.I[e]);
            }
            mis = std::max(mis, std::abs(acc));
        }
        out.mismatch = mis;
        out.iterations = it;
        if (it > 3 && mis > prev_mismatch) {
            out.monotone_after_warmup = false;
            if (++grow_streak >= 10) break;  // divergence
        } else {
            grow_streak = 0;
        }
        prev_mismatch = mis;
        if (mis <= tol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

/// Desk-scale oracle for the angle recovery verdict: walks every basis cycle
/// straight off the edge list (tree paths found by breadth-first search, no
/// incidence algebra) and checks the signed angle sums mod 2 pi.
inline bool brute_force_recovery(const Eigen::VectorXd& beta, const Network& net,
                                 double tol = 1e-6) {
    if (net.n() > 12) throw Error("size", "brute_force_recovery caps at 13 buses");
    net.validate();
    const int nb = net.n_buses();
    auto adj = net.adjacency();

    // BFS tree straight from the adjacency
    std::vector<int> parent(nb, -1), parent_line(nb, -1), order;
    std::vector<char> seen(nb, 0);
    std::deque<int> q{0};
    seen[0] = 1;
    order.push_back(0);
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (auto [e, v] : adj[u])
            if (!seen[v]) {
                seen[v] = 1;
                parent[v] = u;
                parent_line[v] = e;
                order.push_back(v);
                q.push_back(v);
            }
    }
    std::vector<char> in_tree(net.m(), 0);
    for (int v = 1; v < nb; ++v) in_tree[parent_line[v]] = 1;

    // angle of each bus along the tree (difference sums, root at zero)
    std::vector<double> angle(nb, 0.0);
    for (int k = 1; k < nb; ++k) {
        int bus = order[k];
        int e = parent_line[bus];
        double sign = net.lines[e].from == parent[bus] ? 1.0 : -1.0;
        angle[bus] = angle[parent[bus]] - sign * beta(e);
    }
    for (int e = 0; e < net.m(); ++e) {
        if (in_tree[e]) continue;
        double sum = angle[net.lines[e].from] - angle[net.lines[e].to] - beta(e);
        if (std::abs(wrap_angle(sum)) > tol) return false;
    }
    return true;
}

}  // namespace bfm
