#include <set>
#include "support/test_networks.hpp"

namespace bfm::testsup {

namespace {

Bus make_bus(int id, bool slack) {
    Bus b;
    b.id = id;
    b.is_slack = slack;
    b.v_min = 0.81;
    b.v_max = 1.21;
    if (slack) {
        b.pg_min = -10.0;
        b.pg_max = 10.0;
        b.qg_min = -10.0;
        b.qg_max = 10.0;
    }
    return b;
}

}  // namespace

Network path3() {
    Network net;
    for (int i = 0; i < 3; ++i) net.buses.push_back(make_bus(i, i == 0));
    net.buses[1].pc_min = net.buses[1].pc_max = 0.1;
    net.buses[1].qc_min = net.buses[1].qc_max = 0.03;
    net.buses[2].pc_min = net.buses[2].pc_max = 0.2;
    net.buses[2].qc_min = net.buses[2].qc_max = 0.05;
    net.lines.push_back({0, 1, {0.01, 0.05}});
    net.lines.push_back({1, 2, {0.02, 0.08}});
    return net;
}

Network triangle(double x01, double x12, double x02) {
    Network net;
    for (int i = 0; i < 3; ++i) net.buses.push_back(make_bus(i, i == 0));
    net.buses[1].pc_min = net.buses[1].pc_max = 0.1;
    net.buses[2].pc_min = net.buses[2].pc_max = 0.15;
    net.lines.push_back({0, 1, {0.01, x01}});
    net.lines.push_back({1, 2, {0.01, x12}});
    net.lines.push_back({0, 2, {0.01, x02}});
    return net;
}

Network random_radial(unsigned seed, int n_buses) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> imp(0.001, 0.1);
    std::uniform_real_distribution<double> load(0.0, 0.08);
    std::uniform_int_distribution<int> parent_pick(0, 1 << 20);
    Network net;
    for (int i = 0; i < n_buses; ++i) {
        Bus b = make_bus(i, i == 0);
        if (i > 0) {
            b.pc_min = b.pc_max = load(rng);
            b.qc_min = b.qc_max = 0.4 * load(rng);
        }
        net.buses.push_back(b);
    }
    for (int i = 1; i < n_buses; ++i) {
        int parent = parent_pick(rng) % i;
        net.lines.push_back({parent, i, {imp(rng), imp(rng)}});
    }
    return net;
}

Network random_connected(unsigned seed, int n_buses, int extra) {
    std::mt19937 rng(seed);
    Network net = random_radial(seed, n_buses);
    std::uniform_real_distribution<double> imp(0.001, 0.1);
    std::set<std::pair<int, int>> used;
    for (const auto& l : net.lines) used.insert(std::minmax(l.from, l.to));
    std::uniform_int_distribution<int> pick(0, n_buses - 1);
    int guard = 0;
    while (extra > 0 && guard++ < 10000) {
        int a = pick(rng), b = pick(rng);
        if (a == b) continue;
        auto key = std::minmax(a, b);
        if (used.count(key)) continue;
        used.insert(key);
        net.lines.push_back({a, b, {imp(rng), imp(rng)}});
        --extra;
    }
    return net;
}

Eigen::VectorXd random_beta(unsigned seed, int m) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> ang(-kPi + 1e-9, kPi);
    Eigen::VectorXd beta(m);
    for (int i = 0; i < m; ++i) beta(i) = ang(rng);
    return beta;
}

std::string data_path(const std::string& name) { return std::string(BFM_DATA_DIR) + "/" + name; }

Network load_case(const std::string& name, const CaseOptions& opts) {
    return to_network(parse_case_file(data_path(name)), opts);
}

}  // namespace bfm::testsup
