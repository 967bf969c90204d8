#pragma once

#include <random>
#include <string>

#include "bfm/caseio.hpp"
#include "bfm/netmodel.hpp"

namespace bfm::testsup {

// 0 -> 1 -> 2 path with unit-ish impedances and fixed loads.
Network path3();

// lines (0,1), (1,2), (0,2)
Network triangle(double x01 = 0.1, double x12 = 0.1, double x02 = 0.5);

// random radial network: buses 2..n_buses, r,x in [0.001, 0.1], random loads,
// generation only at the slack
Network random_radial(unsigned seed, int n_buses);

// random connected mesh: a random tree plus `extra` distinct chords
Network random_connected(unsigned seed, int n_buses, int extra);

Eigen::VectorXd random_beta(unsigned seed, int m);

Network load_case(const std::string& name, const CaseOptions& opts = {});

std::string data_path(const std::string& name);

}  // namespace bfm::testsup
