#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "bfm/conic.hpp"

namespace bfm::testsup {

/// Exact LP oracle: enumerate basic solutions of min c'x, Ax=b, x >= 0.
/// Suitable for n <= ~14.
inline double lp_vertex_optimum(const Eigen::VectorXd& c, const Eigen::MatrixXd& A,
                                const Eigen::VectorXd& b) {
    const int n = static_cast<int>(c.size());
    const int p = static_cast<int>(b.size());
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> idx(p);
    // iterate over all p-subsets of columns
    std::vector<int> comb(p);
    for (int i = 0; i < p; ++i) comb[i] = i;
    auto next_comb = [&]() {
        int i = p - 1;
        while (i >= 0 && comb[i] == n - p + i) --i;
        if (i < 0) return false;
        ++comb[i];
        for (int j = i + 1; j < p; ++j) comb[j] = comb[j - 1] + 1;
        return true;
    };
    if (p == 0 || p > n) return best;
    do {
        Eigen::MatrixXd B(p, p);
        for (int j = 0; j < p; ++j) B.col(j) = A.col(comb[j]);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
        if (!lu.isInvertible()) continue;
        Eigen::VectorXd xb = lu.solve(b);
        if ((xb.array() < -1e-9).any()) continue;
        double obj = 0.0;
        for (int j = 0; j < p; ++j) obj += c(comb[j]) * xb(j);
        best = std::min(best, obj);
    } while (next_comb());
    return best;
}

inline void project_cone(const ConeSpec& cones, Eigen::VectorXd& x) {
    int at = 0;
    for (const auto& blk : cones.blocks) {
        auto seg = x.segment(at, blk.dim);
        switch (blk.kind) {
            case ConeKind::Zero:
                seg.setZero();
                break;
            case ConeKind::Nonnegative:
                seg = seg.cwiseMax(0.0);
                break;
            case ConeKind::SecondOrder: {
                double t = seg(0);
                double nu = seg.tail(blk.dim - 1).norm();
                if (nu <= t) break;
                if (nu <= -t) {
                    seg.setZero();
                } else {
                    double s = 0.5 * (t + nu);
                    seg(0) = s;
                    seg.tail(blk.dim - 1) *= s / nu;
                }
                break;
            }
            case ConeKind::RotatedSecondOrder:
                throw Error("oracle", "subgradient oracle handles lp/soc blocks only");
        }
        at += blk.dim;
    }
}

/// Projected subgradient on the exact penalty c'x + rho ||Ax - b|| over the
/// cone, driven by Polyak steps towards a known target value. For rho larger
/// than the dual norm the penalized minimum equals the true optimum, so the
/// best penalized value is the oracle's objective estimate.
inline double subgradient_objective(const ConicProblem& prob, double target, int iters = 200000,
                                    double rho = 0.0) {
    Eigen::MatrixXd A(prob.A);
    if (rho <= 0.0) rho = 8.0;
    // least-squares start, then project
    Eigen::VectorXd x = A.transpose() *
                        (A * A.transpose()).ldlt().solve(prob.b).eval();
    project_cone(prob.cones, x);
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < iters; ++k) {
        Eigen::VectorXd r = A * x - prob.b;
        double rn = r.norm();
        double F = prob.c.dot(x) + rho * rn;
        best = std::min(best, F);
        Eigen::VectorXd g = prob.c;
        if (rn > 1e-14) g += rho * (A.transpose() * r) / rn;
        double gn2 = g.squaredNorm();
        if (gn2 < 1e-18) break;
        double step = (F - target) / gn2;
        if (step <= 0.0) step = 1e-3 / std::sqrt(1.0 + k);
        x -= step * g;
        project_cone(prob.cones, x);
    }
    return best;
}

}  // namespace bfm::testsup
