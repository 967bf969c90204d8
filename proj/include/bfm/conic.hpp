#pragma once

#include <algorithm>
#include <cstring>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "bfm/common.hpp"
#include "bfm/conic_hsde.hpp"

namespace bfm {

enum class ConeKind { Zero, Nonnegative, SecondOrder, RotatedSecondOrder };

struct ConeBlock {
    ConeKind kind = ConeKind::Nonnegative;
    int dim = 1;
};

struct ConeSpec {
    std::vector<ConeBlock> blocks;

    int total_dim() const {
        int d = 0;
        for (const auto& b : blocks) d += b.dim;
        return d;
    }
    void validate(int n_vars) const {
        for (const auto& b : blocks) {
            if (b.dim < 1) throw Error("cone", "cone block with nonpositive dimension");
            if (b.kind == ConeKind::SecondOrder && b.dim < 2)
                throw Error("cone", "second-order block needs dim >= 2");
            if (b.kind == ConeKind::RotatedSecondOrder && b.dim < 3)
                throw Error("cone", "rotated second-order block needs dim >= 3");
        }
        if (total_dim() != n_vars) throw Error("cone", "cone dims do not sum to the variable count");
    }
};

/// minimize c'x subject to Ax = b, x in the product cone.
struct ConicProblem {
    Eigen::VectorXd c;
    Eigen::SparseMatrix<double> A;
    Eigen::VectorXd b;
    ConeSpec cones;
    std::vector<std::string> var_names;  // optional, diagnostics only

    int num_vars() const { return static_cast<int>(c.size()); }
    int num_rows() const { return static_cast<int>(b.size()); }
};

/// On Optimal, (x, y, z) is the scaled primal-dual solution and the residuals
/// are relative measures on the original data. On an infeasibility status,
/// (x) or (y, z) carries the normalized certificate ray.
struct ConicSolution {
    SolveStatus status = SolveStatus::Numerical;
    Eigen::VectorXd x, y, z;
    double objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    int iterations = 0;
    std::string diagnostic;
};

/// Maps one rotated block (u, v, w...) with u v >= ||w||^2, u,v >= 0 onto the
/// standard second-order form (u+v, u-v, 2w): (u+v)^2 - (u-v)^2 = 4uv >= ||2w||^2.
inline std::vector<double> rotated_to_soc(const std::vector<double>& block) {
    if (block.size() < 3) throw Error("cone", "rotated block needs at least 3 entries");
    std::vector<double> out(block.size());
    out[0] = block[0] + block[1];
    out[1] = block[0] - block[1];
    for (size_t i = 2; i < block.size(); ++i) out[i] = 2.0 * block[i];
    return out;
}

/// Worst normalized cone-membership violation (0 when inside every block).
/// With dual = true the test runs against the dual cone: the zero cone's dual
/// is free, and the rotated cone u v >= ||w||^2 has dual a b >= ||c||^2 / 4.
inline double cone_violation(const ConeSpec& cones, const Eigen::VectorXd& x, bool dual = false) {
    double worst = 0.0;
    int at = 0;
    for (const auto& blk : cones.blocks) {
        auto seg = x.segment(at, blk.dim);
        double scale = 1.0 + seg.cwiseAbs().maxCoeff();
        switch (blk.kind) {
            case ConeKind::Zero:
                if (!dual) worst = std::max(worst, seg.cwiseAbs().maxCoeff() / scale);
                break;
            case ConeKind::Nonnegative:
                worst = std::max(worst, std::max(0.0, -seg.minCoeff()) / scale);
                break;
            case ConeKind::SecondOrder:
                worst = std::max(worst, std::max(0.0, seg.tail(blk.dim - 1).norm() - seg(0)) / scale);
                break;
            case ConeKind::RotatedSecondOrder: {
                double quad = dual ? seg.tail(blk.dim - 2).squaredNorm() / 4.0 - seg(0) * seg(1)
                                   : seg.tail(blk.dim - 2).squaredNorm() - seg(0) * seg(1);
                double viol = std::max({0.0, -seg(0), -seg(1), quad});
                worst = std::max(worst, viol / (scale * scale));
                break;
            }
        }
        at += blk.dim;
    }
    return worst;
}

/// Plain-text sparse triplet dump for cross-checks with external solvers.
inline void dump_problem(const ConicProblem& prob, std::ostream& os) {
    os.precision(17);
    os << "conic-problem v1\n";
    os << "vars " << prob.num_vars() << " rows " << prob.num_rows() << "\n";
    os << "c\n";
    for (int i = 0; i < prob.num_vars(); ++i)
        if (prob.c(i) != 0.0) os << i << " " << prob.c(i) << "\n";
    os << "A\n";
    for (int k = 0; k < prob.A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(prob.A, k); it; ++it)
            os << it.row() << " " << it.col() << " " << it.value() << "\n";
    os << "b\n";
    for (int i = 0; i < prob.num_rows(); ++i)
        if (prob.b(i) != 0.0) os << i << " " << prob.b(i) << "\n";
    os << "cones\n";
    for (const auto& blk : prob.cones.blocks) {
        const char* k = blk.kind == ConeKind::Zero ? "zero"
                        : blk.kind == ConeKind::Nonnegative ? "nonneg"
                        : blk.kind == ConeKind::SecondOrder ? "soc"
                                                            : "rsoc";
        os << k << " " << blk.dim << "\n";
    }
    os << "end\n";
}



inline ConicSolution solve(const ConicProblem& prob, const SolverOptions& opt = {}) {
    using detail::SpMat;
    using detail::Vec;

    prob.cones.validate(prob.num_vars());
    if (prob.A.rows() != prob.b.size() || prob.A.cols() != prob.c.size())
        throw Error("dim", "A, b, c dimensions disagree");
    if (!prob.c.allFinite() || !prob.b.allFinite())
        throw Error("numeric", "problem data must be finite");
    for (int k = 0; k < prob.A.outerSize(); ++k)
        for (SpMat::InnerIterator it(prob.A, k); it; ++it)
            if (!std::isfinite(it.value())) throw Error("numeric", "problem data must be finite");

    const int n0 = prob.num_vars();
    const int p0 = prob.num_rows();

    // --- presolve: eliminate zero-cone variables, reorder nonneg-first,
    //     rotate RSOC blocks into SOC form ---
    std::vector<int> keep;            // internal column -> original column
    std::vector<char> is_zero(n0, 0);
    {
        int at = 0;
        for (const auto& blk : prob.cones.blocks) {
            if (blk.kind == ConeKind::Zero)
                for (int i = 0; i < blk.dim; ++i) is_zero[at + i] = 1;
            at += blk.dim;
        }
    }
    // order: nonneg columns first, then SOC/RSOC blocks in declaration order
    std::vector<std::pair<int, int>> soc_blocks;  // (original offset, dim), RSOC flagged by sign
    {
        int at = 0;
        for (const auto& blk : prob.cones.blocks) {
            if (blk.kind == ConeKind::Nonnegative)
                for (int i = 0; i < blk.dim; ++i) keep.push_back(at + i);
            at += blk.dim;
        }
        // nonneg count known now
    }
    const int n_lp = static_cast<int>(keep.size());
    {
        int at = 0;
        for (const auto& blk : prob.cones.blocks) {
            if (blk.kind == ConeKind::SecondOrder || blk.kind == ConeKind::RotatedSecondOrder) {
                soc_blocks.emplace_back(at, blk.kind == ConeKind::RotatedSecondOrder ? -blk.dim : blk.dim);
                for (int i = 0; i < blk.dim; ++i) keep.push_back(at + i);
            }
            at += blk.dim;
        }
    }
    const int n = static_cast<int>(keep.size());

    // column map original -> internal (-1 dropped)
    std::vector<int> col_of(n0, -1);
    for (int i = 0; i < n; ++i) col_of[keep[i]] = i;

    // Build internal c and A (with RSOC rotation folded into the columns):
    // x_orig(block) = M x_int(block), M = [[1,1],[1,-1]] (+) I, so columns
    // (u,v) of A and c map to (u+v, u-v).
    Vec ci = Vec::Zero(n);
    for (int i = 0; i < n; ++i) ci(i) = prob.c(keep[i]);
    std::vector<Eigen::Triplet<double>> atrip;
    for (int k = 0; k < prob.A.outerSize(); ++k)
        for (SpMat::InnerIterator it(prob.A, k); it; ++it) {
            int j = col_of[it.col()];
            if (j >= 0) atrip.emplace_back(it.row(), j, it.value());
        }
    SpMat Ai(p0, n);
    Ai.setFromTriplets(atrip.begin(), atrip.end());
    Ai.makeCompressed();
    // Fold the RSOC rotation into the data: x_orig(block) = M x_int(block)
    // with M = [[1,1],[1,-1]] (+) I, so columns (u,v) become (u+v, u-v).
    bool any_rsoc = false;
    for (auto& [off, sdim] : soc_blocks)
        if (sdim < 0) any_rsoc = true;
    if (any_rsoc) {
        for (auto& [off, sdim] : soc_blocks) {
            if (sdim > 0) continue;
            int ju = col_of[off], jv = col_of[off + 1];
            double cu = ci(ju), cv = ci(jv);
            ci(ju) = cu + cv;
            ci(jv) = cu - cv;
        }
        std::vector<char> rot_u(n, 0), rot_v(n, 0);
        std::vector<int> partner(n, -1);
        for (auto& [off, sdim] : soc_blocks) {
            if (sdim > 0) continue;
            int ju = col_of[off], jv = col_of[off + 1];
            rot_u[ju] = 1;
            rot_v[jv] = 1;
            partner[ju] = jv;
            partner[jv] = ju;
        }
        std::vector<Eigen::Triplet<double>> t2;
        for (int k = 0; k < prob.A.outerSize(); ++k)
            for (SpMat::InnerIterator it(prob.A, k); it; ++it) {
                int j = col_of[it.col()];
                if (j < 0) continue;
                if (rot_u[j]) {
                    t2.emplace_back(it.row(), j, it.value());
                    t2.emplace_back(it.row(), partner[j], it.value());
                } else if (rot_v[j]) {
                    t2.emplace_back(it.row(), partner[j], it.value());
                    t2.emplace_back(it.row(), j, -it.value());
                } else {
                    t2.emplace_back(it.row(), j, it.value());
                }
            }
        Ai.setZero();
        Ai.setFromTriplets(t2.begin(), t2.end());
        Ai.makeCompressed();
    }

    // --- duplicate / empty row removal ---
    Vec bi = prob.b;
    std::vector<int> row_keep;
    {
        SpMat Arow = Ai.transpose();  // CSC of transpose = row access
        std::map<std::vector<std::pair<int, long long>>, int> seen;
        auto quantize = [](double v) {
            long long q;
            static_assert(sizeof(double) == sizeof(long long));
            std::memcpy(&q, &v, sizeof(double));
            return q;
        };
        for (int r = 0; r < p0; ++r) {
            std::vector<std::pair<int, long long>> key;
            for (SpMat::InnerIterator it(Arow, r); it; ++it)
                if (it.value() != 0.0) key.emplace_back(static_cast<int>(it.row()), quantize(it.value()));
            if (key.empty()) {
                if (std::abs(bi(r)) > 1e-14) {
                    ConicSolution sol;
                    sol.status = SolveStatus::PrimalInfeasible;
                    sol.diagnostic = "empty row " + std::to_string(r) + " with nonzero rhs";
                    sol.x = Vec::Zero(n0);
                    sol.y = Vec::Zero(p0);
                    sol.y(r) = bi(r) > 0 ? 1.0 : -1.0;
                    sol.z = Vec::Zero(n0);
                    return sol;
                }
                continue;  // redundant zero row
            }
            auto it2 = seen.find(key);
            if (it2 == seen.end()) {
                seen[key] = r;
                row_keep.push_back(r);
            } else if (std::abs(bi(it2->second) - bi(r)) > 1e-14) {
                ConicSolution sol;
                sol.status = SolveStatus::PrimalInfeasible;
                sol.diagnostic = "rows " + std::to_string(it2->second) + " and " +
                                 std::to_string(r) + " conflict";
                sol.x = Vec::Zero(n0);
                sol.y = Vec::Zero(p0);
                sol.y(it2->second) = 1.0;
                sol.y(r) = -1.0;
                if (bi(r) > bi(it2->second)) sol.y = -sol.y;
                sol.z = Vec::Zero(n0);
                return sol;
            }
        }
    }
    const int p = static_cast<int>(row_keep.size());
    SpMat Ap(p, n);
    {
        std::vector<int> row_of(p0, -1);
        for (int i = 0; i < p; ++i) row_of[row_keep[i]] = i;
        std::vector<Eigen::Triplet<double>> t2;
        for (int k = 0; k < Ai.outerSize(); ++k)
            for (SpMat::InnerIterator it(Ai, k); it; ++it)
                if (row_of[it.row()] >= 0 && it.value() != 0.0)
                    t2.emplace_back(row_of[it.row()], static_cast<int>(it.col()), it.value());
        Ap.setFromTriplets(t2.begin(), t2.end());
        Ap.makeCompressed();
    }
    Vec bp(p);
    for (int i = 0; i < p; ++i) bp(i) = bi(row_keep[i]);

    // --- Ruiz equilibration (cone blocks share one column scale) ---
    Vec drow = Vec::Ones(p), dcol = Vec::Ones(n);
    {
        SpMat Aeq = Ap;
        for (int pass = 0; pass < 3; ++pass) {
            Vec rmax = Vec::Zero(p), cmax = Vec::Zero(n);
            for (int k = 0; k < Aeq.outerSize(); ++k)
                for (SpMat::InnerIterator it(Aeq, k); it; ++it) {
                    double a = std::abs(it.value());
                    rmax(it.row()) = std::max(rmax(it.row()), a);
                    cmax(it.col()) = std::max(cmax(it.col()), a);
                }
            // one scale per SOC block
            int at = n_lp;
            for (auto& [off, sdim] : soc_blocks) {
                int d = std::abs(sdim);
                double m = cmax.segment(at, d).maxCoeff();
                cmax.segment(at, d).setConstant(m);
                at += d;
            }
            auto scale = [](double v) { return v < 1e-12 ? 1.0 : 1.0 / std::sqrt(v); };
            Vec rs = rmax.unaryExpr(scale), cs = cmax.unaryExpr(scale);
            for (int k = 0; k < Aeq.outerSize(); ++k)
                for (SpMat::InnerIterator it(Aeq, k); it; ++it)
                    it.valueRef() *= rs(it.row()) * cs(it.col());
            drow = drow.cwiseProduct(rs);
            dcol = dcol.cwiseProduct(cs);
        }
        Ap = Aeq;
    }
    Vec ceq = ci.cwiseProduct(dcol);
    Vec beq = bp.cwiseProduct(drow);

    // --- solve ---
    detail::HsdeSolver hs;
    hs.n = n;
    hs.p = p;
    hs.A = Ap;
    hs.At = SpMat(Ap.transpose());
    hs.c = ceq;
    hs.b = beq;
    hs.n_lp = n_lp;
    {
        int at = n_lp;
        for (auto& [off, sdim] : soc_blocks) {
            detail::HsdeSolver::SocBlock sb;
            sb.offset = at;
            sb.dim = std::abs(sdim);
            hs.socs.push_back(sb);
            at += sb.dim;
        }
    }
    hs.opt = opt;

    int iters = 0;
    std::string diag;
    SolveStatus status = SolveStatus::Numerical;
    if (n == 0) {
        // no variables: feasible iff b == 0
        status = beq.norm() <= opt.eps_feas ? SolveStatus::Optimal : SolveStatus::PrimalInfeasible;
        hs.x = Vec::Zero(0);
        hs.y = Vec::Zero(p);
        hs.z = Vec::Zero(0);
        hs.tau = 1.0;
    } else {
        status = hs.run(iters, diag);
    }

    // --- recover the solution in original coordinates ---
    ConicSolution sol;
    sol.status = status;
    sol.iterations = iters;
    sol.diagnostic = diag;

    double s = (status == SolveStatus::PrimalInfeasible || status == SolveStatus::DualInfeasible)
                   ? 1.0
                   : hs.tau;
    Vec xi = n > 0 ? Vec((hs.x / s).cwiseProduct(dcol)) : Vec::Zero(0);
    Vec yi(p0), zi;
    yi.setZero();
    for (int i = 0; i < p; ++i) yi(row_keep[i]) = hs.y(i) / s * drow(i);
    Vec zint = n > 0 ? Vec((hs.z / s).cwiseQuotient(dcol)) : Vec::Zero(0);

    // undo the RSOC rotation: x_orig = M x_int, z_orig = M z_int / 2
    sol.x = Vec::Zero(n0);
    sol.z = Vec::Zero(n0);
    for (int i = 0; i < n; ++i) {
        sol.x(keep[i]) = xi(i);
        sol.z(keep[i]) = zint(i);
    }
    for (auto& [off, sdim] : soc_blocks) {
        if (sdim > 0) continue;
        double xu = sol.x(off), xv = sol.x(off + 1);
        sol.x(off) = xu + xv;
        sol.x(off + 1) = xu - xv;
        double zu = sol.z(off), zv = sol.z(off + 1);
        sol.z(off) = 0.5 * (zu + zv);
        sol.z(off + 1) = 0.5 * (zu - zv);
    }
    // zero-cone variables stay 0; their duals complete A'y + z = c
    for (int j = 0; j < n0; ++j)
        if (is_zero[j]) sol.z(j) = prob.c(j) - prob.A.col(j).dot(yi);
    sol.y = yi;

    sol.objective = prob.c.dot(sol.x);
    Vec rp = prob.A * sol.x - prob.b;
    Vec rd = prob.A.transpose() * sol.y + sol.z - prob.c;
    sol.primal_residual = rp.norm() / (1.0 + prob.b.norm());
    sol.dual_residual = rd.norm() / (1.0 + prob.c.norm());
    double pc = sol.objective, dc = prob.b.dot(sol.y);
    sol.gap = std::abs(pc - dc) / std::max({1.0, std::abs(pc), std::abs(dc)});
    // the internal check runs on equilibrated data; if the recovered point
    // certifies on the original data, it is optimal regardless
    if ((sol.status == SolveStatus::MaxIter || sol.status == SolveStatus::Numerical) &&
        sol.primal_residual <= opt.eps_feas && sol.dual_residual <= opt.eps_feas &&
        sol.gap <= opt.eps_gap && cone_violation(prob.cones, sol.x) <= opt.eps_feas &&
        cone_violation(prob.cones, sol.z, true) <= opt.eps_feas) {
        sol.status = SolveStatus::Optimal;
        sol.diagnostic.clear();
    }
    return sol;
}

}  // namespace bfm
