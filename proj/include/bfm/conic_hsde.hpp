#pragma once

#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "bfm/common.hpp"

namespace bfm {

enum class SolveStatus { Optimal, PrimalInfeasible, DualInfeasible, MaxIter, Numerical };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::PrimalInfeasible: return "primal_infeasible";
        case SolveStatus::DualInfeasible: return "dual_infeasible";
        case SolveStatus::MaxIter: return "max_iter";
        case SolveStatus::Numerical: return "numerical";
    }
    return "?";
}

struct SolverOptions {
    double eps_feas = 1e-8;
    double eps_gap = 1e-8;
    int max_iter = 200;
    bool verbose = false;
    double static_reg = 1e-9;  // quasi-definite regularization
};

namespace detail {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

/*
 * Homogeneous self-dual embedding of
 *
 *     min c'x s.t. Ax = b, x in K        max b'y s.t. A'y + z = c, z in K*
 *
 * in (x, y, z, tau, kappa):
 *
 *     A x - b tau       = 0
 *     A'y + z - c tau   = 0
 *     kappa + c'x - b'y = 0
 *     x in K, z in K*, tau, kappa >= 0
 *
 * with Nesterov-Todd scaled Mehrotra predictor-corrector steps. K holds the
 * nonnegative variables first, then the second-order blocks.
 *
 * Search directions solve the quasi-definite system in (dx, dy, dz~ = -dz):
 *
 *     [ eps I    A'     -I   ] [dx ]   [ r1 ]     A'dy + dz        = r1 (+ c dtau)
 *     [ A      eps I     0   ] [dy ] = [ r2 ]     A dx             = r2 (+ b dtau)
 *     [ -I       0     -W^2  ] [dz~]   [-r3 ]     dx + W^2 dz      = r3
 *
 * Each second-order block's W^2 = eta^2 (D + uu' - vv') enters in expanded
 * form with two extra rows per cone, which keeps every matrix entry of order
 * ||W|| instead of ||W||^2; tau directions come from the usual two-solve
 * scheme with the cancellation-free denominator -||W uz||^2 - kappa/tau.
 */
class HsdeSolver {
public:
    struct SocBlock {
        int offset = 0;  // first variable of the block
        int dim = 0;
        Vec wbar;        // unit hyperbolic point of the NT scaling
        double eta = 1.0;
        double d1 = 0, u0 = 0, u1 = 0, v1 = 0;  // expansion scalars
    };

    int n = 0, p = 0;
    SpMat A, At;
    Vec c, b;
    int n_lp = 0;
    std::vector<SocBlock> socs;
    SolverOptions opt;

    // iterate
    Vec x, y, z;
    double tau = 1.0, kappa = 1.0;

    Vec lp_w2;   // x_i / z_i per nonnegative variable
    Vec lambda;  // scaled point W z = W^-1 x

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    SpMat K;
    bool analyzed = false;
    int nk = 0;  // system size n + p + n + 2 * #socs

    double norm_b = 1.0, norm_c = 1.0;

    struct Stats {
        double pres = kInf, dres = kInf, relgap = kInf;
        double pcost = 0, dcost = 0;
        double mu = 0;
        double pinfres = kInf, dinfres = kInf;
        double bty = 0, ctx = 0;
    } stats;

    int barrier_count() const { return n_lp + static_cast<int>(socs.size()); }

    static double soc_res(const Eigen::Ref<const Vec>& v) {
        return v(0) * v(0) - v.tail(v.size() - 1).squaredNorm();
    }

    Vec jordan_prod(const Vec& u, const Vec& v) const {
        Vec out(n);
        out.head(n_lp) = u.head(n_lp).cwiseProduct(v.head(n_lp));
        for (const auto& s : socs) {
            auto us = u.segment(s.offset, s.dim);
            auto vs = v.segment(s.offset, s.dim);
            out(s.offset) = us.dot(vs);
            out.segment(s.offset + 1, s.dim - 1) =
                us(0) * vs.tail(s.dim - 1) + vs(0) * us.tail(s.dim - 1);
        }
        return out;
    }

    // u = lambda \ d
    Vec jordan_div_lambda(const Vec& d) const {
        Vec out(n);
        out.head(n_lp) = d.head(n_lp).cwiseQuotient(lambda.head(n_lp));
        for (const auto& s : socs) {
            auto l = lambda.segment(s.offset, s.dim);
            auto ds = d.segment(s.offset, s.dim);
            double a = soc_res(l);
            double u0 = (l(0) * ds(0) - l.tail(s.dim - 1).dot(ds.tail(s.dim - 1))) / a;
            out(s.offset) = u0;
            out.segment(s.offset + 1, s.dim - 1) =
                (ds.tail(s.dim - 1) - u0 * l.tail(s.dim - 1)) / l(0);
        }
        return out;
    }

    // W = eta [ a  q' ; q  I + qq'/(1+a) ] with (a, q) = wbar, a^2 - ||q||^2 = 1
    Vec apply_W(const Vec& v) const {
        Vec out(n);
        out.head(n_lp) = lp_w2.head(n_lp).cwiseSqrt().cwiseProduct(v.head(n_lp));
        for (const auto& s : socs) {
            auto vs = v.segment(s.offset, s.dim);
            double a = s.wbar(0);
            auto q = s.wbar.tail(s.dim - 1);
            double qv = q.dot(vs.tail(s.dim - 1));
            out(s.offset) = s.eta * (a * vs(0) + qv);
            out.segment(s.offset + 1, s.dim - 1) =
                s.eta * (vs.tail(s.dim - 1) + (vs(0) + qv / (1.0 + a)) * q);
        }
        return out;
    }

    // W^-1 = (1/eta) [ a  -q' ; -q  I + qq'/(1+a) ]
    Vec apply_Winv(const Vec& v) const {
        Vec out(n);
        out.head(n_lp) = v.head(n_lp).cwiseQuotient(lp_w2.head(n_lp).cwiseSqrt());
        for (const auto& s : socs) {
            auto vs = v.segment(s.offset, s.dim);
            double a = s.wbar(0);
            auto q = s.wbar.tail(s.dim - 1);
            double qv = q.dot(vs.tail(s.dim - 1));
            out(s.offset) = (a * vs(0) - qv) / s.eta;
            out.segment(s.offset + 1, s.dim - 1) =
                (vs.tail(s.dim - 1) + (-vs(0) + qv / (1.0 + a)) * q) / s.eta;
        }
        return out;
    }

    double max_step(const Vec& v, const Vec& dv) const {
        double alpha = kInf;
        for (int i = 0; i < n_lp; ++i)
            if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
        for (const auto& s : socs) {
            auto vs = v.segment(s.offset, s.dim);
            auto ds = dv.segment(s.offset, s.dim);
            double a = ds(0) * ds(0) - ds.tail(s.dim - 1).squaredNorm();
            double bq = vs(0) * ds(0) - vs.tail(s.dim - 1).dot(ds.tail(s.dim - 1));
            double cq = soc_res(vs);
            double root = kInf;
            if (std::abs(a) < 1e-300) {
                if (bq < 0.0) root = -cq / (2.0 * bq);
            } else {
                double disc = bq * bq - a * cq;
                if (disc >= 0.0) {
                    double sq = std::sqrt(disc);
                    double r1 = (-bq - sq) / a;
                    double r2 = (-bq + sq) / a;
                    if (r1 > 0.0) root = std::min(root, r1);
                    if (r2 > 0.0) root = std::min(root, r2);
                }
            }
            alpha = std::min(alpha, root);
        }
        return alpha;
    }

    void shift_to_cone(Vec& v) const {
        double worst = -0.99;
        for (int i = 0; i < n_lp; ++i)
            if (v(i) <= 0.0) worst = std::max(worst, -v(i));
        for (const auto& s : socs) {
            double res = v(s.offset) - v.segment(s.offset + 1, s.dim - 1).norm();
            if (res <= 0.0) worst = std::max(worst, -res);
        }
        double shift = 1.0 + worst;
        v.head(n_lp).array() += shift;
        for (const auto& s : socs) v(s.offset) += shift;
    }

    // Rescue used only when an iterate drifts out of the cone: push the
    // starved side back with a vanishing O(beta mu) nudge.
    void repair_iterate(double beta = 1e-10) {
        double mu = (x.dot(z) + tau * kappa) / (barrier_count() + 1);
        if (!(mu > 0.0)) return;
        for (int i = 0; i < n_lp; ++i) {
            double floor_x = std::max(beta * mu / std::max(z(i), 1e-300), 1e-13);
            double floor_z = std::max(beta * mu / std::max(x(i), 1e-300), 1e-13);
            if (x(i) < floor_x && x(i) <= z(i)) x(i) = floor_x;
            if (z(i) < floor_z && z(i) < x(i)) z(i) = floor_z;
        }
        for (const auto& s : socs) {
            auto fix = [&](Eigen::Ref<Vec> v) {
                double emax = v(s.offset) + v.segment(s.offset + 1, s.dim - 1).norm();
                double emin = v(s.offset) - v.segment(s.offset + 1, s.dim - 1).norm();
                // at least a few ulps of the block scale, or the shift is lost
                double want = std::max(beta * mu / std::max(emax, 1e-300),
                                       1e-13 * std::max(1.0, std::abs(emax)));
                if (emin < want) v(s.offset) += want - emin;
            };
            fix(x);
            fix(z);
        }
        if (tau * kappa < beta * mu) {
            if (kappa <= tau)
                kappa = beta * mu / tau;
            else
                tau = beta * mu / kappa;
        }
    }

    bool update_scaling() {
        for (int i = 0; i < n_lp; ++i) {
            if (x(i) <= 0.0 || z(i) <= 0.0) return false;
            lp_w2(i) = x(i) / z(i);
        }
        for (auto& s : socs) {
            auto xs = x.segment(s.offset, s.dim);
            auto zs = z.segment(s.offset, s.dim);
            double xres = soc_res(xs), zres = soc_res(zs);
            if (xres <= 0.0 || zres <= 0.0 || xs(0) <= 0.0 || zs(0) <= 0.0) {
                log(LogLevel::Debug, "soc block left the cone: xres " + std::to_string(xres) +
                                         " zres " + std::to_string(zres));
                return false;
            }
            double xnorm = std::sqrt(xres), znorm = std::sqrt(zres);
            Vec xb = xs / xnorm, zb = zs / znorm;
            double gamma = std::sqrt(0.5 * (1.0 + xb.dot(zb)));
            s.wbar.resize(s.dim);
            s.wbar(0) = (0.5 / gamma) * (xb(0) + zb(0));
            s.wbar.tail(s.dim - 1) = (0.5 / gamma) * (xb.tail(s.dim - 1) - zb.tail(s.dim - 1));
            s.eta = std::sqrt(xnorm / znorm);
            // rank expansion W^2 = eta^2 (diag(d1, I) + uu' - vv'),
            // u = (u0, u1 q), v = (0, v1 q), q = wbar tail
            double a = s.wbar(0);
            double w = s.wbar.tail(s.dim - 1).squaredNorm();
            double cc = 1.0 + a + w / (1.0 + a);
            double dd = 1.0 + 2.0 / (1.0 + a) + w / ((1.0 + a) * (1.0 + a));
            double d1 = std::max(0.0, 0.5 * (a * a + w * (1.0 - cc * cc / (1.0 + w * dd))));
            double u0sq = a * a + w - d1;
            double c2u2 = cc * cc / u0sq;
            if (c2u2 - dd <= 0.0) {
                log(LogLevel::Debug, "expansion scalars failed: c2u2 - dd = " +
                                         std::to_string(c2u2 - dd));
                return false;
            }
            s.d1 = d1;
            s.u0 = std::sqrt(u0sq);
            s.u1 = std::sqrt(c2u2);
            s.v1 = std::sqrt(c2u2 - dd);
        }
        lambda = apply_W(z);
        return true;
    }

    // ---- expanded KKT ----

    /*
     * Quasi-definite layout in (dx, dy, dzt) with dzt = -dz:
     *
     *   [ -eps I    A'      -I   ]        x rows:  A'dy - dzt = r1
     *   [    A   -eps I      0   ]        y rows:  A dx       = r2
     *   [   -I      0     +W^2   ]        z rows: -dx + W^2 dzt = -r3
     *
     * W^2 = eta^2 (diag(d1, I) + uu' - vv') enters expanded with one +eta^2
     * pivot (v row) and one -eta^2 pivot (u row) per cone, keeping all
     * entries of order ||W||.
     */
    void build_kkt(double reg_boost) {
        const double eps = opt.static_reg * reg_boost;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(2 * A.nonZeros() + 6 * n + p);
        const int xo = 0, yo = n, zo = n + p, ao = n + p + n;
        for (int i = 0; i < n; ++i) trip.emplace_back(xo + i, xo + i, -eps);
        for (int i = 0; i < p; ++i) trip.emplace_back(yo + i, yo + i, -eps);
        for (int j = 0; j < A.outerSize(); ++j)
            for (SpMat::InnerIterator it(A, j); it; ++it)
                trip.emplace_back(yo + it.row(), xo + j, it.value());
        for (int i = 0; i < n; ++i) trip.emplace_back(zo + i, xo + i, -1.0);
        for (int i = 0; i < n_lp; ++i) trip.emplace_back(zo + i, zo + i, lp_w2(i) + eps);
        int aux = ao;
        for (const auto& s : socs) {
            double e2 = s.eta * s.eta;
            trip.emplace_back(zo + s.offset, zo + s.offset, e2 * s.d1 + eps);
            for (int k = 1; k < s.dim; ++k)
                trip.emplace_back(zo + s.offset + k, zo + s.offset + k, e2 + eps);
            // v row: +eta^2 pivot, Schur contribution -eta^2 vv'
            for (int k = 1; k < s.dim; ++k)
                trip.emplace_back(aux, zo + s.offset + k, e2 * s.v1 * s.wbar(k));
            trip.emplace_back(aux, aux, e2 + eps);
            ++aux;
            // u row: -eta^2 pivot, Schur contribution +eta^2 uu'
            trip.emplace_back(aux, zo + s.offset, e2 * s.u0);
            for (int k = 1; k < s.dim; ++k)
                trip.emplace_back(aux, zo + s.offset + k, e2 * s.u1 * s.wbar(k));
            trip.emplace_back(aux, aux, -e2 - eps);
            ++aux;
        }
        K.resize(nk, nk);
        K.setFromTriplets(trip.begin(), trip.end());
    }

    bool factorize() {
        for (double boost : {1.0, 1e2, 1e4}) {
            build_kkt(boost);
            if (!analyzed) {
                ldlt.analyzePattern(K);
                analyzed = true;
            }
            ldlt.factorize(K);
            if (ldlt.info() == Eigen::Success) return true;
        }
        return false;
    }

    // Solve E1: A'dy + dz = r1, E2: A dx = r2, E3: dx + W^2 dz = r3,
    // refining against the factored-form operator (W applied twice).
    void solve_kkt(const Vec& r1, const Vec& r2, const Vec& r3, Vec& dx, Vec& dy, Vec& dz) const {
        Vec rhs = Vec::Zero(nk);
        rhs.head(n) = r1;
        rhs.segment(n, p) = r2;
        rhs.segment(n + p, n) = -r3;  // z rows carry -dx + W^2 dzt = -r3
        Vec sol = ldlt.solve(rhs);
        dx = sol.head(n);
        dy = sol.segment(n, p);
        Vec dzt = sol.segment(n + p, n);  // dzt = -dz
        for (int pass = 0; pass < 4; ++pass) {
            Vec res1 = r1 + dzt;               // r1 - (A'dy - dzt)
            if (p > 0) res1 -= At * dy;
            Vec res2 = r2;
            if (p > 0) res2 -= A * dx;
            Vec res3 = -r3 + dx - apply_W(apply_W(dzt));  // -r3 - (-dx + W^2 dzt)
            double rn = std::sqrt(res1.squaredNorm() + res2.squaredNorm() + res3.squaredNorm());
            double scale = 1.0 + std::sqrt(r1.squaredNorm() + r2.squaredNorm() + r3.squaredNorm());
            if (rn <= 1e-13 * scale) break;
            Vec rr = Vec::Zero(nk);
            rr.head(n) = res1;
            rr.segment(n, p) = res2;
            rr.segment(n + p, n) = res3;
            Vec corr = ldlt.solve(rr);
            dx += corr.head(n);
            dy += corr.segment(n, p);
            dzt += corr.segment(n + p, n);
        }
        dz = -dzt;
    }

    void compute_stats() {
        Vec rp = A * x - b * tau;
        Vec rd = At * y + z - c * tau;
        stats.ctx = c.dot(x);
        stats.bty = b.dot(y);
        stats.pcost = stats.ctx / tau;
        stats.dcost = stats.bty / tau;
        stats.pres = rp.norm() / (1.0 + norm_b) / tau;
        stats.dres = rd.norm() / (1.0 + norm_c) / tau;
        stats.relgap = std::abs(stats.pcost - stats.dcost) /
                       std::max({1.0, std::abs(stats.pcost), std::abs(stats.dcost)});
        stats.mu = (x.dot(z) + tau * kappa) / (barrier_count() + 1);
        stats.pinfres = kInf;
        stats.dinfres = kInf;
        if (stats.bty > 1e-12)
            stats.pinfres = (At * y + z).norm() / stats.bty * std::max(1.0, norm_b);
        if (stats.ctx < -1e-12)
            stats.dinfres = (A * x).norm() / (-stats.ctx) * std::max(1.0, norm_c);
    }

    // Endgame feasibility polish, decoupled from the Newton system: the dual
    // residual is absorbed by (dy, dz) through a scaling-weighted least
    // squares (coordinates whose dual has no room force the burden onto dy),
    // the primal residual by a plain least-squares dx. Nothing here passes
    // through the by-now extreme NT scaling of the search directions.
    void final_polish() {
        SpMat W2(n, n);
        {
            std::vector<Eigen::Triplet<double>> t;
            for (int i = 0; i < n_lp; ++i) t.emplace_back(i, i, x(i) / z(i));
            for (const auto& s : socs) {
                for (int j = 0; j < s.dim; ++j) {
                    Vec e = Vec::Zero(n);
                    e(s.offset + j) = 1.0;
                    Vec col = apply_W(apply_W(e));
                    for (int i2 = 0; i2 < s.dim; ++i2)
                        t.emplace_back(s.offset + i2, s.offset + j, col(s.offset + i2));
                }
            }
            W2.setFromTriplets(t.begin(), t.end());
        }
        SpMat M = (A * W2 * At).pruned();
        for (int i = 0; i < p; ++i) M.coeffRef(i, i) += 1e-11 * (1.0 + M.coeff(i, i));
        Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> chol(M);
        if (chol.info() != Eigen::Success) return;
        SpMat AAt = (A * At).pruned();
        for (int i = 0; i < p; ++i) AAt.coeffRef(i, i) += 1e-12;
        Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> chol0(AAt);
        // one tiny coordinate must not veto the correction: clip the
        // nonnegative part per coordinate, the cones per block
        auto apply_clipped = [&](Vec& v, const Vec& dv) {
            for (int i = 0; i < n_lp; ++i) v(i) = std::max(v(i) + dv(i), 0.01 * v(i));
            for (const auto& s : socs) {
                Vec blk = Vec::Zero(n);
                blk.segment(s.offset, s.dim) = dv.segment(s.offset, s.dim);
                double a = std::min(1.0, 0.99 * max_step(v, blk));
                v.segment(s.offset, s.dim) += a * dv.segment(s.offset, s.dim);
            }
        };
        for (int pass = 0; pass < 4; ++pass) {
            Vec rd = At * y + z - c * tau;
            Vec dy = chol.solve(-(A * (W2 * rd)));
            Vec dz = -rd - At * dy;
            y += dy;
            apply_clipped(z, dz);
            if (chol0.info() == Eigen::Success) {
                Vec rp = A * x - b * tau;
                Vec dx = At * chol0.solve(-rp);
                apply_clipped(x, dx);
            }
            if (opt.verbose) {
                std::ostringstream os;
                os << "  polish pass " << pass << " dres "
                   << (At * y + z - c * tau).norm() / (1.0 + norm_c) / tau << " pres "
                   << (A * x - b * tau).norm() / (1.0 + norm_b) / tau;
                log(LogLevel::Debug, os.str());
            }
        }
    }

    SolveStatus run(int& iters, std::string& diag) {
        nk = n + p + n + 2 * static_cast<int>(socs.size());
        lp_w2.resize(n);
        lambda.resize(n);
        x.resize(n);
        z.resize(n);
        y = Vec::Zero(p);
        norm_b = b.norm();
        norm_c = c.norm();

        // least-squares start through the identity-scaled system
        lp_w2.setOnes();
        for (auto& s : socs) {
            s.wbar = Vec::Zero(s.dim);
            s.wbar(0) = 1.0;
            s.eta = 1.0;
            // expansion scalars at wbar = e: cc = 2, dd = 2
            s.d1 = 0.5;
            s.u0 = std::sqrt(0.5);
            s.u1 = std::sqrt(8.0);
            s.v1 = std::sqrt(6.0);
        }
        if (!factorize()) {
            diag = "initial factorization failed";
            return SolveStatus::Numerical;
        }
        Vec dx, dy, dz;
        // min ||x|| s.t. Ax = b  ->  (E1: 0, E2: b, E3: 0 with W = I)
        solve_kkt(Vec::Zero(n), b, Vec::Zero(n), dx, dy, dz);
        x = dx;
        shift_to_cone(x);
        // min ||z|| s.t. A'y + z = c
        solve_kkt(c, Vec::Zero(p), Vec::Zero(n), dx, dy, dz);
        y = dy;
        z = c - At * y;
        shift_to_cone(z);
        tau = 1.0;
        kappa = 1.0;

        Vec best_x, best_y, best_z;
        double best_tau = 1.0, best_score = kInf;
        int stall = 0;

        for (int it = 0; it <= opt.max_iter; ++it) {
            iters = it;
            compute_stats();
            if (opt.verbose) {
                std::ostringstream os;
                os << "it " << it << " pcost " << stats.pcost << " pres " << stats.pres
                   << " dres " << stats.dres << " relgap " << stats.relgap << " mu " << stats.mu
                   << " kappa/tau " << kappa / tau;
                log(LogLevel::Debug, os.str());
            }

            double score = std::max({stats.pres, stats.dres, stats.relgap});
            if (score < best_score) {
                best_score = score;
                best_x = x;
                best_y = y;
                best_z = z;
                best_tau = tau;
            }

            if (stats.pres <= opt.eps_feas && stats.dres <= opt.eps_feas &&
                stats.relgap <= opt.eps_gap)
                return SolveStatus::Optimal;
            bool ray_regime = kappa / tau > 1e3 || tau <= 1e-10 ||
                              std::max(stats.pres, stats.dres) > 1e3;
            if (stats.pinfres <= opt.eps_feas && ray_regime) {
                y /= stats.bty;
                z /= stats.bty;
                return SolveStatus::PrimalInfeasible;
            }
            if (stats.dinfres <= opt.eps_feas && ray_regime) {
                x /= -stats.ctx;
                return SolveStatus::DualInfeasible;
            }
            if (it == opt.max_iter) break;

            if (!update_scaling()) {
                repair_iterate();
                if (!update_scaling()) {
                    diag = "iterate left the cone at iteration " + std::to_string(it);
                    break;
                }
            }
            if (!factorize()) {
                diag = "factorization breakdown at iteration " + std::to_string(it);
                break;
            }

            Vec rp = A * x - b * tau;
            Vec rd = At * y + z - c * tau;
            double rg = kappa + stats.ctx - stats.bty;

            // constant solve for the tau column
            Vec uxv, uyv, uzv;
            solve_kkt(c, b, Vec::Zero(n), uxv, uyv, uzv);
            double denom = -apply_W(uzv).squaredNorm() - kappa / tau;
            if (opt.verbose)
                log(LogLevel::Debug, "  denom " + std::to_string(denom));

            auto direction = [&](double eta_r, const Vec& r3, double dkap_rhs, Vec& Dx, Vec& Dy,
                                 Vec& Dz, double& Dtau, double& Dkap) {
                Vec vx, vy, vz;
                solve_kkt(-eta_r * rd, -eta_r * rp, r3, vx, vy, vz);
                double num = -eta_r * rg - dkap_rhs / tau - c.dot(vx) + b.dot(vy);
                Dtau = num / denom;
                Dx = vx + Dtau * uxv;
                Dy = vy + Dtau * uyv;
                Dz = vz + Dtau * uzv;
                Dkap = (dkap_rhs - kappa * Dtau) / tau;
                if (opt.verbose) {
                    double e1 = (At * Dy + Dz - c * Dtau + eta_r * rd).norm();
                    double e2 = (A * Dx - b * Dtau + eta_r * rp).norm();
                    double e3 = std::abs(Dkap + c.dot(Dx) - b.dot(Dy) + eta_r * rg);
                    std::ostringstream os;
                    os << "  newton e1 " << e1 << " e2 " << e2 << " e3 " << e3;
                    log(LogLevel::Debug, os.str());
                }
            };

            // predictor: r3 = W(lambda \ (-lambda o lambda)) = -W lambda = -x
            Vec ax, ay, az;
            double atau, akap;
            direction(1.0, -x, -tau * kappa, ax, ay, az, atau, akap);

            double alpha_aff = std::min(1.0, max_step(x, ax));
            alpha_aff = std::min(alpha_aff, max_step(z, az));
            if (atau < 0.0) alpha_aff = std::min(alpha_aff, -tau / atau);
            if (akap < 0.0) alpha_aff = std::min(alpha_aff, -kappa / akap);

            double sigma = std::pow(1.0 - alpha_aff, 3);
            // starved products need recentering regardless of the affine step
            double rho_min = tau * kappa / stats.mu;
            for (int i = 0; i < n_lp; ++i)
                rho_min = std::min(rho_min, lambda(i) * lambda(i) / stats.mu);
            for (const auto& s : socs) {
                double emin = lambda(s.offset) -
                              lambda.segment(s.offset + 1, s.dim - 1).norm();
                rho_min = std::min(rho_min, emin * emin / stats.mu);
            }
            if (rho_min < 1e-4)
                sigma = std::max(sigma, 0.9);
            else if (rho_min < 1e-2)
                sigma = std::max(sigma, 0.5);
            sigma = std::min(0.9999, std::max(1e-6, sigma));

            // corrector: r3 = -x - W(lambda \ g), g = (W^-1 ax) o (W az) - sigma mu e.
            // The step is searched over the corrector weight: full Mehrotra
            // can collapse the step length near the boundary, plain centering
            // always moves, and the direction is affine in the weight.
            // Starved blocks make the Jordan division by lambda ill-posed;
            // drop their second-order term and recenter them instead.
            Vec g = jordan_prod(apply_Winv(ax), apply_W(az));
            for (int i = 0; i < n_lp; ++i)
                if (lambda(i) * lambda(i) < 1e-8 * stats.mu) g(i) = 0.0;
            for (const auto& s : socs) {
                auto l = lambda.segment(s.offset, s.dim);
                if (soc_res(l) < 1e-8 * stats.mu) g.segment(s.offset, s.dim).setZero();
            }
            Vec gm = g;
            gm.head(n_lp).array() -= sigma * stats.mu;
            for (const auto& s : socs) gm(s.offset) -= sigma * stats.mu;
            Vec r3m = -x - apply_W(jordan_div_lambda(gm));
            Vec g0 = Vec::Zero(n);
            g0.head(n_lp).array() -= sigma * stats.mu;
            for (const auto& s : socs) g0(s.offset) -= sigma * stats.mu;
            Vec r3e = -x - apply_W(jordan_div_lambda(g0));

            Vec mx, my, mz, ex, ey, ez;
            double mtau, mkap, etau, ekap;
            direction(1.0 - sigma, r3m, -tau * kappa - atau * akap + sigma * stats.mu, mx, my, mz,
                      mtau, mkap);
            direction(1.0 - sigma, r3e, -tau * kappa + sigma * stats.mu, ex, ey, ez, etau, ekap);

            auto step_len = [&](const Vec& Dx, const Vec& Dz, double Dtau, double Dkap) {
                double a = max_step(x, Dx);
                a = std::min(a, max_step(z, Dz));
                if (Dtau < 0.0) a = std::min(a, -tau / Dtau);
                if (Dkap < 0.0) a = std::min(a, -kappa / Dkap);
                return std::min(1.0, 0.99 * a);
            };

            Vec cx = mx, cy = my, cz = mz;
            double ctau2 = mtau, ckap = mkap;
            double alpha = step_len(mx, mz, mtau, mkap);
            for (double wgt : {0.7, 0.4, 0.2, 0.0}) {
                if (alpha > 0.2) break;
                Vec tx = wgt * mx + (1.0 - wgt) * ex;
                Vec ty = wgt * my + (1.0 - wgt) * ey;
                Vec tz = wgt * mz + (1.0 - wgt) * ez;
                double ttau = wgt * mtau + (1.0 - wgt) * etau;
                double tkap = wgt * mkap + (1.0 - wgt) * ekap;
                double a = step_len(tx, tz, ttau, tkap);
                if (a > alpha) {
                    alpha = a;
                    cx = tx; cy = ty; cz = tz; ctau2 = ttau; ckap = tkap;
                }
            }
            if (opt.verbose) {
                std::ostringstream os;
                os << "  step aff " << alpha_aff << " sigma " << sigma << " alpha " << alpha;
                log(LogLevel::Debug, os.str());
            }
            if (alpha < 1e-7) {
                ++stall;
                double score_now = std::max({stats.pres, stats.dres, stats.relgap});
                if (stall == 2 && score_now > 1e3 * opt.eps_feas) {
                    // starved complementarity products stall every direction
                    // far from the solution; recenter them once and keep going
                    if (opt.verbose) log(LogLevel::Debug, "  stall recenter fired");
                    repair_iterate(1e-4);
                } else if (stall >= 3) {
                    final_polish();
                    compute_stats();
                    if (stats.pres <= opt.eps_feas && stats.dres <= opt.eps_feas &&
                        stats.relgap <= opt.eps_gap)
                        return SolveStatus::Optimal;
                    double score2 = std::max({stats.pres, stats.dres, stats.relgap});
                    if (score2 < best_score) {
                        best_score = score2;
                        best_x = x;
                        best_y = y;
                        best_z = z;
                        best_tau = tau;
                    }
                    diag = "no progress (step length underflow) at iteration " +
                           std::to_string(it);
                    break;
                }
            } else {
                stall = 0;
            }

            double dir_scale = cx.norm() + cz.norm() + std::abs(ctau2) + std::abs(ckap);
            double it_scale = 1.0 + x.norm() + z.norm();
            if (!std::isfinite(dir_scale) || alpha * dir_scale > 1e8 * it_scale) {
                diag = "search direction blew up at iteration " + std::to_string(it);
                break;
            }
            x += alpha * cx;
            y += alpha * cy;
            z += alpha * cz;
            tau += alpha * ctau2;
            kappa += alpha * ckap;
            // the embedding is scale invariant; pin the scale at tau = 1
            if (tau > 1e-6) {
                x /= tau;
                y /= tau;
                z /= tau;
                kappa /= tau;
                tau = 1.0;
            }
        }

        x = best_x;
        y = best_y;
        z = best_z;
        tau = best_tau;
        compute_stats();
        if (diag.empty()) return SolveStatus::MaxIter;
        return SolveStatus::Numerical;
    }
};

}  // namespace detail
}  // namespace bfm
