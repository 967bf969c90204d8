#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bfm/conic.hpp"
#include "bfm/netmodel.hpp"

namespace bfm {

enum class ObjectiveKind { Loss, GenCost, CvrMix, Loadability };

/// Convex objectives over the relaxed variables: line losses sum r l, linear
/// generation cost, the mixed conservation-voltage-reduction form, or uniform
/// load scaling (maximized).
struct Objective {
    ObjectiveKind kind = ObjectiveKind::Loss;
    std::vector<double> gen_cost;   // per bus, used by GenCost / CvrMix
    std::vector<double> cvr_alpha;  // per bus, used by CvrMix

    static Objective loss() { return {ObjectiveKind::Loss, {}, {}}; }
    static Objective loadability() { return {ObjectiveKind::Loadability, {}, {}}; }
};

struct OpfOptions {
    bool relax_load_ub = false;
    bool fix_slack_voltage = false;  // pin |V0| to the case setpoint instead of its box
    SolverOptions solver;
    double exactness_tol = 1e-6;
    // A best iterate that misses the interior-point certificates can still
    // satisfy the relaxed equations to this per-unit residual; such points
    // are accepted and re-verified by the independent residual evaluator.
    double accept_residual = 1e-7;
};

/// Affine function of the problem variables; every natural model quantity
/// maps to one of these.
struct AffineExpr {
    double constant = 0.0;
    std::vector<std::pair<int, double>> terms;  // (variable, coefficient)

    static AffineExpr value(double c) { return {c, {}}; }
    static AffineExpr var(int idx) { return {0.0, {{idx, 1.0}}}; }
    double eval(const Eigen::VectorXd& x) const {
        double v = constant;
        for (auto [i, c] : terms) v += c * x(i);
        return v;
    }
};

struct OpfLayout {
    // direct cone variables, per line
    std::vector<int> l_var, vcopy_var, p_var, q_var;
    // natural quantities as affine expressions
    std::vector<AffineExpr> v, pg, qg, pc, qc;  // per bus
    int lambda_var = -1;
    int natural_count = 0;
    double objective_offset = 0.0;  // constant part dropped from c'x
};

struct BuiltOpf {
    ConicProblem problem;
    OpfLayout layout;
};

struct RelaxedSolution {
    // per line
    std::vector<double> P, Q, l, soc_gap;
    // per bus
    std::vector<double> v, pg, qg, pc, qc;
    double p0 = 0.0, q0 = 0.0;
    double objective_pu = 0.0;      // raw objective in per-unit quantities
    double objective_value = 0.0;   // physical units (MW for losses)
    double lambda = 1.0;            // loadability factor when applicable
    SolveStatus status = SolveStatus::Numerical;
    int iterations = 0;
    double solver_gap = 0.0, solver_pres = 0.0, solver_dres = 0.0;
};

struct ExactnessReport {
    bool exact = false;
    double max_rel_gap = 0.0;
    std::vector<std::pair<int, double>> offenders;  // line, relative gap
};

namespace detail {

class OpfBuilder {
public:
    OpfBuilder(const Network& net, const Objective& obj, bool relax_load_ub,
               bool fix_slack_voltage)
        : net_(net), obj_(obj), relax_load_ub_(relax_load_ub), fix_slack_(fix_slack_voltage) {}

    BuiltOpf build() {
        net_.validate();
        const int m = net_.m();
        const int nb = net_.n_buses();

        // cone-tiled variable layout: one rotated block per line, one SOC
        // block per MVA-limited line, then every nonnegative scalar
        layout_.l_var.resize(m);
        layout_.vcopy_var.resize(m);
        layout_.p_var.resize(m);
        layout_.q_var.resize(m);
        for (int e = 0; e < m; ++e) {
            layout_.l_var[e] = nvar_++;
            layout_.vcopy_var[e] = nvar_++;
            layout_.p_var[e] = nvar_++;
            layout_.q_var[e] = nvar_++;
            cones_.blocks.push_back({ConeKind::RotatedSecondOrder, 4});
        }
        std::vector<int> mva_t(m, -1), mva_a(m, -1), mva_b(m, -1);
        for (int e = 0; e < m; ++e) {
            if (net_.lines[e].s_max == kInf) continue;
            mva_t[e] = nvar_++;
            mva_a[e] = nvar_++;
            mva_b[e] = nvar_++;
            cones_.blocks.push_back({ConeKind::SecondOrder, 3});
        }
        nonneg_start_ = nvar_;

        layout_.v.resize(nb);
        layout_.pg.resize(nb);
        layout_.qg.resize(nb);
        layout_.pc.resize(nb);
        layout_.qc.resize(nb);
        bool loadability = obj_.kind == ObjectiveKind::Loadability;
        if (loadability) {
            double total = 0.0;
            for (const auto& b : net_.buses) total += std::abs(b.pc_min) + std::abs(b.qc_min);
            if (total <= 0.0) throw Error("model", "loadability needs a nonzero base load");
            layout_.lambda_var = new_nonneg("lambda");
        }
        for (int i = 0; i < nb; ++i) {
            const Bus& b = net_.buses[i];
            std::string sb = std::to_string(net_.ext_id(i));
            layout_.v[i] = (i == 0 && fix_slack_)
                               ? AffineExpr::value(net_.slack_vm * net_.slack_vm)
                               : boxed(b.v_min, b.v_max, "v[" + sb + "]");
            layout_.pg[i] = boxed(b.pg_min, b.pg_max, "pg[" + sb + "]");
            layout_.qg[i] = boxed(b.qg_min, b.qg_max, "qg[" + sb + "]");
            if (loadability) {
                AffineExpr pcx, qcx;
                pcx.terms.push_back({layout_.lambda_var, b.pc_min});
                qcx.terms.push_back({layout_.lambda_var, b.qc_min});
                layout_.pc[i] = pcx;
                layout_.qc[i] = qcx;
            } else {
                double pc_hi = relax_load_ub_ ? kInf : b.pc_max;
                double qc_hi = relax_load_ub_ ? kInf : b.qc_max;
                layout_.pc[i] = boxed(b.pc_min, pc_hi, "pc[" + sb + "]");
                layout_.qc[i] = boxed(b.qc_min, qc_hi, "qc[" + sb + "]");
            }
        }
        layout_.natural_count = 3 * m + 5 * nb + 2 + (loadability ? 1 : 0);

        // power balance at every bus: generation minus consumption equals
        // outflow minus received inflow plus the shunt term
        for (int j = 0; j < nb; ++j) {
            const Bus& b = net_.buses[j];
            Row prow, qrow;
            for (int e = 0; e < m; ++e) {
                const Line& ln = net_.lines[e];
                if (ln.from == j) {
                    prow.add(layout_.p_var[e], 1.0);
                    qrow.add(layout_.q_var[e], 1.0);
                }
                if (ln.to == j) {
                    prow.add(layout_.p_var[e], -1.0);
                    prow.add(layout_.l_var[e], ln.r());
                    qrow.add(layout_.q_var[e], -1.0);
                    qrow.add(layout_.l_var[e], ln.x());
                }
            }
            prow.add(layout_.v[j], b.gs());
            prow.add(layout_.pg[j], -1.0);
            prow.add(layout_.pc[j], 1.0);
            qrow.add(layout_.v[j], b.bq());
            qrow.add(layout_.qg[j], -1.0);
            qrow.add(layout_.qc[j], 1.0);
            push_row(prow, "P balance @" + std::to_string(net_.ext_id(j)));
            push_row(qrow, "Q balance @" + std::to_string(net_.ext_id(j)));
        }

        // voltage drop and the v-copy tie per line; flow limits
        for (int e = 0; e < m; ++e) {
            const Line& ln = net_.lines[e];
            Row drop;
            drop.add(layout_.v[ln.to], ln.to_scale());
            drop.add(layout_.v[ln.from], -ln.from_scale());
            drop.add(layout_.p_var[e], 2.0 * ln.r());
            drop.add(layout_.q_var[e], 2.0 * ln.x());
            drop.add(layout_.l_var[e], -std::norm(ln.z));
            push_row(drop, "V drop line " + std::to_string(e));

            Row tie;
            tie.add(layout_.vcopy_var[e], 1.0);
            tie.add(layout_.v[ln.from], -ln.from_scale());
            push_row(tie, "v copy line " + std::to_string(e));

            if (ln.i_max != kInf) {
                Row lim;
                lim.add(layout_.l_var[e], 1.0);
                lim.add(new_nonneg("slack i_max " + std::to_string(e)), 1.0);
                lim.rhs += ln.i_max * ln.i_max;
                push_row(lim, "I limit line " + std::to_string(e));
            }
            if (mva_t[e] >= 0) {
                Row rt;
                rt.add(mva_t[e], 1.0);
                rt.rhs += net_.lines[e].s_max;
                push_row(rt, "S limit head " + std::to_string(e));
                Row ra;
                ra.add(mva_a[e], 1.0);
                ra.add(layout_.p_var[e], -1.0);
                push_row(ra, "S limit P " + std::to_string(e));
                Row rb;
                rb.add(mva_b[e], 1.0);
                rb.add(layout_.q_var[e], -1.0);
                push_row(rb, "S limit Q " + std::to_string(e));
            }
        }
        flush_pending_rows();

        // objective
        Eigen::VectorXd c = Eigen::VectorXd::Zero(nvar_);
        auto add_expr = [&](const AffineExpr& ex, double w) {
            layout_.objective_offset += w * ex.constant;
            for (auto [i, coeff] : ex.terms) c(i) += w * coeff;
        };
        switch (obj_.kind) {
            case ObjectiveKind::Loss:
                for (int e = 0; e < m; ++e) c(layout_.l_var[e]) += net_.lines[e].r();
                break;
            case ObjectiveKind::GenCost:
                for (int i = 0; i < nb; ++i)
                    add_expr(layout_.pg[i], i < (int)obj_.gen_cost.size() ? obj_.gen_cost[i] : 0.0);
                break;
            case ObjectiveKind::CvrMix:
                for (int e = 0; e < m; ++e) c(layout_.l_var[e]) += net_.lines[e].r();
                for (int i = 0; i < nb; ++i) {
                    add_expr(layout_.pg[i], i < (int)obj_.gen_cost.size() ? obj_.gen_cost[i] : 0.0);
                    add_expr(layout_.v[i], i < (int)obj_.cvr_alpha.size() ? obj_.cvr_alpha[i] : 0.0);
                }
                break;
            case ObjectiveKind::Loadability:
                c(layout_.lambda_var) = -1.0;
                break;
        }

        // assemble
        cones_.blocks.push_back({ConeKind::Nonnegative, nvar_ - nonneg_start_});
        BuiltOpf out;
        out.problem.c = std::move(c);
        out.problem.A.resize(static_cast<int>(rhs_.size()), nvar_);
        out.problem.A.setFromTriplets(trip_.begin(), trip_.end());
        out.problem.b = Eigen::Map<Eigen::VectorXd>(rhs_.data(), rhs_.size());
        out.problem.cones = cones_;
        out.problem.var_names = std::move(names_);
        out.layout = std::move(layout_);
        return out;
    }

private:
    struct Row {
        std::vector<std::pair<int, double>> coeffs;
        double rhs = 0.0;
        void add(int var, double c) { coeffs.push_back({var, c}); }
        void add(const AffineExpr& ex, double w) {
            rhs -= w * ex.constant;
            for (auto [i, c] : ex.terms) coeffs.push_back({i, w * c});
        }
    };

    int new_nonneg(const std::string& name) {
        names_.resize(nvar_ + 1);
        names_[nvar_] = name;
        return nvar_++;
    }

    AffineExpr boxed(double lo, double hi, const std::string& name) {
        if (lo > hi) throw Error("bounds", "inverted box for " + name);
        if (lo == hi) return AffineExpr::value(lo);
        AffineExpr ex;
        if (lo != -kInf) {
            int s = new_nonneg(name + " - lo");
            ex.constant = lo;
            ex.terms.push_back({s, 1.0});
            if (hi != kInf) {
                Row r;
                r.add(s, 1.0);
                int s2 = new_nonneg("hi - " + name);
                r.add(s2, 1.0);
                r.rhs = hi - lo;
                pending_.push_back({r, "box " + name});
            }
        } else if (hi != kInf) {
            int s = new_nonneg("hi - " + name);
            ex.constant = hi;
            ex.terms.push_back({s, -1.0});
        } else {
            int sp = new_nonneg(name + "+");
            int sn = new_nonneg(name + "-");
            ex.terms.push_back({sp, 1.0});
            ex.terms.push_back({sn, -1.0});
        }
        return ex;
    }

    void push_row(const Row& row, const std::string& name) {
        int r = static_cast<int>(rhs_.size());
        for (auto [var, c] : row.coeffs)
            if (c != 0.0) trip_.emplace_back(r, var, c);
        rhs_.push_back(row.rhs);
        (void)name;
    }

    void flush_pending_rows() {
        for (auto& [row, name] : pending_) push_row(row, name);
        pending_.clear();
    }

    const Network& net_;
    Objective obj_;
    bool relax_load_ub_;
    bool fix_slack_ = false;
    int nvar_ = 0;
    int nonneg_start_ = 0;
    ConeSpec cones_;
    OpfLayout layout_;
    std::vector<Eigen::Triplet<double>> trip_;
    std::vector<double> rhs_;
    std::vector<std::string> names_;
    std::vector<std::pair<Row, std::string>> pending_;
};

}  // namespace detail

inline BuiltOpf build_opf_cr(const Network& net, const Objective& obj = Objective::loss(),
                             bool relax_load_ub = false, bool fix_slack_voltage = false) {
    return detail::OpfBuilder(net, obj, relax_load_ub, fix_slack_voltage).build();
}

inline RelaxedSolution extract_solution(const Network& net, const BuiltOpf& built,
                                        const ConicSolution& cs) {
    const int m = net.m();
    const int nb = net.n_buses();
    RelaxedSolution sol;
    sol.status = cs.status;
    sol.iterations = cs.iterations;
    sol.solver_gap = cs.gap;
    sol.solver_pres = cs.primal_residual;
    sol.solver_dres = cs.dual_residual;
    sol.P.resize(m);
    sol.Q.resize(m);
    sol.l.resize(m);
    sol.soc_gap.resize(m);
    for (int e = 0; e < m; ++e) {
        sol.P[e] = cs.x(built.layout.p_var[e]);
        sol.Q[e] = cs.x(built.layout.q_var[e]);
        sol.l[e] = cs.x(built.layout.l_var[e]);
    }
    sol.v.resize(nb);
    sol.pg.resize(nb);
    sol.qg.resize(nb);
    sol.pc.resize(nb);
    sol.qc.resize(nb);
    for (int i = 0; i < nb; ++i) {
        sol.v[i] = built.layout.v[i].eval(cs.x);
        sol.pg[i] = built.layout.pg[i].eval(cs.x);
        sol.qg[i] = built.layout.qg[i].eval(cs.x);
        sol.pc[i] = built.layout.pc[i].eval(cs.x);
        sol.qc[i] = built.layout.qc[i].eval(cs.x);
    }
    for (int e = 0; e < m; ++e) {
        double vi = net.lines[e].from_scale() * sol.v[net.lines[e].from];
        sol.soc_gap[e] = sol.l[e] * vi - sol.P[e] * sol.P[e] - sol.Q[e] * sol.Q[e];
    }
    sol.p0 = sol.pg[0] - sol.pc[0];
    sol.q0 = sol.qg[0] - sol.qc[0];
    sol.objective_pu = cs.objective + built.layout.objective_offset;
    if (built.layout.lambda_var >= 0) {
        sol.lambda = cs.x(built.layout.lambda_var);
        sol.objective_value = sol.lambda;
    } else {
        sol.objective_value = sol.objective_pu * net.base_mva;
    }
    return sol;
}

inline ExactnessReport check_exactness(const RelaxedSolution& sol, double tol = 1e-6) {
    ExactnessReport rep;
    for (size_t e = 0; e < sol.l.size(); ++e) {
        // gap = l v - P^2 - Q^2, measured against max(1, l v)
        double lv = sol.soc_gap[e] + sol.P[e] * sol.P[e] + sol.Q[e] * sol.Q[e];
        double relative = sol.soc_gap[e] / std::max(1.0, lv);
        rep.max_rel_gap = std::max(rep.max_rel_gap, relative);
        if (relative > tol) rep.offenders.push_back({static_cast<int>(e), relative});
    }
    rep.exact = rep.offenders.empty();
    return rep;
}

/// Independent recheck of the relaxed equations on an extracted solution;
/// returns the largest absolute residual among the balance and drop rows.
struct RelaxedResiduals {
    double p_balance = 0.0, q_balance = 0.0, v_drop = 0.0;
    double max() const { return std::max({p_balance, q_balance, v_drop}); }
};

inline RelaxedResiduals relaxed_residuals(const Network& net, const RelaxedSolution& sol) {
    RelaxedResiduals res;
    for (int j = 0; j < net.n_buses(); ++j) {
        const Bus& b = net.buses[j];
        double p = sol.pg[j] - sol.pc[j];
        double q = sol.qg[j] - sol.qc[j];
        double prow = -p + b.gs() * sol.v[j];
        double qrow = -q + b.bq() * sol.v[j];
        for (int e = 0; e < net.m(); ++e) {
            const Line& ln = net.lines[e];
            if (ln.from == j) {
                prow += sol.P[e];
                qrow += sol.Q[e];
            }
            if (ln.to == j) {
                prow -= sol.P[e] - ln.r() * sol.l[e];
                qrow -= sol.Q[e] - ln.x() * sol.l[e];
            }
        }
        res.p_balance = std::max(res.p_balance, std::abs(prow));
        res.q_balance = std::max(res.q_balance, std::abs(qrow));
    }
    for (int e = 0; e < net.m(); ++e) {
        const Line& ln = net.lines[e];
        double lhs = ln.to_scale() * sol.v[ln.to] - ln.from_scale() * sol.v[ln.from] +
                     2.0 * (ln.r() * sol.P[e] + ln.x() * sol.Q[e]) - std::norm(ln.z) * sol.l[e];
        res.v_drop = std::max(res.v_drop, std::abs(lhs));
    }
    return res;
}

namespace detail {

inline ConicSolution solve_or_throw(const ConicProblem& prob, const SolverOptions& sopts) {
    ConicSolution cs = solve(prob, sopts);
    if (cs.status != SolveStatus::Optimal) {
        std::string what = std::string("OPF-cr solve failed: ") + to_string(cs.status);
        if (!cs.diagnostic.empty()) what += " (" + cs.diagnostic + ")";
        if (cs.status == SolveStatus::PrimalInfeasible) {
            int worst = -1;
            double wmax = 0.0;
            for (int i = 0; i < cs.y.size(); ++i)
                if (std::abs(cs.y(i)) > wmax) {
                    wmax = std::abs(cs.y(i));
                    worst = i;
                }
            if (worst >= 0) what += "; strongest infeasibility row " + std::to_string(worst);
        }
        throw Error("solver", what);
    }
    return cs;
}

}  // namespace detail

/// Solves OPF-cr. An interior-point routine returns the analytic center of
/// the optimal face, which can leave cone slack on lines whose current cost
/// is negligible (regularized zero-resistance branches). When that happens, a
/// second pass minimizes the total squared current over the epsilon-optimal
/// face, which selects the equality point of the face.
inline RelaxedSolution solve_opf_cr(const Network& net, const Objective& obj = Objective::loss(),
                                    const OpfOptions& opts = {}) {
    BuiltOpf built = build_opf_cr(net, obj, opts.relax_load_ub, opts.fix_slack_voltage);
    ConicSolution cs = solve(built.problem, opts.solver);
    RelaxedSolution sol = extract_solution(net, built, cs);
    bool acceptable = cs.status == SolveStatus::Optimal;
    if (!acceptable &&
        (cs.status == SolveStatus::MaxIter || cs.status == SolveStatus::Numerical)) {
        RelaxedResiduals rr = relaxed_residuals(net, sol);
        double min_gap = 0.0;
        for (double g : sol.soc_gap) min_gap = std::min(min_gap, g);
        acceptable = rr.max() <= opts.accept_residual && min_gap >= -opts.accept_residual;
    }
    if (!acceptable) {
        std::string what = std::string("OPF-cr solve failed: ") + to_string(cs.status);
        if (!cs.diagnostic.empty()) what += " (" + cs.diagnostic + ")";
        throw Error("solver", what);
    }
    if (!check_exactness(sol, opts.exactness_tol).exact) {
        ConicProblem tight = built.problem;
        // keep the phase-one objective within its solver-level accuracy
        double budget = cs.objective + 1e-7 * std::max(1.0, std::abs(cs.objective));
        int slack = tight.num_vars();
        tight.c.conservativeResize(slack + 1);
        tight.c(slack) = 0.0;
        std::vector<Eigen::Triplet<double>> trip;
        for (int k = 0; k < tight.A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(tight.A, k); it; ++it)
                trip.emplace_back(it.row(), it.col(), it.value());
        int row = tight.num_rows();
        for (int j = 0; j < tight.num_vars(); ++j)
            if (tight.c(j) != 0.0) trip.emplace_back(row, j, tight.c(j));
        trip.emplace_back(row, slack, 1.0);
        tight.A.resize(row + 1, slack + 1);
        tight.A.setFromTriplets(trip.begin(), trip.end());
        tight.b.conservativeResize(row + 1);
        tight.b(row) = budget;
        tight.cones.blocks.push_back({ConeKind::Nonnegative, 1});
        tight.c.setZero();
        for (int e = 0; e < net.m(); ++e) tight.c(built.layout.l_var[e]) = 1.0;
        ConicSolution cs2 = solve(tight, opts.solver);
        if (cs2.status == SolveStatus::Optimal) {
            cs2.x.conservativeResize(built.problem.num_vars());
            ConicSolution merged = cs2;
            RelaxedSolution sol2 = extract_solution(net, built, merged);
            sol2.objective_pu = built.problem.c.dot(cs2.x) + built.layout.objective_offset;
            sol2.objective_value = built.layout.lambda_var >= 0
                                       ? sol2.lambda
                                       : sol2.objective_pu * net.base_mva;
            if (check_exactness(sol2, opts.exactness_tol).max_rel_gap <
                check_exactness(sol, opts.exactness_tol).max_rel_gap)
                sol = sol2;
        }
    }
    return sol;
}

/// Maximal uniform load scaling: maximize lambda, then re-solve a loss
/// minimization with the loads pinned at the optimum so the reported point
/// sits on an exact face of the relaxation.
inline std::pair<double, RelaxedSolution> solve_loadability(const Network& net,
                                                            const OpfOptions& opts = {}) {
    RelaxedSolution phase1 = solve_opf_cr(net, Objective::loadability(), opts);
    double lam = phase1.lambda;
    Network scaled = net;
    double factor = lam * (1.0 - 1e-9);
    for (auto& b : scaled.buses) {
        b.pc_min *= factor;
        b.pc_max = b.pc_min;
        b.qc_min *= factor;
        b.qc_max = b.qc_min;
    }
    RelaxedSolution phase2 = solve_opf_cr(scaled, Objective::loss(), opts);
    phase2.lambda = lam;
    return {lam, phase2};
}

inline nlohmann::json solution_to_json(const Network& net, const RelaxedSolution& sol) {
    nlohmann::json j;
    j["objective"] = sol.objective_value;
    j["objective_pu"] = sol.objective_pu;
    j["lambda"] = sol.lambda;
    j["status"] = to_string(sol.status);
    j["iterations"] = sol.iterations;
    j["lines"] = nlohmann::json::array();
    for (size_t e = 0; e < sol.P.size(); ++e) {
        j["lines"].push_back({{"from", net.ext_id(net.lines[e].from)},
                              {"to", net.ext_id(net.lines[e].to)},
                              {"P", sol.P[e]},
                              {"Q", sol.Q[e]},
                              {"l", sol.l[e]},
                              {"gap", sol.soc_gap[e]}});
    }
    j["buses"] = nlohmann::json::array();
    for (size_t i = 0; i < sol.v.size(); ++i) {
        j["buses"].push_back({{"id", net.ext_id(static_cast<int>(i))},
                              {"v", sol.v[i]},
                              {"pg", sol.pg[i]},
                              {"qg", sol.qg[i]},
                              {"pc", sol.pc[i]},
                              {"qc", sol.qc[i]}});
    }
    return j;
}

}  // namespace bfm
