#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bfm/netmodel.hpp"

namespace bfm {

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line, int col)
        : Error("parse", what + " (line " + std::to_string(line) + ", col " + std::to_string(col) + ")"),
          line_(line), col_(col) {}
    int line() const { return line_; }
    int col() const { return col_; }

private:
    int line_, col_;
};

/// MATPOWER-style tables, or an already-materialized Network when the input
/// was the native JSON schema.
struct RawCase {
    std::string name;
    double base_mva = 0.0;
    std::vector<std::vector<double>> bus, gen, branch, gencost;
    std::optional<Network> native;
};

struct CaseOptions {
    double zero_r_epsilon = 1e-6;
    bool lump_line_charging = true;
    bool ignore_taps = false;
    bool merge_parallel = false;
    // MATPOWER files use large placeholder ratings for unlimited branches
    double rate_a_big_m = 9000.0;  // MVA; ratings at or above are treated as none
};

// MATPOWER v2 column indices used here.
namespace mpcol {
// bus: BUS_I TYPE PD QD GS BS AREA VM VA BASE_KV ZONE VMAX VMIN
enum { BUS_I = 0, BUS_TYPE, PD, QD, GS, BS, AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN };
// gen: GEN_BUS PG QG QMAX QMIN VG MBASE GEN_STATUS PMAX PMIN
enum { GEN_BUS = 0, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN };
// branch: F_BUS T_BUS BR_R BR_X BR_B RATE_A RATE_B RATE_C TAP SHIFT BR_STATUS
enum { F_BUS = 0, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS };
}  // namespace mpcol

namespace detail {

struct MpTokenizer {
    std::string_view text;
    size_t pos = 0;
    int line = 1, col = 1;

    void advance(size_t k) {
        for (size_t i = 0; i < k && pos < text.size(); ++i, ++pos) {
            if (text[pos] == '\n') { ++line; col = 1; } else ++col;
        }
    }
    void skip_ws_and_comments(bool stop_at_newline = false) {
        while (pos < text.size()) {
            char c = text[pos];
            if (c == '%') {
                while (pos < text.size() && text[pos] != '\n') advance(1);
            } else if (c == '\n') {
                if (stop_at_newline) return;
                advance(1);
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                advance(1);
            } else {
                return;
            }
        }
    }
    bool eat(std::string_view s) {
        skip_ws_and_comments();
        if (text.substr(pos, s.size()) == s) { advance(s.size()); return true; }
        return false;
    }
    std::string ident() {
        skip_ws_and_comments();
        size_t start = pos;
        while (pos < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_' || text[pos] == '.'))
            advance(1);
        return std::string(text.substr(start, pos - start));
    }
    double number() {
        skip_ws_and_comments();
        size_t start = pos;
        const char* begin = text.data() + pos;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) {
            // Allow Inf/-Inf spellings strtod may reject in some locales.
            if (text.substr(pos, 3) == "Inf") { advance(3); return kInf; }
            if (text.substr(pos, 4) == "-Inf") { advance(4); return -kInf; }
            throw ParseError("expected number", line, col);
        }
        advance(static_cast<size_t>(end - begin));
        (void)start;
        return v;
    }
};

inline std::vector<std::vector<double>> parse_matrix(MpTokenizer& tok) {
    if (!tok.eat("[")) throw ParseError("expected '['", tok.line, tok.col);
    std::vector<std::vector<double>> rows;
    std::vector<double> row;
    for (;;) {
        tok.skip_ws_and_comments(/*stop_at_newline=*/true);
        if (tok.pos >= tok.text.size()) throw ParseError("unterminated matrix", tok.line, tok.col);
        char c = tok.text[tok.pos];
        if (c == '\n' || c == ';') {
            tok.advance(1);
            if (!row.empty()) { rows.push_back(std::move(row)); row.clear(); }
            continue;
        }
        if (c == ']') {
            tok.advance(1);
            if (!row.empty()) rows.push_back(std::move(row));
            return rows;
        }
        if (c == ',') { tok.advance(1); continue; }
        row.push_back(tok.number());
    }
}

Network network_from_json_obj(const nlohmann::json& j);

}  // namespace detail

/// Parses a MATPOWER case (subset grammar) or the native JSON schema,
/// auto-detected from the first non-blank character. Out-of-service branches
/// and generators are dropped; row order is preserved otherwise.
inline RawCase parse_case(std::string_view text) {
    size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos && text[first] == '{') {
        nlohmann::json j = nlohmann::json::parse(text);
        RawCase raw;
        raw.native = detail::network_from_json_obj(j);
        raw.base_mva = raw.native->base_mva;
        raw.name = j.value("name", "");
        return raw;
    }

    detail::MpTokenizer tok{text};
    RawCase raw;
    std::map<std::string, std::vector<std::vector<double>>> tables;
    bool saw_base = false;
    for (;;) {
        tok.skip_ws_and_comments();
        if (tok.pos >= tok.text.size()) break;
        std::string id = tok.ident();
        if (id.empty()) throw ParseError("unexpected character", tok.line, tok.col);
        if (id == "function") {
            tok.ident();  // "mpc" (or any result name)
            if (tok.eat("=")) raw.name = tok.ident();
            continue;
        }
        if (id.rfind("mpc.", 0) != 0) throw ParseError("expected mpc.<field>, got '" + id + "'", tok.line, tok.col);
        std::string field = id.substr(4);
        if (!tok.eat("=")) throw ParseError("expected '='", tok.line, tok.col);
        if (field == "baseMVA") {
            raw.base_mva = tok.number();
            saw_base = true;
        } else if (field == "version") {
            tok.skip_ws_and_comments();
            while (tok.pos < tok.text.size() && tok.text[tok.pos] != ';') tok.advance(1);
        } else {
            tables[field] = detail::parse_matrix(tok);
        }
        tok.eat(";");
    }
    if (!saw_base) throw Error("parse", "missing field: baseMVA");
    for (const char* required : {"bus", "gen", "branch"})
        if (!tables.count(required)) throw Error("parse", std::string("missing table: ") + required);

    auto check_columns = [](const std::vector<std::vector<double>>& t, size_t min_cols, const char* name) {
        if (t.empty()) throw Error("parse", std::string("empty table: ") + name);
        size_t w = t.front().size();
        if (w < min_cols)
            throw Error("parse", std::string("table ") + name + " has too few columns");
        for (const auto& r : t)
            if (r.size() != w)
                throw Error("parse", std::string("inconsistent column count in table ") + name);
    };
    check_columns(tables["bus"], 13, "bus");
    check_columns(tables["gen"], 10, "gen");
    check_columns(tables["branch"], 11, "branch");

    raw.bus = tables["bus"];
    for (const auto& g : tables["gen"])
        if (g[mpcol::GEN_STATUS] != 0.0) raw.gen.push_back(g);
    for (const auto& b : tables["branch"])
        if (b[mpcol::BR_STATUS] != 0.0) raw.branch.push_back(b);
    if (tables.count("gencost")) raw.gencost = tables["gencost"];
    return raw;
}

inline RawCase parse_case_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_case(text);
}

/// Builds the per-unit Network: slack relabeled to index 0, charging lumped
/// into bus shunts, taps dropped, zero-resistance branches regularized, and
/// every line on a BFS tree from the slack oriented away from the root.
inline Network to_network(const RawCase& raw, const CaseOptions& opts = {},
                          std::vector<std::string>* warnings = nullptr) {
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
        log(LogLevel::Warn, msg);
    };
    Network net;
    if (raw.native) {
        net = *raw.native;
    } else {
        const double base = raw.base_mva;
        if (base <= 0) throw Error("parse", "baseMVA must be positive");
        net.base_mva = base;

        // slack bus and relabeling (slack first, then file order)
        int slack_row = -1;
        for (size_t i = 0; i < raw.bus.size(); ++i) {
            if (raw.bus[i][mpcol::BUS_TYPE] == 3.0) {
                if (slack_row >= 0) throw Error("topology", "multiple slack buses");
                slack_row = static_cast<int>(i);
            }
        }
        if (slack_row < 0) throw Error("topology", "no slack bus");
        std::map<int, int> ext2int;
        std::vector<int> rows;
        rows.push_back(slack_row);
        for (size_t i = 0; i < raw.bus.size(); ++i)
            if (static_cast<int>(i) != slack_row) rows.push_back(static_cast<int>(i));
        for (size_t k = 0; k < rows.size(); ++k) {
            int ext = static_cast<int>(raw.bus[rows[k]][mpcol::BUS_I]);
            if (ext2int.count(ext)) throw Error("parse", "duplicate bus id " + std::to_string(ext));
            ext2int[ext] = static_cast<int>(k);
        }

        net.buses.resize(rows.size());
        net.external_id.resize(rows.size());
        for (size_t k = 0; k < rows.size(); ++k) {
            const auto& r = raw.bus[rows[k]];
            Bus& b = net.buses[k];
            b.id = static_cast<int>(k);
            b.is_slack = (k == 0);
            net.external_id[k] = static_cast<int>(r[mpcol::BUS_I]);
            b.shunt = Complex(r[mpcol::GS], r[mpcol::BS]) / base;
            b.v_min = r[mpcol::VMIN] * r[mpcol::VMIN];
            b.v_max = r[mpcol::VMAX] * r[mpcol::VMAX];
            b.pc_min = b.pc_max = r[mpcol::PD] / base;
            b.qc_min = b.qc_max = r[mpcol::QD] / base;
        }

        double slack_vg = 0.0;
        for (const auto& g : raw.gen) {
            auto it = ext2int.find(static_cast<int>(g[mpcol::GEN_BUS]));
            if (it == ext2int.end())
                throw Error("parse", "gen references missing bus " + std::to_string((int)g[mpcol::GEN_BUS]));
            Bus& b = net.buses[it->second];
            b.pg_min += g[mpcol::PMIN] / base;
            b.pg_max += g[mpcol::PMAX] / base;
            b.qg_min += g[mpcol::QMIN] / base;
            b.qg_max += g[mpcol::QMAX] / base;
            if (it->second == 0 && slack_vg == 0.0 && g[mpcol::VG] > 0.0) slack_vg = g[mpcol::VG];
        }
        net.slack_vm = slack_vg > 0.0 ? slack_vg
                       : raw.bus[slack_row][mpcol::VM] > 0.0 ? raw.bus[slack_row][mpcol::VM]
                                                             : 1.0;

        std::vector<std::string> tapped;
        for (const auto& br : raw.branch) {
            auto fit = ext2int.find(static_cast<int>(br[mpcol::F_BUS]));
            auto tit = ext2int.find(static_cast<int>(br[mpcol::T_BUS]));
            if (fit == ext2int.end() || tit == ext2int.end())
                throw Error("parse", "branch references missing bus");
            Line l;
            l.from = fit->second;
            l.to = tit->second;
            l.z = Complex(br[mpcol::BR_R], br[mpcol::BR_X]);
            double ratio = br[mpcol::TAP];
            if (ratio != 0.0 && ratio != 1.0) {
                if (opts.ignore_taps) {
                    tapped.push_back(std::to_string((int)br[mpcol::F_BUS]) + "-" +
                                     std::to_string((int)br[mpcol::T_BUS]));
                } else {
                    l.tap = ratio;
                }
            }
            if (br[mpcol::SHIFT] != 0.0)
                warn("branch " + std::to_string((int)br[mpcol::F_BUS]) + "-" +
                     std::to_string((int)br[mpcol::T_BUS]) + " phase shift dropped");
            if (opts.lump_line_charging && br[mpcol::BR_B] != 0.0) {
                net.buses[l.from].shunt += Complex(0.0, br[mpcol::BR_B] / 2.0 * l.from_scale());
                net.buses[l.to].shunt += Complex(0.0, br[mpcol::BR_B] / 2.0);
            }
            if (br[mpcol::RATE_A] > 0.0 && br[mpcol::RATE_A] < opts.rate_a_big_m)
                l.s_max = br[mpcol::RATE_A] / base;
            net.lines.push_back(l);
        }
        if (!tapped.empty()) {
            std::string msg = "transformer ratio forced to 1 on branches:";
            for (const auto& s : tapped) msg += " " + s;
            warn(msg);
        }
    }

    // zero-resistance regularization
    for (auto& l : net.lines) {
        if (l.z.real() == 0.0) l.z += Complex(opts.zero_r_epsilon, 0.0);
        if (l.z.real() < 0.0) warn("line has negative resistance; kept as-is");
    }

    if (opts.merge_parallel) {
        std::map<std::pair<int, int>, int> seen;  // unordered pair -> line index
        std::vector<Line> merged;
        for (const auto& l : net.lines) {
            auto key = std::minmax(l.from, l.to);
            auto it = seen.find(key);
            if (it == seen.end()) {
                seen[key] = static_cast<int>(merged.size());
                merged.push_back(l);
            } else {
                Line& m = merged[it->second];
                // parallel impedance combination; limits add
                m.z = (m.z * l.z) / (m.z + l.z);
                if (m.s_max < kInf || l.s_max < kInf)
                    m.s_max = std::min(m.s_max, kInf) == kInf ? l.s_max
                              : (l.s_max == kInf ? m.s_max : m.s_max + l.s_max);
                if (m.i_max < kInf && l.i_max < kInf) m.i_max += l.i_max;
                warn("merged parallel line " + std::to_string(key.first) + "-" + std::to_string(key.second));
            }
        }
        net.lines = std::move(merged);
    }

    if (!net.connected()) throw Error("topology", "network graph is disconnected");

    // Orient a BFS tree from the slack away from the root (model convention);
    // non-tree lines keep their file orientation.
    {
        SpanningTree t = spanning_tree(net, TreeStrategy::Bfs);
        for (int bus : t.bfs_order) {
            if (bus == 0) continue;
            Line& l = net.lines[t.parent_line[bus]];
            if (l.to != bus) {
                std::swap(l.from, l.to);
                l.tap_at_to = !l.tap_at_to;
            }
        }
    }

    // slack voltage must respect its own box
    {
        Bus& s = net.buses[0];
        double v0 = net.slack_vm * net.slack_vm;
        if (v0 < s.v_min || v0 > s.v_max) {
            double clamped = std::min(std::max(v0, s.v_min), s.v_max);
            warn("slack |V0|^2 clamped from " + std::to_string(v0) + " to " + std::to_string(clamped));
            net.slack_vm = std::sqrt(clamped);
        }
    }

    net.validate();
    return net;
}

/// Widens every load box to [lower, +inf), the regime with no upper bounds
/// on loads.
inline Network relax_load_upper_bounds(Network net) {
    for (auto& b : net.buses) {
        b.pc_max = kInf;
        b.qc_max = kInf;
    }
    return net;
}

namespace detail {

inline nlohmann::json maybe(double v) {
    // +-inf encodes as null; JSON numbers are IEEE-754 doubles
    if (std::isinf(v)) return nullptr;
    return v;
}
inline double from_maybe(const nlohmann::json& j, double inf_value) {
    if (j.is_null()) return inf_value;
    return j.get<double>();
}

inline Network network_from_json_obj(const nlohmann::json& j) {
    Network net;
    net.base_mva = j.at("base_mva").get<double>();
    net.slack_vm = j.value("slack_vm", 1.0);
    for (const auto& jb : j.at("buses")) {
        Bus b;
        b.id = jb.at("id").get<int>();
        b.shunt = Complex(jb.value("shunt_g", 0.0), jb.value("shunt_b", 0.0));
        b.v_min = from_maybe(jb.at("v_min"), 0.0);
        b.v_max = from_maybe(jb.at("v_max"), kInf);
        b.pg_min = from_maybe(jb.at("pg_min"), -kInf);
        b.pg_max = from_maybe(jb.at("pg_max"), kInf);
        b.qg_min = from_maybe(jb.at("qg_min"), -kInf);
        b.qg_max = from_maybe(jb.at("qg_max"), kInf);
        b.pc_min = from_maybe(jb.at("pc_min"), -kInf);
        b.pc_max = from_maybe(jb.at("pc_max"), kInf);
        b.qc_min = from_maybe(jb.at("qc_min"), -kInf);
        b.qc_max = from_maybe(jb.at("qc_max"), kInf);
        b.is_slack = jb.value("is_slack", false);
        if (jb.contains("ext_id")) net.external_id.push_back(jb["ext_id"].get<int>());
        net.buses.push_back(b);
    }
    for (const auto& jl : j.at("lines")) {
        Line l;
        l.from = jl.at("from").get<int>();
        l.to = jl.at("to").get<int>();
        l.z = Complex(jl.at("r").get<double>(), jl.at("x").get<double>());
        l.i_max = from_maybe(jl.value("i_max", nlohmann::json()), kInf);
        l.s_max = from_maybe(jl.value("s_max", nlohmann::json()), kInf);
        l.tap = jl.value("tap", 1.0);
        l.tap_at_to = jl.value("tap_at_to", false);
        net.lines.push_back(l);
    }
    if (!net.external_id.empty() && net.external_id.size() != net.buses.size())
        throw Error("parse", "ext_id must be present on all buses or none");
    return net;
}

}  // namespace detail

inline nlohmann::json network_to_json_obj(const Network& net) {
    nlohmann::json j;
    j["base_mva"] = net.base_mva;
    j["slack_vm"] = net.slack_vm;
    j["buses"] = nlohmann::json::array();
    for (const auto& b : net.buses) {
        nlohmann::json jb;
        jb["id"] = b.id;
        if (!net.external_id.empty()) jb["ext_id"] = net.external_id[b.id];
        jb["shunt_g"] = b.shunt.real();
        jb["shunt_b"] = b.shunt.imag();
        jb["v_min"] = detail::maybe(b.v_min);
        jb["v_max"] = detail::maybe(b.v_max);
        jb["pg_min"] = detail::maybe(b.pg_min);
        jb["pg_max"] = detail::maybe(b.pg_max);
        jb["qg_min"] = detail::maybe(b.qg_min);
        jb["qg_max"] = detail::maybe(b.qg_max);
        jb["pc_min"] = detail::maybe(b.pc_min);
        jb["pc_max"] = detail::maybe(b.pc_max);
        jb["qc_min"] = detail::maybe(b.qc_min);
        jb["qc_max"] = detail::maybe(b.qc_max);
        jb["is_slack"] = b.is_slack;
        j["buses"].push_back(jb);
    }
    j["lines"] = nlohmann::json::array();
    for (const auto& l : net.lines) {
        nlohmann::json jl;
        jl["from"] = l.from;
        jl["to"] = l.to;
        jl["r"] = l.z.real();
        jl["x"] = l.z.imag();
        jl["i_max"] = detail::maybe(l.i_max);
        jl["s_max"] = detail::maybe(l.s_max);
        jl["tap"] = l.tap;
        jl["tap_at_to"] = l.tap_at_to;
        j["lines"].push_back(jl);
    }
    return j;
}

inline std::string network_to_json(const Network& net) { return network_to_json_obj(net).dump(2); }

inline Network network_from_json(std::string_view text) {
    return detail::network_from_json_obj(nlohmann::json::parse(text));
}

}  // namespace bfm
