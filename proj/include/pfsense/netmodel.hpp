#pragma once

#include <cctype>
#include <cmath>
#include <complex>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfsense/matrix.hpp"

namespace pfsense::netmodel {

enum class BusKind { slack, pv, pq };

struct Bus {
    int id = 0;              // external label
    BusKind kind = BusKind::pq;
    double p_load = 0.0;     // MW
    double q_load = 0.0;     // MVAr
    double g_shunt = 0.0;    // MW at 1 pu
    double b_shunt = 0.0;    // MVAr at 1 pu
    double v_init = 1.0;     // pu
    double theta_init = 0.0; // degrees
    double base_kv = 0.0;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;          // pu
    double x = 0.0;          // pu
    double b_charging = 0.0; // total line charging, pu
    double tap = 0.0;        // 0 means 1.0
    double shift = 0.0;      // degrees
    bool status = true;
};

struct Generator {
    int bus = 0;
    double p_gen = 0.0; // MW
    double q_gen = 0.0; // MVAr
    double v_set = 1.0; // pu
    bool status = true;
};

/// Parsed, validated network. Buses keep file order; downstream matrices use
/// the 0-based position in `buses`, with id_to_index as the explicit map.
struct NetworkCase {
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> gens;
    int slack_index = -1;
    std::map<int, int> id_to_index;

    int n_bus() const { return static_cast<int>(buses.size()); }

    int index_of(int bus_id) const {
        auto it = id_to_index.find(bus_id);
        if (it == id_to_index.end()) throw DanglingBranch("unknown bus id " + std::to_string(bus_id));
        return it->second;
    }

    std::vector<int> pq_indices() const {
        std::vector<int> v;
        for (int i = 0; i < n_bus(); ++i)
            if (buses[i].kind == BusKind::pq) v.push_back(i);
        return v;
    }
    std::vector<int> nonslack_indices() const {
        std::vector<int> v;
        for (int i = 0; i < n_bus(); ++i)
            if (buses[i].kind != BusKind::slack) v.push_back(i);
        return v;
    }

    /// Scheduled net injections (gen - load) in pu, indexed by bus position.
    void scheduled_injections(std::vector<double>& p, std::vector<double>& q) const {
        p.assign(n_bus(), 0.0);
        q.assign(n_bus(), 0.0);
        for (int i = 0; i < n_bus(); ++i) {
            p[i] -= buses[i].p_load / base_mva;
            q[i] -= buses[i].q_load / base_mva;
        }
        for (const Generator& g : gens) {
            if (!g.status) continue;
            const int i = index_of(g.bus);
            p[i] += g.p_gen / base_mva;
            q[i] += g.q_gen / base_mva;
        }
    }

    /// PV/slack magnitude setpoint: in-service generator v_set wins, else the
    /// bus table value.
    double v_setpoint(int index) const {
        for (const Generator& g : gens)
            if (g.status && index_of(g.bus) == index) return g.v_set;
        return buses[index].v_init;
    }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate(NetworkCase& c) {
    if (c.base_mva <= 0) throw MalformedCase("baseMVA must be positive");
    c.id_to_index.clear();
    c.slack_index = -1;
    int slack_count = 0;
    for (int i = 0; i < c.n_bus(); ++i) {
        const Bus& b = c.buses[i];
        if (c.id_to_index.count(b.id)) throw MalformedCase("duplicate bus id " + std::to_string(b.id));
        c.id_to_index[b.id] = i;
        if (b.v_init <= 0) throw MalformedCase("bus " + std::to_string(b.id) + ": v_init must be positive");
        if (b.kind == BusKind::slack) {
            ++slack_count;
            c.slack_index = i;
        }
    }
    if (slack_count > 1) throw MultipleSlack("case has " + std::to_string(slack_count) + " slack buses");
    if (slack_count == 0) throw MalformedCase("case has no slack bus");
    for (const Branch& br : c.branches) {
        if (!c.id_to_index.count(br.from_bus))
            throw DanglingBranch("branch references unknown bus " + std::to_string(br.from_bus));
        if (!c.id_to_index.count(br.to_bus))
            throw DanglingBranch("branch references unknown bus " + std::to_string(br.to_bus));
    }
    for (const Generator& g : c.gens)
        if (!c.id_to_index.count(g.bus))
            throw DanglingBranch("generator references unknown bus " + std::to_string(g.bus));
}

// ---------------------------------------------------------------------------
// MATPOWER .m subset parser
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip_comments(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_comment = false;
    for (char ch : text) {
        if (ch == '%') in_comment = true;
        if (ch == '\n') in_comment = false;
        if (!in_comment) out += ch;
    }
    return out;
}

/// Extract the bracketed numeric matrix assigned to mpc.<field>.
inline std::optional<std::vector<std::vector<double>>> find_matrix(const std::string& text,
                                                                   const std::string& field) {
    const std::string key = "mpc." + field;
    size_t pos = 0;
    while ((pos = text.find(key, pos)) != std::string::npos) {
        size_t p = pos + key.size();
        while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
        if (p >= text.size() || text[p] != '=') {
            pos += key.size();
            continue;
        }
        ++p;
        while (p < text.size() && std::isspace(static_cast<unsigned char>(text[p]))) ++p;
        if (p >= text.size() || text[p] != '[') {
            pos += key.size();
            continue;
        }
        const size_t open = p;
        const size_t close = text.find(']', open);
        if (close == std::string::npos) throw MalformedCase("unterminated matrix for " + key);
        std::string body = text.substr(open + 1, close - open - 1);
        std::vector<std::vector<double>> rows;
        std::vector<double> row;
        std::string tok;
        auto flush_tok = [&]() {
            if (tok.empty()) return;
            try {
                row.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw MalformedCase("bad numeric token '" + tok + "' in " + key);
            }
            tok.clear();
        };
        auto flush_row = [&]() {
            flush_tok();
            if (!row.empty()) rows.push_back(std::move(row));
            row.clear();
        };
        for (char ch : body) {
            if (ch == ';' || ch == '\n') {
                flush_row();
            } else if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',') {
                flush_tok();
            } else {
                tok += ch;
            }
        }
        flush_row();
        return rows;
    }
    return std::nullopt;
}

inline std::optional<double> find_scalar(const std::string& text, const std::string& field) {
    const std::string key = "mpc." + field;
    size_t pos = text.find(key);
    if (pos == std::string::npos) return std::nullopt;
    size_t p = pos + key.size();
    while (p < text.size() && (std::isspace(static_cast<unsigned char>(text[p])) || text[p] == '=')) ++p;
    size_t q = p;
    while (q < text.size() && text[q] != ';' && text[q] != '\n') ++q;
    try {
        return std::stod(text.substr(p, q - p));
    } catch (const std::exception&) {
        throw MalformedCase("bad scalar for " + key);
    }
}

inline double col(const std::vector<double>& row, size_t idx, double fallback = 0.0) {
    return idx < row.size() ? row[idx] : fallback;
}

} // namespace detail

/// Parse the MATPOWER case subset: mpc.baseMVA plus the bus, branch and gen
/// matrices with MATPOWER 7 column semantics. Unknown trailing columns are
/// ignored; fixtures vary in column count across MATPOWER versions.
inline NetworkCase parse_matpower_case(const std::string& text, const std::string& name = "") {
    const std::string clean = detail::strip_comments(text);
    NetworkCase c;
    c.name = name;

    const auto base = detail::find_scalar(clean, "baseMVA");
    const auto bus = detail::find_matrix(clean, "bus");
    const auto branch = detail::find_matrix(clean, "branch");
    const auto gen = detail::find_matrix(clean, "gen");
    if (!base) throw MissingMatrix("mpc.baseMVA not found");
    if (!bus) throw MissingMatrix("mpc.bus not found");
    if (!branch) throw MissingMatrix("mpc.branch not found");
    if (!gen) throw MissingMatrix("mpc.gen not found");
    c.base_mva = *base;

    for (const auto& row : *bus) {
        if (row.size() < 10) throw MalformedCase("bus row with fewer than 10 columns");
        Bus b;
        b.id = static_cast<int>(row[0]);
        const int type = static_cast<int>(row[1]);
        switch (type) {
            case 3: b.kind = BusKind::slack; break;
            case 2: b.kind = BusKind::pv; break;
            case 1: b.kind = BusKind::pq; break;
            case 4: b.kind = BusKind::pq; break; // isolated: treat as PQ, branches decide
            default: throw MalformedCase("bus " + std::to_string(b.id) + ": unknown type");
        }
        b.p_load = row[2];
        b.q_load = row[3];
        b.g_shunt = row[4];
        b.b_shunt = row[5];
        b.v_init = row[7];
        b.theta_init = row[8];
        b.base_kv = row[9];
        c.buses.push_back(b);
    }
    for (const auto& row : *branch) {
        if (row.size() < 5) throw MalformedCase("branch row with fewer than 5 columns");
        Branch br;
        br.from_bus = static_cast<int>(row[0]);
        br.to_bus = static_cast<int>(row[1]);
        br.r = row[2];
        br.x = row[3];
        br.b_charging = row[4];
        br.tap = detail::col(row, 8);
        br.shift = detail::col(row, 9);
        br.status = detail::col(row, 10, 1.0) != 0.0;
        c.branches.push_back(br);
    }
    for (const auto& row : *gen) {
        if (row.size() < 3) throw MalformedCase("gen row with fewer than 3 columns");
        Generator g;
        g.bus = static_cast<int>(row[0]);
        g.p_gen = row[1];
        g.q_gen = row[2];
        g.v_set = detail::col(row, 5, 1.0);
        g.status = detail::col(row, 7, 1.0) != 0.0;
        c.gens.push_back(g);
    }
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// JSON case schema (one-to-one with the in-memory model)
// ---------------------------------------------------------------------------

inline std::string kind_name(BusKind k) {
    switch (k) {
        case BusKind::slack: return "slack";
        case BusKind::pv: return "pv";
        default: return "pq";
    }
}

inline BusKind kind_from_name(const std::string& s) {
    if (s == "slack") return BusKind::slack;
    if (s == "pv") return BusKind::pv;
    if (s == "pq") return BusKind::pq;
    throw MalformedCase("unknown bus kind '" + s + "'");
}

inline std::string serialize_json_case(const NetworkCase& c) {
    nlohmann::json j;
    j["name"] = c.name;
    j["base_mva"] = c.base_mva;
    j["buses"] = nlohmann::json::array();
    for (const Bus& b : c.buses) {
        j["buses"].push_back({{"id", b.id},
                              {"kind", kind_name(b.kind)},
                              {"p_load", b.p_load},
                              {"q_load", b.q_load},
                              {"g_shunt", b.g_shunt},
                              {"b_shunt", b.b_shunt},
                              {"v_init", b.v_init},
                              {"theta_init", b.theta_init},
                              {"base_kv", b.base_kv}});
    }
    j["branches"] = nlohmann::json::array();
    for (const Branch& br : c.branches) {
        j["branches"].push_back({{"from", br.from_bus},
                                 {"to", br.to_bus},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b_charging", br.b_charging},
                                 {"tap", br.tap},
                                 {"shift", br.shift},
                                 {"status", br.status}});
    }
    j["gens"] = nlohmann::json::array();
    for (const Generator& g : c.gens) {
        j["gens"].push_back({{"bus", g.bus},
                             {"p_gen", g.p_gen},
                             {"q_gen", g.q_gen},
                             {"v_set", g.v_set},
                             {"status", g.status}});
    }
    return j.dump(2);
}

inline NetworkCase parse_json_case(const std::string& text, const std::string& name = "") {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedCase(std::string("json parse error: ") + e.what());
    }
    NetworkCase c;
    try {
        c.name = j.value("name", name);
        c.base_mva = j.at("base_mva").get<double>();
        for (const auto& jb : j.at("buses")) {
            Bus b;
            b.id = jb.at("id").get<int>();
            b.kind = kind_from_name(jb.at("kind").get<std::string>());
            b.p_load = jb.at("p_load").get<double>();
            b.q_load = jb.at("q_load").get<double>();
            b.g_shunt = jb.at("g_shunt").get<double>();
            b.b_shunt = jb.at("b_shunt").get<double>();
            b.v_init = jb.at("v_init").get<double>();
            b.theta_init = jb.at("theta_init").get<double>();
            b.base_kv = jb.at("base_kv").get<double>();
            c.buses.push_back(b);
        }
        for (const auto& jb : j.at("branches")) {
            Branch br;
            br.from_bus = jb.at("from").get<int>();
            br.to_bus = jb.at("to").get<int>();
            br.r = jb.at("r").get<double>();
            br.x = jb.at("x").get<double>();
            br.b_charging = jb.at("b_charging").get<double>();
            br.tap = jb.at("tap").get<double>();
            br.shift = jb.at("shift").get<double>();
            br.status = jb.at("status").get<bool>();
            c.branches.push_back(br);
        }
        for (const auto& jg : j.at("gens")) {
            Generator g;
            g.bus = jg.at("bus").get<int>();
            g.p_gen = jg.at("p_gen").get<double>();
            g.q_gen = jg.at("q_gen").get<double>();
            g.v_set = jg.at("v_set").get<double>();
            g.status = jg.at("status").get<bool>();
            c.gens.push_back(g);
        }
    } catch (const nlohmann::json::exception& e) {
        throw MalformedCase(std::string("json schema error: ") + e.what());
    }
    validate(c);
    return c;
}

/// Dispatch on extension / content: '{' opener means JSON, else MATPOWER.
inline NetworkCase parse_case_auto(const std::string& text, const std::string& name = "") {
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) continue;
        if (ch == '{') return parse_json_case(text, name);
        break;
    }
    return parse_matpower_case(text, name);
}

// ---------------------------------------------------------------------------
// Bus admittance matrix
// ---------------------------------------------------------------------------

/// Y = G + jB stored as two real matrices, indexed by bus position.
struct AdmittanceMatrix {
    int n_bus = 0;
    numkit::Matrix g;
    numkit::Matrix b;

    std::complex<double> y(int i, int k) const { return {g(i, k), b(i, k)}; }
};

/// Standard Y-bus assembly. Branch with status=0 contributes nothing. Phase
/// shift enters through the complex tap t = tap * e^{j shift}: Y_ft = -y/conj(t),
/// Y_tf = -y/t (MATPOWER convention).
inline AdmittanceMatrix build_admittance(const NetworkCase& c) {
    const int n = c.n_bus();
    AdmittanceMatrix y{n, numkit::Matrix(n, n), numkit::Matrix(n, n)};
    auto add = [&](int i, int k, std::complex<double> val) {
        y.g(i, k) += val.real();
        y.b(i, k) += val.imag();
    };
    for (const Branch& br : c.branches) {
        if (!br.status) continue;
        if (br.r * br.r + br.x * br.x <= 0.0)
            throw ZeroImpedanceBranch("in-service branch " + std::to_string(br.from_bus) + "-" +
                                      std::to_string(br.to_bus) + " has zero impedance");
        const int f = c.index_of(br.from_bus);
        const int t = c.index_of(br.to_bus);
        const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
        const std::complex<double> ych(0.0, br.b_charging / 2.0);
        const double ratio = br.tap == 0.0 ? 1.0 : br.tap;
        const std::complex<double> tap = std::polar(ratio, br.shift * M_PI / 180.0);
        add(f, f, (ys + ych) / (ratio * ratio));
        add(t, t, ys + ych);
        add(f, t, -ys / std::conj(tap));
        add(t, f, -ys / tap);
    }
    for (int i = 0; i < n; ++i)
        add(i, i, std::complex<double>(c.buses[i].g_shunt, c.buses[i].b_shunt) / c.base_mva);
    return y;
}

} // namespace pfsense::netmodel
