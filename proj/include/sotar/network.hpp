#pragma once

// Road network representation: directed links with flow-dependent travel
// time functions, OD demand tables, and per-link flow state.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sotar {

using NodeId = int;
using LinkId = int;

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, int line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
          line_number(line) {}
    int line_number;
};

class ValidationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class NoPathError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Link performance function. Travel time must be nondecreasing in flow.
struct CostFunction {
    enum class Kind { Bpr, Affine };

    Kind kind = Kind::Bpr;
    // BPR: t0 * (1 + alpha * (x / capacity)^beta)
    double t0 = 0.0;
    double capacity = 0.0;
    double alpha = 0.15;
    double beta = 4.0;
    // Affine: a + b * x
    double a = 0.0;
    double b = 0.0;

    static CostFunction bpr(double t0, double capacity, double alpha = 0.15,
                            double beta = 4.0) {
        if (t0 <= 0.0 || capacity <= 0.0 || alpha < 0.0 || beta < 1.0)
            throw ValidationError("invalid BPR parameters");
        CostFunction f;
        f.kind = Kind::Bpr;
        f.t0 = t0;
        f.capacity = capacity;
        f.alpha = alpha;
        f.beta = beta;
        return f;
    }

    static CostFunction affine(double a, double b) {
        if (a < 0.0 || b < 0.0)
            throw ValidationError("invalid affine parameters");
        CostFunction f;
        f.kind = Kind::Affine;
        f.a = a;
        f.b = b;
        return f;
    }

    // Travel time at flow x.
    double time(double x) const {
        if (x < 0.0) throw std::domain_error("negative link flow");
        if (kind == Kind::Bpr)
            return t0 * (1.0 + alpha * std::pow(x / capacity, beta));
        return a + b * x;
    }

    // Marginal travel time c(x) + x * c'(x): the traveler's own time plus
    // the delay imposed on everyone else sharing the link.
    double marginal_time(double x) const {
        if (x < 0.0) throw std::domain_error("negative link flow");
        if (kind == Kind::Bpr)
            return t0 * (1.0 + alpha * (1.0 + beta) * std::pow(x / capacity, beta));
        return a + 2.0 * b * x;
    }

    // Integral of the travel time from 0 to x (Beckmann term).
    double time_integral(double x) const {
        if (x < 0.0) throw std::domain_error("negative link flow");
        if (kind == Kind::Bpr)
            return t0 * x * (1.0 + alpha / (beta + 1.0) * std::pow(x / capacity, beta));
        return a * x + 0.5 * b * x * x;
    }
};

struct Link {
    LinkId id = -1;
    NodeId tail = -1;
    NodeId head = -1;
    CostFunction cost;
};

class Network {
public:
    NodeId add_node(const std::string& name) {
        auto it = node_index_.find(name);
        if (it != node_index_.end()) return it->second;
        NodeId id = static_cast<NodeId>(node_names_.size());
        node_names_.push_back(name);
        node_index_.emplace(name, id);
        out_links_.emplace_back();
        return id;
    }

    LinkId add_link(NodeId tail, NodeId head, const CostFunction& cost) {
        if (tail < 0 || tail >= num_nodes() || head < 0 || head >= num_nodes())
            throw ValidationError("link endpoint not in node set");
        if (tail == head)
            throw ValidationError("self-loop link " + node_names_[tail]);
        LinkId id = static_cast<LinkId>(links_.size());
        links_.push_back(Link{id, tail, head, cost});
        out_links_[tail].push_back(id);
        return id;
    }

    int num_nodes() const { return static_cast<int>(node_names_.size()); }
    int num_links() const { return static_cast<int>(links_.size()); }

    const Link& link(LinkId id) const { return links_.at(id); }
    const std::vector<Link>& links() const { return links_; }
    const std::vector<LinkId>& out_links(NodeId n) const { return out_links_.at(n); }

    const std::string& node_name(NodeId n) const { return node_names_.at(n); }
    bool has_node(const std::string& name) const { return node_index_.count(name) > 0; }
    NodeId node(const std::string& name) const {
        auto it = node_index_.find(name);
        if (it == node_index_.end())
            throw ValidationError("unknown node " + name);
        return it->second;
    }

    // Link from tail to head, or -1. Parallel links are not expected here.
    LinkId find_link(NodeId tail, NodeId head) const {
        for (LinkId e : out_links_.at(tail))
            if (links_[e].head == head) return e;
        return -1;
    }

private:
    std::vector<std::string> node_names_;
    std::unordered_map<std::string, NodeId> node_index_;
    std::vector<Link> links_;
    std::vector<std::vector<LinkId>> out_links_;
};

struct DemandEntry {
    NodeId origin = -1;
    NodeId destination = -1;
    double demand = 0.0;
};

struct DemandTable {
    std::vector<DemandEntry> entries;

    double total() const {
        double s = 0.0;
        for (const auto& e : entries) s += e.demand;
        return s;
    }
};

struct FlowState {
    std::vector<double> volumes;

    explicit FlowState(int num_links = 0) : volumes(num_links, 0.0) {}

    void check(const Network& net) const {
        if (static_cast<int>(volumes.size()) != net.num_links())
            throw ValidationError("flow vector length does not match link count");
        for (double v : volumes)
            if (v < 0.0) throw ValidationError("negative flow entry");
    }
};

inline std::vector<double> link_times(const Network& net, const FlowState& flows) {
    flows.check(net);
    std::vector<double> t(net.num_links());
    for (LinkId e = 0; e < net.num_links(); ++e)
        t[e] = net.link(e).cost.time(flows.volumes[e]);
    return t;
}

inline std::vector<double> marginal_link_times(const Network& net,
                                               const FlowState& flows) {
    flows.check(net);
    std::vector<double> t(net.num_links());
    for (LinkId e = 0; e < net.num_links(); ++e)
        t[e] = net.link(e).cost.marginal_time(flows.volumes[e]);
    return t;
}

// Total system travel time, summed in ascending link id order so results
// are bit-identical across runs.
inline double total_system_travel_time(const Network& net, const FlowState& flows) {
    flows.check(net);
    double total = 0.0;
    for (LinkId e = 0; e < net.num_links(); ++e)
        total += flows.volumes[e] * net.link(e).cost.time(flows.volumes[e]);
    return total;
}

// --- TNTP-style file I/O -------------------------------------------------
//
// Link file: lines beginning with '~' are comments. One record per link:
//   tail head capacity free_flow_time [alpha beta] ;
// or for a link with affine cost a + b*x:
//   tail head affine a b ;
//
// Trips file:
//   Origin <o>
//   <d> : <demand>;

namespace detail {

inline std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& tok, const std::string& file, int line) {
    try {
        size_t pos = 0;
        double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ParseError(file, line, "expected a number, got '" + tok + "'");
    }
}

}  // namespace detail

inline Network load_links(const std::string& link_file) {
    std::ifstream in(link_file);
    if (!in) throw ConfigError("cannot open link file: " + link_file);

    Network net;
    struct Record {
        std::string tail, head;
        CostFunction cost;
        int line;
    };
    std::vector<Record> records;

    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = detail::strip(raw);
        if (line.empty() || line[0] == '~') continue;
        if (!line.empty() && line.back() == ';') line.pop_back();

        std::istringstream ss(line);
        std::vector<std::string> tok;
        for (std::string t; ss >> t;) tok.push_back(t);
        if (tok.size() < 3)
            throw ParseError(link_file, line_no, "truncated link record");

        Record rec;
        rec.tail = tok[0];
        rec.head = tok[1];
        rec.line = line_no;
        try {
            if (tok[2] == "affine") {
                if (tok.size() != 5)
                    throw ParseError(link_file, line_no, "affine link needs 'a b'");
                rec.cost = CostFunction::affine(
                    detail::parse_number(tok[3], link_file, line_no),
                    detail::parse_number(tok[4], link_file, line_no));
            } else {
                if (tok.size() != 4 && tok.size() != 6)
                    throw ParseError(link_file, line_no,
                                     "BPR link needs 'capacity t0 [alpha beta]'");
                double cap = detail::parse_number(tok[2], link_file, line_no);
                double t0 = detail::parse_number(tok[3], link_file, line_no);
                double al = 0.15, be = 4.0;
                if (tok.size() == 6) {
                    al = detail::parse_number(tok[4], link_file, line_no);
                    be = detail::parse_number(tok[5], link_file, line_no);
                }
                rec.cost = CostFunction::bpr(t0, cap, al, be);
            }
        } catch (const ValidationError& e) {
            throw ParseError(link_file, line_no, e.what());
        }
        records.push_back(std::move(rec));
    }

    for (const auto& r : records) {
        net.add_node(r.tail);
        net.add_node(r.head);
    }
    for (const auto& r : records) {
        NodeId t = net.node(r.tail);
        NodeId h = net.node(r.head);
        if (net.find_link(t, h) >= 0)
            throw ParseError(link_file, r.line,
                             "duplicate link " + r.tail + " -> " + r.head);
        net.add_link(t, h, r.cost);
    }
    return net;
}

inline DemandTable load_trips(const std::string& trips_file, const Network& net) {
    std::ifstream in(trips_file);
    if (!in) throw ConfigError("cannot open trips file: " + trips_file);

    DemandTable table;
    std::string raw;
    int line_no = 0;
    NodeId origin = -1;
    bool have_origin = false;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = detail::strip(raw);
        if (line.empty() || line[0] == '~') continue;

        std::istringstream ss(line);
        std::string first;
        ss >> first;
        if (first == "Origin") {
            std::string name;
            if (!(ss >> name))
                throw ParseError(trips_file, line_no, "Origin line missing node");
            if (!net.has_node(name))
                throw ParseError(trips_file, line_no, "unknown origin node " + name);
            origin = net.node(name);
            have_origin = true;
            continue;
        }
        if (!have_origin)
            throw ParseError(trips_file, line_no, "demand record before any Origin");

        std::string colon, value;
        if (!(ss >> colon >> value) || colon != ":")
            throw ParseError(trips_file, line_no, "expected '<dest> : <demand>;'");
        if (!value.empty() && value.back() == ';') value.pop_back();
        if (!net.has_node(first))
            throw ParseError(trips_file, line_no, "unknown destination node " + first);
        double demand = detail::parse_number(value, trips_file, line_no);
        if (demand < 0.0)
            throw ParseError(trips_file, line_no, "negative demand");
        table.entries.push_back({origin, net.node(first), demand});
    }
    return table;
}

inline std::pair<Network, DemandTable> load_network(const std::string& link_file,
                                                    const std::string& trips_file) {
    Network net = load_links(link_file);
    DemandTable trips = load_trips(trips_file, net);
    return {std::move(net), std::move(trips)};
}

inline void save_links(const Network& net, const std::string& link_file) {
    std::ofstream out(link_file);
    if (!out) throw std::runtime_error("cannot write link file: " + link_file);
    out << "~ tail head capacity t0 alpha beta ;  (or: tail head affine a b ;)\n";
    out.precision(17);
    for (const Link& l : net.links()) {
        out << net.node_name(l.tail) << ' ' << net.node_name(l.head) << ' ';
        if (l.cost.kind == CostFunction::Kind::Bpr)
            out << l.cost.capacity << ' ' << l.cost.t0 << ' ' << l.cost.alpha << ' '
                << l.cost.beta;
        else
            out << "affine " << l.cost.a << ' ' << l.cost.b;
        out << " ;\n";
    }
}

inline void save_trips(const Network& net, const DemandTable& trips,
                       const std::string& trips_file) {
    std::ofstream out(trips_file);
    if (!out) throw std::runtime_error("cannot write trips file: " + trips_file);
    out.precision(17);
    NodeId last_origin = -1;
    for (const auto& e : trips.entries) {
        if (e.origin != last_origin) {
            out << "Origin " << net.node_name(e.origin) << '\n';
            last_origin = e.origin;
        }
        out << net.node_name(e.destination) << " : " << e.demand << ";\n";
    }
}

}  // namespace sotar
