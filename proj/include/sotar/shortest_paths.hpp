#pragma once

// Shortest-path and Yen k-shortest-path queries under an externally supplied
// nonnegative per-link cost vector. Costs are passed per call so the same
// queries serve free-flow, congested, and marginal-cost assignment.

#include <algorithm>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <vector>

#include "sotar/network.hpp"

namespace sotar {

// A loopless directed walk between an OD pair, stored as link ids.
struct Route {
    std::vector<LinkId> links;
    NodeId origin = -1;
    NodeId destination = -1;

    bool operator==(const Route& other) const { return links == other.links; }
    // Lexicographic order on the link-id sequence; the deterministic
    // tie-break used everywhere routes are ranked.
    bool operator<(const Route& other) const { return links < other.links; }

    double cost(const std::vector<double>& link_costs) const {
        double c = 0.0;
        for (LinkId e : links) c += link_costs[e];
        return c;
    }

    std::vector<NodeId> nodes(const Network& net) const {
        std::vector<NodeId> ns;
        ns.push_back(origin);
        for (LinkId e : links) ns.push_back(net.link(e).head);
        return ns;
    }

    void validate(const Network& net) const {
        NodeId at = origin;
        std::set<NodeId> seen{origin};
        for (LinkId e : links) {
            const Link& l = net.link(e);
            if (l.tail != at) throw ValidationError("route links are not connected");
            at = l.head;
            if (!seen.insert(at).second) throw ValidationError("route repeats a node");
        }
        if (at != destination) throw ValidationError("route does not end at destination");
    }
};

namespace detail {

// Dijkstra with banned nodes/links, breaking cost ties in favor of the
// lexicographically smallest link-id sequence. Labels carry their path;
// networks here are small enough that this is cheap.
inline std::optional<Route> dijkstra(const Network& net,
                                     const std::vector<double>& costs,
                                     NodeId origin, NodeId destination,
                                     const std::vector<char>& banned_node,
                                     const std::vector<char>& banned_link) {
    for (double c : costs)
        if (c < 0.0) throw std::domain_error("negative link cost");

    struct Label {
        double dist;
        NodeId node;
        std::vector<LinkId> path;
        bool operator>(const Label& o) const {
            if (dist != o.dist) return dist > o.dist;
            return path > o.path;
        }
    };
    std::priority_queue<Label, std::vector<Label>, std::greater<Label>> pq;
    std::vector<char> settled(net.num_nodes(), 0);

    if (banned_node[origin]) return std::nullopt;
    pq.push({0.0, origin, {}});
    while (!pq.empty()) {
        Label cur = pq.top();
        pq.pop();
        if (settled[cur.node]) continue;
        settled[cur.node] = 1;
        if (cur.node == destination) {
            Route r;
            r.links = std::move(cur.path);
            r.origin = origin;
            r.destination = destination;
            return r;
        }
        for (LinkId e : net.out_links(cur.node)) {
            if (banned_link[e]) continue;
            NodeId next = net.link(e).head;
            if (banned_node[next] || settled[next]) continue;
            Label nxt{cur.dist + costs[e], next, cur.path};
            nxt.path.push_back(e);
            pq.push(std::move(nxt));
        }
    }
    return std::nullopt;
}

}  // namespace detail

inline Route shortest_path(const Network& net, const std::vector<double>& costs,
                           NodeId origin, NodeId destination) {
    std::vector<char> no_node(net.num_nodes(), 0), no_link(net.num_links(), 0);
    auto r = detail::dijkstra(net, costs, origin, destination, no_node, no_link);
    if (!r)
        throw NoPathError("no path from " + net.node_name(origin) + " to " +
                          net.node_name(destination));
    return *r;
}

// Yen's algorithm: up to k distinct loopless routes in nondecreasing cost
// order, ties broken by lexicographic link-id sequence. Returns an empty
// list when the destination is unreachable.
inline std::vector<Route> k_shortest_paths(const Network& net,
                                           const std::vector<double>& costs,
                                           NodeId origin, NodeId destination,
                                           int k) {
    if (k < 1) throw ConfigError("k must be >= 1");

    std::vector<char> no_node(net.num_nodes(), 0), no_link(net.num_links(), 0);
    auto first = detail::dijkstra(net, costs, origin, destination, no_node, no_link);
    if (!first) return {};

    std::vector<Route> result{*first};
    // Candidates keyed by (cost, link sequence) for deterministic extraction.
    std::set<std::pair<double, Route>> candidates;

    while (static_cast<int>(result.size()) < k) {
        const Route& prev = result.back();
        std::vector<NodeId> prev_nodes = prev.nodes(net);

        for (size_t i = 0; i + 1 < prev_nodes.size(); ++i) {
            NodeId spur_node = prev_nodes[i];
            std::vector<LinkId> root(prev.links.begin(), prev.links.begin() + i);

            std::vector<char> banned_node(net.num_nodes(), 0);
            std::vector<char> banned_link(net.num_links(), 0);
            // Nodes of the root path (except the spur node) may not reappear.
            for (size_t j = 0; j < i; ++j) banned_node[prev_nodes[j]] = 1;
            // Ban the next link of every accepted route sharing this root.
            for (const Route& r : result) {
                if (r.links.size() > i &&
                    std::equal(root.begin(), root.end(), r.links.begin()))
                    banned_link[r.links[i]] = 1;
            }

            auto spur = detail::dijkstra(net, costs, spur_node, destination,
                                         banned_node, banned_link);
            if (!spur) continue;

            Route total;
            total.origin = origin;
            total.destination = destination;
            total.links = root;
            total.links.insert(total.links.end(), spur->links.begin(),
                               spur->links.end());
            bool known = std::any_of(result.begin(), result.end(),
                                     [&](const Route& r) { return r == total; });
            if (!known) candidates.emplace(total.cost(costs), std::move(total));
        }

        if (candidates.empty()) break;
        auto best = candidates.begin();
        result.push_back(best->second);
        candidates.erase(best);
    }
    return result;
}

}  // namespace sotar
