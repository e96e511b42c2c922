#pragma once

// Classical traffic assignment baselines: all-or-nothing loading, MSA and
// Frank-Wolfe solvers for user-equilibrium and system-optimal objectives,
// with path-flow bookkeeping and relative-gap reporting.

#include <map>
#include <utility>
#include <vector>

#include "sotar/network.hpp"
#include "sotar/shortest_paths.hpp"

namespace sotar {

enum class Objective { Ue, So };

enum class SolveMethod { Msa, FrankWolfe };

// Per-OD route flows, keyed by link sequence, parallel to the demand table.
using RouteFlowMap = std::map<Route, double>;

struct AssignmentResult {
    FlowState flows;
    double tstt = 0.0;
    int iterations = 0;
    double relative_gap = 0.0;
    std::vector<RouteFlowMap> route_flows;  // one map per demand entry
    DemandTable demand;
    Objective objective = Objective::Ue;
};

// Link costs the solver equilibrates on: plain travel times for UE,
// marginal travel times for SO (SO is solved as UE on marginalized costs).
inline std::vector<double> effective_costs(const Network& net,
                                           const FlowState& flows, Objective obj) {
    return obj == Objective::Ue ? link_times(net, flows)
                                : marginal_link_times(net, flows);
}

inline Route aon_route(const Network& net, const std::vector<double>& costs,
                       const DemandEntry& od) {
    try {
        return shortest_path(net, costs, od.origin, od.destination);
    } catch (const NoPathError&) {
        throw NoPathError("OD " + net.node_name(od.origin) + " -> " +
                          net.node_name(od.destination) + " is unreachable");
    }
}

// Load each OD's full demand on its shortest route under the given fixed costs.
inline FlowState all_or_nothing(const Network& net, const std::vector<double>& costs,
                                const DemandTable& demand) {
    FlowState flows(net.num_links());
    for (const auto& od : demand.entries) {
        if (od.demand == 0.0) continue;
        Route r = aon_route(net, costs, od);
        for (LinkId e : r.links) flows.volumes[e] += od.demand;
    }
    return flows;
}

// TC / SPC - 1: total effective cost over the cost of routing everyone on
// current shortest paths. Zero exactly at (UE or marginal-cost) equilibrium.
inline double relative_gap(const Network& net, const FlowState& flows,
                           const DemandTable& demand, Objective obj) {
    std::vector<double> costs = effective_costs(net, flows, obj);
    double tc = 0.0;
    for (LinkId e = 0; e < net.num_links(); ++e)
        tc += flows.volumes[e] * costs[e];
    double spc = 0.0;
    for (const auto& od : demand.entries) {
        if (od.demand == 0.0) continue;
        spc += od.demand * aon_route(net, costs, od).cost(costs);
    }
    if (spc == 0.0) {
        if (demand.total() > 0.0)
            throw ValidationError("zero shortest-path cost with nonzero demand");
        return 0.0;
    }
    return tc / spc - 1.0;
}

namespace detail {

// Line-search objective along x + s*(y - x): the Beckmann sum for UE,
// total system travel time for SO (the marginal-cost Beckmann term
// integrates to x*c(x)).
inline double descent_objective(const Network& net, const FlowState& x,
                                const FlowState& y, double s, Objective obj) {
    double total = 0.0;
    for (LinkId e = 0; e < net.num_links(); ++e) {
        double v = (1.0 - s) * x.volumes[e] + s * y.volumes[e];
        const CostFunction& c = net.link(e).cost;
        total += obj == Objective::Ue ? c.time_integral(v) : v * c.time(v);
    }
    return total;
}

inline double golden_section_step(const Network& net, const FlowState& x,
                                  const FlowState& y, Objective obj) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.0, hi = 1.0;
    double m1 = hi - phi * (hi - lo);
    double m2 = lo + phi * (hi - lo);
    double f1 = descent_objective(net, x, y, m1, obj);
    double f2 = descent_objective(net, x, y, m2, obj);
    for (int it = 0; it < 48; ++it) {
        if (f1 <= f2) {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - phi * (hi - lo);
            f1 = descent_objective(net, x, y, m1, obj);
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + phi * (hi - lo);
            f2 = descent_objective(net, x, y, m2, obj);
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

inline AssignmentResult solve_assignment(const Network& net, const DemandTable& demand,
                                         Objective obj, SolveMethod method,
                                         int max_iters, double gap_tol) {
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");

    AssignmentResult res;
    res.flows = FlowState(net.num_links());
    res.route_flows.assign(demand.entries.size(), {});
    res.demand = demand;
    res.objective = obj;

    for (int i = 1; i <= max_iters; ++i) {
        res.iterations = i;
        std::vector<double> costs = effective_costs(net, res.flows, obj);

        FlowState target(net.num_links());
        std::vector<Route> routes(demand.entries.size());
        for (size_t k = 0; k < demand.entries.size(); ++k) {
            const auto& od = demand.entries[k];
            if (od.demand == 0.0) continue;
            routes[k] = aon_route(net, costs, od);
            for (LinkId e : routes[k].links) target.volumes[e] += od.demand;
        }

        double step;
        if (i == 1)
            step = 1.0;
        else if (method == SolveMethod::Msa)
            step = 1.0 / i;
        else
            step = detail::golden_section_step(net, res.flows, target, obj);

        for (LinkId e = 0; e < net.num_links(); ++e)
            res.flows.volumes[e] = (1.0 - step) * res.flows.volumes[e] +
                                   step * target.volumes[e];
        for (size_t k = 0; k < demand.entries.size(); ++k) {
            if (demand.entries[k].demand == 0.0) continue;
            for (auto& [route, f] : res.route_flows[k]) f *= (1.0 - step);
            res.route_flows[k][routes[k]] += step * demand.entries[k].demand;
        }

        res.relative_gap = relative_gap(net, res.flows, demand, obj);
        if (res.relative_gap <= gap_tol) break;
    }
    res.tstt = total_system_travel_time(net, res.flows);
    return res;
}

inline AssignmentResult solve_msa(const Network& net, const DemandTable& demand,
                                  Objective obj, int max_iters, double gap_tol) {
    return solve_assignment(net, demand, obj, SolveMethod::Msa, max_iters, gap_tol);
}

inline AssignmentResult solve_frank_wolfe(const Network& net,
                                          const DemandTable& demand, Objective obj,
                                          int max_iters, double gap_tol) {
    return solve_assignment(net, demand, obj, SolveMethod::FrankWolfe, max_iters,
                            gap_tol);
}

// Routes from a SO solve that carry meaningful flow, per OD, ordered by
// descending flow (ties by link sequence).
inline std::vector<std::vector<Route>> extract_so_route_set(
    const AssignmentResult& result, double flow_floor = 0.5) {
    if (result.objective != Objective::So)
        throw ConfigError("route-set extraction requires a SO result");

    std::vector<std::vector<Route>> sets(result.route_flows.size());
    for (size_t k = 0; k < result.route_flows.size(); ++k) {
        std::vector<std::pair<double, Route>> kept;
        for (const auto& [route, f] : result.route_flows[k])
            if (f > flow_floor) kept.emplace_back(f, route);
        if (kept.empty() && result.demand.entries[k].demand > 0.0)
            throw ConfigError("flow floor leaves no route for OD " +
                              std::to_string(k));
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (auto& [f, route] : kept) sets[k].push_back(std::move(route));
    }
    return sets;
}

}  // namespace sotar
