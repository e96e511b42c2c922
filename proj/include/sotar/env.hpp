#pragma once

// Sequential route-recommendation environment: travelers arrive one-by-one,
// each step assigns one traveler to a route, increments link volumes, and
// pays the (negated) marginal travel time of that route as reward.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "sotar/network.hpp"
#include "sotar/shortest_paths.hpp"

namespace sotar {

// Flow level at which a traveler's marginal time is evaluated: including the
// entering traveler (post) or the volumes found on arrival (pre).
enum class MarginalEval { Post, Pre };

struct EpisodeSpec {
    Network net;
    DemandTable demand;
    std::vector<int> arrival_order;           // demand-entry index per traveler
    std::vector<std::vector<Route>> route_sets;  // per demand entry
    int k_max = 20;
    MarginalEval marginal_eval = MarginalEval::Post;

    // Normalization constants, fixed at spec creation.
    double time_scale = 1.0;
    std::vector<double> volume_scale;

    int num_travelers() const { return static_cast<int>(arrival_order.size()); }
    int num_ods() const { return static_cast<int>(demand.entries.size()); }
    int state_dim() const { return 3 * net.num_links() + num_ods() + k_max; }
};

// Uniformly shuffled traveler tags, reproducible from the seed.
inline std::vector<int> shuffled_arrival_order(const DemandTable& demand,
                                               std::uint64_t seed) {
    std::vector<int> order;
    for (size_t k = 0; k < demand.entries.size(); ++k) {
        double d = demand.entries[k].demand;
        long n = std::lround(d);
        if (std::abs(d - n) > 1e-9 || n < 0)
            throw ValidationError("sequential use requires integer demands");
        for (long j = 0; j < n; ++j) order.push_back(static_cast<int>(k));
    }
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

inline EpisodeSpec make_episode_spec(Network net, DemandTable demand,
                                     std::vector<std::vector<Route>> route_sets,
                                     int k_max, std::vector<int> arrival_order,
                                     MarginalEval eval = MarginalEval::Post) {
    EpisodeSpec spec;
    spec.net = std::move(net);
    spec.demand = std::move(demand);
    spec.route_sets = std::move(route_sets);
    spec.k_max = k_max;
    spec.arrival_order = std::move(arrival_order);
    spec.marginal_eval = eval;

    if (spec.route_sets.size() != spec.demand.entries.size())
        throw ValidationError("one route set per demand entry required");
    FlowState zero(spec.net.num_links());
    std::vector<double> free_flow = link_times(spec.net, zero);
    double max_route_cost = 0.0;
    for (size_t k = 0; k < spec.route_sets.size(); ++k) {
        const auto& routes = spec.route_sets[k];
        if (spec.demand.entries[k].demand > 0.0 && routes.empty())
            throw ValidationError("OD with demand has an empty route set");
        if (static_cast<int>(routes.size()) > k_max)
            throw ValidationError("route set exceeds k_max");
        for (const Route& r : routes) {
            r.validate(spec.net);
            max_route_cost = std::max(max_route_cost, r.cost(free_flow));
        }
    }
    spec.time_scale = max_route_cost > 0.0 ? max_route_cost : 1.0;

    double total = spec.demand.total();
    spec.volume_scale.resize(spec.net.num_links());
    for (LinkId e = 0; e < spec.net.num_links(); ++e) {
        const CostFunction& c = spec.net.link(e).cost;
        spec.volume_scale[e] =
            c.kind == CostFunction::Kind::Bpr ? c.capacity : std::max(total, 1.0);
    }
    return spec;
}

struct EnvState {
    int t = 1;  // index of the traveler about to be assigned, 1-based
    FlowState flows;
    int od_index = -1;  // demand-entry index of that traveler
};

struct StateVector {
    std::vector<double> features;
    std::vector<std::uint8_t> mask;  // k_max action-slot validity
    int od_index = -1;
};

// Marginal travel time of one traveler taking `route` on top of `flows`:
// sum of c_e(v) + v*c'_e(v) over the route's links.
inline double route_marginal_time(const Network& net, const FlowState& flows,
                                  const Route& route,
                                  MarginalEval eval = MarginalEval::Post) {
    double total = 0.0;
    for (LinkId e : route.links) {
        double v = flows.volumes[e];
        if (eval == MarginalEval::Post) v += 1.0;
        total += net.link(e).cost.marginal_time(v);
    }
    return total;
}

inline StateVector encode_state(const EpisodeSpec& spec, const EnvState& env) {
    StateVector s;
    s.features.reserve(spec.state_dim());
    s.od_index = env.od_index;

    for (LinkId e = 0; e < spec.net.num_links(); ++e) {
        const CostFunction& c = spec.net.link(e).cost;
        double v = env.flows.volumes[e];
        s.features.push_back(c.time(v) / spec.time_scale);
        s.features.push_back(v / spec.volume_scale[e]);
        s.features.push_back(c.marginal_time(v) / spec.time_scale);
    }
    for (int k = 0; k < spec.num_ods(); ++k)
        s.features.push_back(k == env.od_index ? 1.0 : 0.0);

    const auto& routes = spec.route_sets[env.od_index];
    s.mask.assign(spec.k_max, 0);
    for (int k = 0; k < spec.k_max; ++k) {
        if (k < static_cast<int>(routes.size())) {
            s.mask[k] = 1;
            s.features.push_back(
                route_marginal_time(spec.net, env.flows, routes[k],
                                    spec.marginal_eval) /
                spec.time_scale);
        } else {
            s.features.push_back(0.0);  // sentinel; the mask carries validity
        }
    }
    return s;
}

inline EnvState make_env_state(const EpisodeSpec& spec) {
    EnvState env;
    env.t = 1;
    env.flows = FlowState(spec.net.num_links());
    env.od_index = spec.arrival_order.empty() ? -1 : spec.arrival_order.front();
    return env;
}

inline StateVector reset(const EpisodeSpec& spec, EnvState& env) {
    env = make_env_state(spec);
    if (spec.num_travelers() == 0)
        throw ValidationError("episode has no travelers");
    return encode_state(spec, env);
}

struct StepOutcome {
    double reward = 0.0;  // minutes, <= 0
    bool terminal = false;
    std::optional<StateVector> next_state;
    Route chosen_route;
    double tstt = 0.0;  // after this traveler is loaded
};

inline StepOutcome step(const EpisodeSpec& spec, EnvState& env, int action) {
    if (env.t < 1 || env.t > spec.num_travelers())
        throw ValidationError("step on a finished episode");
    const auto& routes = spec.route_sets[env.od_index];
    if (action < 0 || action >= static_cast<int>(routes.size()))
        throw ValidationError("masked or out-of-range action " +
                              std::to_string(action));

    const Route& route = routes[action];
    StepOutcome out;
    out.chosen_route = route;
    out.reward = -route_marginal_time(spec.net, env.flows, route,
                                      spec.marginal_eval);

    for (LinkId e : route.links) env.flows.volumes[e] += 1.0;
    env.t += 1;
    out.tstt = total_system_travel_time(spec.net, env.flows);
    out.terminal = env.t > spec.num_travelers();
    if (!out.terminal) {
        env.od_index = spec.arrival_order[env.t - 1];
        out.next_state = encode_state(spec, env);
    } else {
        env.od_index = -1;
    }
    return out;
}

}  // namespace sotar
