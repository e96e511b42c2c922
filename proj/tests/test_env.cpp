#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "sotar/env.hpp"

using namespace sotar;

namespace {

std::string data_path(const std::string& name) {
    return std::string(SOTAR_DATA_DIR) + "/" + name;
}

struct BraessWorld {
    Network net;
    DemandTable trips;
    std::vector<Route> routes;  // ACB, ADB, ACDB

    BraessWorld() {
        std::tie(net, trips) =
            load_network(data_path("braess.net"), data_path("braess.trips"));
        auto all = oracles::enumerate_routes(net, net.node("A"), net.node("B"));
        auto name = [&](const Route& r) {
            std::string s;
            for (NodeId n : r.nodes(net)) s += net.node_name(n);
            return s;
        };
        routes.resize(3);
        for (const Route& r : all) {
            if (name(r) == "ACB") routes[0] = r;
            if (name(r) == "ADB") routes[1] = r;
            if (name(r) == "ACDB") routes[2] = r;
        }
    }

    EpisodeSpec spec(int k_max = 3) const {
        return make_episode_spec(net, trips, {routes}, k_max,
                                 shuffled_arrival_order(trips, 1));
    }
};

}  // namespace

TEST_CASE("reset: zero volumes, free-flow features, one-hot OD") {
    BraessWorld w;
    EpisodeSpec spec = w.spec();
    EnvState env;
    StateVector s = reset(spec, env);

    CHECK(env.t == 1);
    for (double v : env.flows.volumes) CHECK(v == 0.0);

    // Edge block: times at zero volume are (0, 50, 50, 0, 10) over time_scale.
    double ts = spec.time_scale;
    std::vector<double> expect_times{0.0, 50.0, 50.0, 0.0, 10.0};
    for (LinkId e = 0; e < w.net.num_links(); ++e) {
        CHECK(s.features[3 * e] == doctest::Approx(expect_times[e] / ts));
        CHECK(s.features[3 * e + 1] == 0.0);
    }
    // Single OD: exactly one hot entry.
    CHECK(s.features[3 * w.net.num_links()] == 1.0);
    CHECK(s.od_index == 0);
    // time_scale is the costliest free-flow route: ADB at 80? ACB=60? routes:
    // ACB 0+50=50, ADB 50+0=50, ACDB 0+10+0=10 at zero flow -> max 50.
    CHECK(ts == doctest::Approx(50.0));
}

TEST_CASE("route marginal time") {
    BraessWorld w;
    FlowState empty(w.net.num_links());
    // ACB on the empty network: AC 10*1+1*10=20, CB 51+1 = 52.
    CHECK(route_marginal_time(w.net, empty, w.routes[0]) == doctest::Approx(72.0));
    CHECK(route_marginal_time(w.net, empty, w.routes[0], MarginalEval::Pre) ==
          doctest::Approx(50.0));

    // With AC already carrying 3: AC term 10*4 + 4*10 = 80.
    FlowState f(w.net.num_links());
    f.volumes[w.net.find_link(w.net.node("A"), w.net.node("C"))] = 3.0;
    CHECK(route_marginal_time(w.net, f, w.routes[0]) ==
          doctest::Approx(80.0 + 52.0));

    // Constant-cost links: marginal equals plain route time.
    Network flat;
    NodeId o = flat.add_node("o"), d = flat.add_node("d");
    flat.add_link(o, d, CostFunction::affine(7.0, 0.0));
    Route r;
    r.links = {0};
    r.origin = o;
    r.destination = d;
    FlowState g(1);
    g.volumes[0] = 12.0;
    CHECK(route_marginal_time(flat, g, r) == doctest::Approx(7.0));
}

TEST_CASE("step: reward, volume bookkeeping, terminal flag") {
    BraessWorld w;
    EpisodeSpec spec = w.spec();
    EnvState env;
    reset(spec, env);

    StepOutcome out = step(spec, env, 0);  // ACB
    CHECK(out.reward == doctest::Approx(-72.0));
    CHECK(!out.terminal);
    CHECK(env.flows.volumes[w.net.find_link(w.net.node("A"), w.net.node("C"))] == 1.0);
    CHECK(env.flows.volumes[w.net.find_link(w.net.node("C"), w.net.node("B"))] == 1.0);

    // Volume features in the next state reflect the loaded traveler.
    const StateVector& s = *out.next_state;
    LinkId ac = w.net.find_link(w.net.node("A"), w.net.node("C"));
    CHECK(s.features[3 * ac + 1] == doctest::Approx(1.0 / spec.volume_scale[ac]));

    for (int t = 2; t <= 6; ++t) {
        StepOutcome o2 = step(spec, env, t % 2);
        CHECK((t == 6) == o2.terminal);
    }
    CHECK_THROWS_AS(step(spec, env, 0), ValidationError);
}

TEST_CASE("masked actions are refused and mask tracks the route set") {
    BraessWorld w;
    EpisodeSpec spec = w.spec(5);  // k_max 5, only 3 routes
    EnvState env;
    StateVector s = reset(spec, env);
    REQUIRE(s.mask.size() == 5);
    CHECK(s.mask == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
    CHECK(s.features[spec.state_dim() - 1] == 0.0);  // sentinel slot
    CHECK_THROWS_AS(step(spec, env, 3), ValidationError);
    CHECK_THROWS_AS(step(spec, env, -1), ValidationError);
}

TEST_CASE("rewards are nonpositive and grow with congestion") {
    BraessWorld w;
    EpisodeSpec spec = w.spec();
    EnvState env;
    reset(spec, env);
    double prev = 0.0;
    for (int t = 0; t < 6; ++t) {
        StepOutcome out = step(spec, env, 0);
        CHECK(out.reward <= 0.0);
        if (t > 0) CHECK(out.reward <= prev);  // same route, more congestion
        prev = out.reward;
    }
}

TEST_CASE("conservation and terminal TSTT across full episodes") {
    BraessWorld w;
    EpisodeSpec spec = w.spec();
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> act(0, 2);
    for (int trial = 0; trial < 20; ++trial) {
        EnvState env;
        reset(spec, env);
        std::vector<int> counts(3, 0);
        double final_tstt = 0.0;
        while (true) {
            int a = act(rng);
            StepOutcome out = step(spec, env, a);
            counts[a] += 1;
            // Each link volume equals the traversal count of assigned routes.
            for (LinkId e = 0; e < w.net.num_links(); ++e) {
                double expected = 0.0;
                for (int k = 0; k < 3; ++k)
                    if (std::count(w.routes[k].links.begin(),
                                   w.routes[k].links.end(), e))
                        expected += counts[k];
                CHECK(env.flows.volumes[e] == expected);
            }
            if (out.terminal) {
                final_tstt = out.tstt;
                break;
            }
        }
        CHECK(final_tstt == total_system_travel_time(w.net, env.flows));
    }
}

TEST_CASE("determinism: identical spec and actions give identical traces") {
    BraessWorld w;
    EpisodeSpec spec = w.spec();
    std::vector<int> actions{2, 0, 1, 0, 1, 2};
    std::vector<double> r1, r2;
    for (auto* rewards : {&r1, &r2}) {
        EnvState env;
        reset(spec, env);
        for (int a : actions) rewards->push_back(step(spec, env, a).reward);
    }
    CHECK(r1 == r2);
}

TEST_CASE("OW state vector dimensions") {
    auto [net, trips] = load_network(data_path("ow.net"), data_path("ow.trips"));
    FlowState zero(net.num_links());
    std::vector<double> ff = link_times(net, zero);
    std::vector<std::vector<Route>> sets;
    for (const auto& od : trips.entries)
        sets.push_back(k_shortest_paths(net, ff, od.origin, od.destination, 5));
    int k_max = 20;
    EpisodeSpec spec = make_episode_spec(net, trips, sets, k_max,
                                         shuffled_arrival_order(trips, 9));
    CHECK(spec.state_dim() == 3 * 48 + 4 + k_max);
    CHECK(spec.num_travelers() == 1700);
    EnvState env;
    StateVector s = reset(spec, env);
    CHECK(static_cast<int>(s.features.size()) == spec.state_dim());
    int hot = 0;
    for (int k = 0; k < spec.num_ods(); ++k)
        hot += s.features[3 * net.num_links() + k] == 1.0 ? 1 : 0;
    CHECK(hot == 1);
}

TEST_CASE("integer demand is required for episodes") {
    Network net;
    NodeId o = net.add_node("o"), d = net.add_node("d");
    net.add_link(o, d, CostFunction::affine(1.0, 1.0));
    DemandTable t;
    t.entries.push_back({o, d, 2.5});
    CHECK_THROWS_AS(shuffled_arrival_order(t, 1), ValidationError);
}
