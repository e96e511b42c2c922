#pragma once

// Training loop coupling the sequential environment with the DQN learner.
// Exploration actions are sampled from an MSA-averaged assignment
// distribution M; after each episode M is re-averaged against an
// all-or-nothing solution on the episode's final flows, and newly
// discovered routes grow the action sets in place.

#include <fstream>
#include <iostream>
#include <numeric>

#include "sotar/assignment.hpp"
#include "sotar/dqn.hpp"
#include "sotar/env.hpp"

namespace sotar {

enum class ActionSetMode { MsaGuided, Ksp, SoRoutes };

inline std::string to_string(ActionSetMode m) {
    switch (m) {
        case ActionSetMode::MsaGuided: return "msa-guided";
        case ActionSetMode::Ksp: return "ksp";
        case ActionSetMode::SoRoutes: return "so-routes";
    }
    return "?";
}

// Per-OD probability vectors over route slots, aligned with the route sets.
struct AssignmentDistribution {
    std::vector<std::vector<double>> probs;

    static AssignmentDistribution uniform(
        const std::vector<std::vector<Route>>& route_sets) {
        AssignmentDistribution m;
        for (const auto& routes : route_sets)
            m.probs.emplace_back(routes.size(),
                                 routes.empty() ? 0.0 : 1.0 / routes.size());
        return m;
    }

    void check() const {
        for (const auto& p : probs) {
            double sum = 0.0;
            for (double v : p) {
                if (v < 0.0) throw ValidationError("negative distribution entry");
                sum += v;
            }
            if (!p.empty() && std::abs(sum - 1.0) > 1e-12)
                throw ValidationError("distribution does not sum to 1");
        }
    }
};

// Alg. 2: with probability epsilon sample a route slot from M, otherwise act
// greedily. Guidance-free exploration is this same call with a uniform M.
inline int msa_guided_select(const QApproximator& q, const StateVector& s,
                             double epsilon, const std::vector<double>& m_od,
                             std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < epsilon) {
        double u = unit(rng);
        double acc = 0.0;
        for (size_t k = 0; k < m_od.size(); ++k) {
            acc += m_od[k];
            if (u < acc) return static_cast<int>(k);
        }
        return static_cast<int>(m_od.size()) - 1;  // guard against rounding
    }
    return act_greedy(q, s);
}

// MSA step on M: M* is a per-OD point mass on the shortest route under the
// guide costs at the episode's final flows; a route absent from the action
// set is appended while there is room, otherwise M* falls back to the best
// existing slot. M <- (1 - 1/i) M + (1/i) M*.
inline void update_distribution(AssignmentDistribution& m,
                                const FlowState& episode_flows, const Network& net,
                                int episode_index,
                                std::vector<std::vector<Route>>& route_sets,
                                const DemandTable& demand, int k_max,
                                Objective guide_costs = Objective::So,
                                std::ostream* warnings = nullptr) {
    if (episode_index < 1) throw ConfigError("episode index must be >= 1");
    std::vector<double> costs = effective_costs(net, episode_flows, guide_costs);

    for (size_t od = 0; od < demand.entries.size(); ++od) {
        if (demand.entries[od].demand == 0.0) continue;
        Route best = aon_route(net, costs, demand.entries[od]);

        auto& routes = route_sets[od];
        auto& probs = m.probs[od];
        int slot = -1;
        for (size_t k = 0; k < routes.size(); ++k)
            if (routes[k] == best) {
                slot = static_cast<int>(k);
                break;
            }
        if (slot < 0) {
            if (static_cast<int>(routes.size()) < k_max) {
                routes.push_back(best);
                probs.push_back(0.0);
                slot = static_cast<int>(routes.size()) - 1;
            } else {
                if (warnings)
                    *warnings << "route set full for OD " << od
                              << "; discarding newly found route\n";
                // Fall back to the cheapest existing slot under the guide costs.
                slot = 0;
                for (size_t k = 1; k < routes.size(); ++k)
                    if (routes[k].cost(costs) < routes[slot].cost(costs))
                        slot = static_cast<int>(k);
            }
        }

        double w = 1.0 / episode_index;
        for (double& p : probs) p *= (1.0 - w);
        probs[slot] += w;
    }
    m.check();
}

struct TrainOptions {
    TrainerConfig dqn;
    ActionSetMode mode = ActionSetMode::MsaGuided;
    int ksp_k = 15;  // route-set size in Ksp mode
    std::vector<std::vector<Route>> fixed_route_sets;  // SoRoutes mode
    int k_max = 20;
    Objective guide_costs = Objective::So;
    MarginalEval marginal_eval = MarginalEval::Post;
    bool guidance = true;      // sample exploration from M (Alg. 2) vs uniform
    double reward_scale = 0.0; // 0 = auto: 1 / spec.time_scale
    // Every eval_every episodes run one greedy rollout and keep the best
    // parameters seen; 0 disables tracking and returns the final parameters.
    int eval_every = 0;
};

struct TrainLogRecord {
    int episode = 0;
    double tstt = 0.0;
    double mean_loss = 0.0;
    double epsilon = 0.0;
    std::vector<int> routes_per_od;
};

using TrainLog = std::vector<TrainLogRecord>;

struct TrainResult {
    QApproximator q;  // best greedy parameters when eval_every > 0, else final
    TrainLog log;
    std::vector<std::vector<Route>> route_sets;
    AssignmentDistribution dist;
    TrainOptions options;
    double time_scale = 1.0;
    double best_greedy_tstt = 0.0;  // 0 when eval_every == 0
};

inline std::vector<std::vector<Route>> initial_route_sets(
    const Network& net, const DemandTable& demand, const TrainOptions& opt) {
    FlowState zero(net.num_links());
    std::vector<double> free_flow = link_times(net, zero);
    std::vector<std::vector<Route>> sets;
    switch (opt.mode) {
        case ActionSetMode::MsaGuided:
            for (const auto& od : demand.entries)
                sets.push_back({aon_route(net, free_flow, od)});
            break;
        case ActionSetMode::Ksp:
            for (const auto& od : demand.entries) {
                auto routes = k_shortest_paths(net, free_flow, od.origin,
                                               od.destination, opt.ksp_k);
                if (routes.empty() && od.demand > 0.0)
                    throw NoPathError("OD " + net.node_name(od.origin) + " -> " +
                                      net.node_name(od.destination) +
                                      " is unreachable");
                sets.push_back(std::move(routes));
            }
            break;
        case ActionSetMode::SoRoutes:
            if (opt.fixed_route_sets.size() != demand.entries.size())
                throw ConfigError("SO route sets do not match the demand table");
            sets = opt.fixed_route_sets;
            break;
    }
    return sets;
}

inline double greedy_rollout(const QApproximator& q, const EpisodeSpec& spec,
                             std::vector<std::vector<int>>* action_counts,
                             std::ostream* trace);

inline TrainResult train(const Network& net, const DemandTable& demand,
                         const TrainOptions& options,
                         std::ostream* progress = nullptr) {
    const TrainerConfig& cfg = options.dqn;
    TrainResult result;
    result.options = options;
    result.route_sets = initial_route_sets(net, demand, options);
    result.dist = AssignmentDistribution::uniform(result.route_sets);

    EpisodeSpec spec = make_episode_spec(net, demand, result.route_sets,
                                         options.k_max,
                                         shuffled_arrival_order(demand, cfg.seed),
                                         options.marginal_eval);
    result.time_scale = spec.time_scale;
    double reward_scale =
        options.reward_scale > 0.0 ? options.reward_scale : 1.0 / spec.time_scale;

    result.q = QApproximator(spec.state_dim(), options.k_max, cfg.hidden, cfg.seed);
    QApproximator target = result.q;
    ReplayBuffer buffer(cfg.buffer_capacity);
    std::mt19937_64 rng(cfg.seed);
    AssignmentDistribution uniform_dist =
        AssignmentDistribution::uniform(result.route_sets);

    long env_steps = 0;
    long updates = 0;
    QApproximator best_q = result.q;
    std::vector<std::vector<Route>> best_sets = result.route_sets;
    double best_tstt = std::numeric_limits<double>::infinity();
    for (int ep = 1; ep <= cfg.episodes; ++ep) {
        spec.route_sets = result.route_sets;
        spec.arrival_order = shuffled_arrival_order(demand, cfg.seed + ep);
        double epsilon = cfg.epsilon_at(ep - 1);

        EnvState env;
        StateVector s = reset(spec, env);
        double loss_sum = 0.0;
        long loss_count = 0;
        double final_tstt = 0.0;
        while (true) {
            const auto& m_od = options.guidance
                                   ? result.dist.probs[env.od_index]
                                   : uniform_dist.probs[env.od_index];
            int action = msa_guided_select(result.q, s, epsilon, m_od, rng);
            StepOutcome out = step(spec, env, action);

            Transition t;
            t.state = std::move(s);
            t.action = action;
            t.reward = out.reward * reward_scale;
            t.terminal = out.terminal;
            if (!out.terminal) t.next_state = *out.next_state;
            buffer.push(std::move(t));
            ++env_steps;

            if (buffer.size() >= static_cast<size_t>(cfg.warmup) &&
                buffer.size() >= static_cast<size_t>(cfg.batch_size) &&
                env_steps % cfg.update_every == 0) {
                auto batch = buffer.sample(cfg.batch_size, rng);
                loss_sum += update(result.q, target, batch, cfg);
                ++loss_count;
                if (++updates % cfg.target_sync == 0)
                    target.copy_parameters_from(result.q);
            }

            if (out.terminal) {
                final_tstt = out.tstt;
                break;
            }
            s = std::move(*out.next_state);
        }

        if (options.guidance && options.mode == ActionSetMode::MsaGuided) {
            update_distribution(result.dist, env.flows, net, ep,
                                result.route_sets, demand, options.k_max,
                                options.guide_costs, progress);
            // Keep the uniform fallback aligned with grown action sets.
            uniform_dist = AssignmentDistribution::uniform(result.route_sets);
        } else if (options.guidance) {
            // Fixed action sets: average M without growing routes. An AON
            // route outside the set falls back to the cheapest slot.
            auto sets_copy = result.route_sets;
            update_distribution(result.dist, env.flows, net, ep, sets_copy,
                                demand, 0, options.guide_costs, nullptr);
        }

        if (options.eval_every > 0 &&
            (ep % options.eval_every == 0 || ep == cfg.episodes)) {
            EpisodeSpec eval_spec = spec;
            eval_spec.route_sets = result.route_sets;
            eval_spec.arrival_order = shuffled_arrival_order(demand, cfg.seed);
            double greedy_tstt =
                greedy_rollout(result.q, eval_spec, nullptr, nullptr);
            if (greedy_tstt < best_tstt) {
                best_tstt = greedy_tstt;
                best_q.copy_parameters_from(result.q);
                best_sets = result.route_sets;
            }
        }

        TrainLogRecord rec;
        rec.episode = ep;
        rec.tstt = final_tstt;
        rec.mean_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
        rec.epsilon = epsilon;
        for (const auto& routes : result.route_sets)
            rec.routes_per_od.push_back(static_cast<int>(routes.size()));
        result.log.push_back(std::move(rec));

        if (progress && (ep % 50 == 0 || ep == cfg.episodes))
            *progress << "episode " << ep << "  tstt " << final_tstt
                      << "  eps " << epsilon << "\n";
    }
    if (options.eval_every > 0 && cfg.episodes > 0) {
        result.q = std::move(best_q);
        result.route_sets = std::move(best_sets);
        result.best_greedy_tstt = best_tstt;
    }
    return result;
}

// One greedy rollout; optionally writes a JSONL trace, one record per step.
inline double greedy_rollout(const QApproximator& q, const EpisodeSpec& spec,
                             std::vector<std::vector<int>>* action_counts = nullptr,
                             std::ostream* trace = nullptr) {
    if (action_counts) {
        action_counts->assign(spec.num_ods(), {});
        for (int od = 0; od < spec.num_ods(); ++od)
            (*action_counts)[od].assign(spec.route_sets[od].size(), 0);
    }
    EnvState env;
    StateVector s = reset(spec, env);
    double tstt = 0.0;
    while (true) {
        int od = env.od_index;
        int t = env.t;
        int action = act_greedy(q, s);
        StepOutcome out = step(spec, env, action);
        if (action_counts) (*action_counts)[od][action] += 1;
        if (trace) {
            nlohmann::json rec{{"t", t},
                               {"od", od},
                               {"action", action},
                               {"reward", out.reward},
                               {"tstt_so_far", out.tstt}};
            *trace << rec.dump() << "\n";
        }
        tstt = out.tstt;
        if (out.terminal) break;
        s = std::move(*out.next_state);
    }
    return tstt;
}

struct EvalReport {
    double tstt = 0.0;
    double ue_baseline = 0.0;
    double so_baseline = 0.0;
    double improvement_over_ue = 0.0;  // (UE - x) / UE
    double deviation_from_so = 0.0;    // (x - SO) / SO
    std::vector<std::vector<int>> action_counts;  // per OD, per route slot
};

inline EvalReport evaluate(const QApproximator& q, const Network& net,
                           const DemandTable& demand,
                           const std::vector<std::vector<Route>>& route_sets,
                           int k_max, double ue_baseline, double so_baseline,
                           std::uint64_t eval_seed,
                           MarginalEval eval_mode = MarginalEval::Post) {
    EpisodeSpec spec = make_episode_spec(net, demand, route_sets, k_max,
                                         shuffled_arrival_order(demand, eval_seed),
                                         eval_mode);
    if (q.input_dim() != spec.state_dim() || q.num_actions() != k_max)
        throw ValidationError("checkpoint dimensions do not match the network");
    EvalReport rep;
    rep.tstt = greedy_rollout(q, spec, &rep.action_counts);
    rep.ue_baseline = ue_baseline;
    rep.so_baseline = so_baseline;
    if (ue_baseline > 0.0)
        rep.improvement_over_ue = (ue_baseline - rep.tstt) / ue_baseline;
    if (so_baseline > 0.0)
        rep.deviation_from_so = (rep.tstt - so_baseline) / so_baseline;
    return rep;
}

// --- checkpoint I/O ------------------------------------------------------

inline nlohmann::json routes_to_json(const std::vector<std::vector<Route>>& sets) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& routes : sets) {
        nlohmann::json arr = nlohmann::json::array();
        for (const Route& r : routes)
            arr.push_back(nlohmann::json{{"links", r.links},
                                         {"origin", r.origin},
                                         {"destination", r.destination}});
        j.push_back(arr);
    }
    return j;
}

inline std::vector<std::vector<Route>> routes_from_json(const nlohmann::json& j) {
    std::vector<std::vector<Route>> sets;
    for (const auto& arr : j) {
        std::vector<Route> routes;
        for (const auto& e : arr) {
            Route r;
            r.links = e.at("links").get<std::vector<LinkId>>();
            r.origin = e.at("origin").get<NodeId>();
            r.destination = e.at("destination").get<NodeId>();
            routes.push_back(std::move(r));
        }
        sets.push_back(std::move(routes));
    }
    return sets;
}

inline void save_checkpoint(const TrainResult& result, const std::string& path) {
    const TrainerConfig& cfg = result.options.dqn;
    nlohmann::json j;
    j["format"] = 1;
    j["q"] = result.q.to_json();
    j["route_sets"] = routes_to_json(result.route_sets);
    j["distribution"] = result.dist.probs;
    j["config"] = {{"gamma", cfg.gamma},
                   {"batch_size", cfg.batch_size},
                   {"learning_rate", cfg.learning_rate},
                   {"buffer_capacity", cfg.buffer_capacity},
                   {"target_sync", cfg.target_sync},
                   {"warmup", cfg.warmup},
                   {"update_every", cfg.update_every},
                   {"episodes", cfg.episodes},
                   {"epsilon_start", cfg.epsilon_start},
                   {"epsilon_end", cfg.epsilon_end},
                   {"epsilon_decay_fraction", cfg.epsilon_decay_fraction},
                   {"seed", cfg.seed},
                   {"double_q", cfg.target_rule == TrainerConfig::TargetRule::Double},
                   {"hidden", cfg.hidden}};
    j["mode"] = to_string(result.options.mode);
    j["k_max"] = result.options.k_max;
    j["marginal_eval"] =
        result.options.marginal_eval == MarginalEval::Post ? "post" : "pre";
    j["time_scale"] = result.time_scale;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump();
}

inline TrainResult load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    if (j.at("format").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint format");

    TrainResult result;
    result.q = QApproximator::from_json(j.at("q"));
    result.route_sets = routes_from_json(j.at("route_sets"));
    result.dist.probs = j.at("distribution").get<std::vector<std::vector<double>>>();
    const auto& c = j.at("config");
    TrainerConfig& cfg = result.options.dqn;
    cfg.gamma = c.at("gamma").get<double>();
    cfg.batch_size = c.at("batch_size").get<int>();
    cfg.learning_rate = c.at("learning_rate").get<double>();
    cfg.buffer_capacity = c.at("buffer_capacity").get<int>();
    cfg.target_sync = c.at("target_sync").get<int>();
    cfg.warmup = c.at("warmup").get<int>();
    cfg.update_every = c.at("update_every").get<int>();
    cfg.episodes = c.at("episodes").get<int>();
    cfg.epsilon_start = c.at("epsilon_start").get<double>();
    cfg.epsilon_end = c.at("epsilon_end").get<double>();
    cfg.epsilon_decay_fraction = c.at("epsilon_decay_fraction").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    cfg.target_rule = c.at("double_q").get<bool>()
                          ? TrainerConfig::TargetRule::Double
                          : TrainerConfig::TargetRule::Vanilla;
    cfg.hidden = c.at("hidden").get<std::vector<int>>();
    result.options.k_max = j.at("k_max").get<int>();
    result.options.marginal_eval = j.at("marginal_eval").get<std::string>() == "pre"
                                       ? MarginalEval::Pre
                                       : MarginalEval::Post;
    std::string mode = j.at("mode").get<std::string>();
    result.options.mode = mode == "ksp" ? ActionSetMode::Ksp
                          : mode == "so-routes" ? ActionSetMode::SoRoutes
                                                : ActionSetMode::MsaGuided;
    result.time_scale = j.at("time_scale").get<double>();
    return result;
}

}  // namespace sotar
