// Benchmark CLI: classical solvers, RL training/evaluation, k-shortest-path
// queries, and the bundled Braess / OW studies.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "sotar/assignment.hpp"
#include "sotar/trainer.hpp"

using namespace sotar;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::string route_name(const Network& net, const Route& r) {
    std::string s;
    auto nodes = r.nodes(net);
    for (size_t i = 0; i < nodes.size(); ++i) {
        if (i) s += "-";
        s += net.node_name(nodes[i]);
    }
    return s;
}

json result_to_json(const Network& net, const AssignmentResult& res) {
    json j;
    j["tstt"] = res.tstt;
    j["iterations"] = res.iterations;
    j["relative_gap"] = res.relative_gap;
    j["flows"] = res.flows.volumes;
    json rf = json::array();
    for (size_t k = 0; k < res.route_flows.size(); ++k) {
        const auto& od = res.demand.entries[k];
        json entry;
        entry["origin"] = net.node_name(od.origin);
        entry["destination"] = net.node_name(od.destination);
        entry["demand"] = od.demand;
        json routes = json::array();
        for (const auto& [route, flow] : res.route_flows[k])
            routes.push_back({{"route", route_name(net, route)}, {"flow", flow}});
        entry["routes"] = routes;
        rf.push_back(entry);
    }
    j["route_flows"] = rf;
    return j;
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << contents;
}

void write_curve(const std::string& path, const TrainLog& log) {
    std::ostringstream csv;
    csv << "episode,tstt,loss,epsilon,routes\n";
    csv.precision(12);
    for (const auto& rec : log) {
        int routes = 0;
        for (int r : rec.routes_per_od) routes += r;
        csv << rec.episode << ',' << rec.tstt << ',' << rec.mean_loss << ','
            << rec.epsilon << ',' << routes << '\n';
    }
    write_file(path, csv.str());
}

struct ParsedMode {
    ActionSetMode mode = ActionSetMode::MsaGuided;
    int ksp_k = 15;
};

ParsedMode parse_mode(const std::string& text) {
    ParsedMode m;
    if (text == "msa-guided") {
        m.mode = ActionSetMode::MsaGuided;
    } else if (text == "so-routes") {
        m.mode = ActionSetMode::SoRoutes;
    } else if (text.rfind("ksp:", 0) == 0) {
        m.mode = ActionSetMode::Ksp;
        m.ksp_k = std::stoi(text.substr(4));
        if (m.ksp_k < 1) throw ConfigError("ksp route count must be >= 1");
    } else {
        throw ConfigError("unknown mode '" + text +
                          "' (expected msa-guided|ksp:K|so-routes)");
    }
    return m;
}

struct TrainFlags {
    std::string net_file, trips_file, mode_text = "msa-guided", out_dir = ".";
    int episodes = 3000;
    std::uint64_t seed = 1;
    double learning_rate = 2e-5;
    double gamma = 0.95;
    int batch_size = 128;
    int update_every = 1;
    int warmup = 2000;
    int buffer_capacity = 100000;
    int target_sync = 1000;
    int k_max = 20;
    std::vector<int> hidden = {512, 256};
    int eval_every = 0;
    std::string target_rule = "double";
    std::string guide_costs = "so";
    std::string marginal_eval = "post";
    bool no_guidance = false;
    int baseline_iters = 10000;
    double baseline_gap = 1e-4;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--net", f.net_file, "link file")->required();
    cmd->add_option("--trips", f.trips_file, "trips file")->required();
    cmd->add_option("--episodes", f.episodes, "training episodes");
    cmd->add_option("--seed", f.seed, "base seed");
    cmd->add_option("--lr", f.learning_rate, "learning rate");
    cmd->add_option("--gamma", f.gamma, "discount factor");
    cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
    cmd->add_option("--update-every", f.update_every, "env steps per update");
    cmd->add_option("--warmup", f.warmup, "transitions before updates start");
    cmd->add_option("--buffer", f.buffer_capacity, "replay capacity");
    cmd->add_option("--target-sync", f.target_sync, "updates between target syncs");
    cmd->add_option("--k-max", f.k_max, "action slots per OD");
    cmd->add_option("--hidden", f.hidden, "hidden layer widths");
    cmd->add_option("--eval-every", f.eval_every,
                    "greedy-eval cadence for best-checkpoint tracking (0 = off)");
    cmd->add_option("--target", f.target_rule, "td target rule: double|vanilla");
    cmd->add_option("--guide-costs", f.guide_costs, "AON cost basis for M*: so|ue");
    cmd->add_option("--marginal-eval", f.marginal_eval,
                    "marginal-time flow level: post|pre");
    cmd->add_flag("--no-guidance", f.no_guidance,
                  "explore uniformly instead of sampling from M");
    cmd->add_option("--baseline-iters", f.baseline_iters,
                    "solver iterations for baselines / SO route sets");
    cmd->add_option("--baseline-gap", f.baseline_gap, "solver gap tolerance");
}

TrainOptions build_options(const TrainFlags& f, const Network& net,
                           const DemandTable& trips) {
    ParsedMode pm = parse_mode(f.mode_text);
    TrainOptions opt;
    opt.mode = pm.mode;
    opt.ksp_k = pm.ksp_k;
    opt.k_max = f.k_max;
    opt.guidance = !f.no_guidance;
    if (f.guide_costs == "so")
        opt.guide_costs = Objective::So;
    else if (f.guide_costs == "ue")
        opt.guide_costs = Objective::Ue;
    else
        throw ConfigError("guide-costs must be so|ue");
    if (f.marginal_eval == "post")
        opt.marginal_eval = MarginalEval::Post;
    else if (f.marginal_eval == "pre")
        opt.marginal_eval = MarginalEval::Pre;
    else
        throw ConfigError("marginal-eval must be post|pre");
    if (f.target_rule == "double")
        opt.dqn.target_rule = TrainerConfig::TargetRule::Double;
    else if (f.target_rule == "vanilla")
        opt.dqn.target_rule = TrainerConfig::TargetRule::Vanilla;
    else
        throw ConfigError("target must be double|vanilla");

    opt.dqn.episodes = f.episodes;
    opt.dqn.seed = f.seed;
    opt.dqn.learning_rate = f.learning_rate;
    opt.dqn.gamma = f.gamma;
    opt.dqn.batch_size = f.batch_size;
    opt.dqn.update_every = f.update_every;
    opt.dqn.warmup = f.warmup;
    opt.dqn.buffer_capacity = f.buffer_capacity;
    opt.dqn.target_sync = f.target_sync;
    opt.dqn.hidden = f.hidden;
    opt.eval_every = f.eval_every;

    if (opt.mode == ActionSetMode::SoRoutes) {
        AssignmentResult so = solve_msa(net, trips, Objective::So,
                                        f.baseline_iters, f.baseline_gap);
        opt.fixed_route_sets = extract_so_route_set(so);
        for (auto& routes : opt.fixed_route_sets)
            if (static_cast<int>(routes.size()) > opt.k_max)
                routes.resize(opt.k_max);
    }
    return opt;
}

json run_training_arm(const Network& net, const DemandTable& trips,
                      const TrainFlags& flags, const std::string& label,
                      const std::string& out_dir, double ue_tstt, double so_tstt) {
    TrainOptions opt = build_options(flags, net, trips);
    TrainResult res = train(net, trips, opt, &std::cerr);
    write_curve(out_dir + "/" + label + "_curve.csv", res.log);
    save_checkpoint(res, out_dir + "/" + label + "_checkpoint.bin");

    EvalReport rep = evaluate(res.q, net, trips, res.route_sets, opt.k_max,
                              ue_tstt, so_tstt, flags.seed);
    json j;
    j["method"] = label;
    j["tstt"] = rep.tstt;
    j["ue_improvement"] = rep.improvement_over_ue;
    j["so_deviation"] = rep.deviation_from_so;
    j["episodes"] = flags.episodes;
    j["seed"] = flags.seed;
    json sets = json::array();
    for (size_t k = 0; k < res.route_sets.size(); ++k) {
        json routes = json::array();
        for (size_t r = 0; r < res.route_sets[k].size(); ++r)
            routes.push_back({{"route", route_name(net, res.route_sets[k][r])},
                              {"travelers", rep.action_counts[k][r]}});
        sets.push_back(routes);
    }
    j["route_sets"] = sets;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"System-optimal traffic assignment via sequential route "
                 "recommendation: classical solvers and DQN benchmarks"};
    app.require_subcommand(1);

    // --- solve ---
    std::string net_file, trips_file, out_file = "result.json";
    std::string method = "msa", objective = "ue";
    int max_iters = 10000;
    double gap_tol = 1e-4;
    auto* solve = app.add_subcommand("solve", "classical assignment solver");
    solve->add_option("--net", net_file)->required();
    solve->add_option("--trips", trips_file)->required();
    solve->add_option("--method", method, "msa|fw");
    solve->add_option("--objective", objective, "ue|so");
    solve->add_option("--max-iters", max_iters);
    solve->add_option("--gap-tol", gap_tol);
    solve->add_option("--out", out_file);

    // --- ksp ---
    std::string ksp_origin, ksp_dest;
    int ksp_k = 5;
    auto* ksp = app.add_subcommand("ksp", "k-shortest free-flow routes");
    ksp->add_option("--net", net_file)->required();
    ksp->add_option("--origin", ksp_origin)->required();
    ksp->add_option("--dest", ksp_dest)->required();
    ksp->add_option("-k,--k", ksp_k);

    // --- train ---
    TrainFlags tf;
    auto* train_cmd = app.add_subcommand("train", "train a DQN assignment agent");
    add_train_flags(train_cmd, tf);
    train_cmd->add_option("--mode", tf.mode_text, "msa-guided|ksp:K|so-routes");
    train_cmd->add_option("--out", tf.out_dir, "output directory");

    // --- eval ---
    std::string ckpt_file;
    std::uint64_t eval_seed = 1;
    int eval_baseline_iters = 10000;
    double eval_baseline_gap = 1e-4;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint greedily");
    eval_cmd->add_option("--checkpoint", ckpt_file)->required();
    eval_cmd->add_option("--net", net_file)->required();
    eval_cmd->add_option("--trips", trips_file)->required();
    eval_cmd->add_option("--seed", eval_seed);
    eval_cmd->add_option("--baseline-iters", eval_baseline_iters);
    eval_cmd->add_option("--baseline-gap", eval_baseline_gap);

    // --- table3 ---
    std::string out_dir = ".";
    auto* table3 = app.add_subcommand("table3", "classical baseline table");
    table3->add_option("--net", net_file)->required();
    table3->add_option("--trips", trips_file)->required();
    table3->add_option("--max-iters", max_iters);
    table3->add_option("--gap-tol", gap_tol);
    table3->add_option("--out", out_dir, "output directory");

    // --- table4 ---
    TrainFlags t4;
    auto* table4 = app.add_subcommand("table4", "RL benchmark table");
    add_train_flags(table4, t4);
    table4->add_option("--out", t4.out_dir, "output directory");
    int ksp_small = 10, ksp_large = 15;
    table4->add_option("--ksp-small", ksp_small);
    table4->add_option("--ksp-large", ksp_large);

    // --- braess ---
    TrainFlags bf;
    bf.episodes = 3000;
    bf.learning_rate = 1e-3;
    bf.batch_size = 64;
    bf.warmup = 256;
    bf.buffer_capacity = 20000;
    bf.target_sync = 200;
    bf.hidden = {64, 32};
    auto* braess = app.add_subcommand("braess", "Braess paradox study");
    add_train_flags(braess, bf);
    braess->add_option("--out", bf.out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*solve) {
            auto [net, trips] = load_network(net_file, trips_file);
            Objective obj = objective == "so" ? Objective::So : Objective::Ue;
            if (objective != "so" && objective != "ue")
                throw ConfigError("objective must be ue|so");
            AssignmentResult res;
            if (method == "msa")
                res = solve_msa(net, trips, obj, max_iters, gap_tol);
            else if (method == "fw")
                res = solve_frank_wolfe(net, trips, obj, max_iters, gap_tol);
            else
                throw ConfigError("method must be msa|fw");
            write_file(out_file, result_to_json(net, res).dump(2));
            std::cout << "tstt " << res.tstt << "  iterations " << res.iterations
                      << "  relative_gap " << res.relative_gap << "\n";
        } else if (*ksp) {
            Network net = load_links(net_file);
            FlowState zero(net.num_links());
            auto costs = link_times(net, zero);
            auto routes = k_shortest_paths(net, costs, net.node(ksp_origin),
                                           net.node(ksp_dest), ksp_k);
            for (const Route& r : routes)
                std::cout << route_name(net, r) << "  cost " << r.cost(costs)
                          << "\n";
        } else if (*train_cmd) {
            auto [net, trips] = load_network(tf.net_file, tf.trips_file);
            std::filesystem::create_directories(tf.out_dir);
            AssignmentResult ue = solve_msa(net, trips, Objective::Ue,
                                            tf.baseline_iters, tf.baseline_gap);
            AssignmentResult so = solve_msa(net, trips, Objective::So,
                                            tf.baseline_iters, tf.baseline_gap);
            TrainOptions opt = build_options(tf, net, trips);
            TrainResult res = train(net, trips, opt, &std::cerr);
            write_curve(tf.out_dir + "/curve.csv", res.log);
            save_checkpoint(res, tf.out_dir + "/checkpoint.bin");
            EvalReport rep = evaluate(res.q, net, trips, res.route_sets,
                                      opt.k_max, ue.tstt, so.tstt, tf.seed);
            json summary;
            summary["final_tstt"] = rep.tstt;
            summary["ue_tstt"] = ue.tstt;
            summary["so_tstt"] = so.tstt;
            summary["ue_improvement"] = rep.improvement_over_ue;
            summary["so_deviation"] = rep.deviation_from_so;
            summary["mode"] = tf.mode_text;
            summary["seed"] = tf.seed;
            summary["episodes"] = tf.episodes;
            json sets = json::array();
            for (const auto& routes : res.route_sets) {
                json arr = json::array();
                for (const Route& r : routes) arr.push_back(route_name(net, r));
                sets.push_back(arr);
            }
            summary["route_sets"] = sets;
            write_file(tf.out_dir + "/summary.json", summary.dump(2));
            std::cout << summary.dump(2) << "\n";
        } else if (*eval_cmd) {
            auto [net, trips] = load_network(net_file, trips_file);
            TrainResult ck = load_checkpoint(ckpt_file);
            AssignmentResult ue = solve_msa(net, trips, Objective::Ue,
                                            eval_baseline_iters, eval_baseline_gap);
            AssignmentResult so = solve_msa(net, trips, Objective::So,
                                            eval_baseline_iters, eval_baseline_gap);
            EvalReport rep = evaluate(ck.q, net, trips, ck.route_sets,
                                      ck.options.k_max, ue.tstt, so.tstt,
                                      eval_seed, ck.options.marginal_eval);
            json j;
            j["tstt"] = rep.tstt;
            j["ue_tstt"] = rep.ue_baseline;
            j["so_tstt"] = rep.so_baseline;
            j["ue_improvement"] = rep.improvement_over_ue;
            j["so_deviation"] = rep.deviation_from_so;
            j["action_counts"] = rep.action_counts;
            std::cout << j.dump(2) << "\n";
        } else if (*table3) {
            auto [net, trips] = load_network(net_file, trips_file);
            std::filesystem::create_directories(out_dir);
            std::ostringstream csv;
            csv << "method,tstt,iterations,relative_gap\n";
            csv.precision(12);
            struct Row {
                const char* label;
                Objective obj;
                SolveMethod m;
            };
            for (const Row& row : {Row{"UE-MSA", Objective::Ue, SolveMethod::Msa},
                                   Row{"SO-MSA", Objective::So, SolveMethod::Msa},
                                   Row{"UE-FW", Objective::Ue, SolveMethod::FrankWolfe},
                                   Row{"SO-FW", Objective::So, SolveMethod::FrankWolfe}}) {
                AssignmentResult res = solve_assignment(net, trips, row.obj, row.m,
                                                        max_iters, gap_tol);
                csv << row.label << ',' << res.tstt << ',' << res.iterations << ','
                    << res.relative_gap << '\n';
                std::cout << row.label << "  tstt " << res.tstt << "  gap "
                          << res.relative_gap << "\n";
            }
            write_file(out_dir + "/table3.csv", csv.str());
        } else if (*table4) {
            auto [net, trips] = load_network(t4.net_file, t4.trips_file);
            std::filesystem::create_directories(t4.out_dir);
            AssignmentResult ue = solve_msa(net, trips, Objective::Ue,
                                            t4.baseline_iters, t4.baseline_gap);
            AssignmentResult so = solve_msa(net, trips, Objective::So,
                                            t4.baseline_iters, t4.baseline_gap);

            std::ostringstream csv;
            csv << "method,tstt,ue_improvement,so_deviation\n";
            csv.precision(12);
            json summary = json::array();
            std::vector<std::pair<std::string, std::string>> arms{
                {"msa_guided_rl", "msa-guided"},
                {"rl_so", "so-routes"},
                {"rl_" + std::to_string(ksp_small) + "sp",
                 "ksp:" + std::to_string(ksp_small)},
                {"rl_" + std::to_string(ksp_large) + "sp",
                 "ksp:" + std::to_string(ksp_large)}};
            for (const auto& [label, mode] : arms) {
                TrainFlags flags = t4;
                flags.mode_text = mode;
                json row = run_training_arm(net, trips, flags, label, t4.out_dir,
                                            ue.tstt, so.tstt);
                csv << label << ',' << row["tstt"].get<double>() << ','
                    << row["ue_improvement"].get<double>() << ','
                    << row["so_deviation"].get<double>() << '\n';
                summary.push_back(row);
                std::cout << label << "  tstt " << row["tstt"].get<double>()
                          << "\n";
            }
            write_file(t4.out_dir + "/table4.csv", csv.str());
            json wrap;
            wrap["ue_tstt"] = ue.tstt;
            wrap["so_tstt"] = so.tstt;
            wrap["base_seed"] = t4.seed;
            wrap["arms"] = summary;
            write_file(t4.out_dir + "/table4_summary.json", wrap.dump(2));
        } else if (*braess) {
            auto [net, trips] = load_network(bf.net_file, bf.trips_file);
            std::filesystem::create_directories(bf.out_dir);
            bf.mode_text = "ksp:3";  // the full 3-route Braess action set
            AssignmentResult ue = solve_msa(net, trips, Objective::Ue,
                                            bf.baseline_iters, bf.baseline_gap);
            AssignmentResult so = solve_msa(net, trips, Objective::So,
                                            bf.baseline_iters, bf.baseline_gap);
            json row = run_training_arm(net, trips, bf, "braess", bf.out_dir,
                                        ue.tstt, so.tstt);
            row["ue_tstt"] = ue.tstt;
            row["so_tstt"] = so.tstt;
            write_file(bf.out_dir + "/braess_summary.json", row.dump(2));
            std::cout << row.dump(2) << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NoPathError& e) {
        std::cerr << "no-path error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
