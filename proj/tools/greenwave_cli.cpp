// Benchmark command line: scenario generation, training, evaluation,
// ablations, inference timing and report rendering.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "greenwave/bench.hpp"

using namespace greenwave;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
    if (seeds.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
    return seeds;
}

std::vector<double> parse_lengths(const std::string& csv) {
    std::vector<double> lengths;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) lengths.push_back(std::stod(item));
    return lengths;
}

AgentConfig config_for(const std::string& agent, double alpha) {
    AgentConfig cfg;
    cfg.variant = variant_from_name(agent);
    cfg.alpha = alpha;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"greenwave: multi-intersection traffic signal benchmark"};
    app.require_subcommand(1);

    // gen-map
    auto* gen_map = app.add_subcommand("gen-map", "generate a grid scenario file (no flows)");
    int rows = 3, cols = 3, phases = 4;
    std::string lengths_csv = "200";
    std::string name = "grid";
    std::uint64_t scenario_seed = 1;
    std::string out_path = "scenario.json";
    gen_map->add_option("--rows", rows, "grid rows");
    gen_map->add_option("--cols", cols, "grid columns");
    gen_map->add_option("--phases", phases, "phases per signal");
    gen_map->add_option("--lengths", lengths_csv, "lane length profile, comma separated metres");
    gen_map->add_option("--name", name, "scene name recorded in the file");
    gen_map->add_option("--seed", scenario_seed, "scenario seed");
    gen_map->add_option("--out", out_path, "output scenario path");

    // gen-flows
    auto* gen_flows = app.add_subcommand("gen-flows", "add a flow spec to a scenario file");
    std::string scenario_path;
    double period = 1.0, fringe_weight = 10.0;
    int horizon = 1000, attempts = 100;
    bool replace_flows = false;
    gen_flows->add_option("--scenario", scenario_path, "scenario file to extend")->required();
    gen_flows->add_option("--period", period, "seconds between departures");
    gen_flows->add_option("--horizon", horizon, "flow horizon in steps");
    gen_flows->add_option("--fringe-weight", fringe_weight, "origin/destination weight of fringe lanes");
    gen_flows->add_option("--attempts", attempts, "route sampling attempts per vehicle");
    gen_flows->add_flag("--replace", replace_flows, "drop existing flows first");
    gen_flows->add_option("--out", out_path, "output path (defaults to --scenario)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train an agent and write checkpoints plus curves");
    std::string agent = "egu_rl";
    std::string seeds_csv = "1";
    int episodes = 500, steps = 1000;
    double alpha = 1.0;
    std::string out_dir = "out";
    train_cmd->add_option("--scenario", scenario_path, "scenario file")->required();
    train_cmd->add_option("--agent", agent, "agent variant: marl_s, marl_g or egu_rl");
    train_cmd->add_option("--seeds", seeds_csv, "comma-separated seeds");
    train_cmd->add_option("--episodes", episodes, "training episodes");
    train_cmd->add_option("--steps", steps, "steps per episode");
    train_cmd->add_option("--alpha", alpha, "hybrid reward trade-off");
    train_cmd->add_option("--out", out_dir, "output directory");
    bool use_ac = false;
    train_cmd->add_flag("--actor-critic", use_ac, "train the actor-critic variant");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation on the seen or unseen split");
    std::string split = "seen";
    std::string checkpoint;
    std::string trace_path;
    int eval_steps = 0;
    eval_cmd->add_option("--scenario", scenario_path, "scenario file")->required();
    eval_cmd->add_option("--agent", agent, "agent variant (baselines need no checkpoint)");
    eval_cmd->add_option("--seeds", seeds_csv, "comma-separated seeds");
    eval_cmd->add_option("--split", split, "seen or unseen")->check(CLI::IsMember({"seen", "unseen"}));
    eval_cmd->add_option("--steps", eval_steps, "override evaluation steps");
    eval_cmd->add_option("--alpha", alpha, "hybrid reward trade-off");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path (defaults to the train layout under --out)");
    eval_cmd->add_option("--out", out_dir, "output directory for result rows");
    eval_cmd->add_option("--trace", trace_path, "write a per-step trace log");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate full, w/o USD, w/o EGE, w/o EW");
    ablate_cmd->add_option("--scenario", scenario_path, "scenario file")->required();
    ablate_cmd->add_option("--seeds", seeds_csv, "comma-separated seeds");
    ablate_cmd->add_option("--episodes", episodes, "training episodes");
    ablate_cmd->add_option("--steps", steps, "steps per episode");
    ablate_cmd->add_option("--alpha", alpha, "hybrid reward trade-off");
    ablate_cmd->add_option("--out", out_dir, "output directory");

    // time
    auto* time_cmd = app.add_subcommand("time", "mean greedy inference latency over repeated trials");
    int trials = 10;
    time_cmd->add_option("--scenario", scenario_path, "scenario file")->required();
    time_cmd->add_option("--agent", agent, "learned agent variant");
    time_cmd->add_option("--checkpoint", checkpoint, "checkpoint to load (fresh network otherwise)");
    time_cmd->add_option("--trials", trials, "number of timed trials");
    time_cmd->add_option("--seeds", seeds_csv, "seed for network construction");

    // report
    auto* report_cmd = app.add_subcommand("report", "merge result rows into a comparison table");
    std::vector<std::string> result_dirs;
    report_cmd->add_option("dirs", result_dirs, "directories or csv files with result rows")->required();
    report_cmd->add_option("--out", out_path, "also write merged machine rows here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen_map->parsed()) {
            Scenario s;
            s.name = name;
            s.network = build_grid_map(rows, cols, parse_lengths(lengths_csv), phases);
            s.seed = scenario_seed;
            save_scenario(s, out_path);
            std::cout << "wrote " << out_path << " (" << s.network.intersection_count() << " intersections, "
                      << s.network.lanes.size() << " lanes)\n";
        } else if (gen_flows->parsed()) {
            Scenario s = load_scenario(scenario_path);
            if (replace_flows) s.flows.clear();
            FlowSpec spec;
            spec.period = period;
            spec.horizon = horizon;
            spec.fringe_weight = fringe_weight;
            spec.max_route_attempts = attempts;
            spec.validate();
            s.flows.push_back(spec);
            const std::string dest = gen_flows->count("--out") ? out_path : scenario_path;
            save_scenario(s, dest);
            std::cout << "wrote " << dest << " (" << s.flows.size() << " flows)\n";
        } else if (train_cmd->parsed()) {
            ExperimentSpec spec;
            spec.scenario_path = scenario_path;
            spec.agent = config_for(agent, alpha);
            if (use_ac) spec.agent.learner = LearnerKind::actor_critic;
            spec.seeds = parse_seeds(seeds_csv);
            spec.train_episodes = episodes;
            spec.episode_steps = steps;
            spec.out_dir = out_dir;
            TrainOutput out = cmd_train(spec);
            for (const std::string& ckpt : out.checkpoints) std::cout << "checkpoint " << ckpt << "\n";
        } else if (eval_cmd->parsed()) {
            ExperimentSpec spec;
            spec.scenario_path = scenario_path;
            spec.agent = config_for(agent, alpha);
            spec.seeds = parse_seeds(seeds_csv);
            spec.episode_steps = steps;
            if (eval_steps > 0) {
                spec.eval_steps_seen = eval_steps;
                spec.eval_steps_unseen = eval_steps;
            }
            spec.out_dir = out_dir;
            std::filesystem::create_directories(out_dir);
            std::vector<ResultRow> rows;
            std::ofstream trace;
            if (!trace_path.empty()) trace.open(trace_path, std::ios::binary);
            for (std::uint64_t seed : spec.seeds)
                rows.push_back(cmd_eval(spec, seed, split, checkpoint, trace.is_open() ? &trace : nullptr));
            const std::string rows_path = out_dir + "/eval_" + agent + "_" + split + ".csv";
            write_result_rows(rows_path, rows);
            for (const ResultRow& r : rows)
                std::cout << r.agent << " seed " << r.seed << " " << r.split << ": cost " << r.cost_wt_hours
                          << " h, stop " << r.stop_time_hours << " h\n";
            std::cout << "wrote " << rows_path << "\n";
        } else if (ablate_cmd->parsed()) {
            ExperimentSpec spec;
            spec.scenario_path = scenario_path;
            spec.agent = config_for("egu_rl", alpha);
            spec.seeds = parse_seeds(seeds_csv);
            spec.train_episodes = episodes;
            spec.episode_steps = steps;
            spec.out_dir = out_dir;
            AblationOutput out = cmd_ablate(spec);
            std::cout << cmd_report(out.rows);
            std::cout << "hybrid reward, alpha=1 training: " << out.hybrid_reward_alpha1 << "\n";
            std::cout << "hybrid reward, alpha=0 training: " << out.hybrid_reward_alpha0 << "\n";
        } else if (time_cmd->parsed()) {
            Scenario s = load_scenario(scenario_path);
            AgentConfig cfg = config_for(agent, alpha);
            Learner learner = Learner::make(s, cfg, parse_seeds(seeds_csv).front());
            if (!checkpoint.empty()) learner.load(checkpoint);
            SimState st = sim_reset(s);
            const Observation obs = observe(st);
            const double ms = cmd_time_inference(learner, obs, trials);
            std::printf("mean inference %.4g ms over %d trials (%ld parameters)\n", ms, trials,
                        learner.parameter_count());
        } else if (report_cmd->parsed()) {
            std::vector<ResultRow> rows;
            for (const std::string& dir : result_dirs) {
                namespace fs = std::filesystem;
                if (fs::is_regular_file(dir)) {
                    for (ResultRow& r : read_result_rows(dir)) rows.push_back(std::move(r));
                    continue;
                }
                for (const auto& entry : fs::directory_iterator(dir)) {
                    if (entry.path().extension() != ".csv") continue;
                    std::ifstream probe(entry.path());
                    std::string header;
                    std::getline(probe, header);
                    if (header != kResultHeader) continue;
                    for (ResultRow& r : read_result_rows(entry.path().string())) rows.push_back(std::move(r));
                }
            }
            std::string machine;
            std::cout << cmd_report(rows, &machine);
            if (report_cmd->count("--out")) {
                std::ofstream out(out_path, std::ios::binary);
                out << machine;
                std::cout << "wrote " << out_path << "\n";
            }
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid arguments: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
