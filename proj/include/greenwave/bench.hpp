#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "greenwave/agents.hpp"

namespace greenwave {

struct ExperimentSpec {
    std::string scenario_path;
    AgentConfig agent;
    std::vector<std::uint64_t> seeds{1};
    int train_episodes = 500;
    int episode_steps = 1000;
    int eval_steps_seen = 0;      // 0: replay the training flow horizon
    int eval_steps_unseen = 5000;
    std::string out_dir = "out";

    void validate() const {
        if (seeds.empty()) throw std::invalid_argument("ExperimentSpec: at least one seed required");
        if (train_episodes < 1 || episode_steps < 1 || eval_steps_unseen < 1)
            throw std::invalid_argument("ExperimentSpec: step counts must be positive");
    }
};

struct ResultRow {
    std::string scene;
    std::string flow;
    std::string agent;
    std::uint64_t seed = 0;
    std::string split;  // "seen" or "unseen"
    double cost_wt_hours = 0.0;
    double stop_time_hours = 0.0;
    double reward_sum = 0.0;
    long param_count = 0;
    double mean_inference_ms = 0.0;
};

inline constexpr const char* kResultHeader =
    "scene,flow,agent,seed,split,cost_wt_hours,stop_time_hours,reward_sum,param_count,mean_inference_ms";

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline void write_result_rows(const std::string& path, std::span<const ResultRow> rows) {
    std::ofstream out(path, std::ios::binary);  // binary keeps LF endings everywhere
    if (!out) throw std::runtime_error("write_result_rows: cannot open " + path);
    out << kResultHeader << "\n";
    for (const ResultRow& r : rows)
        out << r.scene << "," << r.flow << "," << r.agent << "," << r.seed << "," << r.split << ","
            << format_double(r.cost_wt_hours) << "," << format_double(r.stop_time_hours) << ","
            << format_double(r.reward_sum) << "," << r.param_count << "," << format_double(r.mean_inference_ms)
            << "\n";
}

inline std::vector<ResultRow> read_result_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_result_rows: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_result_rows: empty file " + path);
    if (line != kResultHeader) throw std::runtime_error("read_result_rows: unexpected header in " + path);
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        ResultRow r;
        auto next = [&]() {
            if (!std::getline(ss, field, ',')) throw std::runtime_error("read_result_rows: short row in " + path);
            return field;
        };
        r.scene = next();
        r.flow = next();
        r.agent = next();
        r.seed = std::stoull(next());
        r.split = next();
        r.cost_wt_hours = std::stod(next());
        r.stop_time_hours = std::stod(next());
        r.reward_sum = std::stod(next());
        r.param_count = std::stol(next());
        r.mean_inference_ms = std::stod(next());
        rows.push_back(std::move(r));
    }
    return rows;
}

inline void write_curve(const std::string& path, std::span<const CurvePoint> curve) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_curve: cannot open " + path);
    out << "episode,cost,reward,epsilon,loss\n";
    for (const CurvePoint& p : curve)
        out << p.episode << "," << format_double(p.cost) << "," << format_double(p.reward) << ","
            << format_double(p.epsilon) << "," << format_double(p.loss) << "\n";
}

/// Per-episode metrics record (one structured row per episode).
inline void write_metrics(const std::string& path, const std::string& scene, const std::string& flow,
                          const std::string& agent, std::uint64_t seed, std::span<const EpisodeMetrics> episodes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_metrics: cannot open " + path);
    out << "scene,flow,agent,seed,episode,cost,reward,stop_time,arrivals\n";
    for (size_t ep = 0; ep < episodes.size(); ++ep)
        out << scene << "," << flow << "," << agent << "," << seed << "," << ep << ","
            << format_double(episodes[ep].cost_sum()) << "," << format_double(episodes[ep].reward_sum) << ","
            << format_double(episodes[ep].total_stop_time) << "," << episodes[ep].arrivals << "\n";
}

/// Flow label for result rows: the first flow's period.
inline std::string flow_label(const Scenario& s) {
    if (s.flows.empty()) return "none";
    std::ostringstream os;
    os << "p" << s.flows.front().period;
    return os.str();
}

// ---------------------------------------------------------------------------
// Rollouts

using ControllerFn = std::function<ActionMatrix(const SimState&, const Observation&, int)>;

inline ControllerFn make_random_controller(std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    return [rng](const SimState& s, const Observation&, int) { return act_random(s.network(), *rng); };
}

inline ControllerFn make_fixed_controller(int dwell) {
    return [dwell](const SimState& s, const Observation&, int clock) { return act_fixed(s.network(), clock, dwell); };
}

inline ControllerFn make_auction_controller(std::uint64_t seed, int probes, double wt_normalizer) {
    auto rng = std::make_shared<Rng>(seed);
    return [rng, probes, wt_normalizer](const SimState& s, const Observation&, int) {
        return act_auction_nash(s, probes, *rng, wt_normalizer);
    };
}

inline ControllerFn make_greedy_controller(Learner& learner) {
    return [&learner](const SimState&, const Observation& obs, int) { return learner.act(obs, 0.0); };
}

/// Runs one episode of `steps` steps and returns its metrics. When a
/// schedule is supplied the environment replays it instead of regenerating
/// flows (used by the unseen split and by oracles). Optionally appends one
/// trace record per step.
inline EpisodeMetrics rollout(TrafficEnv& env, const ControllerFn& controller, int steps,
                              std::optional<FlowSchedule> schedule = std::nullopt, std::ostream* trace = nullptr) {
    Observation obs = schedule ? env.reset(std::move(*schedule)) : env.reset();
    for (int t = 0; t < steps; ++t) {
        ActionMatrix a = controller(env.state(), obs, env.state().clock);
        TrafficEnv::StepResult res = env.step(a.chosen);
        if (trace) write_trace_record(*trace, env.state());
        obs = std::move(res.obs);
    }
    return env.metrics();
}

/// Flow schedule for an evaluation split: the seen split replays the
/// training horizon, the unseen split extends every flow to `steps` with
/// the same period and seed.
inline FlowSchedule split_schedule(const Scenario& scenario, const std::string& split, int steps, double dt = 1.0) {
    FlowSchedule all;
    for (size_t i = 0; i < scenario.flows.size(); ++i) {
        FlowSpec spec = scenario.flows[i];
        if (split == "unseen") spec.horizon = steps;
        FlowSchedule one = generate_flows(scenario.network, spec, Rng(scenario.seed).fork(100 + i).next_u64(), dt);
        all.skipped_routes += one.skipped_routes;
        for (Departure& d : one.departures) all.departures.push_back(std::move(d));
    }
    return all;
}

// ---------------------------------------------------------------------------
// Commands

inline std::string checkpoint_path(const std::string& out_dir, const std::string& agent, std::uint64_t seed) {
    return out_dir + "/" + agent + "_seed" + std::to_string(seed) + ".ckpt";
}

struct TrainOutput {
    std::vector<std::string> checkpoints;
    std::vector<TrainResult> results;
};

/// Trains one learner per seed, writing checkpoint, curve and metrics files
/// under out_dir. Rerunning with the same spec reproduces the files byte
/// for byte.
inline TrainOutput cmd_train(const ExperimentSpec& spec,
                             const std::function<void(int, Learner&, const CurvePoint&)>& on_episode = {}) {
    spec.validate();
    const Scenario scenario = load_scenario(spec.scenario_path);
    std::filesystem::create_directories(spec.out_dir);
    const std::string agent = variant_name(spec.agent.variant);
    TrainOutput out;
    for (std::uint64_t seed : spec.seeds) {
        TrafficEnv env(scenario, spec.episode_steps, spec.agent.alpha);
        Learner learner = Learner::make(scenario, spec.agent, seed);
        TrainResult res = train(env, learner, spec.train_episodes, spec.episode_steps, on_episode);
        const std::string base = spec.out_dir + "/" + agent + "_seed" + std::to_string(seed);
        learner.save(checkpoint_path(spec.out_dir, agent, seed));
        write_curve(base + "_curve.csv", res.curve);
        write_metrics(base + "_metrics.csv", scenario.name, flow_label(scenario), agent, seed, res.metrics);
        out.checkpoints.push_back(checkpoint_path(spec.out_dir, agent, seed));
        out.results.push_back(std::move(res));
    }
    return out;
}

/// Greedy evaluation of one agent/seed on a split. Learned agents read
/// their checkpoint; baselines need none.
inline ResultRow cmd_eval(const ExperimentSpec& spec, std::uint64_t seed, const std::string& split,
                          const std::string& checkpoint = "", std::ostream* trace = nullptr) {
    const Scenario scenario = load_scenario(spec.scenario_path);
    const int steps = split == "unseen" ? spec.eval_steps_unseen
                                        : (spec.eval_steps_seen > 0 ? spec.eval_steps_seen : spec.episode_steps);
    TrafficEnv env(scenario, steps, spec.agent.alpha);

    ResultRow row;
    row.scene = scenario.name;
    row.flow = flow_label(scenario);
    row.agent = variant_name(spec.agent.variant);
    row.seed = seed;
    row.split = split;

    std::optional<Learner> learner;
    ControllerFn controller;
    switch (spec.agent.variant) {
        case AgentVariant::random:
            controller = make_random_controller(seed);
            break;
        case AgentVariant::fixed:
            controller = make_fixed_controller(spec.agent.fixed_dwell);
            break;
        case AgentVariant::auction:
            controller = make_auction_controller(seed, spec.agent.auction_probes, spec.agent.auction_wt_normalizer);
            break;
        default: {
            learner.emplace(Learner::make(scenario, spec.agent, seed));
            const std::string path = checkpoint.empty() ? checkpoint_path(spec.out_dir, row.agent, seed) : checkpoint;
            learner->load(path);
            controller = make_greedy_controller(*learner);
            row.param_count = learner->parameter_count();
            break;
        }
    }

    EpisodeMetrics m = rollout(env, controller, steps, split_schedule(scenario, split, steps), trace);
    row.cost_wt_hours = m.cost_sum() / 3600.0;
    row.stop_time_hours = m.total_stop_time / 3600.0;
    row.reward_sum = m.reward_sum;
    return row;
}

/// Mean wall-clock milliseconds of one greedy decision (forward pass plus
/// masked selection), averaged over `trials` after a warm start.
inline double cmd_time_inference(Learner& learner, const Observation& obs, int trials = 10) {
    volatile int sink = 0;
    ActionMatrix warm = learner.act(obs, 0.0);
    sink = sink + warm.chosen[0];
    double total_ms = 0.0;
    for (int t = 0; t < trials; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        ActionMatrix a = learner.act(obs, 0.0);
        const auto t1 = std::chrono::steady_clock::now();
        sink = sink + a.chosen[0];
        total_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    return total_ms / trials;
}

/// Renders merged result rows as an aligned table, one row per
/// (scene, flow, split) and one cost column per agent, the best agent
/// marked with '*'. Returns the table; also appends the machine rows when
/// `machine_out` is given.
inline std::string cmd_report(std::span<const ResultRow> rows, std::string* machine_out = nullptr) {
    if (rows.empty()) throw std::invalid_argument("cmd_report: no result rows");
    std::vector<std::string> agents;
    std::map<std::string, std::map<std::string, std::vector<double>>> table;  // scene -> agent -> costs
    for (const ResultRow& r : rows) {
        if (std::find(agents.begin(), agents.end(), r.agent) == agents.end()) agents.push_back(r.agent);
        table[r.scene + "-" + r.flow + "-" + r.split][r.agent].push_back(r.cost_wt_hours);
    }
    std::sort(agents.begin(), agents.end());
    std::ostringstream os;
    os << std::left << std::setw(28) << "scene";
    for (const std::string& a : agents) os << std::right << std::setw(14) << a;
    os << "\n";
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    for (const auto& [scene, per_agent] : table) {
        os << std::left << std::setw(28) << scene;
        double best = std::numeric_limits<double>::infinity();
        std::string best_agent;
        for (const auto& [agent, costs] : per_agent) {
            const double med = median(costs);
            if (med < best) {
                best = med;
                best_agent = agent;
            }
        }
        for (const std::string& a : agents) {
            auto it = per_agent.find(a);
            if (it == per_agent.end()) {
                os << std::right << std::setw(14) << "-";
            } else {
                std::ostringstream cell;
                cell << std::fixed << std::setprecision(3) << median(it->second) << (a == best_agent ? "*" : " ");
                os << std::right << std::setw(14) << cell.str();
            }
        }
        os << "\n";
    }
    if (machine_out) {
        std::ostringstream mo;
        mo << kResultHeader << "\n";
        for (const ResultRow& r : rows)
            mo << r.scene << "," << r.flow << "," << r.agent << "," << r.seed << "," << r.split << ","
               << format_double(r.cost_wt_hours) << "," << format_double(r.stop_time_hours) << ","
               << format_double(r.reward_sum) << "," << r.param_count << "," << format_double(r.mean_inference_ms)
               << "\n";
        *machine_out = mo.str();
    }
    return os.str();
}

struct AblationOutput {
    std::vector<ResultRow> rows;            // four configurations x seeds x splits
    double hybrid_reward_alpha1 = 0.0;      // total hybrid-scored reward, alpha = 1 training
    double hybrid_reward_alpha0 = 0.0;      // same metric for the alpha = 0 training
};

inline AgentConfig ablation_config(const AgentConfig& base, const std::string& which) {
    AgentConfig c = base;
    c.variant = AgentVariant::egu_rl;
    if (which == "wo_usd") c.use_usd = false;
    else if (which == "wo_ege") c.use_ege = false;
    else if (which == "wo_ew") c.use_edge_weights = false;
    else if (which != "full") throw std::invalid_argument("ablation_config: unknown variant " + which);
    return c;
}

inline std::string ablation_agent_name(const std::string& which) {
    return which == "full" ? "egu_rl" : std::string("egu_rl_") + which;
}

/// Trains and evaluates {full, w/o USD, w/o EGE, w/o EW} with shared seeds,
/// then repeats the full configuration with alpha = 0 to compare the hybrid
/// reward actually collected (both runs scored under alpha = 1).
inline AblationOutput cmd_ablate(const ExperimentSpec& spec) {
    spec.validate();
    const Scenario scenario = load_scenario(spec.scenario_path);
    std::filesystem::create_directories(spec.out_dir);
    AblationOutput out;
    for (const std::string& which : {"full", "wo_usd", "wo_ege", "wo_ew"}) {
        const AgentConfig cfg = ablation_config(spec.agent, which);
        const std::string agent_name = ablation_agent_name(which);
        for (std::uint64_t seed : spec.seeds) {
            TrafficEnv env(scenario, spec.episode_steps, cfg.alpha);
            Learner learner = Learner::make(scenario, cfg, seed);
            TrainResult res = train(env, learner, spec.train_episodes, spec.episode_steps);
            const std::string ckpt = checkpoint_path(spec.out_dir, agent_name, seed);
            learner.save(ckpt);
            write_curve(spec.out_dir + "/" + agent_name + "_seed" + std::to_string(seed) + "_curve.csv", res.curve);
            for (const std::string split : {"seen", "unseen"}) {
                ExperimentSpec es = spec;
                es.agent = cfg;
                ResultRow row = cmd_eval(es, seed, split, ckpt);
                row.agent = agent_name;
                row.param_count = learner.parameter_count();
                out.rows.push_back(std::move(row));
            }
        }
    }

    // Hybrid-vs-waiting-time-only reward comparison: train the full model
    // with alpha 1 and alpha 0 on the same seeds, always scoring episodes
    // under the hybrid (alpha = 1) reward.
    for (double alpha : {1.0, 0.0}) {
        double total = 0.0;
        for (std::uint64_t seed : spec.seeds) {
            AgentConfig cfg = ablation_config(spec.agent, "full");
            cfg.alpha = alpha;
            TrafficEnv env(scenario, spec.episode_steps, /*alpha=*/1.0);  // metrics scored hybrid
            Learner learner = Learner::make(scenario, cfg, seed);
            // the learner's TD reward must match its own alpha, so rescore:
            Observation obs = env.reset();
            for (int ep = 0; ep < spec.train_episodes; ++ep) {
                obs = env.reset();
                for (int t = 0; t < spec.episode_steps; ++t) {
                    ActionMatrix a = learner.act(obs);
                    TrafficEnv::StepResult res = env.step(a.chosen);
                    const double train_reward = res.reward.r_wt + alpha * res.reward.r_uc;
                    learner.observe_transition(obs, a, train_reward, res.obs, res.done);
                    learner.learn();
                    obs = std::move(res.obs);
                }
                total += env.metrics().reward_sum;  // hybrid-scored
            }
        }
        (alpha == 1.0 ? out.hybrid_reward_alpha1 : out.hybrid_reward_alpha0) = total;
    }

    write_result_rows(spec.out_dir + "/ablation_rows.csv", out.rows);
    std::ofstream fig(spec.out_dir + "/hybrid_reward_comparison.csv", std::ios::binary);
    fig << "config,total_hybrid_reward\nalpha1," << format_double(out.hybrid_reward_alpha1) << "\nalpha0,"
        << format_double(out.hybrid_reward_alpha0) << "\n";
    return out;
}

}  // namespace greenwave
