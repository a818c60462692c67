#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "greenwave/matrix.hpp"
#include "greenwave/sim.hpp"

namespace greenwave {

/// Sensor view of one step: per-lane waiting counts and waiting-time sums
/// over the controlled lanes in global lane order, plus (optionally) each
/// signal's current phase.
struct Observation {
    std::vector<double> s_num;
    std::vector<double> s_wt;
    std::vector<int> s_p;          // empty when phases are not included
    std::vector<char> s_yellow;    // per signal: a switch is in flight
    int step = 0;
};

inline Observation observe(const SimState& s, bool include_phases = true) {
    DetectorFrame f = read_detectors(s);
    Observation obs;
    obs.step = s.clock;
    obs.s_num.assign(f.waiting_count.begin(), f.waiting_count.end());
    obs.s_wt = std::move(f.waiting_time_sum);
    if (include_phases) {
        obs.s_p.reserve(s.signals.size());
        obs.s_yellow.reserve(s.signals.size());
        for (const SignalState& sig : s.signals) {
            obs.s_p.push_back(sig.current_phase);
            obs.s_yellow.push_back(sig.in_yellow ? 1 : 0);
        }
    }
    return obs;
}

/// Total accumulated waiting time over every vehicle currently in the
/// network. This is the evaluation cost; unlike the s_wt sensor it is not
/// restricted to detector zones.
inline double compute_cost(const SimState& s) {
    double total = 0.0;
    for (const VehicleState& v : s.vehicles) total += v.waiting_time_acc;
    return total;
}

struct RewardBreakdown {
    double r_wt = 0.0;   // waiting-time improvement
    int r_uc = 0;        // signals left unchanged
    double r_total = 0.0;
    double alpha = 0.0;
};

/// r_wt = prev_cost - cur_cost; r_uc counts signals whose phase is the same
/// and which did not commit to a switch this step (a signal entering yellow
/// has already changed in every way that matters).
inline RewardBreakdown compute_reward(double prev_cost, double cur_cost, std::span<const int> prev_phases,
                                      std::span<const int> cur_phases, double alpha,
                                      std::span<const char> entered_yellow = {}) {
    if (prev_phases.size() != cur_phases.size())
        throw std::invalid_argument("compute_reward: phase vectors differ in length");
    RewardBreakdown r;
    r.alpha = alpha;
    r.r_wt = prev_cost - cur_cost;
    for (size_t i = 0; i < prev_phases.size(); ++i) {
        const bool entering = i < entered_yellow.size() && entered_yellow[i];
        if (prev_phases[i] == cur_phases[i] && !entering) ++r.r_uc;
    }
    r.r_total = r.r_wt + alpha * r.r_uc;
    return r;
}

struct EpisodeMetrics {
    std::vector<double> cost_wt_per_step;
    double total_stop_time = 0.0;
    long arrivals = 0;
    double reward_sum = 0.0;

    double cost_sum() const {
        double s = 0.0;
        for (double c : cost_wt_per_step) s += c;
        return s;
    }
};

/// Episodic MDP wrapper owning one simulation. Each step applies the phase
/// choices, advances the world once, and returns observation, reward
/// breakdown (costs measured before and after), and the done flag. No
/// minimum or maximum phase duration is imposed beyond the yellow interlude.
class TrafficEnv {
public:
    TrafficEnv(Scenario scenario, int episode_length, double alpha, SimConfig config = {})
        : scenario_(std::move(scenario)), config_(config), episode_length_(episode_length), alpha_(alpha) {
        if (episode_length <= 0) throw std::invalid_argument("TrafficEnv: episode_length must be > 0");
        state_ = sim_reset(scenario_, config_);
    }

    Observation reset() {
        state_ = sim_reset(scenario_, config_);
        metrics_ = EpisodeMetrics{};
        return observe(state_);
    }

    /// Reset onto a custom departure schedule (evaluation splits, oracles).
    Observation reset(FlowSchedule schedule) {
        state_ = sim_reset(scenario_, std::move(schedule), config_);
        metrics_ = EpisodeMetrics{};
        return observe(state_);
    }

    struct StepResult {
        Observation obs;
        RewardBreakdown reward;
        bool done = false;
    };

    StepResult step(std::span<const int> actions) {
        const double prev_cost = compute_cost(state_);
        std::vector<int> prev_phases(state_.signals.size());
        for (size_t i = 0; i < prev_phases.size(); ++i) prev_phases[i] = state_.signals[i].current_phase;

        apply_signal_action(state_, actions);
        std::vector<char> entered(state_.signals.size());
        for (size_t i = 0; i < entered.size(); ++i) entered[i] = state_.signals[i].entered_yellow_this_step;

        sim_step(state_);

        const double cur_cost = compute_cost(state_);
        std::vector<int> cur_phases(state_.signals.size());
        for (size_t i = 0; i < cur_phases.size(); ++i) cur_phases[i] = state_.signals[i].current_phase;

        StepResult res;
        res.reward = compute_reward(prev_cost, cur_cost, prev_phases, cur_phases, alpha_, entered);
        res.obs = observe(state_);
        res.done = state_.clock >= episode_length_;

        metrics_.cost_wt_per_step.push_back(cur_cost);
        metrics_.reward_sum += res.reward.r_total;
        metrics_.total_stop_time = state_.total_stop_time;
        metrics_.arrivals = state_.arrived;
        return res;
    }

    const SimState& state() const { return state_; }
    SimState& mutable_state() { return state_; }
    const Scenario& scenario() const { return scenario_; }
    const EpisodeMetrics& metrics() const { return metrics_; }
    int episode_length() const { return episode_length_; }
    double alpha() const { return alpha_; }
    const SimConfig& config() const { return config_; }

private:
    Scenario scenario_;
    SimConfig config_;
    int episode_length_;
    double alpha_;
    SimState state_{};
    EpisodeMetrics metrics_;
};

// ---------------------------------------------------------------------------
// Learning features. Observations are normalized before they reach a network:
// waiting counts by an estimated lane capacity, waiting-time sums by 100 s.

inline constexpr double kWaitSumNormalizer = 100.0;

struct FeatureLayout {
    int n = 0;           // intersections
    int max_lanes = 0;   // widest incoming-lane set
    int max_phases = 0;
    std::vector<std::vector<int>> detector_slot;  // per intersection, per lane slot: index into s_num/s_wt (-1 pad)
    std::vector<double> lane_capacity;            // per detector slot
    std::vector<int> phase_counts;                // per intersection

    // per-lane count, per-lane waiting sum, one-hot phase, in-transition bit
    int node_width() const { return 2 * max_lanes + max_phases + 1; }
};

inline FeatureLayout make_feature_layout(const RoadNetwork& net, const SimParams& params) {
    FeatureLayout lay;
    lay.n = net.intersection_count();
    lay.max_lanes = net.max_incoming_lanes();
    lay.max_phases = net.max_phase_count();
    std::vector<int> slot_of(net.lanes.size(), -1);
    const std::vector<int> controlled = net.controlled_lanes();
    for (size_t i = 0; i < controlled.size(); ++i) slot_of[controlled[i]] = static_cast<int>(i);
    lay.lane_capacity.resize(controlled.size(), 1.0);
    for (size_t i = 0; i < controlled.size(); ++i) {
        const Lane& l = net.lane(controlled[i]);
        lay.lane_capacity[i] = std::max(1.0, l.length / (params.vehicle_length + params.min_gap));
    }
    for (const Intersection& inter : net.intersections) {
        std::vector<int> slots;
        for (int lane : inter.incoming_lanes) slots.push_back(lane >= 0 ? slot_of[lane] : -1);
        slots.resize(lay.max_lanes, -1);
        lay.detector_slot.push_back(std::move(slots));
        lay.phase_counts.push_back(inter.phase_count);
    }
    return lay;
}

/// n x node_width matrix: per intersection, normalized per-lane waiting
/// counts, normalized per-lane waiting sums, one-hot current phase.
inline Matrix node_features(const Observation& obs, const FeatureLayout& lay) {
    Matrix f(lay.n, lay.node_width());
    for (int i = 0; i < lay.n; ++i) {
        for (int k = 0; k < lay.max_lanes; ++k) {
            const int slot = lay.detector_slot[i][k];
            if (slot < 0) continue;
            f(i, k) = obs.s_num[slot] / lay.lane_capacity[slot];
            f(i, lay.max_lanes + k) = obs.s_wt[slot] / kWaitSumNormalizer;
        }
        if (!obs.s_p.empty()) f(i, 2 * lay.max_lanes + obs.s_p[i]) = 1.0;
    }
    return f;
}

}  // namespace greenwave
