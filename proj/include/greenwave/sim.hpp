#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "greenwave/road_network.hpp"
#include "greenwave/rng.hpp"

namespace greenwave {

class InvalidActionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SimConfig {
    double dt = 1.0;             // s per step
    double wait_threshold = 0.1; // m/s; at or below counts as waiting
    int yellow_duration = 3;     // steps between deciding a switch and its activation
    double stop_buffer = 1.5;    // m short of the stop line where vehicles come to rest
};

struct VehicleState {
    int id = 0;
    std::vector<int> route;      // lane ids
    int lane_index = 0;
    double pos = 0.0;            // front bumper, m from lane start
    double speed = 0.0;          // m/s
    double speed_factor = 1.0;   // per-vehicle multiplier on lane speed limits
    double waiting_time_acc = 0.0;  // monotone while in the network
    double stop_time_acc = 0.0;     // monotone while in the network
    int depart_step = 0;
    bool arrived = false;

    int lane() const { return route[lane_index]; }
    bool on_last_lane() const { return lane_index + 1 == static_cast<int>(route.size()); }
};

struct SignalState {
    int intersection_id = 0;
    int current_phase = 0;
    bool in_yellow = false;
    int yellow_remaining = 0;
    int pending_phase = -1;
    bool entered_yellow_this_step = false;  // set by apply_signal_action, cleared next apply
};

struct PendingDeparture {
    int depart_step = 0;
    int vehicle_id = 0;
    std::vector<int> route;
};

/// Full world state of one simulation. Copyable: the scenario is shared
/// immutably, everything else is value data, so branches of the same world
/// (used by enumeration oracles) are cheap and independent.
struct SimState {
    std::shared_ptr<const Scenario> scenario;
    SimConfig config;
    int clock = 0;
    std::vector<VehicleState> vehicles;  // active, in insertion order
    std::vector<SignalState> signals;
    std::vector<std::deque<PendingDeparture>> pending_by_lane;  // indexed by entry lane id
    long pending_count = 0;
    long spawned = 0;
    long arrived = 0;
    long skipped = 0;            // scheduled departures abandoned without insertion
    int flow_skipped_routes = 0; // infeasible routes dropped during generation
    std::vector<char> perceived_green;  // per lane: signal state drivers act on (one step behind)
    double total_stop_time = 0.0;
    double total_wait_accrued = 0.0;
    Rng rng{0};

    const RoadNetwork& network() const { return scenario->network; }
    const SimParams& params() const { return scenario->sim_params; }

    /// Live signal state for a lane: true when the lane may discharge.
    bool green_now(int lane_id) const {
        const Lane& l = network().lane(lane_id);
        if (!network().is_intersection(l.to_node)) return true;  // sink approaches are unsignalized
        const SignalState& sig = signals[l.to_node];
        if (sig.in_yellow) return false;
        const auto& greens = network().intersections[l.to_node].phase_table[sig.current_phase];
        return std::find(greens.begin(), greens.end(), lane_id) != greens.end();
    }
};

namespace simdetail {

/// Highest speed for the coming step from which a stop within `avail`
/// metres stays feasible at deceleration b: v*dt + v^2/(2b) <= avail.
inline double approach_speed(double avail, double b, double dt) {
    if (avail <= 0.0) return 0.0;
    return -b * dt + std::sqrt(b * b * dt * dt + 2.0 * b * avail);
}

inline void refresh_perceived_green(SimState& s) {
    for (const Lane& l : s.network().lanes) s.perceived_green[l.id] = s.green_now(l.id) ? 1 : 0;
}

}  // namespace simdetail

/// Fresh world: clock 0, all signals at phase 0, departures scheduled from
/// the supplied schedule. Deterministic for a given scenario seed.
inline SimState sim_reset(const Scenario& scenario, FlowSchedule schedule, const SimConfig& config = {}) {
    scenario.sim_params.validate();
    SimState s;
    s.scenario = std::make_shared<const Scenario>(scenario);
    s.config = config;
    s.rng = Rng(scenario.seed).fork(0x5157);
    s.signals.resize(scenario.network.intersections.size());
    for (size_t i = 0; i < s.signals.size(); ++i) s.signals[i].intersection_id = static_cast<int>(i);
    s.pending_by_lane.resize(scenario.network.lanes.size());
    s.flow_skipped_routes = schedule.skipped_routes;
    std::stable_sort(schedule.departures.begin(), schedule.departures.end(),
                     [](const Departure& a, const Departure& b) { return a.depart_step < b.depart_step; });
    int next_id = 0;
    for (Departure& d : schedule.departures) {
        if (d.route.empty()) continue;
        const int entry = d.route.front();
        s.pending_by_lane[entry].push_back({d.depart_step, next_id++, std::move(d.route)});
        ++s.pending_count;
    }
    s.perceived_green.resize(scenario.network.lanes.size(), 0);
    simdetail::refresh_perceived_green(s);
    return s;
}

/// Standard reset: flows expanded through generate_flows, one rng stream
/// per flow spec derived from the scenario seed.
inline SimState sim_reset(const Scenario& scenario, const SimConfig& config = {}) {
    FlowSchedule all;
    for (size_t i = 0; i < scenario.flows.size(); ++i) {
        FlowSchedule one = generate_flows(scenario.network, scenario.flows[i],
                                          Rng(scenario.seed).fork(100 + i).next_u64(), config.dt);
        all.skipped_routes += one.skipped_routes;
        for (Departure& d : one.departures) all.departures.push_back(std::move(d));
    }
    return sim_reset(scenario, std::move(all), config);
}

/// Requests one phase per intersection. Choosing the current phase is a
/// no-op; choosing a different one starts a yellow interlude after which the
/// pending phase activates. Requests arriving during yellow are ignored.
inline void apply_signal_action(SimState& s, std::span<const int> phase_choice) {
    if (phase_choice.size() != s.signals.size())
        throw InvalidActionError("apply_signal_action: expected " + std::to_string(s.signals.size()) +
                                 " choices, got " + std::to_string(phase_choice.size()));
    for (size_t i = 0; i < s.signals.size(); ++i) {
        const int chosen = phase_choice[i];
        const Intersection& inter = s.network().intersections[i];
        if (chosen < 0 || chosen >= inter.phase_count)
            throw InvalidActionError("apply_signal_action: phase " + std::to_string(chosen) +
                                     " out of range at intersection " + std::to_string(i));
        SignalState& sig = s.signals[i];
        sig.entered_yellow_this_step = false;
        if (sig.in_yellow) continue;  // decision deferred until the pending phase lands
        if (chosen == sig.current_phase) continue;
        sig.in_yellow = true;
        sig.yellow_remaining = s.config.yellow_duration;
        sig.pending_phase = chosen;
        sig.entered_yellow_this_step = true;
    }
}

/// One step of length dt: insert due departures, move every vehicle under
/// the car-following rule, account waiting/stop time, remove arrivals, then
/// advance the signal timers. Drivers react to the world as it stood at the
/// end of the previous step (one-step perception delay standing in for the
/// 0.8 s reaction time), but stop lines are enforced against the live
/// signal, so a red line is never crossed.
inline void sim_step(SimState& s) {
    const RoadNetwork& net = s.network();
    const SimParams& par = s.params();
    const SimConfig& cfg = s.config;
    const double dt = cfg.dt;
    const size_t lane_count = net.lanes.size();

    // Start-of-step occupancy: per lane, vehicle indices front to back.
    std::vector<std::vector<int>> occ(lane_count);
    for (size_t vi = 0; vi < s.vehicles.size(); ++vi) occ[s.vehicles[vi].lane()].push_back(static_cast<int>(vi));
    for (auto& lane_occ : occ)
        std::sort(lane_occ.begin(), lane_occ.end(), [&](int a, int b) {
            if (s.vehicles[a].pos != s.vehicles[b].pos) return s.vehicles[a].pos > s.vehicles[b].pos;
            return s.vehicles[a].id < s.vehicles[b].id;
        });

    // Positions as of the previous step end; movement decisions read these.
    std::vector<double> pos_before(s.vehicles.size());
    for (size_t vi = 0; vi < s.vehicles.size(); ++vi) pos_before[vi] = s.vehicles[vi].pos;

    // Rear of the hindmost vehicle per lane (previous step), for entry checks.
    std::vector<double> rearmost_rear(lane_count, std::numeric_limits<double>::infinity());
    for (size_t lane = 0; lane < lane_count; ++lane)
        if (!occ[lane].empty())
            rearmost_rear[lane] = s.vehicles[occ[lane].back()].pos - par.vehicle_length;

    // 1. Insertions. A departure is delayed while any vehicle sits within
    //    vehicle_length + min_gap of the lane origin.
    const double entry_clearance = par.vehicle_length + par.min_gap;
    for (size_t lane = 0; lane < lane_count; ++lane) {
        auto& queue = s.pending_by_lane[lane];
        while (!queue.empty() && queue.front().depart_step <= s.clock) {
            double min_pos = std::numeric_limits<double>::infinity();
            if (!occ[lane].empty()) min_pos = s.vehicles[occ[lane].back()].pos;
            if (min_pos < entry_clearance) break;
            PendingDeparture dep = std::move(queue.front());
            queue.pop_front();
            --s.pending_count;
            VehicleState v;
            v.id = dep.vehicle_id;
            v.route = std::move(dep.route);
            v.depart_step = dep.depart_step;
            v.speed_factor = std::clamp(s.rng.normal(1.0, par.speed_deviation), 0.5, 1.5);
            const int vi = static_cast<int>(s.vehicles.size());
            s.vehicles.push_back(std::move(v));
            pos_before.push_back(0.0);
            occ[lane].push_back(vi);
            rearmost_rear[lane] = -par.vehicle_length;
            ++s.spawned;
        }
    }

    // 2. Movement, lane by lane, front to back. Vehicles that cross into a
    //    lane this step lower its live entry frontier.
    std::vector<double> entry_frontier(lane_count, std::numeric_limits<double>::infinity());
    for (size_t lane = 0; lane < lane_count; ++lane) {
        const Lane& L = net.lanes[lane];
        const bool signalized = net.is_intersection(L.to_node);
        for (size_t k = 0; k < occ[lane].size(); ++k) {
            VehicleState& v = s.vehicles[occ[lane][k]];
            const double v_free = v.speed_factor * L.speed_limit;
            double target = v_free;

            // Leader on the same lane (previous-step position), or across
            // the junction when this vehicle is at the head and may proceed.
            if (k > 0) {
                const double lead_rear = pos_before[occ[lane][k - 1]] - par.vehicle_length;
                target = std::min(target, simdetail::approach_speed(lead_rear - par.min_gap - v.pos, par.stop_decel, dt));
            } else if (!v.on_last_lane() && (!signalized || s.perceived_green[lane])) {
                const int nxt = v.route[v.lane_index + 1];
                if (!occ[nxt].empty()) {
                    const double gap = (L.length - v.pos) + rearmost_rear[nxt];
                    target = std::min(target, simdetail::approach_speed(gap - par.min_gap, par.stop_decel, dt));
                }
            }

            // Signal constraint as perceived one step ago: plan to rest
            // stop_buffer short of the line.
            if (signalized && !s.perceived_green[lane])
                target = std::min(target, simdetail::approach_speed(L.length - cfg.stop_buffer - v.pos, par.stop_decel, dt));

            double v_new = std::clamp(target, std::max(0.0, v.speed - par.stop_decel * dt), v.speed + par.start_accel * dt);

            // Hard caps: never touch the previous leader's rear minus the
            // gap, never pass the line on a live red. These may brake harder
            // than stop_decel; physics saturates rather than collides.
            if (k > 0) {
                const double lead_rear = pos_before[occ[lane][k - 1]] - par.vehicle_length;
                v_new = std::min(v_new, std::max(0.0, lead_rear - par.min_gap - v.pos) / dt);
            }
            if (signalized && !s.perceived_green[lane])
                v_new = std::min(v_new, std::max(0.0, L.length - cfg.stop_buffer - v.pos) / dt);
            if (signalized && !s.green_now(lane))
                v_new = std::min(v_new, std::max(0.0, L.length - v.pos) / dt);
            if (v_new < 0.05) v_new = 0.0;  // snap crawling approaches to a full stop

            double new_pos = v.pos + v_new * dt;

            if (new_pos >= L.length && v.on_last_lane() && (!signalized || s.green_now(lane))) {
                // Route completed; the vehicle leaves the network.
                v.arrived = true;
                v.speed = v_new;
                v.pos = L.length;
                ++s.arrived;
                continue;
            }
            if (new_pos > L.length) {
                // Cross into the next route lane; green_now is guaranteed by
                // the caps above when the line is signalized.
                const int nxt = v.route[v.lane_index + 1];
                const double frontier = std::min(entry_frontier[nxt], rearmost_rear[nxt]);
                double entry_pos = std::min(new_pos - L.length, frontier - par.min_gap);
                entry_pos = std::min(entry_pos, net.lanes[nxt].length);
                if (entry_pos < 0.0) {
                    // Next lane is packed to its start: hold at the line.
                    v_new = (L.length - v.pos) / dt;
                    if (v_new < 0.05) v_new = 0.0;
                    v.speed = v_new;
                    v.pos = std::min(L.length, v.pos + v_new * dt);
                } else {
                    v.speed = (L.length - v.pos + entry_pos) / dt;
                    v.lane_index += 1;
                    v.pos = entry_pos;
                    entry_frontier[nxt] = entry_pos - par.vehicle_length;
                }
            } else {
                v.speed = v_new;
                v.pos = new_pos;
            }

            if (v.speed <= cfg.wait_threshold) {
                v.waiting_time_acc += dt;
                s.total_wait_accrued += dt;
            }
            if (v.speed == 0.0) {
                v.stop_time_acc += dt;
                s.total_stop_time += dt;
            }
        }
    }

    // 3. Drop arrivals, preserving order.
    std::erase_if(s.vehicles, [](const VehicleState& v) { return v.arrived; });

    // 4. Yellow countdowns; pending phases land when the timer empties, so a
    //    switch decided at step t first affects movement at step t + yellow.
    for (SignalState& sig : s.signals) {
        if (!sig.in_yellow) continue;
        if (--sig.yellow_remaining <= 0) {
            sig.current_phase = sig.pending_phase;
            sig.pending_phase = -1;
            sig.in_yellow = false;
        }
    }

    // 5. What drivers will have seen by the start of the next step.
    simdetail::refresh_perceived_green(s);
    ++s.clock;
}

/// Per-lane detector readings over the controlled lanes, in lane-id order.
/// Waiting counts cover the whole lane; waiting-time sums only the vehicles
/// inside the detector zone at the stop line.
struct DetectorFrame {
    std::vector<int> lanes;              // controlled lane ids
    std::vector<int> waiting_count;
    std::vector<double> waiting_time_sum;
};

inline DetectorFrame read_detectors(const SimState& s) {
    DetectorFrame f;
    f.lanes = s.network().controlled_lanes();
    f.waiting_count.assign(f.lanes.size(), 0);
    f.waiting_time_sum.assign(f.lanes.size(), 0.0);
    std::vector<int> slot(s.network().lanes.size(), -1);
    for (size_t i = 0; i < f.lanes.size(); ++i) slot[f.lanes[i]] = static_cast<int>(i);
    for (const VehicleState& v : s.vehicles) {
        const int idx = slot[v.lane()];
        if (idx < 0) continue;
        const Lane& l = s.network().lane(v.lane());
        if (v.speed <= s.config.wait_threshold) f.waiting_count[idx] += 1;
        if (v.pos >= l.length - l.detector_zone) f.waiting_time_sum[idx] += v.waiting_time_acc;
    }
    return f;
}

/// One structured trace record per step: clock, per-lane waiting counts,
/// cumulative arrivals.
inline void write_trace_record(std::ostream& out, const SimState& s) {
    DetectorFrame f = read_detectors(s);
    out << "step=" << s.clock << " active=" << s.vehicles.size() << " arrived=" << s.arrived << " counts=";
    for (size_t i = 0; i < f.waiting_count.size(); ++i) out << (i ? "," : "") << f.waiting_count[i];
    out << "\n";
}

}  // namespace greenwave
