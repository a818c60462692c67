#pragma once

// Shared fixtures: a sealed single-intersection world for telescoping and
// enumeration checks. "Sealed" means that over the decision window no
// vehicle enters or leaves the network, so waiting-time bookkeeping can be
// validated exactly.

#include <vector>

#include "greenwave/env.hpp"
#include "greenwave/sim.hpp"

namespace gwtest {

struct SealedToy {
    greenwave::Scenario scenario;
    greenwave::FlowSchedule schedule;
    int warmup_steps = 60;      // all held at phase 0 (north green, north empty)
    int epochs = 6;             // decision epochs in the sealed window
    int steps_per_epoch = 5;
    int phase_count = 4;

    int window_steps() const { return epochs * steps_per_epoch; }
};

/// Nine vehicles queued on the east, south and west approaches of a lone
/// four-phase junction with 500 m lanes. After the warmup every vehicle is
/// in the network and none can reach a sink within the decision window.
inline SealedToy make_sealed_toy(std::uint64_t seed = 3) {
    using namespace greenwave;
    SealedToy toy;
    toy.scenario.name = "sealed_toy";
    toy.scenario.network = build_grid_map(1, 1, {500.0}, 4);
    toy.scenario.seed = seed;

    const RoadNetwork& net = toy.scenario.network;
    const Intersection& inter = net.intersections[0];
    auto out_lane_opposite = [&](int side) {
        // sink node paired with the opposite side's source
        const int src_lane = inter.incoming_lanes[(side + 2) % 4];
        const int sink_node = net.lane(src_lane).from_node + 1;
        for (const Lane& l : net.lanes)
            if (l.from_node == 0 && l.to_node == sink_node) return l.id;
        return -1;
    };
    int id = 0;
    for (int side : {1, 2, 3}) {  // east, south, west; north stays empty
        const int in_lane = inter.incoming_lanes[side];
        const int out_lane = out_lane_opposite(side);
        for (int k = 0; k < 3; ++k)
            toy.schedule.departures.push_back({k * 4, {in_lane, out_lane}}), ++id;
    }
    return toy;
}

/// Runs the warmup inside an environment so the sealed window can start.
inline greenwave::Observation warm_up(greenwave::TrafficEnv& env, const SealedToy& toy) {
    greenwave::Observation obs = env.reset(toy.schedule);
    const std::vector<int> hold{0};
    for (int t = 0; t < toy.warmup_steps; ++t) obs = env.step(hold).obs;
    return obs;
}

}  // namespace gwtest
