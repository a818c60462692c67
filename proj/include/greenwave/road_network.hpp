#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "greenwave/matrix.hpp"
#include "greenwave/rng.hpp"

namespace greenwave {

inline constexpr double kDefaultSpeedLimit = 13.89;  // m/s, 50 km/h
inline constexpr double kDefaultDetectorZone = 10.0; // m back from the stop line

enum class NodeKind { intersection, source, sink };

struct NetworkNode {
    int id = 0;
    NodeKind kind = NodeKind::intersection;
    double x = 0.0;
    double y = 0.0;
};

struct Lane {
    int id = 0;
    int from_node = 0;
    int to_node = 0;
    double length = 0.0;        // m, > 0
    double speed_limit = kDefaultSpeedLimit;
    double detector_zone = kDefaultDetectorZone;  // <= length
};

/// A signalized junction. phase_table[p] lists the incoming lanes shown
/// green during phase p; the generator guarantees the sets are conflict-free.
struct Intersection {
    int id = 0;  // equals its node id
    double x = 0.0;
    double y = 0.0;
    int phase_count = 0;
    std::vector<int> incoming_lanes;             // ordered: N, E, S, W for grids
    std::vector<std::vector<int>> phase_table;
};

struct RoadNetwork {
    std::vector<NetworkNode> nodes;
    std::vector<Lane> lanes;
    std::vector<Intersection> intersections;  // intersection i has node id i

    const Lane& lane(int id) const { return lanes[id]; }
    int intersection_count() const { return static_cast<int>(intersections.size()); }

    bool is_intersection(int node_id) const {
        return node_id >= 0 && node_id < static_cast<int>(nodes.size()) &&
               nodes[node_id].kind == NodeKind::intersection;
    }

    int max_phase_count() const {
        int m = 0;
        for (const Intersection& i : intersections) m = std::max(m, i.phase_count);
        return m;
    }

    int max_incoming_lanes() const {
        int m = 0;
        for (const Intersection& i : intersections) m = std::max(m, static_cast<int>(i.incoming_lanes.size()));
        return m;
    }

    /// Lanes whose movement is gated by a signal, in lane-id order. This is
    /// the global lane order used by detectors and observations.
    std::vector<int> controlled_lanes() const {
        std::vector<int> out;
        for (const Lane& l : lanes)
            if (is_intersection(l.to_node)) out.push_back(l.id);
        return out;
    }

    std::vector<int> outgoing_lanes(int node_id) const {
        std::vector<int> out;
        for (const Lane& l : lanes)
            if (l.from_node == node_id) out.push_back(l.id);
        return out;
    }
};

struct SimParams {
    double start_accel = 2.0;      // m/s^2
    double stop_decel = 4.5;       // m/s^2
    double reaction_time = 0.8;    // s
    double vehicle_length = 4.5;   // m
    double min_gap = 1.5;          // m
    double speed_deviation = 0.2;  // relative, in [0, 1)

    void validate() const {
        if (start_accel <= 0 || stop_decel <= 0 || reaction_time <= 0 || vehicle_length <= 0 || min_gap <= 0)
            throw std::invalid_argument("SimParams: all kinematic parameters must be strictly positive");
        if (speed_deviation < 0.0 || speed_deviation >= 1.0)
            throw std::invalid_argument("SimParams: speed_deviation must lie in [0, 1)");
    }
};

struct FlowSpec {
    double period = 1.0;       // s between departures
    int horizon = 1000;        // steps
    std::string route_policy = "fringe_weighted";
    double fringe_weight = 10.0;
    int max_route_attempts = 100;

    void validate() const {
        if (period <= 0.0) throw std::invalid_argument("FlowSpec: period must be > 0");
        if (horizon <= 0) throw std::invalid_argument("FlowSpec: horizon must be > 0");
        if (max_route_attempts < 1) throw std::invalid_argument("FlowSpec: max_route_attempts must be >= 1");
    }
};

struct Scenario {
    std::string name = "scenario";
    RoadNetwork network;
    std::vector<FlowSpec> flows;
    SimParams sim_params;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Grid map generator

namespace gridgen {
// Approach order around a junction; also the phase order for the
// round-robin program.
enum Side { north = 0, east = 1, south = 2, west = 3 };

// Two incoming approaches conflict when they cross, i.e. when they are
// perpendicular. Opposing approaches may share a phase.
inline bool sides_conflict(int a, int b) { return (a % 2) != (b % 2); }
}  // namespace gridgen

/// Builds a rows x cols grid of signalized intersections. Interior
/// neighbours are joined by opposing lane pairs; every perimeter approach
/// gets one source and one sink node so fringe-weighted trips can enter and
/// leave on any side. Lane lengths cycle through the profile, one entry per
/// undirected edge.
inline RoadNetwork build_grid_map(int rows, int cols, const std::vector<double>& lane_length_profile,
                                  int phase_count) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("build_grid_map: rows and cols must be >= 1");
    if (phase_count < 2) throw std::invalid_argument("build_grid_map: phase_count must be >= 2");
    if (lane_length_profile.empty()) throw std::invalid_argument("build_grid_map: empty lane length profile");
    for (double len : lane_length_profile)
        if (len <= 0.0) throw std::invalid_argument("build_grid_map: lane lengths must be > 0");

    RoadNetwork net;
    const double spacing = lane_length_profile.front();
    const int n = rows * cols;
    auto inter_id = [cols](int r, int c) { return r * cols + c; };

    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            net.nodes.push_back({inter_id(r, c), NodeKind::intersection, c * spacing, r * spacing});

    size_t profile_cursor = 0;
    auto next_length = [&]() {
        double len = lane_length_profile[profile_cursor % lane_length_profile.size()];
        ++profile_cursor;
        return len;
    };

    auto add_lane = [&net](int from, int to, double length) {
        const int id = static_cast<int>(net.lanes.size());
        net.lanes.push_back({id, from, to, length, kDefaultSpeedLimit, std::min(kDefaultDetectorZone, length)});
        return id;
    };

    // incoming[i][side] is the lane arriving at intersection i from `side`.
    std::vector<std::array<int, 4>> incoming(n, {-1, -1, -1, -1});

    // Interior edges: for each intersection, its east then south neighbour.
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int a = inter_id(r, c);
            if (c + 1 < cols) {
                const int b = inter_id(r, c + 1);
                const double len = next_length();
                incoming[b][gridgen::west] = add_lane(a, b, len);
                incoming[a][gridgen::east] = add_lane(b, a, len);
            }
            if (r + 1 < rows) {
                const int b = inter_id(r + 1, c);
                const double len = next_length();
                incoming[b][gridgen::north] = add_lane(a, b, len);
                incoming[a][gridgen::south] = add_lane(b, a, len);
            }
        }
    }

    // Perimeter approaches: one source and one sink per open side.
    const double off = spacing;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int a = inter_id(r, c);
            const double ax = c * spacing, ay = r * spacing;
            struct Open { int side; double dx, dy; };
            const Open open_sides[4] = {{gridgen::north, 0, -off}, {gridgen::east, off, 0},
                                        {gridgen::south, 0, off},  {gridgen::west, -off, 0}};
            for (const Open& o : open_sides) {
                const bool boundary = (o.side == gridgen::north && r == 0) || (o.side == gridgen::south && r == rows - 1) ||
                                      (o.side == gridgen::west && c == 0) || (o.side == gridgen::east && c == cols - 1);
                if (!boundary) continue;
                const double len = next_length();
                const int src = static_cast<int>(net.nodes.size());
                net.nodes.push_back({src, NodeKind::source, ax + o.dx, ay + o.dy});
                const int snk = static_cast<int>(net.nodes.size());
                net.nodes.push_back({snk, NodeKind::sink, ax + o.dx, ay + o.dy});
                incoming[a][o.side] = add_lane(src, a, len);
                add_lane(a, snk, len);
            }
        }
    }

    // Phase programs. For k >= 4 each phase greens a single approach in
    // round-robin order; k == 2 pairs the opposing approaches, k == 3 keeps
    // one pair and splits the other. All sets are conflict-free under
    // sides_conflict and every incoming lane appears in at least one phase.
    for (int i = 0; i < n; ++i) {
        Intersection inter;
        inter.id = i;
        inter.x = net.nodes[i].x;
        inter.y = net.nodes[i].y;
        inter.phase_count = phase_count;
        for (int side = 0; side < 4; ++side) inter.incoming_lanes.push_back(incoming[i][side]);

        auto lane_at = [&](int side) { return incoming[i][side]; };
        std::vector<std::vector<int>> sides_per_phase;
        if (phase_count == 2) {
            sides_per_phase = {{gridgen::north, gridgen::south}, {gridgen::east, gridgen::west}};
        } else if (phase_count == 3) {
            sides_per_phase = {{gridgen::north, gridgen::south}, {gridgen::east}, {gridgen::west}};
        } else {
            for (int p = 0; p < phase_count; ++p) sides_per_phase.push_back({p % 4});
        }
        for (const std::vector<int>& sides : sides_per_phase) {
            std::vector<int> green;
            for (size_t a = 0; a < sides.size(); ++a) {
                for (size_t b = a + 1; b < sides.size(); ++b)
                    if (gridgen::sides_conflict(sides[a], sides[b]))
                        throw std::logic_error("build_grid_map: conflicting movements in one phase");
                green.push_back(lane_at(sides[a]));
            }
            inter.phase_table.push_back(std::move(green));
        }
        net.intersections.push_back(std::move(inter));
    }
    return net;
}

// ---------------------------------------------------------------------------
// Weighted adjacency (intersection graph)

enum class AdjacencyNorm {
    rownorm_of_a_plus_i,  // row-normalize (A + I)
    rownorm_plus_i,       // row-normalize A, then add I
};

struct WeightedAdjacency {
    int n = 0;
    Matrix entries;     // A: edge weight = max lane length / lane length
    Matrix normalized;  // A-hat
};

inline Matrix normalize_adjacency(const Matrix& a, AdjacencyNorm mode) {
    const int n = a.rows();
    Matrix out(n, n);
    if (mode == AdjacencyNorm::rownorm_of_a_plus_i) {
        for (int r = 0; r < n; ++r) {
            double sum = 1.0;  // the identity contribution
            for (int c = 0; c < n; ++c) sum += a(r, c);
            for (int c = 0; c < n; ++c) out(r, c) = (a(r, c) + (r == c ? 1.0 : 0.0)) / sum;
        }
    } else {
        for (int r = 0; r < n; ++r) {
            double sum = 0.0;
            for (int c = 0; c < n; ++c) sum += a(r, c);
            for (int c = 0; c < n; ++c) out(r, c) = sum > 0.0 ? a(r, c) / sum : 0.0;
            out(r, r) += 1.0;
        }
    }
    return out;
}

/// A[i][j] = max lane length / length(i -> j) for connected intersections
/// (the shortest connecting lane wins if there are several), 0 elsewhere.
/// With edge_weighted = false the entries collapse to plain 0/1 adjacency.
inline WeightedAdjacency compute_adjacency(const RoadNetwork& net,
                                           AdjacencyNorm mode = AdjacencyNorm::rownorm_of_a_plus_i,
                                           bool edge_weighted = true) {
    const int n = net.intersection_count();
    if (n < 1) throw std::invalid_argument("compute_adjacency: network has no intersections");
    double max_len = 0.0;
    for (const Lane& l : net.lanes) max_len = std::max(max_len, l.length);
    WeightedAdjacency adj;
    adj.n = n;
    adj.entries = Matrix(n, n);
    for (const Lane& l : net.lanes) {
        if (!net.is_intersection(l.from_node) || !net.is_intersection(l.to_node)) continue;
        const double w = edge_weighted ? max_len / l.length : 1.0;
        adj.entries(l.from_node, l.to_node) = std::max(adj.entries(l.from_node, l.to_node), w);
    }
    adj.normalized = normalize_adjacency(adj.entries, mode);
    return adj;
}

// ---------------------------------------------------------------------------
// Flow generation

struct Departure {
    int depart_step = 0;
    std::vector<int> route;  // lane ids, consecutive through intersections
};

struct FlowSchedule {
    std::vector<Departure> departures;
    int skipped_routes = 0;  // departures dropped after max_route_attempts
};

namespace flowgen {

struct Candidate {
    int lane = 0;
    double weight = 1.0;
};

inline int sample(const std::vector<Candidate>& cands, double total, Rng& rng) {
    double x = rng.uniform() * total;
    for (const Candidate& c : cands) {
        x -= c.weight;
        if (x < 0.0) return c.lane;
    }
    return cands.back().lane;
}

/// Shortest lane-to-lane path by travelled length (Dijkstra over the lane
/// graph); ties resolve toward lower lane ids so results are reproducible.
inline std::vector<int> shortest_route(const RoadNetwork& net, int origin, int dest) {
    const int nl = static_cast<int>(net.lanes.size());
    std::vector<std::vector<int>> next_of(net.nodes.size());
    for (const Lane& l : net.lanes) next_of[l.from_node].push_back(l.id);

    std::vector<double> dist(nl, std::numeric_limits<double>::infinity());
    std::vector<int> prev(nl, -1);
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> pq;
    dist[origin] = net.lane(origin).length;
    pq.push({dist[origin], origin});
    while (!pq.empty()) {
        auto [d, lane] = pq.top();
        pq.pop();
        if (d > dist[lane]) continue;
        if (lane == dest) break;
        const int via = net.lane(lane).to_node;
        if (!net.is_intersection(via)) continue;
        for (int nxt : next_of[via]) {
            const double nd = d + net.lane(nxt).length;
            if (nd < dist[nxt]) {
                dist[nxt] = nd;
                prev[nxt] = lane;
                pq.push({nd, nxt});
            }
        }
    }
    if (!std::isfinite(dist[dest])) return {};
    std::vector<int> route;
    for (int lane = dest; lane != -1; lane = prev[lane]) route.push_back(lane);
    std::reverse(route.begin(), route.end());
    return route;
}

/// Number of distinct signalized intersections a route touches.
inline int route_span(const RoadNetwork& net, const std::vector<int>& route) {
    std::vector<int> seen;
    for (int lane : route) {
        for (int node : {net.lane(lane).from_node, net.lane(lane).to_node}) {
            if (net.is_intersection(node) && std::find(seen.begin(), seen.end(), node) == seen.end())
                seen.push_back(node);
        }
    }
    return static_cast<int>(seen.size());
}

}  // namespace flowgen

/// Schedules equidistant departures (0, period, 2*period, ... up to the
/// horizon, rounded to steps) and samples a route for each: origins and
/// destinations are drawn with fringe lanes weighted by fringe_weight,
/// re-sampled up to max_route_attempts until the route spans at least two
/// intersections (or as many as the network has). Departures that never
/// find a feasible route are skipped and counted.
inline FlowSchedule generate_flows(const RoadNetwork& net, const FlowSpec& spec, std::uint64_t rng_seed,
                                   double dt = 1.0) {
    spec.validate();
    std::vector<flowgen::Candidate> origins, dests;
    double origin_total = 0.0, dest_total = 0.0;
    for (const Lane& l : net.lanes) {
        const bool from_src = net.nodes[l.from_node].kind == NodeKind::source;
        const bool to_sink = net.nodes[l.to_node].kind == NodeKind::sink;
        if (!to_sink) {  // sink lanes cannot start a trip
            const double w = from_src ? spec.fringe_weight : 1.0;
            origins.push_back({l.id, w});
            origin_total += w;
        }
        if (!from_src) {  // source lanes cannot end one
            const double w = to_sink ? spec.fringe_weight : 1.0;
            dests.push_back({l.id, w});
            dest_total += w;
        }
    }
    if (origins.empty() || dests.empty())
        throw std::invalid_argument("generate_flows: network has no usable origin or destination lanes");

    const int min_span = std::min(2, net.intersection_count());
    Rng rng(rng_seed);
    FlowSchedule schedule;
    const double horizon_s = spec.horizon * dt;
    for (int k = 0;; ++k) {
        const double t = k * spec.period;
        if (t > horizon_s + 1e-9) break;
        const int step = static_cast<int>(std::llround(t / dt));
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_route_attempts; ++attempt) {
            const int o = flowgen::sample(origins, origin_total, rng);
            const int d = flowgen::sample(dests, dest_total, rng);
            std::vector<int> route = flowgen::shortest_route(net, o, d);
            if (route.empty() || flowgen::route_span(net, route) < min_span) continue;
            schedule.departures.push_back({step, std::move(route)});
            placed = true;
            break;
        }
        if (!placed) ++schedule.skipped_routes;
    }
    return schedule;
}

}  // namespace greenwave
