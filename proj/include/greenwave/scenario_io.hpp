#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "greenwave/road_network.hpp"

namespace greenwave {

class ScenarioParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ScenarioVersionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kScenarioFormat = "greenwave-scenario";
inline constexpr int kScenarioVersion = 1;

struct ScenarioLoadInfo {
    bool sim_params_defaulted = false;
};

namespace scenario_io_detail {

inline const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::intersection: return "intersection";
        case NodeKind::source: return "source";
        default: return "sink";
    }
}

inline NodeKind node_kind_from(const std::string& s, int node_id) {
    if (s == "intersection") return NodeKind::intersection;
    if (s == "source") return NodeKind::source;
    if (s == "sink") return NodeKind::sink;
    throw ScenarioParseError("node " + std::to_string(node_id) + ": unknown kind '" + s + "'");
}

template <typename T>
T require(const nlohmann::json& j, const char* field, const std::string& where) {
    if (!j.contains(field)) throw ScenarioParseError(where + ": missing field '" + field + "'");
    try {
        return j.at(field).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioParseError(where + ": bad field '" + field + "': " + e.what());
    }
}

}  // namespace scenario_io_detail

inline nlohmann::json scenario_to_json(const Scenario& s) {
    using nlohmann::json;
    json j;
    j["format"] = kScenarioFormat;
    j["version"] = kScenarioVersion;
    j["name"] = s.name;
    j["seed"] = s.seed;
    json nodes = json::array();
    for (const NetworkNode& n : s.network.nodes)
        nodes.push_back({{"id", n.id}, {"kind", scenario_io_detail::node_kind_name(n.kind)}, {"x", n.x}, {"y", n.y}});
    json lanes = json::array();
    for (const Lane& l : s.network.lanes)
        lanes.push_back({{"id", l.id},
                         {"from", l.from_node},
                         {"to", l.to_node},
                         {"length", l.length},
                         {"speed_limit", l.speed_limit},
                         {"detector_zone", l.detector_zone}});
    json inters = json::array();
    for (const Intersection& i : s.network.intersections)
        inters.push_back({{"id", i.id},
                          {"x", i.x},
                          {"y", i.y},
                          {"phase_count", i.phase_count},
                          {"incoming", i.incoming_lanes},
                          {"phases", i.phase_table}});
    j["network"] = {{"nodes", nodes}, {"lanes", lanes}, {"intersections", inters}};
    json flows = json::array();
    for (const FlowSpec& f : s.flows)
        flows.push_back({{"period", f.period},
                         {"horizon", f.horizon},
                         {"route_policy", f.route_policy},
                         {"fringe_weight", f.fringe_weight},
                         {"max_route_attempts", f.max_route_attempts}});
    j["flows"] = flows;
    j["sim_params"] = {{"start_accel", s.sim_params.start_accel},
                       {"stop_decel", s.sim_params.stop_decel},
                       {"reaction_time", s.sim_params.reaction_time},
                       {"vehicle_length", s.sim_params.vehicle_length},
                       {"min_gap", s.sim_params.min_gap},
                       {"speed_deviation", s.sim_params.speed_deviation}};
    return j;
}

inline void save_scenario(const Scenario& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_scenario: cannot open " + path);
    out << scenario_to_json(s).dump(2) << "\n";
    if (!out) throw std::runtime_error("save_scenario: write failed for " + path);
}

inline Scenario scenario_from_json(const nlohmann::json& j, ScenarioLoadInfo* info = nullptr) {
    using scenario_io_detail::require;
    if (require<std::string>(j, "format", "document") != kScenarioFormat)
        throw ScenarioParseError("document: not a scenario file");
    const int version = require<int>(j, "version", "document");
    if (version != kScenarioVersion)
        throw ScenarioVersionError("document: unsupported scenario version " + std::to_string(version) +
                                   " (expected " + std::to_string(kScenarioVersion) + ")");
    Scenario s;
    s.name = j.value("name", std::string("scenario"));
    s.seed = require<std::uint64_t>(j, "seed", "document");

    if (!j.contains("network")) throw ScenarioParseError("document: missing field 'network'");
    const nlohmann::json& net = j.at("network");
    for (const auto& jn : require<nlohmann::json>(net, "nodes", "network")) {
        NetworkNode n;
        n.id = require<int>(jn, "id", "node");
        const std::string where = "node " + std::to_string(n.id);
        n.kind = scenario_io_detail::node_kind_from(require<std::string>(jn, "kind", where), n.id);
        n.x = require<double>(jn, "x", where);
        n.y = require<double>(jn, "y", where);
        s.network.nodes.push_back(n);
    }
    for (const auto& jl : require<nlohmann::json>(net, "lanes", "network")) {
        Lane l;
        l.id = require<int>(jl, "id", "lane");
        const std::string where = "lane " + std::to_string(l.id);
        l.from_node = require<int>(jl, "from", where);
        l.to_node = require<int>(jl, "to", where);
        l.length = require<double>(jl, "length", where);
        l.speed_limit = require<double>(jl, "speed_limit", where);
        l.detector_zone = require<double>(jl, "detector_zone", where);
        if (l.length <= 0.0) throw ScenarioParseError(where + ": length must be > 0");
        if (l.speed_limit <= 0.0) throw ScenarioParseError(where + ": speed_limit must be > 0");
        if (l.detector_zone > l.length) throw ScenarioParseError(where + ": detector_zone exceeds lane length");
        s.network.lanes.push_back(l);
    }
    for (const auto& ji : require<nlohmann::json>(net, "intersections", "network")) {
        Intersection i;
        i.id = require<int>(ji, "id", "intersection");
        const std::string where = "intersection " + std::to_string(i.id);
        i.x = require<double>(ji, "x", where);
        i.y = require<double>(ji, "y", where);
        i.phase_count = require<int>(ji, "phase_count", where);
        if (i.phase_count < 2) throw ScenarioParseError(where + ": phase_count must be >= 2");
        i.incoming_lanes = require<std::vector<int>>(ji, "incoming", where);
        i.phase_table = require<std::vector<std::vector<int>>>(ji, "phases", where);
        if (i.phase_table.size() != static_cast<size_t>(i.phase_count))
            throw ScenarioParseError(where + ": phase table size does not match phase_count");
        s.network.intersections.push_back(std::move(i));
    }

    if (j.contains("flows")) {
        for (const auto& jf : j.at("flows")) {
            FlowSpec f;
            f.period = require<double>(jf, "period", "flow");
            f.horizon = require<int>(jf, "horizon", "flow");
            f.route_policy = jf.value("route_policy", std::string("fringe_weighted"));
            f.fringe_weight = jf.value("fringe_weight", 10.0);
            f.max_route_attempts = jf.value("max_route_attempts", 100);
            f.validate();
            s.flows.push_back(std::move(f));
        }
    }

    if (j.contains("sim_params")) {
        const nlohmann::json& sp = j.at("sim_params");
        s.sim_params.start_accel = require<double>(sp, "start_accel", "sim_params");
        s.sim_params.stop_decel = require<double>(sp, "stop_decel", "sim_params");
        s.sim_params.reaction_time = require<double>(sp, "reaction_time", "sim_params");
        s.sim_params.vehicle_length = require<double>(sp, "vehicle_length", "sim_params");
        s.sim_params.min_gap = require<double>(sp, "min_gap", "sim_params");
        s.sim_params.speed_deviation = require<double>(sp, "speed_deviation", "sim_params");
    } else {
        s.sim_params = SimParams{};  // defaults
        if (info) info->sim_params_defaulted = true;
    }
    s.sim_params.validate();
    return s;
}

inline Scenario load_scenario(const std::string& path, ScenarioLoadInfo* info = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scenario: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ScenarioParseError(std::string("parse error in ") + path + ": " + e.what());
    }
    return scenario_from_json(j, info);
}

}  // namespace greenwave
