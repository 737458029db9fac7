#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "detrad/error.hpp"
#include "detrad/rng.hpp"

namespace detrad {

// Directed transition graph over road segments. Immutable after construction;
// concurrent reads are safe.
struct RoadNetwork {
    std::vector<double> lengths;            // per segment, strictly positive
    std::vector<std::vector<int>> adjacency;  // ordered successor ids

    int segment_count() const { return int(lengths.size()); }

    void require_valid_segment(int seg, const char* who) const {
        if (seg < 0 || seg >= segment_count())
            throw InputError(std::string(who) + ": invalid segment id " + std::to_string(seg));
    }
};

struct PathResult {
    std::vector<int> path;
    double total_cost = 0.0;
};

inline const std::vector<int>& neighbors(const RoadNetwork& net, int seg) {
    net.require_valid_segment(seg, "neighbors");
    return net.adjacency[std::size_t(seg)];
}

inline bool are_adjacent(const RoadNetwork& net, int from, int to) {
    const auto& succ = neighbors(net, from);
    return std::find(succ.begin(), succ.end(), to) != succ.end();
}

// Dijkstra with temporary segment exclusion. A path's cost is the sum of
// entered-segment costs, i.e. every segment after the first, so [s] costs 0
// and costs are additive under concatenation. Ties resolve toward smaller
// segment ids. `cost_override`, when nonempty, replaces lengths (used by the
// simulator's preference-perturbed routing).
inline std::optional<PathResult> shortest_path(const RoadNetwork& net, int from, int to,
                                               const std::vector<int>& excluded = {},
                                               std::span<const double> cost_override = {}) {
    net.require_valid_segment(from, "shortest_path");
    net.require_valid_segment(to, "shortest_path");
    if (!cost_override.empty() && int(cost_override.size()) != net.segment_count())
        throw InputError("shortest_path: cost override size mismatch");
    const int n = net.segment_count();
    std::vector<char> blocked(std::size_t(n), 0);
    for (int seg : excluded) {
        net.require_valid_segment(seg, "shortest_path(excluded)");
        if (seg == from || seg == to)
            throw InputError("shortest_path: excluded set contains endpoint " +
                             std::to_string(seg));
        blocked[std::size_t(seg)] = 1;
    }
    auto enter_cost = [&](int seg) {
        return cost_override.empty() ? net.lengths[std::size_t(seg)]
                                     : cost_override[std::size_t(seg)];
    };

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(std::size_t(n), kInf);
    std::vector<int> prev(std::size_t(n), -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
    dist[std::size_t(from)] = 0.0;
    heap.push({0.0, from});
    while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (d > dist[std::size_t(u)]) continue;
        if (u == to) break;
        for (int v : net.adjacency[std::size_t(u)]) {
            if (blocked[std::size_t(v)]) continue;
            double alt = d + enter_cost(v);
            if (alt < dist[std::size_t(v)]) {
                dist[std::size_t(v)] = alt;
                prev[std::size_t(v)] = u;
                heap.push({alt, v});
            } else if (alt == dist[std::size_t(v)] && prev[std::size_t(v)] > u) {
                prev[std::size_t(v)] = u;
            }
        }
    }
    if (dist[std::size_t(to)] == kInf) return std::nullopt;
    PathResult res;
    res.total_cost = dist[std::size_t(to)];
    for (int v = to; v != -1; v = prev[std::size_t(v)]) res.path.push_back(v);
    std::reverse(res.path.begin(), res.path.end());
    return res;
}

// Cost of an existing path under the entering-cost convention.
inline double path_cost(const RoadNetwork& net, const std::vector<int>& path) {
    double c = 0.0;
    for (std::size_t i = 1; i < path.size(); ++i) c += net.lengths[std::size_t(path[i])];
    return c;
}

// ---------------------------------------------------------------------------
// Synthetic grids
// ---------------------------------------------------------------------------

struct LengthModel {
    enum class Kind { Constant, Uniform };
    Kind kind = Kind::Constant;
    double value = 1.0;     // Constant
    double lo = 0.5;        // Uniform
    double hi = 1.5;
    uint64_t seed = 0;
};

// One segment per grid cell, bidirectional 4-neighborhood adjacency.
inline RoadNetwork grid_network(int rows, int cols, const LengthModel& model = {}) {
    if (rows <= 0 || cols <= 0) throw InputError("grid_network: zero dimension");
    if (rows * cols < 2) throw InputError("grid_network: need at least 2 segments");
    RoadNetwork net;
    const int n = rows * cols;
    net.lengths.resize(std::size_t(n));
    Rng rng(model.seed);
    for (auto& len : net.lengths) {
        len = model.kind == LengthModel::Kind::Constant ? model.value
                                                        : rng.uniform(model.lo, model.hi);
        if (!(len > 0.0) || !std::isfinite(len))
            throw InputError("grid_network: length model produced nonpositive length");
    }
    net.adjacency.resize(std::size_t(n));
    auto id = [cols](int r, int c) { return r * cols + c; };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            auto& adj = net.adjacency[std::size_t(id(r, c))];
            if (r > 0) adj.push_back(id(r - 1, c));
            if (c > 0) adj.push_back(id(r, c - 1));
            if (c + 1 < cols) adj.push_back(id(r, c + 1));
            if (r + 1 < rows) adj.push_back(id(r + 1, c));
        }
    return net;
}

// ---------------------------------------------------------------------------
// Network file: {"segments":[{"id":..,"length":..,"neighbors":[..]},...]}
// ---------------------------------------------------------------------------

inline RoadNetwork network_from_json(const nlohmann::json& j) {
    if (!j.contains("segments") || !j.at("segments").is_array())
        throw InputError("network file: missing \"segments\" array");
    const auto& segs = j.at("segments");
    const int n = int(segs.size());
    RoadNetwork net;
    net.lengths.assign(std::size_t(n), 0.0);
    net.adjacency.assign(std::size_t(n), {});
    std::vector<char> seen(std::size_t(n), 0);
    for (const auto& s : segs) {
        int id = s.at("id").get<int>();
        if (id < 0 || id >= n)
            throw InputError("network file: segment id " + std::to_string(id) +
                             " outside dense range 0.." + std::to_string(n - 1));
        if (seen[std::size_t(id)])
            throw InputError("network file: duplicate segment id " + std::to_string(id));
        seen[std::size_t(id)] = 1;
        double len = s.at("length").get<double>();
        if (!(len > 0.0) || !std::isfinite(len))
            throw InputError("network file: segment " + std::to_string(id) +
                             " has nonpositive length");
        net.lengths[std::size_t(id)] = len;
        for (int nb : s.at("neighbors").get<std::vector<int>>()) {
            if (nb < 0 || nb >= n)
                throw InputError("network file: dangling neighbor " + std::to_string(nb) +
                                 " on segment " + std::to_string(id));
            if (nb == id)
                throw InputError("network file: self-loop on segment " + std::to_string(id));
            net.adjacency[std::size_t(id)].push_back(nb);
        }
    }
    return net;
}

inline nlohmann::json network_to_json(const RoadNetwork& net) {
    nlohmann::json segs = nlohmann::json::array();
    for (int id = 0; id < net.segment_count(); ++id)
        segs.push_back({{"id", id},
                        {"length", net.lengths[std::size_t(id)]},
                        {"neighbors", net.adjacency[std::size_t(id)]}});
    return {{"segments", segs}};
}

inline RoadNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open network file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("network file " + path + ": " + e.what());
    }
    return network_from_json(j);
}

inline void save_network(const RoadNetwork& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write network file: " + path);
    out << network_to_json(net).dump() << "\n";
}

}  // namespace detrad
