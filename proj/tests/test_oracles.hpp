#pragma once

// Independent oracles used by the tests: brute-force path enumeration,
// central finite differences, rank statistics. These deliberately do not
// share code with the implementation paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "detrad/param_store.hpp"
#include "detrad/road_graph.hpp"
#include "detrad/tape.hpp"

namespace oracles {

// All simple paths from `from` to `to` avoiding `excluded`, by DFS. Only for
// networks small enough to enumerate (<= 12 segments or so).
inline void enumerate_simple_paths(const detrad::RoadNetwork& net, int from, int to,
                                   const std::vector<int>& excluded,
                                   std::vector<std::vector<int>>& out) {
    std::vector<char> blocked(std::size_t(net.segment_count()), 0);
    for (int seg : excluded) blocked[std::size_t(seg)] = 1;
    std::vector<char> visited(std::size_t(net.segment_count()), 0);
    std::vector<int> path;
    std::function<void(int)> dfs = [&](int u) {
        visited[std::size_t(u)] = 1;
        path.push_back(u);
        if (u == to) {
            out.push_back(path);
        } else {
            for (int v : net.adjacency[std::size_t(u)])
                if (!visited[std::size_t(v)] && !blocked[std::size_t(v)]) dfs(v);
        }
        path.pop_back();
        visited[std::size_t(u)] = 0;
    };
    if (!blocked[std::size_t(from)]) dfs(from);
}

inline std::optional<double> brute_force_min_cost(const detrad::RoadNetwork& net, int from,
                                                  int to, const std::vector<int>& excluded) {
    std::vector<std::vector<int>> paths;
    enumerate_simple_paths(net, from, to, excluded, paths);
    if (paths.empty()) return std::nullopt;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : paths) best = std::min(best, detrad::path_cost(net, p));
    return best;
}

// Central finite differences against the gradients currently accumulated in
// the store. `loss` must recompute the forward value from the store's current
// parameter values. Returns the worst relative error seen.
template <typename LossFn>
double max_fd_rel_error(detrad::ParamStore& store, LossFn loss, double h = 1e-5,
                        int max_coords_per_param = 0) {
    // snapshot analytic gradients
    std::vector<std::pair<std::string, std::vector<double>>> grads;
    for (const auto& [name, e] : store.entries()) grads.push_back({name, e.grad.data});
    double worst = 0.0;
    detrad::Rng pick_rng(0x5eedc0de);
    for (auto& [name, g] : grads) {
        auto& value = store.value(name);
        std::vector<std::size_t> coords;
        if (max_coords_per_param > 0 && int(value.size()) > max_coords_per_param) {
            for (int k = 0; k < max_coords_per_param; ++k)
                coords.push_back(pick_rng.uniform_int(value.size()));
        } else {
            coords.resize(value.size());
            for (std::size_t i = 0; i < value.size(); ++i) coords[i] = i;
        }
        for (std::size_t i : coords) {
            const double orig = value[i];
            value[i] = orig + h;
            const double up = loss();
            value[i] = orig - h;
            const double down = loss();
            value[i] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double rel = std::abs(fd - g[i]) / std::max({1.0, std::abs(fd), std::abs(g[i])});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// Spearman rank correlation; average ranks for ties.
inline std::vector<double> ranks_of(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
        double avg = (double(i) + double(j - 1)) / 2.0 + 1.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
        i = j;
    }
    return ranks;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ra = ranks_of(a), rb = ranks_of(b);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= double(ra.size());
    mb /= double(rb.size());
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::sqrt(da * db);
}

}  // namespace oracles
