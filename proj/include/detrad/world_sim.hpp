#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "detrad/error.hpp"
#include "detrad/rng.hpp"
#include "detrad/road_graph.hpp"
#include "detrad/trajectory.hpp"

namespace detrad {

// Hidden per-segment road preference: the common cause driving both SD-pair
// popularity and route choice in the generated world.
struct PreferenceField {
    std::vector<double> weights;  // in (0, 1]
    uint64_t seed = 0;
};

struct WorldConfig {
    double popularity_exponent = 3.0;  // strength of preference -> SD pairs
    double route_temperature = 0.1;    // stochasticity of route choice
    int pairs_total = 60;
    int trajectories_per_pair = 200;
    int min_pair_hops = 4;  // resample pairs whose shortest route is shorter
    uint64_t seed = 1;

    void require_valid() const {
        if (pairs_total <= 0 || trajectories_per_pair <= 0)
            throw InputError("WorldConfig: counts must be positive");
        if (!(route_temperature > 0.0)) throw InputError("WorldConfig: route_temperature <= 0");
        if (popularity_exponent < 0.0) throw InputError("WorldConfig: popularity_exponent < 0");
    }
};

inline PreferenceField sample_preferences(const RoadNetwork& net, uint64_t seed) {
    PreferenceField f;
    f.seed = seed;
    Rng rng(derive_seed(seed, 0x70726566));
    f.weights.resize(std::size_t(net.segment_count()));
    for (auto& w : f.weights) w = 1.0 - 0.95 * rng.uniform();  // (0.05, 1]
    return f;
}

namespace detail {

// Weighted draw proportional to weights[i]^gamma.
inline int draw_weighted(const std::vector<double>& weights, double gamma, Rng& rng) {
    std::vector<double> cum(weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += std::pow(weights[i], gamma);
        cum[i] = acc;
    }
    double u = rng.uniform() * acc;
    return int(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
}

}  // namespace detail

// Sources and destinations drawn independently with probability proportional
// to weight^gamma; rejects source==destination, unreachable or too-close
// pairs, and duplicates of already-drawn pairs.
inline std::vector<SdPair> sample_sd_pairs(const RoadNetwork& net, const PreferenceField& pref,
                                           const WorldConfig& config) {
    config.require_valid();
    Rng rng(derive_seed(config.seed, 0x73647061));
    std::vector<SdPair> pairs;
    std::set<SdPair> seen;
    const int max_attempts = 1000 * config.pairs_total + 10000;
    int attempts = 0;
    while (int(pairs.size()) < config.pairs_total) {
        if (++attempts > max_attempts)
            throw InputError("sample_sd_pairs: could not find " +
                             std::to_string(config.pairs_total) +
                             " reachable distinct SD pairs after " + std::to_string(attempts - 1) +
                             " attempts");
        SdPair sd{detail::draw_weighted(pref.weights, config.popularity_exponent, rng),
                  detail::draw_weighted(pref.weights, config.popularity_exponent, rng)};
        if (sd.source == sd.destination || seen.count(sd)) continue;
        auto sp = shortest_path(net, sd.source, sd.destination);
        if (!sp || int(sp->path.size()) < config.min_pair_hops) continue;
        seen.insert(sd);
        pairs.push_back(sd);
    }
    return pairs;
}

// Preference-perturbed routing: effective entering cost length/weight with
// multiplicative exponential noise exp(tau * xi), then Dijkstra.
inline Trajectory sample_route(const RoadNetwork& net, const PreferenceField& pref, SdPair sd,
                               double tau, uint64_t seed) {
    net.require_valid_segment(sd.source, "sample_route");
    net.require_valid_segment(sd.destination, "sample_route");
    Rng rng(derive_seed(seed, 0x726f757465));
    std::vector<double> costs(std::size_t(net.segment_count()));
    for (std::size_t i = 0; i < costs.size(); ++i) {
        double noise = tau > 0.0 ? std::exp(tau * rng.normal()) : 1.0;
        costs[i] = net.lengths[i] / pref.weights[i] * noise;
    }
    auto res = shortest_path(net, sd.source, sd.destination, {}, costs);
    if (!res)
        throw InputError("sample_route: destination " + std::to_string(sd.destination) +
                         " unreachable from " + std::to_string(sd.source));
    return Trajectory::from_path(std::move(res->path), Label::Normal);
}

// ---------------------------------------------------------------------------
// Anomaly injectors
// ---------------------------------------------------------------------------

struct DetourInfo {
    int i = -1, k = -1, j = -1;  // path indices: rerouted span and deleted segment
};

// Detour: pick indices i < k < j, temporarily delete t_k, reroute t_i -> t_j
// by Dijkstra and splice. Candidate triples are traversed in seeded random
// order until the relative cost increase lands inside [band_lo, band_hi];
// none if no triple qualifies.
inline std::optional<Trajectory> make_detour(const Trajectory& traj, const RoadNetwork& net,
                                             double band_lo, double band_hi, uint64_t seed,
                                             DetourInfo* info = nullptr) {
    const auto& p = traj.path;
    const int n = traj.length();
    if (n < 4) return std::nullopt;
    const double base_cost = path_cost(net, p);
    if (base_cost <= 0.0) return std::nullopt;

    std::vector<std::array<int, 3>> triples;
    for (int i = 0; i + 2 < n; ++i)
        for (int k = i + 1; k + 1 < n; ++k)
            for (int j = k + 1; j < n; ++j) triples.push_back({i, k, j});
    Rng rng(derive_seed(seed, 0x6465746f));
    rng.shuffle(triples);

    for (const auto& [i, k, j] : triples) {
        // Revisiting routes can place the same segment at several indices;
        // the deleted segment must not collide with the reroute endpoints.
        if (p[std::size_t(k)] == p[std::size_t(i)] || p[std::size_t(k)] == p[std::size_t(j)])
            continue;
        auto mid = shortest_path(net, p[std::size_t(i)], p[std::size_t(j)], {p[std::size_t(k)]});
        if (!mid) continue;
        std::vector<int> candidate(p.begin(), p.begin() + i);
        candidate.insert(candidate.end(), mid->path.begin(), mid->path.end());
        candidate.insert(candidate.end(), p.begin() + j + 1, p.end());
        bool clean = true;
        for (std::size_t q = 0; q + 1 < candidate.size(); ++q)
            if (candidate[q] == candidate[q + 1]) {
                clean = false;
                break;
            }
        if (!clean) continue;
        double rel = (path_cost(net, candidate) - base_cost) / base_cost;
        if (rel < band_lo || rel > band_hi) continue;
        Trajectory out = Trajectory::from_path(std::move(candidate), Label::Detour);
        if (out.sd == traj.sd && out.path != traj.path) {
            if (info) *info = {i, k, j};
            return out;
        }
    }
    return std::nullopt;
}

// Switch: sample a dissimilar route t' with the same SD pair and hop onto it
// at the last index where the two routes pass the same segment and their
// tails still differ, so the result follows t first and t' afterwards without
// connector edges. When no usable interior agreement exists (disjoint
// interiors, or the routes only re-converge on the final approach), the
// switch happens at the source: the output is t' entirely.
inline std::optional<Trajectory> make_switch(const Trajectory& traj, const Dataset& pool,
                                             double sim_threshold, uint64_t seed) {
    std::vector<const Trajectory*> candidates;
    for (const auto& other : pool.trajectories) {
        if (other.sd != traj.sd || other.path == traj.path) continue;
        if (jaccard(traj, other) <= sim_threshold) candidates.push_back(&other);
    }
    if (candidates.empty()) return std::nullopt;
    Rng rng(derive_seed(seed, 0x73776974));
    rng.shuffle(candidates);

    const auto& a = traj.path;
    auto splice_at = [&](const std::vector<int>& b, int p) {
        std::vector<int> out(a.begin(), a.begin() + p + 1);
        out.insert(out.end(), b.begin() + p + 1, b.end());
        return Trajectory::from_path(std::move(out), Label::Switch);
    };
    // Prefer a candidate the route actually crosses mid-way; fall back to a
    // source switch (the whole t') only when no interior hop exists.
    const Trajectory* source_switch = nullptr;
    for (const Trajectory* alt : candidates) {
        const auto& b = alt->path;
        const std::size_t lim = std::min(a.size(), b.size());
        int p = 0;  // a[0] == b[0] == source
        for (std::size_t i = 1; i + 1 < lim; ++i)
            if (a[i] == b[i] && !std::equal(a.begin() + std::ptrdiff_t(i) + 1, a.end(),
                                            b.begin() + std::ptrdiff_t(i) + 1, b.end()))
                p = int(i);
        if (p >= 1) return splice_at(b, p);
        if (!source_switch) source_switch = alt;
    }
    return splice_at(source_switch->path, 0);
}

// ---------------------------------------------------------------------------
// Whole-world generation
// ---------------------------------------------------------------------------

struct WorldRecipe {
    WorldConfig world;
    int candidate_pairs = 50;
    int min_pair_count = 100;
    int ood_count = 0;  // 0 = match id_test size
    int min_traj_len = 2;
    double detour_band_lo = 0.2;
    double detour_band_hi = 2.0;
    double sim_threshold = 0.5;
};

struct World {
    PreferenceField preferences;
    std::vector<SdPair> pairs;
    Dataset corpus;
    SplitResult split;
    Dataset id_detour, id_switch, ood_detour, ood_switch;
};

inline Dataset inject_detours(const Dataset& normals, const RoadNetwork& net, double band_lo,
                              double band_hi, uint64_t seed) {
    Dataset out;
    out.network_ref = normals.network_ref;
    for (std::size_t i = 0; i < normals.trajectories.size(); ++i)
        if (auto an = make_detour(normals.trajectories[i], net, band_lo, band_hi,
                                  derive_seed(seed, i)))
            out.trajectories.push_back(std::move(*an));
    return out;
}

inline Dataset inject_switches(const Dataset& normals, const Dataset& pool, double sim_threshold,
                               uint64_t seed) {
    Dataset out;
    out.network_ref = normals.network_ref;
    for (std::size_t i = 0; i < normals.trajectories.size(); ++i)
        if (auto an = make_switch(normals.trajectories[i], pool, sim_threshold,
                                  derive_seed(seed, i)))
            out.trajectories.push_back(std::move(*an));
    return out;
}

// Full generative pipeline: preferences -> SD pairs -> routes -> split ->
// one anomaly per test normal, per strategy. Deterministic in (net, recipe).
inline World generate_world(const RoadNetwork& net, const WorldRecipe& recipe) {
    const auto& wc = recipe.world;
    wc.require_valid();
    World w;
    w.preferences = sample_preferences(net, wc.seed);
    w.pairs = sample_sd_pairs(net, w.preferences, wc);
    for (std::size_t pi = 0; pi < w.pairs.size(); ++pi)
        for (int k = 0; k < wc.trajectories_per_pair; ++k) {
            Trajectory t = sample_route(net, w.preferences, w.pairs[pi], wc.route_temperature,
                                        derive_seed(wc.seed, pi, std::size_t(k)));
            if (t.length() >= std::max(2, recipe.min_traj_len))
                w.corpus.trajectories.push_back(std::move(t));
        }
    w.split = split_dataset(w.corpus, recipe.candidate_pairs, derive_seed(wc.seed, 0x73706c69),
                            recipe.min_pair_count, recipe.ood_count);
    const uint64_t aseed = derive_seed(wc.seed, 0x616e6f6d);
    w.id_detour = inject_detours(w.split.id_test, net, recipe.detour_band_lo,
                                 recipe.detour_band_hi, derive_seed(aseed, 1));
    w.id_switch = inject_switches(w.split.id_test, w.corpus, recipe.sim_threshold,
                                  derive_seed(aseed, 2));
    w.ood_detour = inject_detours(w.split.ood_test, net, recipe.detour_band_lo,
                                  recipe.detour_band_hi, derive_seed(aseed, 3));
    w.ood_switch = inject_switches(w.split.ood_test, w.corpus, recipe.sim_threshold,
                                   derive_seed(aseed, 4));
    return w;
}

}  // namespace detrad
