#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "detrad/error.hpp"
#include "detrad/rng.hpp"
#include "detrad/road_graph.hpp"

namespace detrad {

struct SdPair {
    int source = -1;
    int destination = -1;
    bool operator==(const SdPair&) const = default;
    bool operator<(const SdPair& o) const {
        return source != o.source ? source < o.source : destination < o.destination;
    }
};

enum class Label { Normal, Detour, Switch };

inline const char* label_name(Label l) {
    switch (l) {
        case Label::Normal: return "normal";
        case Label::Detour: return "detour";
        case Label::Switch: return "switch";
    }
    return "normal";
}

inline Label label_from_name(const std::string& s) {
    if (s == "normal") return Label::Normal;
    if (s == "detour") return Label::Detour;
    if (s == "switch") return Label::Switch;
    throw InputError("unknown trajectory label: " + s);
}

// Ordered road-segment sequence with its SD pair.
struct Trajectory {
    std::vector<int> path;
    SdPair sd;
    Label label = Label::Normal;

    int length() const { return int(path.size()); }

    static Trajectory from_path(std::vector<int> p, Label label = Label::Normal) {
        Trajectory t;
        if (p.empty()) throw InputError("Trajectory: empty path");
        t.sd = {p.front(), p.back()};
        t.path = std::move(p);
        t.label = label;
        return t;
    }
};

struct Dataset {
    std::vector<Trajectory> trajectories;
    std::string network_ref;

    std::size_t size() const { return trajectories.size(); }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct Violation {
    enum class Kind { Adjacency, SdMismatch, TooShort, InvalidId };
    Kind kind;
    int index;  // path position for Adjacency/InvalidId, -1 otherwise
    std::string message;
};

inline std::vector<Violation> validate(const Trajectory& traj, const RoadNetwork& net,
                                       int min_length = 2) {
    std::vector<Violation> out;
    const auto& p = traj.path;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] < 0 || p[i] >= net.segment_count())
            out.push_back({Violation::Kind::InvalidId, int(i),
                           "segment id " + std::to_string(p[i]) + " out of range at index " +
                               std::to_string(i)});
    if (!out.empty()) return out;  // adjacency checks need valid ids
    for (std::size_t i = 0; i + 1 < p.size(); ++i)
        if (!are_adjacent(net, p[i], p[i + 1]))
            out.push_back({Violation::Kind::Adjacency, int(i),
                           "segments " + std::to_string(p[i]) + " -> " +
                               std::to_string(p[i + 1]) + " not adjacent at index " +
                               std::to_string(i)});
    if (p.empty() || traj.sd.source != p.front() || traj.sd.destination != p.back())
        out.push_back({Violation::Kind::SdMismatch, -1, "SD pair does not match path endpoints"});
    if (int(p.size()) < min_length)
        out.push_back({Violation::Kind::TooShort, -1,
                       "path length " + std::to_string(p.size()) + " below minimum " +
                           std::to_string(min_length)});
    return out;
}

inline bool is_valid(const Trajectory& traj, const RoadNetwork& net, int min_length = 2) {
    return validate(traj, net, min_length).empty();
}

// Set-based intersection-over-union of segment ids.
inline double jaccard(const Trajectory& a, const Trajectory& b) {
    if (a.path.empty() || b.path.empty()) throw InputError("jaccard: empty path");
    std::set<int> sa(a.path.begin(), a.path.end());
    std::set<int> sb(b.path.begin(), b.path.end());
    std::size_t inter = 0;
    for (int x : sa) inter += sb.count(x);
    std::size_t uni = sa.size() + sb.size() - inter;
    return double(inter) / double(uni);
}

// ---------------------------------------------------------------------------
// Dataset split
// ---------------------------------------------------------------------------

struct SplitResult {
    Dataset train;
    Dataset id_test;
    Dataset ood_test;
    std::vector<SdPair> candidate_pairs;
};

// Groups by SD pair, samples candidate pairs among those with at least
// `min_pair_count` trajectories, splits each candidate pair half/half into
// train and id_test, and draws ood_test from non-candidate pairs only.
// `ood_count` = 0 means "as many as id_test, capped by availability".
inline SplitResult split_dataset(const Dataset& d, int n_candidate_pairs, uint64_t seed,
                                 int min_pair_count = 100, int ood_count = 0) {
    std::map<SdPair, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < d.trajectories.size(); ++i)
        groups[d.trajectories[i].sd].push_back(i);

    std::vector<SdPair> qualifying;
    for (const auto& [sd, idx] : groups)
        if (int(idx.size()) >= min_pair_count) qualifying.push_back(sd);
    if (int(qualifying.size()) < n_candidate_pairs)
        throw InputError("split_dataset: only " + std::to_string(qualifying.size()) +
                         " SD pairs have >= " + std::to_string(min_pair_count) +
                         " trajectories, need " + std::to_string(n_candidate_pairs));

    Rng rng(seed);
    rng.shuffle(qualifying);
    std::vector<SdPair> candidates(qualifying.begin(), qualifying.begin() + n_candidate_pairs);
    std::sort(candidates.begin(), candidates.end());
    std::set<SdPair> candidate_set(candidates.begin(), candidates.end());

    SplitResult res;
    res.candidate_pairs = candidates;
    res.train.network_ref = res.id_test.network_ref = res.ood_test.network_ref = d.network_ref;
    for (const SdPair& sd : candidates) {
        auto idx = groups.at(sd);
        rng.shuffle(idx);
        std::size_t half = (idx.size() + 1) / 2;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            auto& dst = k < half ? res.train : res.id_test;
            dst.trajectories.push_back(d.trajectories[idx[k]]);
        }
    }

    std::vector<std::size_t> ood_pool;
    for (const auto& [sd, idx] : groups)
        if (!candidate_set.count(sd)) ood_pool.insert(ood_pool.end(), idx.begin(), idx.end());
    rng.shuffle(ood_pool);
    std::size_t want = ood_count > 0 ? std::size_t(ood_count) : res.id_test.size();
    want = std::min(want, ood_pool.size());
    for (std::size_t k = 0; k < want; ++k)
        res.ood_test.trajectories.push_back(d.trajectories[ood_pool[k]]);
    return res;
}

// ---------------------------------------------------------------------------
// Line-oriented dataset file:
//   {"sd":[s,d],"path":[...],"label":"normal"|"detour"|"switch"}
// ---------------------------------------------------------------------------

inline nlohmann::json trajectory_to_json(const Trajectory& t) {
    return {{"sd", {t.sd.source, t.sd.destination}},
            {"path", t.path},
            {"label", label_name(t.label)}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    auto sd = j.at("sd").get<std::vector<int>>();
    if (sd.size() != 2) throw InputError("record: \"sd\" must hold [source, destination]");
    t.sd = {sd[0], sd[1]};
    t.path = j.at("path").get<std::vector<int>>();
    t.label = label_from_name(j.at("label").get<std::string>());
    return t;
}

// `strict_net` non-null turns on adjacency/SD validation at load.
inline Dataset read_dataset(const std::string& path, const RoadNetwork* strict_net = nullptr,
                            int min_length = 2) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open dataset file: " + path);
    Dataset d;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Trajectory t;
        try {
            t = trajectory_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": malformed record: " +
                             e.what());
        }
        if (strict_net) {
            auto viol = validate(t, *strict_net, min_length);
            if (!viol.empty())
                throw InputError(path + ":" + std::to_string(lineno) + ": " + viol.front().message);
        }
        d.trajectories.push_back(std::move(t));
    }
    return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write dataset file: " + path);
    for (const auto& t : d.trajectories) out << trajectory_to_json(t).dump() << "\n";
}

}  // namespace detrad
