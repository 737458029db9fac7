#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "detrad/error.hpp"
#include "detrad/eval.hpp"

namespace detrad {

// Flat key-value run configuration. Unknown keys are rejected; flags given on
// the command line override file values; the resolved document's digest is
// embedded in run outputs for traceability.
class RunConfig {
  public:
    RunConfig() : doc_(default_doc()) {}

    static const nlohmann::json& default_doc() {
        static const nlohmann::json defaults = {
            {"rows", 20},
            {"cols", 20},
            {"length_model", "const"},  // const | uniform
            {"length_value", 1.0},
            {"length_lo", 0.5},
            {"length_hi", 1.5},
            {"gamma", 3.0},
            {"tau", 0.1},
            {"pairs_total", 60},
            {"trajectories_per_pair", 200},
            {"min_pair_hops", 4},
            {"candidate_pairs", 50},
            {"min_pair_count", 100},
            {"ood_count", 0},
            {"min_traj_len", 2},
            {"detour_band_lo", 0.2},
            {"detour_band_hi", 2.0},
            {"sim_threshold", 0.5},
            {"d", 128},
            {"epochs", 200},
            {"batch", 1},
            {"lr", 0.01},
            {"lambda", 0.1},
            {"table_k", 1024},
            {"seed", 1},
            {"seeds", nlohmann::json::array({1, 2, 3, 4, 5})},
            {"jobs", 1},
            {"observed_ratio", 1.0},
            {"alphas", nlohmann::json::array({0.0, 0.2, 0.4, 0.6, 0.8, 1.0})},
            {"rhos", nlohmann::json::array({0.2, 0.4, 0.6, 0.8, 1.0})},
            {"lambdas", nlohmann::json::array({0.0, 0.05, 0.1, 0.2, 0.5, 1.0})},
        };
        return defaults;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InputError("cannot open config file: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw InputError("config file " + path + ": " + e.what());
        }
        RunConfig cfg;
        if (!j.is_object()) throw InputError("config file " + path + ": expected an object");
        for (const auto& [key, value] : j.items()) cfg.set(key, value);
        return cfg;
    }

    void set(const std::string& key, const nlohmann::json& value) {
        if (!doc_.contains(key)) throw InputError("config: unknown key \"" + key + "\"");
        doc_[key] = value;
    }

    template <typename T>
    T get(const std::string& key) const {
        if (!doc_.contains(key)) throw InputError("config: unknown key \"" + key + "\"");
        return doc_.at(key).get<T>();
    }

    const nlohmann::json& doc() const { return doc_; }

    // FNV-1a over the canonical (key-sorted) dump.
    std::string digest() const {
        const std::string dump = doc_.dump();
        uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : dump) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    // Derived typed views -----------------------------------------------------

    LengthModel length_model(uint64_t seed_override) const {
        LengthModel lm;
        const std::string kind = get<std::string>("length_model");
        if (kind == "const") {
            lm.kind = LengthModel::Kind::Constant;
        } else if (kind == "uniform") {
            lm.kind = LengthModel::Kind::Uniform;
        } else {
            throw InputError("config: length_model must be \"const\" or \"uniform\"");
        }
        lm.value = get<double>("length_value");
        lm.lo = get<double>("length_lo");
        lm.hi = get<double>("length_hi");
        lm.seed = seed_override;
        return lm;
    }

    WorldRecipe world_recipe() const {
        WorldRecipe r;
        r.world.popularity_exponent = get<double>("gamma");
        r.world.route_temperature = get<double>("tau");
        r.world.pairs_total = get<int>("pairs_total");
        r.world.trajectories_per_pair = get<int>("trajectories_per_pair");
        r.world.min_pair_hops = get<int>("min_pair_hops");
        r.world.seed = get<uint64_t>("seed");
        r.candidate_pairs = get<int>("candidate_pairs");
        r.min_pair_count = get<int>("min_pair_count");
        r.ood_count = get<int>("ood_count");
        r.min_traj_len = get<int>("min_traj_len");
        r.detour_band_lo = get<double>("detour_band_lo");
        r.detour_band_hi = get<double>("detour_band_hi");
        r.sim_threshold = get<double>("sim_threshold");
        return r;
    }

    Hyper hyper() const {
        Hyper h;
        h.dim = get<int>("d");
        h.epochs = get<int>("epochs");
        h.batch = get<int>("batch");
        h.lr = get<double>("lr");
        h.lambda = get<double>("lambda");
        h.seed = get<uint64_t>("seed");
        return h;
    }

    SuiteConfig suite_config() const {
        SuiteConfig s;
        s.rows = get<int>("rows");
        s.cols = get<int>("cols");
        const LengthModel lm = length_model(0);
        s.length_kind = lm.kind;
        s.length_value = lm.value;
        s.length_lo = lm.lo;
        s.length_hi = lm.hi;
        s.recipe = world_recipe();
        s.hyper = hyper();
        s.table_k = get<int>("table_k");
        s.alphas = get<std::vector<double>>("alphas");
        s.rhos = get<std::vector<double>>("rhos");
        s.lambdas = get<std::vector<double>>("lambdas");
        s.seeds = get<std::vector<uint64_t>>("seeds");
        s.jobs = get<int>("jobs");
        s.config_digest = digest();
        return s;
    }

  private:
    nlohmann::json doc_;
};

}  // namespace detrad
