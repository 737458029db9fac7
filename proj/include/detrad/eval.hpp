#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "detrad/detector.hpp"
#include "detrad/metrics.hpp"
#include "detrad/world_sim.hpp"

namespace detrad {

// Desk-scale experiment suite: the four-condition table, the ablation rows,
// and the mixture / observed-ratio / lambda sweeps, replicated over seeds.
struct SuiteConfig {
    int rows = 20, cols = 20;
    LengthModel::Kind length_kind = LengthModel::Kind::Constant;
    double length_value = 1.0, length_lo = 0.5, length_hi = 1.5;
    WorldRecipe recipe;
    Hyper hyper;
    int table_k = 1024;
    std::vector<double> alphas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> rhos{0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> lambdas{0.0, 0.05, 0.1, 0.2, 0.5, 1.0};
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    int jobs = 1;
    bool timing = true;
    std::string config_digest;
};

struct MetricStats {
    std::vector<double> per_seed;
    double mean = 0.0;
    double stddev = 0.0;

    static MetricStats of(std::vector<double> vals) {
        MetricStats s;
        s.per_seed = std::move(vals);
        for (double v : s.per_seed) s.mean += v;
        s.mean /= double(s.per_seed.size());
        for (double v : s.per_seed) s.stddev += (v - s.mean) * (v - s.mean);
        s.stddev = s.per_seed.size() > 1
                       ? std::sqrt(s.stddev / double(s.per_seed.size() - 1))
                       : 0.0;
        return s;
    }
};

struct TimingReport {
    double push_ns_n10 = 0.0;    // median per-push, length-10 paths
    double push_ns_n1000 = 0.0;  // median per-push, length-1000 paths
    double total_time_r2 = 0.0;  // linear fit of total scoring time vs n
};

struct ExperimentReport {
    std::string config_digest;
    std::vector<uint64_t> seeds;
    std::map<std::string, MetricStats> cells;
    TimingReport timing;
    bool has_timing = false;

    nlohmann::json to_json() const {
        nlohmann::json jc = nlohmann::json::object();
        for (const auto& [key, st] : cells)
            jc[key] = {{"mean", st.mean}, {"stddev", st.stddev}, {"per_seed", st.per_seed}};
        nlohmann::json j = {{"config_digest", config_digest}, {"seeds", seeds}, {"cells", jc}};
        if (has_timing)
            j["timing"] = {{"push_ns_n10", timing.push_ns_n10},
                           {"push_ns_n1000", timing.push_ns_n1000},
                           {"total_time_r2", timing.total_time_r2}};
        return j;
    }

    // Flat rows: condition,seed,metric,value
    std::string curves_csv() const {
        std::string out = "condition,seed,metric,value\n";
        char buf[64];
        for (const auto& [key, st] : cells) {
            auto cut = key.rfind('/');
            std::string condition = key.substr(0, cut);
            std::string metric = key.substr(cut + 1);
            for (std::size_t i = 0; i < st.per_seed.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.17g", st.per_seed[i]);
                out += condition + "," + std::to_string(seeds[i]) + "," + metric + "," + buf +
                       "\n";
            }
        }
        return out;
    }
};

namespace eval_detail {

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

// Prefix-cumulative score terms of one trajectory; every sweep point and
// ablation variant reads off these without rescoring.
struct TrajCums {
    double fixed = 0.0;
    std::vector<double> cum_nll;
    std::vector<double> cum_scale;

    int n() const { return int(cum_nll.size()); }
    // score of the m-segment prefix at the given lambda
    double score(double lambda, int m) const {
        return fixed + cum_nll[std::size_t(m - 1)] - lambda * cum_scale[std::size_t(m - 1)];
    }
    double rp_only_score(int m) const { return cum_scale[std::size_t(m - 1)]; }
};

inline TrajCums cums_of(const ModelBundle& b, const RoadNetwork& net, const Trajectory& t) {
    ScoreSession session(b, t.sd, b.hyper.lambda, net);
    TrajCums c;
    c.cum_nll.reserve(t.path.size());
    c.cum_scale.reserve(t.path.size());
    for (int seg : t.path) {
        session.push(seg);
        c.cum_nll.push_back(session.likelihood_term());
        c.cum_scale.push_back(session.scaling_term());
    }
    c.fixed = session.fixed_term();
    return c;
}

inline std::vector<TrajCums> cums_of_set(const ModelBundle& b, const RoadNetwork& net,
                                         const Dataset& set) {
    std::vector<TrajCums> out;
    out.reserve(set.trajectories.size());
    for (const auto& t : set.trajectories) out.push_back(cums_of(b, net, t));
    return out;
}

inline int prefix_len(double rho, int n) {
    int m = int(std::ceil(rho * double(n)));
    return std::max(1, std::min(m, n));
}

enum class Variant { Full, TgOnly, RpOnly };

inline double variant_score(const TrajCums& c, Variant v, double lambda, int m) {
    switch (v) {
        case Variant::Full: return c.score(lambda, m);
        case Variant::TgOnly: return c.score(0.0, m);
        case Variant::RpOnly: return c.rp_only_score(m);
    }
    return 0.0;
}

inline LabeledScores label_scores(const std::vector<TrajCums>& normals,
                                  const std::vector<TrajCums>& anomalies, Variant v,
                                  double lambda, double rho = 1.0) {
    LabeledScores s;
    s.reserve(normals.size() + anomalies.size());
    for (const auto& c : normals)
        s.push_back({variant_score(c, v, lambda, prefix_len(rho, c.n())), false});
    for (const auto& c : anomalies)
        s.push_back({variant_score(c, v, lambda, prefix_len(rho, c.n())), true});
    return s;
}

}  // namespace eval_detail

// ---------------------------------------------------------------------------
// Timing harness
// ---------------------------------------------------------------------------

inline std::vector<int> random_walk(const RoadNetwork& net, int length, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> path;
    path.reserve(std::size_t(length));
    int cur = int(rng.uniform_int(uint64_t(net.segment_count())));
    while (neighbors(net, cur).empty()) cur = int(rng.uniform_int(uint64_t(net.segment_count())));
    path.push_back(cur);
    while (int(path.size()) < length) {
        const auto& nb = neighbors(net, cur);
        cur = nb[rng.uniform_int(nb.size())];
        path.push_back(cur);
    }
    return path;
}

inline TimingReport run_timing(const ModelBundle& b, const RoadNetwork& net, uint64_t seed) {
    using clock = std::chrono::steady_clock;
    const double lambda = b.scaling ? b.hyper.lambda : 0.0;
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };

    auto per_push_median = [&](int length, int total_pushes) {
        std::vector<double> samples;
        samples.reserve(std::size_t(total_pushes));
        int walks = (total_pushes + length - 1) / length;
        for (int w = 0; w < walks; ++w) {
            auto path = random_walk(net, length, derive_seed(seed, uint64_t(length), uint64_t(w)));
            ScoreSession session(b, {path.front(), path.back()}, lambda, net);
            for (int seg : path) {
                auto t0 = clock::now();
                session.push(seg);
                auto t1 = clock::now();
                samples.push_back(
                    double(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
            }
        }
        return median(samples);
    };

    TimingReport rep;
    per_push_median(10, 200);  // warmup
    rep.push_ns_n10 = per_push_median(10, 2000);
    rep.push_ns_n1000 = per_push_median(1000, 2000);

    // Total scoring time vs n, least-squares line fit.
    std::vector<double> xs, ys;
    for (int n = 100; n <= 1000; n += 100) {
        std::vector<double> reps;
        for (int r = 0; r < 15; ++r) {
            auto path = random_walk(net, n, derive_seed(seed, 0x72756e, uint64_t(n * 31 + r)));
            ScoreSession session(b, {path.front(), path.back()}, lambda, net);
            auto t0 = clock::now();
            for (int seg : path) session.push(seg);
            auto t1 = clock::now();
            reps.push_back(
                double(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
        }
        xs.push_back(double(n));
        ys.push_back(median(reps));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= double(xs.size());
    my /= double(ys.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    double slope = sxy / sxx;
    double intercept = my - slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double e = ys[i] - (intercept + slope * xs[i]);
        ss_res += e * e;
    }
    rep.total_time_r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Per-seed pipeline and the suite
// ---------------------------------------------------------------------------

struct SeedRun {
    std::map<std::string, double> cells;
    ModelBundle bundle;
    RoadNetwork net;
    std::vector<double> loss_curve;
};

inline SeedRun run_seed(const SuiteConfig& cfg, uint64_t seed) {
    using namespace eval_detail;
    SeedRun out;
    LengthModel lm;
    lm.kind = cfg.length_kind;
    lm.value = cfg.length_value;
    lm.lo = cfg.length_lo;
    lm.hi = cfg.length_hi;
    lm.seed = derive_seed(seed, 0x6e6574);
    out.net = grid_network(cfg.rows, cfg.cols, lm);

    WorldRecipe recipe = cfg.recipe;
    recipe.world.seed = seed;
    World world = generate_world(out.net, recipe);

    Hyper hyper = cfg.hyper;
    hyper.seed = derive_seed(seed, 0x747261696e);
    TrainResult tr = train(hyper, world.split.train, out.net);
    out.bundle = std::move(tr.bundle);
    out.loss_curve = std::move(tr.loss_curve);
    out.bundle.scaling = out.bundle.rp().build_scaling_table(
        out.bundle.store, out.net, cfg.table_k, derive_seed(seed, 0x7461626c));

    const auto id_norm = cums_of_set(out.bundle, out.net, world.split.id_test);
    const auto ood_norm = cums_of_set(out.bundle, out.net, world.split.ood_test);
    const auto id_det = cums_of_set(out.bundle, out.net, world.id_detour);
    const auto id_swi = cums_of_set(out.bundle, out.net, world.id_switch);
    const auto ood_det = cums_of_set(out.bundle, out.net, world.ood_detour);
    const auto ood_swi = cums_of_set(out.bundle, out.net, world.ood_switch);

    struct Cond {
        const char* name;
        const std::vector<TrajCums>* normals;
        const std::vector<TrajCums>* anomalies;
    };
    const Cond conds[4] = {{"id_detour", &id_norm, &id_det},
                           {"id_switch", &id_norm, &id_swi},
                           {"ood_detour", &ood_norm, &ood_det},
                           {"ood_switch", &ood_norm, &ood_swi}};

    auto put_both = [&](const std::string& prefix, const LabeledScores& s) {
        try {
            out.cells[prefix + "/roc_auc"] = roc_auc(s);
            out.cells[prefix + "/pr_auc"] = pr_auc(s);
        } catch (const InputError& e) {
            throw InputError("cell " + prefix + " (seed " + std::to_string(seed) +
                             "): " + e.what());
        }
    };

    const double lam = cfg.hyper.lambda;
    for (const auto& c : conds) {
        put_both("table/" + std::string(c.name) + "/full",
                 label_scores(*c.normals, *c.anomalies, Variant::Full, lam));
        put_both("table/" + std::string(c.name) + "/tg_only",
                 label_scores(*c.normals, *c.anomalies, Variant::TgOnly, 0.0));
        put_both("table/" + std::string(c.name) + "/rp_only",
                 label_scores(*c.normals, *c.anomalies, Variant::RpOnly, 0.0));
        for (double l : cfg.lambdas)
            put_both("lambda/" + std::string(c.name) + "/" + fmt2(l),
                     label_scores(*c.normals, *c.anomalies, Variant::Full, l));
        for (double rho : cfg.rhos)
            put_both("rho/" + std::string(c.name) + "/" + fmt2(rho),
                     label_scores(*c.normals, *c.anomalies, Variant::Full, lam, rho));
    }

    // Mixture sweep: normals and anomalies both mixed (1-alpha):alpha from the
    // ID and OOD pools, so alpha in {0,1} reproduces the pure conditions.
    struct MixCond {
        const char* strategy;
        const std::vector<TrajCums>*id_n, *id_a, *ood_n, *ood_a;
    };
    const MixCond mixes[2] = {{"detour", &id_norm, &id_det, &ood_norm, &ood_det},
                              {"switch", &id_norm, &id_swi, &ood_norm, &ood_swi}};
    for (std::size_t mi = 0; mi < 2; ++mi) {
        const auto& mc = mixes[mi];
        auto shuffled = [&](std::size_t n, uint64_t tag) {
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            Rng rng(derive_seed(seed, 0x616c7068 + tag, mi));
            rng.shuffle(idx);
            return idx;
        };
        const auto ord_id_n = shuffled(mc.id_n->size(), 1);
        const auto ord_id_a = shuffled(mc.id_a->size(), 2);
        const auto ord_ood_n = shuffled(mc.ood_n->size(), 3);
        const auto ord_ood_a = shuffled(mc.ood_a->size(), 4);
        for (double alpha : cfg.alphas) {
            auto take = [&](const std::vector<TrajCums>& set,
                            const std::vector<std::size_t>& ord, double frac, bool anom,
                            LabeledScores& s) {
                auto k = std::size_t(std::llround(frac * double(set.size())));
                for (std::size_t i = 0; i < k; ++i)
                    s.push_back({variant_score(set[ord[i]], Variant::Full, lam, set[ord[i]].n()),
                                 anom});
            };
            LabeledScores s;
            take(*mc.id_n, ord_id_n, 1.0 - alpha, false, s);
            take(*mc.ood_n, ord_ood_n, alpha, false, s);
            take(*mc.id_a, ord_id_a, 1.0 - alpha, true, s);
            take(*mc.ood_a, ord_ood_a, alpha, true, s);
            put_both("alpha/" + std::string(mc.strategy) + "/" + fmt2(alpha), s);
        }
    }

    out.cells["train/final_loss/value"] = out.loss_curve.empty() ? 0.0 : out.loss_curve.back();
    return out;
}

inline ExperimentReport run_suite(const SuiteConfig& cfg) {
    if (cfg.seeds.empty()) throw InputError("run_suite: no seeds");
    std::vector<SeedRun> runs(cfg.seeds.size());
    const int jobs = std::max(1, cfg.jobs);
    std::mutex next_mutex;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&]() {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (failure || next >= cfg.seeds.size()) return;
                i = next++;
            }
            try {
                runs[i] = run_seed(cfg, cfg.seeds[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const std::size_t n_workers = std::min(std::size_t(jobs), cfg.seeds.size());
        for (std::size_t j = 0; j < n_workers; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    ExperimentReport rep;
    rep.config_digest = cfg.config_digest;
    rep.seeds = cfg.seeds;
    for (const auto& [key, value] : runs.front().cells) {
        std::vector<double> vals;
        vals.reserve(runs.size());
        for (const auto& r : runs) vals.push_back(r.cells.at(key));
        rep.cells[key] = MetricStats::of(std::move(vals));
    }
    if (cfg.timing) {
        rep.timing = run_timing(runs.front().bundle, runs.front().net,
                                derive_seed(cfg.seeds.front(), 0x74696d65));
        rep.has_timing = true;
    }
    return rep;
}

}  // namespace detrad
