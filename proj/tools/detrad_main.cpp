// detrad command line: world generation, training, scoring, and the
// experiment suite. Every command is a pure function of (config, input
// files, seeds); rerunning with identical inputs rewrites identical bytes.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "detrad/config.hpp"
#include "detrad/detector.hpp"
#include "detrad/eval.hpp"
#include "detrad/world_sim.hpp"

namespace fs = std::filesystem;
using namespace detrad;
using nlohmann::json;

namespace {

// Deferred option -> RunConfig key assignments, applied after the config
// file loads so that flags win.
struct CmdConfig {
    std::string config_path;
    std::vector<std::pair<std::string, json>> overrides;

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
        for (const auto& [key, value] : overrides) cfg.set(key, value);
        return cfg;
    }
};

std::string default_str(const char* key) {
    const json& v = RunConfig::default_doc().at(key);
    return v.dump();
}

void add_config_flag(CLI::App* sub, CmdConfig& cc) {
    sub->add_option("--config", cc.config_path, "configuration file (flags override its values)");
}

template <typename T>
void add_key_option(CLI::App* sub, CmdConfig& cc, const std::string& flag, const char* key,
                    const std::string& help) {
    sub->add_option_function<T>(
        flag, [&cc, key](const T& v) { cc.overrides.emplace_back(key, json(v)); },
        help + " [default: " + default_str(key) + "]");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write: " + path);
    out << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump() + "\n"); }

LengthModel length_model_of(const RunConfig& cfg) {
    return cfg.length_model(cfg.get<uint64_t>("seed"));
}

// world-parameter flags shared by gen-world / eval / sweep
void add_world_options(CLI::App* sub, CmdConfig& cc) {
    add_key_option<double>(sub, cc, "--gamma", "gamma", "popularity exponent (preference -> SD)");
    add_key_option<double>(sub, cc, "--tau", "tau", "route temperature");
    add_key_option<int>(sub, cc, "--pairs-total", "pairs_total", "number of SD pairs");
    add_key_option<int>(sub, cc, "--trajectories-per-pair", "trajectories_per_pair",
                        "routes sampled per pair");
    add_key_option<int>(sub, cc, "--min-pair-hops", "min_pair_hops",
                        "minimum shortest-route length of a pair");
    add_key_option<int>(sub, cc, "--candidate-pairs", "candidate_pairs",
                        "pairs forming train/id_test");
    add_key_option<int>(sub, cc, "--min-pair-count", "min_pair_count",
                        "trajectories a pair needs to qualify");
    add_key_option<int>(sub, cc, "--ood-count", "ood_count", "ood sample size (0 = match id)");
    add_key_option<int>(sub, cc, "--min-traj-len", "min_traj_len", "drop shorter trajectories");
    add_key_option<double>(sub, cc, "--detour-band-lo", "detour_band_lo",
                           "minimum relative detour cost increase");
    add_key_option<double>(sub, cc, "--detour-band-hi", "detour_band_hi",
                           "maximum relative detour cost increase");
    add_key_option<double>(sub, cc, "--sim-threshold", "sim_threshold",
                           "maximum jaccard similarity of a switch target");
}

void add_train_options(CLI::App* sub, CmdConfig& cc) {
    add_key_option<int>(sub, cc, "-d,--dim", "d", "hidden dimension");
    add_key_option<int>(sub, cc, "--epochs", "epochs", "training epochs");
    add_key_option<int>(sub, cc, "--batch", "batch", "trajectories per Adam step");
    add_key_option<double>(sub, cc, "--lr", "lr", "Adam learning rate");
    add_key_option<double>(sub, cc, "--lambda", "lambda", "scaling-factor weight");
}

void add_grid_options(CLI::App* sub, CmdConfig& cc) {
    add_key_option<int>(sub, cc, "--rows", "rows", "grid rows");
    add_key_option<int>(sub, cc, "--cols", "cols", "grid columns");
    add_key_option<std::string>(sub, cc, "--length-model", "length_model",
                                "segment lengths: const | uniform");
    add_key_option<double>(sub, cc, "--length-value", "length_value", "constant segment length");
    add_key_option<double>(sub, cc, "--length-lo", "length_lo", "uniform length lower bound");
    add_key_option<double>(sub, cc, "--length-hi", "length_hi", "uniform length upper bound");
}

json world_manifest(const RunConfig& cfg, const std::string& net_path, const World& w) {
    return {{"config_digest", cfg.digest()},
            {"network_ref", net_path},
            {"seed", cfg.get<uint64_t>("seed")},
            {"counts",
             {{"corpus", w.corpus.size()},
              {"train", w.split.train.size()},
              {"id_test", w.split.id_test.size()},
              {"ood_test", w.split.ood_test.size()},
              {"id_detour", w.id_detour.size()},
              {"id_switch", w.id_switch.size()},
              {"ood_detour", w.ood_detour.size()},
              {"ood_switch", w.ood_switch.size()}}}};
}

ScalingTable resolve_table(const ModelBundle& bundle, const std::string& table_flag) {
    if (!table_flag.empty()) return load_scaling_table(table_flag);
    if (!bundle.scaling_ref.empty()) return load_scaling_table(bundle.scaling_ref);
    throw InputError("no scaling table: pass --table or precompute one into the bundle");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"debiased trajectory anomaly detection on road networks"};
    app.require_subcommand(1);

    // ---- gen-net ----------------------------------------------------------
    auto cc_gen_net = std::make_shared<CmdConfig>();
    std::string gen_net_out;
    {
        auto* sub = app.add_subcommand("gen-net", "generate a synthetic grid road network");
        add_config_flag(sub, *cc_gen_net);
        add_grid_options(sub, *cc_gen_net);
        add_key_option<uint64_t>(sub, *cc_gen_net, "--seed", "seed", "length-model seed");
        sub->add_option("--out", gen_net_out, "output network file")->required();
        sub->callback([&, cc_gen_net] {
            RunConfig cfg = cc_gen_net->resolve();
            auto net = grid_network(cfg.get<int>("rows"), cfg.get<int>("cols"),
                                    length_model_of(cfg));
            save_network(net, gen_net_out);
            std::cerr << "gen-net: " << net.segment_count() << " segments -> " << gen_net_out
                      << " (config " << cfg.digest() << ")\n";
        });
    }

    // ---- gen-world --------------------------------------------------------
    auto cc_gen_world = std::make_shared<CmdConfig>();
    std::string gen_world_net, gen_world_dir;
    {
        auto* sub = app.add_subcommand("gen-world",
                                       "generate a confounded world: corpus, splits, anomalies");
        add_config_flag(sub, *cc_gen_world);
        add_world_options(sub, *cc_gen_world);
        add_key_option<uint64_t>(sub, *cc_gen_world, "--seed", "seed", "world seed");
        sub->add_option("--net", gen_world_net, "network file")->required();
        sub->add_option("--out-dir", gen_world_dir, "output directory")->required();
        sub->callback([&, cc_gen_world] {
            RunConfig cfg = cc_gen_world->resolve();
            auto net = load_network(gen_world_net);
            World w = generate_world(net, cfg.world_recipe());
            fs::create_directories(gen_world_dir);
            auto at = [&](const char* name) { return (fs::path(gen_world_dir) / name).string(); };
            write_dataset(w.split.train, at("train.jsonl"));
            write_dataset(w.split.id_test, at("id_test.jsonl"));
            write_dataset(w.split.ood_test, at("ood_test.jsonl"));
            write_dataset(w.id_detour, at("id_detour.jsonl"));
            write_dataset(w.id_switch, at("id_switch.jsonl"));
            write_dataset(w.ood_detour, at("ood_detour.jsonl"));
            write_dataset(w.ood_switch, at("ood_switch.jsonl"));
            write_json(at("manifest.json"), world_manifest(cfg, gen_world_net, w));
            std::cerr << "gen-world: " << w.corpus.size() << " trajectories -> " << gen_world_dir
                      << " (config " << cfg.digest() << ")\n";
        });
    }

    // ---- inject -----------------------------------------------------------
    auto cc_inject = std::make_shared<CmdConfig>();
    std::string inject_net, inject_data, inject_pool, inject_out, inject_strategy;
    bool inject_strict = false;
    {
        auto* sub = app.add_subcommand("inject", "inject anomalies into a dataset");
        add_config_flag(sub, *cc_inject);
        sub->add_option("--net", inject_net, "network file")->required();
        sub->add_option("--dataset", inject_data, "source trajectories")->required();
        sub->add_option("--strategy", inject_strategy, "detour | switch")->required();
        sub->add_option("--pool", inject_pool, "switch candidate pool (default: the dataset)");
        sub->add_option("--out", inject_out, "output dataset")->required();
        sub->add_flag("--strict", inject_strict, "validate datasets against the network on load");
        add_key_option<double>(sub, *cc_inject, "--detour-band-lo", "detour_band_lo",
                               "minimum relative detour cost increase");
        add_key_option<double>(sub, *cc_inject, "--detour-band-hi", "detour_band_hi",
                               "maximum relative detour cost increase");
        add_key_option<double>(sub, *cc_inject, "--sim-threshold", "sim_threshold",
                               "maximum jaccard similarity of a switch target");
        add_key_option<uint64_t>(sub, *cc_inject, "--seed", "seed", "injection seed");
        sub->callback([&, cc_inject] {
            RunConfig cfg = cc_inject->resolve();
            auto net = load_network(inject_net);
            auto data = read_dataset(inject_data, inject_strict ? &net : nullptr);
            Dataset out;
            if (inject_strategy == "detour") {
                out = inject_detours(data, net, cfg.get<double>("detour_band_lo"),
                                     cfg.get<double>("detour_band_hi"),
                                     cfg.get<uint64_t>("seed"));
            } else if (inject_strategy == "switch") {
                Dataset pool = inject_pool.empty()
                                   ? data
                                   : read_dataset(inject_pool, inject_strict ? &net : nullptr);
                out = inject_switches(data, pool, cfg.get<double>("sim_threshold"),
                                      cfg.get<uint64_t>("seed"));
            } else {
                throw InputError("inject: unknown strategy \"" + inject_strategy + "\"");
            }
            write_dataset(out, inject_out);
            std::cerr << "inject: " << out.size() << "/" << data.size() << " anomalies -> "
                      << inject_out << "\n";
        });
    }

    // ---- split ------------------------------------------------------------
    auto cc_split = std::make_shared<CmdConfig>();
    std::string split_data, split_dir, split_net;
    bool split_strict = false;
    {
        auto* sub = app.add_subcommand("split", "split a dataset into train / id_test / ood_test");
        add_config_flag(sub, *cc_split);
        sub->add_option("--dataset", split_data, "input dataset")->required();
        sub->add_option("--out-dir", split_dir, "output directory")->required();
        sub->add_option("--net", split_net, "network file (required with --strict)");
        sub->add_flag("--strict", split_strict, "validate the dataset against the network");
        add_key_option<int>(sub, *cc_split, "--candidate-pairs", "candidate_pairs",
                            "pairs forming train/id_test");
        add_key_option<int>(sub, *cc_split, "--min-pair-count", "min_pair_count",
                            "trajectories a pair needs to qualify");
        add_key_option<int>(sub, *cc_split, "--ood-count", "ood_count",
                            "ood sample size (0 = match id)");
        add_key_option<uint64_t>(sub, *cc_split, "--seed", "seed", "split seed");
        sub->callback([&, cc_split] {
            RunConfig cfg = cc_split->resolve();
            RoadNetwork net;
            if (split_strict) {
                if (split_net.empty()) throw InputError("split: --strict requires --net");
                net = load_network(split_net);
            }
            auto data = read_dataset(split_data, split_strict ? &net : nullptr);
            auto res = split_dataset(data, cfg.get<int>("candidate_pairs"),
                                     cfg.get<uint64_t>("seed"), cfg.get<int>("min_pair_count"),
                                     cfg.get<int>("ood_count"));
            fs::create_directories(split_dir);
            auto at = [&](const char* name) { return (fs::path(split_dir) / name).string(); };
            write_dataset(res.train, at("train.jsonl"));
            write_dataset(res.id_test, at("id_test.jsonl"));
            write_dataset(res.ood_test, at("ood_test.jsonl"));
            json manifest = {{"config_digest", cfg.digest()},
                             {"counts",
                              {{"train", res.train.size()},
                               {"id_test", res.id_test.size()},
                               {"ood_test", res.ood_test.size()}}}};
            write_json(at("manifest.json"), manifest);
            std::cerr << "split: train " << res.train.size() << ", id " << res.id_test.size()
                      << ", ood " << res.ood_test.size() << " -> " << split_dir << "\n";
        });
    }

    // ---- train ------------------------------------------------------------
    auto cc_train = std::make_shared<CmdConfig>();
    std::string train_net, train_data, train_out, train_loss_out;
    bool train_quiet = false;
    {
        auto* sub = app.add_subcommand("train", "train the two-model bundle on a dataset");
        add_config_flag(sub, *cc_train);
        add_train_options(sub, *cc_train);
        add_key_option<uint64_t>(sub, *cc_train, "--seed", "seed", "training seed");
        sub->add_option("--net", train_net, "network file")->required();
        sub->add_option("--train", train_data, "training dataset")->required();
        sub->add_option("--out", train_out, "output bundle file")->required();
        sub->add_option("--loss-out", train_loss_out, "per-epoch loss curve (csv)");
        sub->add_flag("--quiet", train_quiet, "suppress per-epoch log lines");
        sub->callback([&, cc_train] {
            RunConfig cfg = cc_train->resolve();
            auto net = load_network(train_net);
            auto data = read_dataset(train_data);
            Hyper hyper = cfg.hyper();
            auto res = train(hyper, data, net, train_net, [&](int epoch, double loss) {
                if (!train_quiet) std::cerr << "epoch " << epoch << " loss " << loss << "\n";
            });
            for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
            if (res.skipped_invalid > 0)
                std::cerr << "warning: skipped " << res.skipped_invalid
                          << " invalid trajectories\n";
            res.bundle.config_digest = cfg.digest();
            save_bundle(res.bundle, train_out);
            if (!train_loss_out.empty()) {
                std::string csv = "epoch,loss\n";
                char buf[64];
                for (std::size_t e = 0; e < res.loss_curve.size(); ++e) {
                    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, res.loss_curve[e]);
                    csv += buf;
                }
                write_text(train_loss_out, csv);
            }
            std::cerr << "train: bundle -> " << train_out << " (config " << cfg.digest()
                      << ")\n";
        });
    }

    // ---- precompute -------------------------------------------------------
    auto cc_pre = std::make_shared<CmdConfig>();
    std::string pre_net, pre_bundle, pre_out, pre_bundle_out;
    {
        auto* sub = app.add_subcommand("precompute",
                                       "precompute the per-segment scaling-factor table");
        add_config_flag(sub, *cc_pre);
        add_key_option<int>(sub, *cc_pre, "--table-k", "table_k",
                            "Monte-Carlo samples per segment");
        add_key_option<uint64_t>(sub, *cc_pre, "--seed", "seed", "table seed");
        add_key_option<int>(sub, *cc_pre, "--jobs", "jobs", "worker threads");
        sub->add_option("--net", pre_net, "network file")->required();
        sub->add_option("--bundle", pre_bundle, "trained bundle")->required();
        sub->add_option("--out", pre_out, "output table file")->required();
        sub->add_option("--bundle-out", pre_bundle_out,
                        "write a copy of the bundle referencing the new table");
        sub->callback([&, cc_pre] {
            RunConfig cfg = cc_pre->resolve();
            auto net = load_network(pre_net);
            auto bundle = load_bundle(pre_bundle);
            int64_t clamps = 0;
            auto table = bundle.rp().build_scaling_table(
                bundle.store, net, cfg.get<int>("table_k"),
                derive_seed(cfg.get<uint64_t>("seed"), 0x7461626c), cfg.get<int>("jobs"),
                &clamps);
            save_scaling_table(table, pre_out);
            if (clamps > 0)
                std::cerr << "warning: clamped " << clamps
                          << " near-zero probabilities while sampling\n";
            if (!pre_bundle_out.empty()) {
                bundle.scaling_ref = pre_out;
                save_bundle(bundle, pre_bundle_out);
            }
            std::cerr << "precompute: table (K=" << table.K << ") -> " << pre_out << "\n";
        });
    }

    // ---- score ------------------------------------------------------------
    auto cc_score = std::make_shared<CmdConfig>();
    std::string score_net, score_bundle, score_data, score_table, score_out;
    {
        auto* sub = app.add_subcommand("score", "score trajectories with a trained bundle");
        add_config_flag(sub, *cc_score);
        add_key_option<double>(sub, *cc_score, "--lambda", "lambda", "scaling-factor weight");
        add_key_option<double>(sub, *cc_score, "--observed-ratio", "observed_ratio",
                               "score only the leading fraction of each trajectory");
        sub->add_option("--net", score_net, "network file")->required();
        sub->add_option("--bundle", score_bundle, "trained bundle")->required();
        sub->add_option("--dataset", score_data, "trajectories to score")->required();
        sub->add_option("--table", score_table, "scaling table (default: bundle reference)");
        sub->add_option("--out", score_out, "output scores (one record per line)")->required();
        sub->callback([&, cc_score] {
            RunConfig cfg = cc_score->resolve();
            auto net = load_network(score_net);
            auto bundle = load_bundle(score_bundle);
            const double lambda = cfg.get<double>("lambda");
            const double rho = cfg.get<double>("observed_ratio");
            if (rho <= 0.0 || rho > 1.0)
                throw InputError("score: observed_ratio must lie in (0, 1]");
            if (lambda != 0.0) {
                bundle.scaling = resolve_table(bundle, score_table);
            } else if (!score_table.empty()) {
                bundle.scaling = load_scaling_table(score_table);
            }
            auto data = read_dataset(score_data, &net);
            std::ofstream out(score_out);
            if (!out) throw InputError("cannot write: " + score_out);
            for (const auto& t : data.trajectories) {
                ScoreSession session(bundle, t.sd, lambda, net);
                int m = std::max(1, int(std::ceil(rho * double(t.length()))));
                for (int i = 0; i < m; ++i) session.push(t.path[std::size_t(i)]);
                json line = {{"score", session.score()},
                             {"label", label_name(t.label)},
                             {"terms",
                              {{"elbo", session.fixed_term() + session.likelihood_term()},
                               {"scaling", session.scaling_term()}}}};
                out << line.dump() << "\n";
            }
            std::cerr << "score: " << data.size() << " trajectories -> " << score_out << "\n";
        });
    }

    // ---- eval / sweep -----------------------------------------------------
    auto add_suite_command = [&](const char* name, const char* help, bool multi_seed) {
        auto cc = std::make_shared<CmdConfig>();
        auto out_dir = std::make_shared<std::string>();
        auto* sub = app.add_subcommand(name, help);
        add_config_flag(sub, *cc);
        add_grid_options(sub, *cc);
        add_world_options(sub, *cc);
        add_train_options(sub, *cc);
        add_key_option<int>(sub, *cc, "--table-k", "table_k", "Monte-Carlo samples per segment");
        if (multi_seed) {
            add_key_option<std::vector<uint64_t>>(sub, *cc, "--seeds", "seeds",
                                                  "replication seeds");
            add_key_option<int>(sub, *cc, "--jobs", "jobs", "parallel seed workers");
        } else {
            add_key_option<uint64_t>(sub, *cc, "--seed", "seed", "single replication seed");
        }
        sub->add_option("--out-dir", *out_dir, "report output directory")->required();
        sub->callback([cc, out_dir, multi_seed] {
            RunConfig cfg = cc->resolve();
            SuiteConfig suite = cfg.suite_config();
            if (!multi_seed) {
                suite.seeds = {cfg.get<uint64_t>("seed")};
                suite.jobs = 1;
            }
            ExperimentReport rep = run_suite(suite);
            fs::create_directories(*out_dir);
            write_json((fs::path(*out_dir) / "report.json").string(), rep.to_json());
            write_text((fs::path(*out_dir) / "curves.csv").string(), rep.curves_csv());
            std::cerr << (multi_seed ? "sweep" : "eval") << ": report -> " << *out_dir
                      << " (config " << cfg.digest() << ")\n";
        });
    };
    add_suite_command("eval", "run the experiment suite for one seed", false);
    add_suite_command("sweep", "run the seed-replicated experiment suite", true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
