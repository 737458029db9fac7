#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "detrad/error.hpp"
#include "detrad/rng.hpp"
#include "detrad/road_graph.hpp"
#include "detrad/rp_vae.hpp"
#include "detrad/tape.hpp"
#include "detrad/tg_vae.hpp"
#include "detrad/trajectory.hpp"

namespace detrad {

struct Hyper {
    int dim = 128;
    int epochs = 200;
    double lr = 0.01;
    double lambda = 0.1;
    int batch = 1;   // trajectories per Adam step (gradients accumulate)
    uint64_t seed = 1;
};

// Everything learned plus the knobs that produced it.
struct ModelBundle {
    ModelConfig cfg;
    Hyper hyper;
    ParamStore store;
    std::optional<ScalingTable> scaling;
    std::string scaling_ref;  // path recorded in the bundle document
    std::string network_ref;
    std::string config_digest;

    TgVae tg() const { return TgVae(cfg); }
    RpVae rp() const { return RpVae(cfg); }
};

inline nlohmann::json bundle_to_json(const ModelBundle& b) {
    nlohmann::json j = b.store.to_json();
    j["vocab"] = b.cfg.vocab;
    j["hyper"] = {{"d", b.hyper.dim},
                  {"epochs", b.hyper.epochs},
                  {"lr", b.hyper.lr},
                  {"lambda", b.hyper.lambda},
                  {"batch", b.hyper.batch},
                  {"seed", b.hyper.seed}};
    j["network_ref"] = b.network_ref;
    j["scaling_ref"] = b.scaling_ref;
    j["config_digest"] = b.config_digest;
    return j;
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
    ModelBundle b;
    b.store = ParamStore::from_json(j);
    b.cfg.vocab = j.at("vocab").get<int>();
    const auto& h = j.at("hyper");
    b.hyper.dim = h.at("d").get<int>();
    b.hyper.epochs = h.at("epochs").get<int>();
    b.hyper.lr = h.at("lr").get<double>();
    b.hyper.lambda = h.at("lambda").get<double>();
    b.hyper.batch = h.value("batch", 1);
    b.hyper.seed = h.at("seed").get<uint64_t>();
    b.cfg.dim = b.hyper.dim;
    b.network_ref = j.value("network_ref", "");
    b.scaling_ref = j.value("scaling_ref", "");
    b.config_digest = j.value("config_digest", "");
    return b;
}

inline void save_bundle(const ModelBundle& b, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write bundle: " + path);
    out << bundle_to_json(b).dump() << "\n";
}

inline ModelBundle load_bundle(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open bundle: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("bundle " + path + ": " + e.what());
    }
    return bundle_from_json(j);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

constexpr double kGradClipNorm = 5.0;

struct TrainResult {
    ModelBundle bundle;
    std::vector<double> loss_curve;  // per-epoch mean joint loss
    int skipped_invalid = 0;
    std::vector<std::string> warnings;
};

// Joint Adam minimization of sum_i L1(c_i, t_i) + L2(t_i) with seeded
// shuffling; bit-reproducible for a fixed (hyper, dataset, network).
inline TrainResult train(const Hyper& hyper, const Dataset& data, const RoadNetwork& net,
                         const std::string& network_ref = "",
                         const std::function<void(int, double)>& on_epoch = {}) {
    TrainResult res;
    ModelBundle& b = res.bundle;
    b.cfg = {net.segment_count(), hyper.dim};
    b.hyper = hyper;
    b.network_ref = network_ref;

    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        auto viol = validate(data.trajectories[i], net);
        if (viol.empty()) {
            usable.push_back(i);
        } else {
            ++res.skipped_invalid;
            if (res.warnings.size() < 20)
                res.warnings.push_back("skipping trajectory " + std::to_string(i) + ": " +
                                       viol.front().message);
        }
    }
    if (usable.empty()) throw InputError("train: no valid trajectories in training set");

    TgVae tg(b.cfg);
    RpVae rp(b.cfg);
    Rng init_rng(derive_seed(hyper.seed, 0x696e6974));
    tg.init_params(b.store, init_rng);
    rp.init_params(b.store, init_rng);

    const int batch = std::max(1, hyper.batch);
    ad::Tape tape;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::vector<std::size_t> order = usable;
        Rng shuffle_rng(derive_seed(hyper.seed, 0x73687566, uint64_t(epoch)));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int in_batch = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const std::size_t i = order[pos];
            const Trajectory& t = data.trajectories[i];
            tape.clear();
            ad::Var l1 = tg.loss_l1(tape, b.store, t.sd, t, net,
                                    derive_seed(hyper.seed, uint64_t(epoch) * 0x10001 + i, 1));
            ad::Var l2 = rp.loss_l2(tape, b.store, t,
                                    derive_seed(hyper.seed, uint64_t(epoch) * 0x10001 + i, 2));
            ad::Var loss = ad::add(l1, l2);
            loss_sum += loss.val()[0];
            tape.backward(loss);
            if (++in_batch == batch || pos + 1 == order.size()) {
                if (in_batch > 1) b.store.scale_gradients(1.0 / double(in_batch));
                b.store.clip_gradients(kGradClipNorm);
                b.store.adam_step(hyper.lr);
                in_batch = 0;
            }
        }
        res.loss_curve.push_back(loss_sum / double(order.size()));
        if (on_epoch) on_epoch(epoch, res.loss_curve.back());
    }
    return res;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

struct ScoreTerms {
    double neg_elbo = 0.0;     // mean-mode -ELBO of log P(c, t)
    double scaling_sum = 0.0;  // sum_i log_factor[t_i]
    double score(double lambda) const { return neg_elbo - lambda * scaling_sum; }
};

inline ScoreTerms score_terms(const ModelBundle& b, SdPair c, const Trajectory& t,
                              const RoadNetwork& net, bool need_scaling) {
    ScoreTerms out;
    out.neg_elbo = b.tg().neg_elbo(b.store, c, t, net, TgVae::ElboMode::mean());
    if (need_scaling) {
        if (!b.scaling) throw StateError("score: scaling table missing but lambda > 0");
        for (int seg : t.path) out.scaling_sum += b.scaling->log_factor[std::size_t(seg)];
    } else if (b.scaling) {
        for (int seg : t.path) out.scaling_sum += b.scaling->log_factor[std::size_t(seg)];
    }
    return out;
}

// Debiased anomaly score: -log P(c,t) - lambda * sum_i log E[1/P(t_i|e_i)].
// Higher means more anomalous.
inline double score_full(const ModelBundle& b, SdPair c, const Trajectory& t, double lambda,
                         const RoadNetwork& net) {
    return score_terms(b, c, t, net, lambda != 0.0).score(lambda);
}

// Online scoring state for one ongoing trajectory. Work per push is constant
// in the history length: one masked head evaluation, one GRU advance, one
// table lookup.
class ScoreSession {
  public:
    ScoreSession(const ModelBundle& b, SdPair c, double lambda, const RoadNetwork& net)
        : net_(&net),
          lambda_(lambda),
          cfg_(b.cfg),
          fwd_(b.tg().bind(b.store)),
          scratch_(b.cfg),
          all_(std::size_t(b.cfg.vocab)) {
        if (lambda_ != 0.0 && !b.scaling)
            throw StateError("ScoreSession: scaling table missing but lambda > 0");
        table_ = b.scaling ? &*b.scaling : nullptr;
        std::iota(all_.begin(), all_.end(), 0);
        TgVae tg = b.tg();
        GaussianPosterior post = tg.encode_sd(b.store, c);
        TgVae::SdTerms sd = tg.sd_terms(b.store, c, post);
        fixed_ = sd.h_source + sd.h_dest + sd.kl;
        std::copy(post.mu.begin(), post.mu.end(), scratch_.hidden.begin());
    }

    // Scores `seg`, advances the recurrent state, and returns the running
    // score. Pushing past the destination is allowed.
    double push(int seg) {
        if (seg < 0 || seg >= cfg_.vocab)
            throw InputError("push_segment: invalid segment id " + std::to_string(seg));
        const std::vector<int>& allowed = steps_ == 0 ? all_ : neighbors(*net_, last_);
        double nll = TgVae::step_nll(fwd_, scratch_.hidden.data(), allowed, seg, scratch_);
        if (std::isnan(nll))
            throw InputError("push_segment: segment " + std::to_string(seg) +
                             " is not adjacent to " + std::to_string(last_));
        like_acc_ += nll;
        const double* x = fwd_.emb_r + std::size_t(seg) * fwd_.d;
        TgVae::gru_fwd(fwd_, x, scratch_.hidden.data(), scratch_);
        if (table_) scale_acc_ += table_->log_factor[std::size_t(seg)];
        last_ = seg;
        ++steps_;
        return score();
    }

    double score() const { return fixed_ + like_acc_ - lambda_ * scale_acc_; }
    double fixed_term() const { return fixed_; }
    double likelihood_term() const { return like_acc_; }
    double scaling_term() const { return scale_acc_; }
    int steps() const { return steps_; }

  private:
    const RoadNetwork* net_;
    const ScalingTable* table_ = nullptr;
    double lambda_;
    ModelConfig cfg_;
    TgVae::Fwd fwd_;
    TgVae::Scratch scratch_;
    std::vector<int> all_;
    double fixed_ = 0.0;
    double like_acc_ = 0.0;
    double scale_acc_ = 0.0;
    int last_ = -1;
    int steps_ = 0;
};

inline ScoreSession open_session(const ModelBundle& b, SdPair c, double lambda,
                                 const RoadNetwork& net) {
    return ScoreSession(b, c, lambda, net);
}

}  // namespace detrad
