#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "detrad/error.hpp"
#include "detrad/nn.hpp"
#include "detrad/rng.hpp"
#include "detrad/road_graph.hpp"
#include "detrad/tape.hpp"
#include "detrad/tg_vae.hpp"
#include "detrad/trajectory.hpp"

namespace detrad {

// Precomputed per-segment log E[1 / P(t_i | e_i)]; built once after training
// and read-only afterwards.
struct ScalingTable {
    int K = 0;
    uint64_t seed = 0;
    std::vector<double> log_factor;

    nlohmann::json to_json() const {
        return {{"K", K}, {"seed", seed}, {"log_factor", log_factor}};
    }
    static ScalingTable from_json(const nlohmann::json& j) {
        ScalingTable t;
        t.K = j.at("K").get<int>();
        t.seed = j.at("seed").get<uint64_t>();
        t.log_factor = j.at("log_factor").get<std::vector<double>>();
        return t;
    }
};

inline void save_scaling_table(const ScalingTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write scaling table: " + path);
    out << t.to_json().dump() << "\n";
}

inline ScalingTable load_scaling_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open scaling table: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("scaling table " + path + ": " + e.what());
    }
    return ScalingTable::from_json(j);
}

// Road-preference VAE: an independent per-segment autoencoder. The encoder
// posterior stands in for P(E_i | t_i) and the decoder for P(t_i | e_i);
// reconstruction is over the full vocabulary, no neighbor mask.
class RpVae {
  public:
    explicit RpVae(ModelConfig cfg) : cfg_(cfg) {
        if (cfg.vocab <= 0 || cfg.dim <= 0) throw InputError("RpVae: bad model config");
    }

    const ModelConfig& config() const { return cfg_; }

    // Probabilities are clamped below at this value before logs so that one
    // confidently wrong reconstruction cannot produce an infinite factor.
    static constexpr double kMinProb = 1e-12;

    void init_params(ParamStore& s, Rng& rng) const {
        const int V = cfg_.vocab, d = cfg_.dim;
        s.create_normal("rp.emb", {V, d}, 0.1, rng);
        s.create_fan_in("rp.enc.W1", {d, d}, d, rng);
        s.create("rp.enc.b1", {d});
        s.create_fan_in("rp.enc.Wmu", {d, d}, d, rng);
        s.create("rp.enc.bmu", {d});
        s.create_fan_in("rp.enc.Wsig", {d, d}, d, rng);
        s.create("rp.enc.bsig", {d});
        s.create_fan_in("rp.dec.W1", {d, d}, d, rng);
        s.create("rp.dec.b1", {d});
        s.create_fan_in("rp.dec.W2", {V, d}, d, rng);
        s.create("rp.dec.b2", {V});
    }

    GaussianPosterior encode_segment(const ParamStore& s, int seg) const {
        require_segment(seg);
        const int d = cfg_.dim;
        const double* emb = s.value("rp.emb").data.data() + std::size_t(seg) * d;
        std::vector<double> h1(std::size_t(d), 0.0);
        nn::affine(h1.data(), s.value("rp.enc.W1").data.data(), s.value("rp.enc.b1").data.data(),
                   emb, d, d);
        nn::tanh_vec(h1.data(), h1.data(), d);
        GaussianPosterior out;
        out.mu.resize(std::size_t(d));
        out.logsigma.resize(std::size_t(d));
        nn::affine(out.mu.data(), s.value("rp.enc.Wmu").data.data(),
                   s.value("rp.enc.bmu").data.data(), h1.data(), d, d);
        nn::affine(out.logsigma.data(), s.value("rp.enc.Wsig").data.data(),
                   s.value("rp.enc.bsig").data.data(), h1.data(), d, d);
        return out;
    }

    // Full-vocabulary logits from a latent sample.
    std::vector<double> decode_logits(const ParamStore& s, const std::vector<double>& e) const {
        const int d = cfg_.dim, V = cfg_.vocab;
        std::vector<double> h1(std::size_t(d), 0.0);
        nn::affine(h1.data(), s.value("rp.dec.W1").data.data(), s.value("rp.dec.b1").data.data(),
                   e.data(), d, d);
        nn::tanh_vec(h1.data(), h1.data(), d);
        std::vector<double> logits(std::size_t(V), 0.0);
        nn::affine(logits.data(), s.value("rp.dec.W2").data.data(),
                   s.value("rp.dec.b2").data.data(), h1.data(), V, d);
        return logits;
    }

    // sum_i [ H(t_hat_i, t_i) + KL(N(mu_i, sigma_i^2 I) || N(0, I)) ], each
    // segment processed independently. Reparameterization noise is keyed by
    // segment id, so the loss is additive under trajectory concatenation.
    ad::Var loss_l2(ad::Tape& tape, ParamStore& s, const Trajectory& t,
                    uint64_t noise_seed) const {
        using namespace ad;
        const int d = cfg_.dim;
        Var total = scalar(tape, 0.0);
        for (int seg : t.path) {
            require_segment(seg);
            Var emb = embedding_lookup(tape, s, "rp.emb", seg);
            Var h1 = tanh_op(affine(tape, s, "rp.enc.W1", "rp.enc.b1", emb));
            Var mu = affine(tape, s, "rp.enc.Wmu", "rp.enc.bmu", h1);
            Var ls = affine(tape, s, "rp.enc.Wsig", "rp.enc.bsig", h1);
            Array noise({d});
            {
                Rng rng(derive_seed(noise_seed, uint64_t(seg)));
                for (auto& x : noise.data) x = rng.normal();
            }
            Var e = gaussian_reparam(mu, ls, noise);
            Var h2 = tanh_op(affine(tape, s, "rp.dec.W1", "rp.dec.b1", e));
            Var nll = neg(pick(log_softmax(affine(tape, s, "rp.dec.W2", "rp.dec.b2", h2)), seg));
            total = add(total, add(nll, kl_std_normal(mu, ls)));
        }
        return total;
    }

    // Monte-Carlo estimate, in log space, of log E_{e ~ Q2(E|seg)} 1/P(seg|e):
    // logsumexp_k(-log P_k) - log K. Deterministic given seed.
    double log_scaling_factor(const ParamStore& s, int seg, int K, uint64_t seed,
                              int64_t* clamp_events = nullptr) const {
        if (K < 1) throw InputError("log_scaling_factor: K must be >= 1");
        require_segment(seg);
        GaussianPosterior post = encode_segment(s, seg);
        Rng rng(derive_seed(seed, 0x7363616c));
        const int d = cfg_.dim;
        std::vector<double> e(std::size_t(d), 0.0);
        std::vector<double> ell(std::size_t(K), 0.0);
        const double min_logp = std::log(kMinProb);
        for (int k = 0; k < K; ++k) {
            for (int i = 0; i < d; ++i)
                e[std::size_t(i)] =
                    post.mu[std::size_t(i)] + std::exp(post.logsigma[std::size_t(i)]) * rng.normal();
            std::vector<double> logits = decode_logits(s, e);
            double lp = logits[std::size_t(seg)] - nn::logsumexp(logits.data(), cfg_.vocab);
            if (lp < min_logp) {
                lp = min_logp;
                if (clamp_events) ++*clamp_events;
            }
            ell[std::size_t(k)] = -lp;
        }
        return nn::logsumexp(ell.data(), K) - std::log(double(K));
    }

    // One factor per segment, each from its own derived seed stream, so the
    // build parallelizes without changing the result.
    ScalingTable build_scaling_table(const ParamStore& s, const RoadNetwork& net, int K,
                                     uint64_t seed, int n_threads = 1,
                                     int64_t* clamp_events = nullptr) const {
        if (net.segment_count() != cfg_.vocab)
            throw InputError("build_scaling_table: network/vocabulary mismatch");
        ScalingTable table;
        table.K = K;
        table.seed = seed;
        table.log_factor.assign(std::size_t(cfg_.vocab), 0.0);
        std::atomic<int64_t> clamps{0};
        auto work = [&](int begin, int end) {
            int64_t local_clamps = 0;
            for (int seg = begin; seg < end; ++seg)
                table.log_factor[std::size_t(seg)] =
                    log_scaling_factor(s, seg, K, derive_seed(seed, uint64_t(seg)), &local_clamps);
            clamps += local_clamps;
        };
        n_threads = std::max(1, std::min(n_threads, cfg_.vocab));
        if (n_threads == 1) {
            work(0, cfg_.vocab);
        } else {
            std::vector<std::thread> pool;
            int chunk = (cfg_.vocab + n_threads - 1) / n_threads;
            for (int t = 0; t < n_threads; ++t)
                pool.emplace_back(work, t * chunk, std::min(cfg_.vocab, (t + 1) * chunk));
            for (auto& th : pool) th.join();
        }
        if (clamp_events) *clamp_events = clamps.load();
        return table;
    }

  private:
    ModelConfig cfg_;

    void require_segment(int seg) const {
        if (seg < 0 || seg >= cfg_.vocab)
            throw InputError("RpVae: segment id " + std::to_string(seg) +
                             " outside vocabulary of " + std::to_string(cfg_.vocab));
    }
};

}  // namespace detrad
