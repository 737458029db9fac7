#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "detrad/error.hpp"
#include "detrad/nn.hpp"
#include "detrad/rng.hpp"
#include "detrad/road_graph.hpp"
#include "detrad/tape.hpp"
#include "detrad/trajectory.hpp"

namespace detrad {

struct ModelConfig {
    int vocab = 0;  // road-segment vocabulary = network segment count
    int dim = 128;  // hidden dimension
};

struct GaussianPosterior {
    std::vector<double> mu;
    std::vector<double> logsigma;
};

// Trajectory-generation VAE: SD encoder, SD decoder, and a road-constrained
// recurrent trajectory decoder. The posterior is a function of the SD pair
// only, never of the trajectory; that is what makes constant-time online
// updates possible.
class TgVae {
  public:
    explicit TgVae(ModelConfig cfg) : cfg_(cfg) {
        if (cfg.vocab <= 0 || cfg.dim <= 0) throw InputError("TgVae: bad model config");
    }

    const ModelConfig& config() const { return cfg_; }

    void init_params(ParamStore& s, Rng& rng) const {
        const int V = cfg_.vocab, d = cfg_.dim;
        s.create_normal("tg.emb_c", {V, d}, 0.1, rng);
        s.create_normal("tg.emb_r", {V, d}, 0.1, rng);
        s.create_fan_in("tg.enc.W1", {d, 2 * d}, 2 * d, rng);
        s.create("tg.enc.b1", {d});
        s.create_fan_in("tg.enc.Wmu", {d, d}, d, rng);
        s.create("tg.enc.bmu", {d});
        s.create_fan_in("tg.enc.Wsig", {d, d}, d, rng);
        s.create("tg.enc.bsig", {d});
        s.create_fan_in("tg.dec_sd.W1", {d, d}, d, rng);
        s.create("tg.dec_sd.b1", {d});
        s.create_fan_in("tg.dec_sd.Ws", {V, d}, d, rng);
        s.create("tg.dec_sd.bs", {V});
        s.create_fan_in("tg.dec_sd.Wd", {V, d}, d, rng);
        s.create("tg.dec_sd.bd", {V});
        for (const char* gate : {"z", "r", "h"}) {
            s.create_fan_in("tg.gru.W" + std::string(gate), {d, 2 * d}, 2 * d, rng);
            s.create("tg.gru.b" + std::string(gate), {d});
        }
        s.create_fan_in("tg.head.W", {V, d}, d, rng);
        s.create("tg.head.b", {V});
    }

    // -----------------------------------------------------------------------
    // Plain inference path
    // -----------------------------------------------------------------------

    // Raw parameter views; bind once, then every forward is allocation-free
    // except for explicit scratch.
    struct Fwd {
        int V = 0, d = 0;
        const double *emb_c, *emb_r;
        const double *encW1, *encb1, *encWmu, *encbmu, *encWsig, *encbsig;
        const double *sdW1, *sdb1, *sdWs, *sdbs, *sdWd, *sdbd;
        const double *Wz, *bz, *Wr, *br, *Wh, *bh;
        const double *headW, *headb;
    };

    Fwd bind(const ParamStore& s) const {
        Fwd f;
        f.V = cfg_.vocab;
        f.d = cfg_.dim;
        auto p = [&s](const char* n) { return s.value(n).data.data(); };
        f.emb_c = p("tg.emb_c");
        f.emb_r = p("tg.emb_r");
        f.encW1 = p("tg.enc.W1");
        f.encb1 = p("tg.enc.b1");
        f.encWmu = p("tg.enc.Wmu");
        f.encbmu = p("tg.enc.bmu");
        f.encWsig = p("tg.enc.Wsig");
        f.encbsig = p("tg.enc.bsig");
        f.sdW1 = p("tg.dec_sd.W1");
        f.sdb1 = p("tg.dec_sd.b1");
        f.sdWs = p("tg.dec_sd.Ws");
        f.sdbs = p("tg.dec_sd.bs");
        f.sdWd = p("tg.dec_sd.Wd");
        f.sdbd = p("tg.dec_sd.bd");
        f.Wz = p("tg.gru.Wz");
        f.bz = p("tg.gru.bz");
        f.Wr = p("tg.gru.Wr");
        f.br = p("tg.gru.br");
        f.Wh = p("tg.gru.Wh");
        f.bh = p("tg.gru.bh");
        f.headW = p("tg.head.W");
        f.headb = p("tg.head.b");
        return f;
    }

    // Scratch buffers for one decoding stream.
    struct Scratch {
        std::vector<double> xh, xrh, z, r, hc, hidden, logits;
        explicit Scratch(const ModelConfig& cfg)
            : xh(std::size_t(2 * cfg.dim)),
              xrh(std::size_t(2 * cfg.dim)),
              z(std::size_t(cfg.dim)),
              r(std::size_t(cfg.dim)),
              hc(std::size_t(cfg.dim)),
              hidden(std::size_t(cfg.dim)),
              logits(std::size_t(cfg.vocab)) {}
    };

    static void encode_sd_fwd(const Fwd& f, SdPair c, GaussianPosterior& out) {
        std::vector<double> cat(std::size_t(2 * f.d));
        std::copy(f.emb_c + std::size_t(c.source) * f.d, f.emb_c + std::size_t(c.source + 1) * f.d,
                  cat.begin());
        std::copy(f.emb_c + std::size_t(c.destination) * f.d,
                  f.emb_c + std::size_t(c.destination + 1) * f.d, cat.begin() + f.d);
        std::vector<double> h1(std::size_t(f.d));
        nn::affine(h1.data(), f.encW1, f.encb1, cat.data(), f.d, 2 * f.d);
        nn::tanh_vec(h1.data(), h1.data(), f.d);
        out.mu.resize(std::size_t(f.d));
        out.logsigma.resize(std::size_t(f.d));
        nn::affine(out.mu.data(), f.encWmu, f.encbmu, h1.data(), f.d, f.d);
        nn::affine(out.logsigma.data(), f.encWsig, f.encbsig, h1.data(), f.d, f.d);
    }

    GaussianPosterior encode_sd(const ParamStore& s, SdPair c) const {
        require_segment(c.source);
        require_segment(c.destination);
        GaussianPosterior out;
        encode_sd_fwd(bind(s), c, out);
        return out;
    }

    // Unmasked source/destination logit vectors from a latent.
    std::pair<std::vector<double>, std::vector<double>> decode_sd(const ParamStore& s,
                                                                  const std::vector<double>& r)
        const {
        const Fwd f = bind(s);
        std::vector<double> h1(std::size_t(f.d));
        nn::affine(h1.data(), f.sdW1, f.sdb1, r.data(), f.d, f.d);
        nn::tanh_vec(h1.data(), h1.data(), f.d);
        std::vector<double> slog(std::size_t(f.V)), dlog(std::size_t(f.V));
        nn::affine(slog.data(), f.sdWs, f.sdbs, h1.data(), f.V, f.d);
        nn::affine(dlog.data(), f.sdWd, f.sdbd, h1.data(), f.V, f.d);
        return {std::move(slog), std::move(dlog)};
    }

    // One GRU advance; matches the tape composition bit for bit.
    static void gru_fwd(const Fwd& f, const double* x, double* h, Scratch& sc) {
        const int d = f.d;
        std::copy(x, x + d, sc.xh.begin());
        std::copy(h, h + d, sc.xh.begin() + d);
        nn::affine(sc.z.data(), f.Wz, f.bz, sc.xh.data(), d, 2 * d);
        nn::sigmoid_vec(sc.z.data(), sc.z.data(), d);
        nn::affine(sc.r.data(), f.Wr, f.br, sc.xh.data(), d, 2 * d);
        nn::sigmoid_vec(sc.r.data(), sc.r.data(), d);
        std::copy(x, x + d, sc.xrh.begin());
        for (int i = 0; i < d; ++i) sc.xrh[std::size_t(d + i)] = sc.r[std::size_t(i)] * h[i];
        nn::affine(sc.hc.data(), f.Wh, f.bh, sc.xrh.data(), d, 2 * d);
        nn::tanh_vec(sc.hc.data(), sc.hc.data(), d);
        for (int i = 0; i < d; ++i) {
            double zi = sc.z[std::size_t(i)];
            h[i] = (h[i] - zi * h[i]) + zi * sc.hc[std::size_t(i)];
        }
    }

    // Negative log-prob of `target` among `allowed` under the projection head
    // applied to hidden state h.
    static double step_nll(const Fwd& f, const double* h, const std::vector<int>& allowed,
                           int target, Scratch& sc) {
        nn::affine_rows(sc.logits.data(), f.headW, f.headb, h, allowed.data(),
                        int(allowed.size()), f.d);
        int pos = -1;
        for (std::size_t k = 0; k < allowed.size(); ++k)
            if (allowed[k] == target) pos = int(k);
        if (pos < 0) return std::numeric_limits<double>::quiet_NaN();
        double lse = nn::logsumexp(sc.logits.data(), int(allowed.size()));
        return lse - sc.logits[std::size_t(pos)];
    }

    // Teacher-forced per-step log-probabilities log P(t_j | .). Step 1 is
    // predicted over the full vocabulary, later steps over the neighbors of
    // the previous segment.
    std::vector<double> decode_traj(const ParamStore& s, const std::vector<double>& r,
                                    const Trajectory& t, const RoadNetwork& net) const {
        const Fwd f = bind(s);
        Scratch sc(cfg_);
        if (int(r.size()) != cfg_.dim) throw InputError("decode_traj: latent size mismatch");
        std::copy(r.begin(), r.end(), sc.hidden.begin());
        std::vector<double> out;
        out.reserve(t.path.size());
        std::vector<int> all(std::size_t(cfg_.vocab));
        std::iota(all.begin(), all.end(), 0);
        for (std::size_t j = 0; j < t.path.size(); ++j) {
            const std::vector<int>& allowed = j == 0 ? all : neighbors(net, t.path[j - 1]);
            double nll = step_nll(f, sc.hidden.data(), allowed, t.path[j], sc);
            if (std::isnan(nll))
                throw StateError("decode_traj: segment " + std::to_string(t.path[j]) +
                                 " not reachable from " + std::to_string(t.path[j - 1]) +
                                 " at step " + std::to_string(j + 1));
            out.push_back(-nll);
            if (j + 1 < t.path.size()) {
                const double* x = f.emb_r + std::size_t(t.path[j]) * f.d;
                gru_fwd(f, x, sc.hidden.data(), sc);
            }
        }
        return out;
    }

    struct SdTerms {
        double h_source = 0.0;
        double h_dest = 0.0;
        double kl = 0.0;
    };

    // Cross-entropies of the SD decoder at r = mu plus the posterior KL; the
    // prefix-independent part of every score.
    SdTerms sd_terms(const ParamStore& s, SdPair c, const GaussianPosterior& post) const {
        auto [slog, dlog] = decode_sd(s, post.mu);
        SdTerms out;
        out.h_source = nn::logsumexp(slog.data(), cfg_.vocab) - slog[std::size_t(c.source)];
        out.h_dest = nn::logsumexp(dlog.data(), cfg_.vocab) - dlog[std::size_t(c.destination)];
        out.kl = kl_value(post);
        return out;
    }

    static double kl_value(const GaussianPosterior& post) {
        double acc = 0.0;
        for (std::size_t i = 0; i < post.mu.size(); ++i) {
            double m = post.mu[i], ls = post.logsigma[i];
            acc += m * m + std::exp(2.0 * ls) - 2.0 * ls - 1.0;
        }
        return 0.5 * acc;
    }

    struct ElboMode {
        enum class Kind { Mean, Sample };
        Kind kind = Kind::Mean;
        int k = 1;
        uint64_t seed = 0;
        static ElboMode mean() { return ElboMode{}; }
        static ElboMode sample(int k, uint64_t seed) { return ElboMode{Kind::Sample, k, seed}; }
    };

    // Negative ELBO estimate of -log P(c, t). Mean mode scores at r = mu and
    // is deterministic; sample mode averages k reparameterized draws.
    double neg_elbo(const ParamStore& s, SdPair c, const Trajectory& t, const RoadNetwork& net,
                    const ElboMode& mode = ElboMode::mean()) const {
        if (mode.kind == ElboMode::Kind::Sample && mode.k < 1)
            throw InputError("neg_elbo: sample count must be >= 1");
        GaussianPosterior post = encode_sd(s, c);
        if (mode.kind == ElboMode::Kind::Mean) return neg_elbo_at(s, c, t, net, post, post.mu);
        double acc = 0.0;
        for (int k = 0; k < mode.k; ++k) {
            Rng rng(derive_seed(mode.seed, std::size_t(k)));
            std::vector<double> r(post.mu.size());
            for (std::size_t i = 0; i < r.size(); ++i)
                r[i] = post.mu[i] + std::exp(post.logsigma[i]) * rng.normal();
            acc += neg_elbo_at(s, c, t, net, post, r);
        }
        return acc / double(mode.k);
    }

    // -----------------------------------------------------------------------
    // Training path
    // -----------------------------------------------------------------------

    struct LossBreakdown {
        double h_source = 0.0;
        double h_dest = 0.0;
        double h_traj = 0.0;
        double kl = 0.0;
        double total = 0.0;
    };

    // Single-sample reparameterized estimate of
    //   H(s_hat, s) + H(d_hat, d) + sum_j H(t_hat_j, t_j) + KL(q || N(0, I)).
    ad::Var loss_l1(ad::Tape& tape, ParamStore& s, SdPair c, const Trajectory& t,
                    const RoadNetwork& net, uint64_t noise_seed,
                    LossBreakdown* breakdown = nullptr,
                    const Array* noise_override = nullptr) const {
        require_segment(c.source);
        require_segment(c.destination);
        const int d = cfg_.dim;
        using namespace ad;
        Var cat = concat(embedding_lookup(tape, s, "tg.emb_c", c.source),
                         embedding_lookup(tape, s, "tg.emb_c", c.destination));
        Var h1 = tanh_op(affine(tape, s, "tg.enc.W1", "tg.enc.b1", cat));
        Var mu = affine(tape, s, "tg.enc.Wmu", "tg.enc.bmu", h1);
        Var ls = affine(tape, s, "tg.enc.Wsig", "tg.enc.bsig", h1);
        Array noise({d});
        if (noise_override) {
            noise = *noise_override;
        } else {
            Rng rng(noise_seed);
            for (auto& x : noise.data) x = rng.normal();
        }
        Var r = gaussian_reparam(mu, ls, noise);

        Var h2 = tanh_op(affine(tape, s, "tg.dec_sd.W1", "tg.dec_sd.b1", r));
        Var h_s = neg(pick(log_softmax(affine(tape, s, "tg.dec_sd.Ws", "tg.dec_sd.bs", h2)),
                           c.source));
        Var h_d = neg(pick(log_softmax(affine(tape, s, "tg.dec_sd.Wd", "tg.dec_sd.bd", h2)),
                           c.destination));
        Var acc = add(h_s, h_d);

        std::vector<int> all(std::size_t(cfg_.vocab));
        std::iota(all.begin(), all.end(), 0);
        Var hidden = r;
        double h_traj_val = 0.0;
        for (std::size_t j = 0; j < t.path.size(); ++j) {
            const std::vector<int>& allowed = j == 0 ? all : neighbors(net, t.path[j - 1]);
            int pos = -1;
            for (std::size_t k = 0; k < allowed.size(); ++k)
                if (allowed[k] == t.path[j]) pos = int(k);
            if (pos < 0)
                throw StateError("loss_l1: segment " + std::to_string(t.path[j]) +
                                 " not reachable from " + std::to_string(t.path[j - 1]) +
                                 " at step " + std::to_string(j + 1));
            Var logits = affine_rows(tape, s, "tg.head.W", "tg.head.b", hidden, allowed);
            Var nll = neg(pick(log_softmax(logits), pos));
            h_traj_val += nll.val()[0];
            acc = add(acc, nll);
            if (j + 1 < t.path.size())
                hidden = gru_cell(tape, s, "tg.gru",
                                  hidden, embedding_lookup(tape, s, "tg.emb_r", t.path[j]));
        }
        Var kl = kl_std_normal(mu, ls);
        Var total = add(acc, kl);
        if (breakdown) {
            breakdown->h_source = h_s.val()[0];
            breakdown->h_dest = h_d.val()[0];
            breakdown->h_traj = h_traj_val;
            breakdown->kl = kl.val()[0];
            breakdown->total = total.val()[0];
        }
        return total;
    }

  private:
    ModelConfig cfg_;

    void require_segment(int seg) const {
        if (seg < 0 || seg >= cfg_.vocab)
            throw InputError("TgVae: segment id " + std::to_string(seg) +
                             " outside vocabulary of " + std::to_string(cfg_.vocab));
    }

    double neg_elbo_at(const ParamStore& s, SdPair c, const Trajectory& t, const RoadNetwork& net,
                       const GaussianPosterior& post, const std::vector<double>& r) const {
        auto [slog, dlog] = decode_sd(s, r);
        double h_s = nn::logsumexp(slog.data(), cfg_.vocab) - slog[std::size_t(c.source)];
        double h_d = nn::logsumexp(dlog.data(), cfg_.vocab) - dlog[std::size_t(c.destination)];
        double acc = h_s + h_d;
        for (double lp : decode_traj(s, r, t, net)) acc = acc + (-lp);
        return acc + kl_value(post);
    }
};

}  // namespace detrad
