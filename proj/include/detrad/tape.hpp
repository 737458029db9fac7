#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "detrad/array.hpp"
#include "detrad/error.hpp"
#include "detrad/nn.hpp"
#include "detrad/param_store.hpp"

namespace detrad::ad {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    const Array& val() const;
};

// Reverse-mode tape: records one forward pass, then replays it backwards.
// Parameter gradients accumulate into the bound ParamStore; node gradients
// are scratch that is reset on every backward().
class Tape {
  public:
    Var emit(Array val, const char* who) {
        val.check_finite(who);
        nodes_.push_back(Node{std::move(val), Array{}, {}});
        return Var{this, int(nodes_.size()) - 1};
    }

    void set_back(Var v, std::function<void(Tape&)> fn) {
        nodes_[std::size_t(v.id)].back = std::move(fn);
    }

    const Array& val(int id) const { return nodes_[std::size_t(id)].val; }

    // Gradient buffer of a node, allocated on first touch.
    Array& grad(int id) {
        Node& n = nodes_[std::size_t(id)];
        if (n.grad.data.empty()) n.grad = Array(n.val.shape);
        return n.grad;
    }

    void backward(Var loss) {
        if (loss.tape != this || loss.id < 0 || std::size_t(loss.id) >= nodes_.size())
            throw StateError("backward: loss was not produced on this tape");
        if (nodes_[std::size_t(loss.id)].val.size() != 1)
            throw StateError("backward: loss is not a scalar");
        for (auto& n : nodes_)
            if (!n.grad.data.empty()) n.grad.fill(0.0);
        grad(loss.id)[0] = 1.0;
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[std::size_t(i)].back) nodes_[std::size_t(i)].back(*this);
    }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Array val;
        Array grad;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
};

inline const Array& Var::val() const { return tape->val(id); }

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* who) {
    if (!a.val().same_shape(b.val()))
        throw InputError(std::string(who) + ": shape mismatch " + shape_str(a.val().shape) +
                         " vs " + shape_str(b.val().shape));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Leaves
// ---------------------------------------------------------------------------

inline Var constant(Tape& t, Array a) { return t.emit(std::move(a), "constant"); }

inline Var scalar(Tape& t, double v) { return t.emit(Array({1}, {v}), "scalar"); }

// Full parameter array as a leaf; gradients flow into the store accumulator.
inline Var param(Tape& t, ParamStore& store, const std::string& name) {
    Var out = t.emit(store.value(name), "param");
    ParamStore* s = &store;
    t.set_back(out, [s, name, io = out.id](Tape& tp) {
        Array& acc = s->grad(name);
        const Array& g = tp.grad(io);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    });
    return out;
}

// One row of an embedding table [vocab, dim].
inline Var embedding_lookup(Tape& t, ParamStore& store, const std::string& table, int row) {
    const Array& tab = store.value(table);
    if (tab.shape.size() != 2) throw InputError("embedding_lookup: table " + table + " is not 2-d");
    int vocab = tab.shape[0], dim = tab.shape[1];
    if (row < 0 || row >= vocab)
        throw InputError("embedding_lookup: row " + std::to_string(row) + " out of range for " +
                         table + " " + shape_str(tab.shape));
    Array out({dim});
    const double* src = tab.data.data() + std::size_t(row) * dim;
    std::copy(src, src + dim, out.data.begin());
    Var v = t.emit(std::move(out), "embedding_lookup");
    ParamStore* s = &store;
    t.set_back(v, [s, table, row, dim, io = v.id](Tape& tp) {
        double* acc = s->grad(table).data.data() + std::size_t(row) * dim;
        const Array& g = tp.grad(io);
        for (int i = 0; i < dim; ++i) acc[i] += g[i];
    });
    return v;
}

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    detail::require_same_shape(a, b, "add");
    Array out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.val()[i];
    Var r = a.tape->emit(std::move(out), "add");
    a.tape->set_back(r, [ia = a.id, ib = b.id, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        Array& ga = tp.grad(ia);
        Array& gb = tp.grad(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
    return r;
}

inline Var sub(Var a, Var b) {
    detail::require_same_shape(a, b, "sub");
    Array out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.val()[i];
    Var r = a.tape->emit(std::move(out), "sub");
    a.tape->set_back(r, [ia = a.id, ib = b.id, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        Array& ga = tp.grad(ia);
        Array& gb = tp.grad(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
    return r;
}

inline Var mul(Var a, Var b) {
    detail::require_same_shape(a, b, "mul");
    Array out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
    Var r = a.tape->emit(std::move(out), "mul");
    a.tape->set_back(r, [ia = a.id, ib = b.id, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        const Array& av = tp.val(ia);
        const Array& bv = tp.val(ib);
        Array& ga = tp.grad(ia);
        Array& gb = tp.grad(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    });
    return r;
}

inline Var scale(Var a, double c) {
    Array out = a.val();
    for (auto& x : out.data) x *= c;
    Var r = a.tape->emit(std::move(out), "scale");
    a.tape->set_back(r, [ia = a.id, c, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        Array& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
    return r;
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var concat(Var a, Var b) {
    Array out({int(a.val().size() + b.val().size())});
    std::copy(a.val().data.begin(), a.val().data.end(), out.data.begin());
    std::copy(b.val().data.begin(), b.val().data.end(), out.data.begin() + a.val().size());
    Var r = a.tape->emit(std::move(out), "concat");
    a.tape->set_back(r, [ia = a.id, ib = b.id, na = a.val().size(), io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        Array& ga = tp.grad(ia);
        Array& gb = tp.grad(ib);
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    });
    return r;
}

inline Var pick(Var a, int idx) {
    if (idx < 0 || std::size_t(idx) >= a.val().size())
        throw InputError("pick: index " + std::to_string(idx) + " out of range");
    Var r = a.tape->emit(Array({1}, {a.val()[std::size_t(idx)]}), "pick");
    a.tape->set_back(r, [ia = a.id, idx, io = r.id](Tape& tp) {
        tp.grad(ia)[std::size_t(idx)] += tp.grad(io)[0];
    });
    return r;
}

inline Var sum(Var a) {
    double s = 0.0;
    for (double x : a.val().data) s += x;
    Var r = a.tape->emit(Array({1}, {s}), "sum");
    a.tape->set_back(r, [ia = a.id, io = r.id](Tape& tp) {
        const double g = tp.grad(io)[0];
        Array& ga = tp.grad(ia);
        for (auto& x : ga.data) x += g;
    });
    return r;
}

inline Var tanh_op(Var a) {
    Array out = a.val();
    nn::tanh_vec(out.data.data(), out.data.data(), int(out.size()));
    Var r = a.tape->emit(std::move(out), "tanh");
    a.tape->set_back(r, [ia = a.id, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        const Array& y = tp.val(io);
        Array& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
    return r;
}

inline Var sigmoid_op(Var a) {
    Array out = a.val();
    nn::sigmoid_vec(out.data.data(), out.data.data(), int(out.size()));
    Var r = a.tape->emit(std::move(out), "sigmoid");
    a.tape->set_back(r, [ia = a.id, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        const Array& y = tp.val(io);
        Array& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return r;
}

// ---------------------------------------------------------------------------
// Parameterized linear maps
// ---------------------------------------------------------------------------

// y = W x + b with W, b taken from the store (not copied onto the tape).
inline Var affine(Tape& t, ParamStore& store, const std::string& w_name,
                  const std::string& b_name, Var x) {
    const Array& W = store.value(w_name);
    const Array& b = store.value(b_name);
    if (W.shape.size() != 2 || W.shape[1] != int(x.val().size()) || b.rows() != W.shape[0])
        throw InputError("affine(" + w_name + "): shapes " + shape_str(W.shape) + ", " +
                         shape_str(b.shape) + " incompatible with input " +
                         shape_str(x.val().shape));
    int m = W.shape[0], n = W.shape[1];
    Array out({m});
    nn::affine(out.data.data(), W.data.data(), b.data.data(), x.val().data.data(), m, n);
    Var r = t.emit(std::move(out), "affine");
    ParamStore* s = &store;
    t.set_back(r, [s, w_name, b_name, ix = x.id, m, n, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        const Array& xv = tp.val(ix);
        const Array& W = s->value(w_name);
        Array& gW = s->grad(w_name);
        Array& gb = s->grad(b_name);
        Array& gx = tp.grad(ix);
        for (int i = 0; i < m; ++i) {
            const double gi = g[std::size_t(i)];
            gb[std::size_t(i)] += gi;
            double* gw = gW.data.data() + std::size_t(i) * n;
            const double* w = W.data.data() + std::size_t(i) * n;
            for (int j = 0; j < n; ++j) {
                gw[j] += gi * xv[std::size_t(j)];
                gx[std::size_t(j)] += gi * w[j];
            }
        }
    });
    return r;
}

// Selected output rows of an affine map; the mask-restricted decoder head.
inline Var affine_rows(Tape& t, ParamStore& store, const std::string& w_name,
                       const std::string& b_name, Var x, std::vector<int> rows) {
    const Array& W = store.value(w_name);
    if (W.shape.size() != 2 || W.shape[1] != int(x.val().size()))
        throw InputError("affine_rows(" + w_name + "): incompatible shapes");
    int n = W.shape[1];
    for (int rix : rows)
        if (rix < 0 || rix >= W.shape[0]) throw InputError("affine_rows: row id out of range");
    Array out({int(rows.size())});
    nn::affine_rows(out.data.data(), W.data.data(), store.value(b_name).data.data(),
                    x.val().data.data(), rows.data(), int(rows.size()), n);
    Var r = t.emit(std::move(out), "affine_rows");
    ParamStore* s = &store;
    t.set_back(r, [s, w_name, b_name, ix = x.id, rows = std::move(rows), n, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        const Array& xv = tp.val(ix);
        const Array& W = s->value(w_name);
        Array& gW = s->grad(w_name);
        Array& gb = s->grad(b_name);
        Array& gx = tp.grad(ix);
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const double gi = g[k];
            const int row = rows[k];
            gb[std::size_t(row)] += gi;
            double* gw = gW.data.data() + std::size_t(row) * n;
            const double* w = W.data.data() + std::size_t(row) * n;
            for (int j = 0; j < n; ++j) {
                gw[j] += gi * xv[std::size_t(j)];
                gx[std::size_t(j)] += gi * w[j];
            }
        }
    });
    return r;
}

// ---------------------------------------------------------------------------
// Probability ops
// ---------------------------------------------------------------------------

// Log-softmax over a dense logit vector.
inline Var log_softmax(Var logits) {
    Array out = logits.val();
    nn::log_softmax(out.data.data(), int(out.size()));
    Var r = logits.tape->emit(std::move(out), "log_softmax");
    logits.tape->set_back(r, [il = logits.id, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        const Array& y = tp.val(io);
        Array& gl = tp.grad(il);
        double gsum = 0.0;
        for (double gi : g.data) gsum += gi;
        for (std::size_t i = 0; i < g.size(); ++i) gl[i] += g[i] - std::exp(y[i]) * gsum;
    });
    return r;
}

// Log-probabilities over the allowed ids only; everything outside the set
// carries exactly zero probability and never appears in the output.
inline Var masked_log_softmax(Var logits, const std::vector<int>& allowed) {
    if (allowed.empty()) throw InputError("masked_log_softmax: empty allowed set");
    for (int id : allowed)
        if (id < 0 || std::size_t(id) >= logits.val().size())
            throw InputError("masked_log_softmax: id " + std::to_string(id) + " out of range");
    Array gathered({int(allowed.size())});
    for (std::size_t k = 0; k < allowed.size(); ++k)
        gathered[k] = logits.val()[std::size_t(allowed[k])];
    Var g = logits.tape->emit(std::move(gathered), "gather");
    logits.tape->set_back(g, [il = logits.id, allowed, io = g.id](Tape& tp) {
        const Array& gg = tp.grad(io);
        Array& gl = tp.grad(il);
        for (std::size_t k = 0; k < allowed.size(); ++k) gl[std::size_t(allowed[k])] += gg[k];
    });
    return log_softmax(g);
}

// sample = mu + exp(logsigma) * noise; noise is an external constant.
inline Var gaussian_reparam(Var mu, Var logsigma, const Array& noise) {
    detail::require_same_shape(mu, logsigma, "gaussian_reparam");
    if (!mu.val().same_shape(noise))
        throw InputError("gaussian_reparam: noise shape mismatch");
    Array out = mu.val();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += std::exp(logsigma.val()[i]) * noise[i];
    Var r = mu.tape->emit(std::move(out), "gaussian_reparam");
    mu.tape->set_back(r, [im = mu.id, is = logsigma.id, noise, io = r.id](Tape& tp) {
        const Array& g = tp.grad(io);
        const Array& ls = tp.val(is);
        Array& gm = tp.grad(im);
        Array& gs = tp.grad(is);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gm[i] += g[i];
            gs[i] += g[i] * std::exp(ls[i]) * noise[i];
        }
    });
    return r;
}

// KL(N(mu, sigma^2 I) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 2 logsigma - 1).
inline Var kl_std_normal(Var mu, Var logsigma) {
    detail::require_same_shape(mu, logsigma, "kl_std_normal");
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.val().size(); ++i) {
        double m = mu.val()[i], ls = logsigma.val()[i];
        acc += m * m + std::exp(2.0 * ls) - 2.0 * ls - 1.0;
    }
    Var r = mu.tape->emit(Array({1}, {0.5 * acc}), "kl_std_normal");
    mu.tape->set_back(r, [im = mu.id, is = logsigma.id, io = r.id](Tape& tp) {
        const double g = tp.grad(io)[0];
        const Array& m = tp.val(im);
        const Array& ls = tp.val(is);
        Array& gm = tp.grad(im);
        Array& gs = tp.grad(is);
        for (std::size_t i = 0; i < m.size(); ++i) {
            gm[i] += g * m[i];
            gs[i] += g * (std::exp(2.0 * ls[i]) - 1.0);
        }
    });
    return r;
}

// ---------------------------------------------------------------------------
// GRU cell (composite)
// ---------------------------------------------------------------------------

// z = sig(Wz [x;h] + bz), r = sig(Wr [x;h] + br),
// hc = tanh(Wh [x; r.h] + bh), h' = (1-z).h + z.hc
// Parameter names: <prefix>.Wz/.bz/.Wr/.br/.Wh/.bh
inline Var gru_cell(Tape& t, ParamStore& store, const std::string& prefix, Var h, Var x) {
    Var xh = concat(x, h);
    Var z = sigmoid_op(affine(t, store, prefix + ".Wz", prefix + ".bz", xh));
    Var r = sigmoid_op(affine(t, store, prefix + ".Wr", prefix + ".br", xh));
    Var xrh = concat(x, mul(r, h));
    Var hc = tanh_op(affine(t, store, prefix + ".Wh", prefix + ".bh", xrh));
    // h - z.h + z.hc
    return add(sub(h, mul(z, h)), mul(z, hc));
}

}  // namespace detrad::ad
