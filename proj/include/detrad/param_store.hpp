#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "detrad/array.hpp"
#include "detrad/error.hpp"
#include "detrad/rng.hpp"

namespace detrad {

// Named parameters with paired gradient accumulators and Adam moment buffers.
// Entries iterate in lexicographic name order, which fixes both the
// serialization layout and the update order.
class ParamStore {
  public:
    struct Entry {
        Array value;
        Array grad;
        Array m;
        Array v;
    };

    Array& create(const std::string& name, std::vector<int> shape) {
        if (entries_.count(name)) throw InputError("ParamStore: duplicate parameter " + name);
        Entry e;
        e.value = Array(shape);
        e.grad = Array(shape);
        e.m = Array(shape);
        e.v = Array(std::move(shape));
        return entries_.emplace(name, std::move(e)).first->second.value;
    }

    // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); conventional for affine and
    // recurrent weights.
    Array& create_fan_in(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng) {
        Array& a = create(name, std::move(shape));
        double bound = 1.0 / std::sqrt(double(fan_in));
        for (auto& x : a.data) x = rng.uniform(-bound, bound);
        return a;
    }

    Array& create_normal(const std::string& name, std::vector<int> shape, double stddev, Rng& rng) {
        Array& a = create(name, std::move(shape));
        for (auto& x : a.data) x = stddev * rng.normal();
        return a;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Entry& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw InputError("ParamStore: unknown parameter " + name);
        return it->second;
    }
    const Entry& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw InputError("ParamStore: unknown parameter " + name);
        return it->second;
    }

    Array& value(const std::string& name) { return entry(name).value; }
    const Array& value(const std::string& name) const { return entry(name).value; }
    Array& grad(const std::string& name) { return entry(name).grad; }

    const std::map<std::string, Entry>& entries() const { return entries_; }
    int64_t step_count() const { return step_; }

    void zero_grad() {
        for (auto& [name, e] : entries_) e.grad.fill(0.0);
    }

    double grad_norm() const {
        double sq = 0.0;
        for (const auto& [name, e] : entries_)
            for (double g : e.grad.data) sq += g * g;
        return std::sqrt(sq);
    }

    void scale_gradients(double factor) {
        for (auto& [name, e] : entries_)
            for (double& g : e.grad.data) g *= factor;
    }

    // Global-norm clipping; returns the pre-clip norm.
    double clip_gradients(double max_norm) {
        double norm = grad_norm();
        if (norm > max_norm && norm > 0.0) {
            double scale = max_norm / norm;
            for (auto& [name, e] : entries_)
                for (double& g : e.grad.data) g *= scale;
        }
        return norm;
    }

    // Bias-corrected Adam update; gradients are zeroed afterwards.
    void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        ++step_;
        double bc1 = 1.0 - std::pow(beta1, double(step_));
        double bc2 = 1.0 - std::pow(beta2, double(step_));
        for (auto& [name, e] : entries_) {
            double* p = e.value.data.data();
            double* g = e.grad.data.data();
            double* m = e.m.data.data();
            double* v = e.v.data.data();
            std::size_t n = e.value.size();
            for (std::size_t i = 0; i < n; ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
                g[i] = 0.0;
            }
            e.value.check_finite("adam_step(" + name + ")");
        }
    }

    // {"version":1,"params":{name:{"shape":[...],"data":[...]}}}; names come
    // out lexicographically sorted and doubles round-trip bit-exactly.
    nlohmann::json to_json() const {
        nlohmann::json params = nlohmann::json::object();
        for (const auto& [name, e] : entries_)
            params[name] = {{"shape", e.value.shape}, {"data", e.value.data}};
        return {{"version", 1}, {"params", params}};
    }

    static ParamStore from_json(const nlohmann::json& j) {
        if (!j.contains("version") || j.at("version").get<int>() != 1)
            throw InputError("ParamStore: unsupported serialization version");
        ParamStore s;
        for (const auto& [name, p] : j.at("params").items()) {
            Array a(p.at("shape").get<std::vector<int>>(), p.at("data").get<std::vector<double>>());
            Entry e;
            e.grad = Array(a.shape);
            e.m = Array(a.shape);
            e.v = Array(a.shape);
            e.value = std::move(a);
            s.entries_.emplace(name, std::move(e));
        }
        return s;
    }

  private:
    std::map<std::string, Entry> entries_;
    int64_t step_ = 0;
};

}  // namespace detrad
