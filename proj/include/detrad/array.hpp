#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "detrad/error.hpp"

namespace detrad {

// Dense double-precision array. Every op in the differentiable kernel checks
// its output stays finite; NaN/Inf is a hard failure, not a value.
struct Array {
    std::vector<int> shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(std::vector<int> s) : shape(std::move(s)), data(count_of(shape), 0.0) {}
    Array(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != count_of(shape))
            throw InputError("Array: value count does not match shape product");
    }

    static Array vec(std::vector<double> d) {
        int n = int(d.size());
        return Array({n}, std::move(d));
    }

    static std::size_t count_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int dim : s) {
            if (dim <= 0) throw InputError("Array: nonpositive dimension");
            n *= std::size_t(dim);
        }
        return n;
    }

    std::size_t size() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    int rows() const { return shape.size() == 2 ? shape[0] : int(data.size()); }
    int cols() const { return shape.size() == 2 ? shape[1] : 1; }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    void check_finite(const std::string& who) const {
        for (double v : data)
            if (!std::isfinite(v)) throw StateError(who + ": non-finite value produced");
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace detrad
