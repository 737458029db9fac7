#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace detrad::nn {

// Forward kernels over raw double buffers. The tape ops and the streaming
// scorer both sit on top of these.

// y[m] = W[m,n] * x[n] + b[m], W row-major.
inline void affine(double* y, const double* W, const double* b, const double* x, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const double* w = W + std::size_t(i) * n;
        double acc = b[i];
        for (int j = 0; j < n; ++j) acc += w[j] * x[j];
        y[i] = acc;
    }
}

// y[k] = W[rows[k],:] * x + b[rows[k]]; only the selected output rows.
inline void affine_rows(double* y, const double* W, const double* b, const double* x,
                        const int* rows, int k, int n) {
    for (int i = 0; i < k; ++i) {
        const double* w = W + std::size_t(rows[i]) * n;
        double acc = b[rows[i]];
        for (int j = 0; j < n; ++j) acc += w[j] * x[j];
        y[i] = acc;
    }
}

inline void tanh_vec(double* y, const double* x, int n) {
    for (int i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

inline void sigmoid_vec(double* y, const double* x, int n) {
    for (int i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

inline double logsumexp(const double* x, int n) {
    double mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(x[i] - mx);
    return mx + std::log(s);
}

// In-place log-softmax over a dense logit vector.
inline void log_softmax(double* x, int n) {
    double lse = logsumexp(x, n);
    for (int i = 0; i < n; ++i) x[i] -= lse;
}

}  // namespace detrad::nn
