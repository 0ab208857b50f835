#pragma once

// Independent reference computations used as test oracles. These deliberately
// avoid the library's op implementations: plain loops, plain arithmetic.

#include <cmath>
#include <vector>

namespace oracle {

// Naive triple-loop matrix product, row-major.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int kk = 0; kk < k; ++kk)
                s += a[static_cast<std::size_t>(i) * k + kk] * b[static_cast<std::size_t>(kk) * n + j];
            c[static_cast<std::size_t>(i) * n + j] = s;
        }
    return c;
}

// Direct softmax at extended precision, no max-subtraction trick.
inline std::vector<double> softmax_long_double(const std::vector<double>& x) {
    long double se = 0.0L;
    for (double v : x) se += expl(static_cast<long double>(v));
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = static_cast<double>(expl(static_cast<long double>(x[i])) / se);
    return y;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace oracle
