#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "vsi/params.hpp"
#include "vsi/tape.hpp"

namespace vsi {

// Central finite differences over every scalar in `params`. Slow path, used
// as the independent oracle for gradient checks.
inline GradMap finite_difference_grad(const std::function<double(const Params&)>& f,
                                      const Params& params, double eps = 1e-5) {
    if (eps <= 0.0) throw Error("finite_difference_grad: eps must be positive");
    Params work = params;
    GradMap out;
    for (auto& [name, t] : work.tensors) {
        Tensor g = Tensor::zeros(t.shape);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t.data[i];
            t.data[i] = orig + eps;
            const double fp = f(work);
            t.data[i] = orig - eps;
            const double fm = f(work);
            t.data[i] = orig;
            g.data[i] = (fp - fm) / (2.0 * eps);
        }
        out.emplace(name, std::move(g));
    }
    return out;
}

// max over scalars of |ga - gn| / max(1, |ga|, |gn|)
inline double max_relative_gap(const GradMap& analytic, const GradMap& numeric) {
    double worst = 0.0;
    for (const auto& [name, ga] : analytic) {
        auto it = numeric.find(name);
        if (it == numeric.end()) throw Error("finite-difference map missing '" + name + "'");
        const Tensor& gn = it->second;
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double denom = std::max({1.0, std::fabs(ga.data[i]), std::fabs(gn.data[i])});
            worst = std::max(worst, std::fabs(ga.data[i] - gn.data[i]) / denom);
        }
    }
    return worst;
}

}  // namespace vsi
