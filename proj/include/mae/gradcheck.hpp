// Central-difference gradient verification. Test-support code; the numeric
// route is independent of the reverse-mode sweep it checks.
#pragma once

#include <functional>
#include <vector>

#include "mae/autodiff.hpp"

namespace mae::ad {

// `f` rebuilds the loss from the current values of `params` every call and
// must be deterministic (dropout off). Returns the max over all parameter
// coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double finite_diff_check(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& params, double eps) {
    for (auto p : params) {
        Tensor t = p;
        t.zero_grad();
    }
    Tensor loss = f();
    backward(loss);

    std::vector<std::vector<Real>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        analytic.push_back(p.has_grad() ? p.grad()
                                        : std::vector<Real>(static_cast<size_t>(p.numel()), 0));
    }

    double worst = 0.0;
    NoGradGuard no_grad;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (size_t i = 0; i < p.values().size(); ++i) {
            Real original = p.values()[i];
            p.values()[i] = original + static_cast<Real>(eps);
            double plus = f().item();
            p.values()[i] = original - static_cast<Real>(eps);
            double minus = f().item();
            p.values()[i] = original;

            double numeric = (plus - minus) / (2.0 * eps);
            double a = static_cast<double>(analytic[pi][i]);
            double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace mae::ad
