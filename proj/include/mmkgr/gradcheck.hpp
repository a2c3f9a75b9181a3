#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmkgr/rng.hpp"
#include "mmkgr/tape.hpp"
#include "mmkgr/tensor.hpp"

namespace mmkgr {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int coords_checked = 0;
};

// Compares analytic gradients against central finite differences.
// `build_scalar` must deterministically rebuild the scalar computation on a
// fresh tape from the current parameter values. Coordinates are subsampled
// when the parameter space is large; at least `min_coords` are always
// checked (all of them if there are fewer).
inline GradCheckResult grad_check(const std::function<Tape::Id(Tape&)>& build_scalar,
                                  const std::vector<Parameter*>& params, Rng& rng,
                                  int min_coords = 64, double eps = 1e-6) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape t;
        Tape::Id root = build_scalar(t);
        if (!t.val(root).all_finite())
            throw std::domain_error("grad_check: non-finite objective");
        t.backward(root);
    }

    std::vector<std::pair<int, int>> coords; // (param index, flat coord)
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (int k = 0; k < params[pi]->value.size(); ++k)
            coords.emplace_back(static_cast<int>(pi), k);

    const int budget = std::max(min_coords, static_cast<int>(params.size()));
    if (static_cast<int>(coords.size()) > budget) {
        rng.shuffle(coords);
        // Keep at least one coordinate of every parameter in the sample.
        std::vector<char> seen(params.size(), 0);
        std::vector<std::pair<int, int>> picked;
        for (const auto& c : coords) {
            if (!seen[c.first]) {
                seen[c.first] = 1;
                picked.push_back(c);
            }
        }
        for (const auto& c : coords) {
            if (static_cast<int>(picked.size()) >= budget) break;
            if (std::find(picked.begin(), picked.end(), c) == picked.end()) picked.push_back(c);
        }
        coords = std::move(picked);
    }

    auto eval = [&]() {
        Tape t;
        return t.val(build_scalar(t)).item();
    };

    GradCheckResult res;
    for (const auto& [pi, k] : coords) {
        Parameter& p = *params[pi];
        const double saved = p.value[k];
        p.value[k] = saved + eps;
        const double f_plus = eval();
        p.value[k] = saved - eps;
        const double f_minus = eval();
        p.value[k] = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double analytic = p.grad[k];
        const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
        res.max_rel_err = std::max(res.max_rel_err, std::abs(analytic - numeric) / denom);
        ++res.coords_checked;
    }
    return res;
}

} // namespace mmkgr
