#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "scan/tape.hpp"

namespace scan {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    bool pass(double rtol) const { return checked > 0 && max_rel_err <= rtol; }
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences. `f` maps (tape, leaf variables) to a scalar Var and is invoked
// on fresh tapes for every probe. When max_coords > 0, a random subset of
// coordinates per input is probed (seeded, reproducible).
template <typename Real, typename F>
GradCheckReport grad_check(F f, std::vector<Tensor<Real>> inputs, Real h, Real /*rtol*/,
                           int max_coords = -1, uint64_t seed = 7) {
    std::vector<Param<Real>> params;
    params.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i)
        params.emplace_back("x" + std::to_string(i), inputs[i]);

    auto eval = [&](const std::vector<Tensor<Real>>& xs) -> Real {
        Tape<Real> t;
        std::vector<Param<Real>> locals;
        locals.reserve(xs.size());
        std::vector<Var<Real>> vars;
        for (size_t i = 0; i < xs.size(); ++i) {
            locals.emplace_back("x" + std::to_string(i), xs[i]);
            vars.push_back(t.leaf(locals[i]));
        }
        Var<Real> out = f(t, vars);
        if (out.value().numel() != 1)
            throw ShapeError("grad_check: function must be scalar-valued");
        return out.value()[0];
    };

    // analytic gradients, one backward pass
    {
        Tape<Real> t;
        std::vector<Var<Real>> vars;
        for (auto& p : params) vars.push_back(t.leaf(p));
        Var<Real> out = f(t, vars);
        t.backward(out);
    }

    GradCheckReport rep;
    std::mt19937 rng(static_cast<uint32_t>(seed));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        int64_t n = params[pi].value.numel();
        std::vector<int64_t> coords;
        if (max_coords > 0 && n > max_coords) {
            std::vector<int64_t> all(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
            std::shuffle(all.begin(), all.end(), rng);
            coords.assign(all.begin(), all.begin() + max_coords);
        } else {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        }
        for (int64_t c : coords) {
            Real keep = inputs[pi][c];
            inputs[pi][c] = keep + h;
            Real fp = eval(inputs);
            inputs[pi][c] = keep - h;
            Real fm = eval(inputs);
            inputs[pi][c] = keep;
            double fd = (static_cast<double>(fp) - static_cast<double>(fm)) /
                        (2.0 * static_cast<double>(h));
            double an = static_cast<double>(params[pi].grad[c]);
            double denom = std::abs(fd) + std::abs(an) + 1e-6;
            double rel = std::abs(fd - an) / denom;
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            rep.checked++;
        }
    }
    return rep;
}

}  // namespace scan
