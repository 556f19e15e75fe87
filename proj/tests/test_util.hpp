#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tclp/gradcheck.hpp"
#include "tclp/graph.hpp"
#include "tclp/rng.hpp"
#include "tclp/tensor.hpp"

namespace tclp::test {

template <typename T>
TensorT<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : t.data) v = T(lo + (hi - lo) * rng.uniform());
    return t;
}

// Random tensor with entries bounded away from zero, for ops that are
// non-smooth at the origin (relu) or undefined near it (log).
template <typename T>
TensorT<T> random_tensor_away_from(std::vector<int> shape, Rng& rng, double margin) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : t.data) {
        double u = rng.uniform() * 2.0 - 1.0;
        double mag = margin + std::abs(u);
        v = T(u >= 0 ? mag : -mag);
    }
    return t;
}

// Finite-difference check of an op under a fixed random linear functional:
// loss = sum(weights .* build(params)). `build` reconstructs the graph from
// the current parameter values on every call.
template <typename T, typename Build>
GradCheckReport check_op(Build&& build, std::vector<std::pair<std::string, TensorT<T>*>> params, uint64_t seed,
                         T h, double tol) {
    TensorT<T> weights;
    bool weights_ready = false;
    auto run = [&](bool with_grad) -> T {
        GraphT<T> g;
        auto out = build(g);
        if (!weights_ready) {
            Rng wrng(seed);
            weights = random_tensor<T>(g.val(out).shape, wrng);
            weights_ready = true;
        }
        auto loss = g.sum_all(g.mul(out, g.input(weights)));
        if (with_grad) g.backward(loss);
        return g.val(loss).data[0];
    };
    return grad_check<T>(run, params, h, tol);
}

}  // namespace tclp::test
