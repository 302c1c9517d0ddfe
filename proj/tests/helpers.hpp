#pragma once

// Test-only oracles and generators. Everything here is deliberately naive
// and independent of the library's fast paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gaitkit/autodiff.hpp"
#include "gaitkit/rng.hpp"
#include "gaitkit/tensor.hpp"

namespace testkit {

using gaitkit::Rng;
using gaitkit::Shape;
using gaitkit::Tensor64;
using gaitkit::TensorT;

inline Tensor64 random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor64 t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline double rel_err(double a, double b, double floor = 1e-4) {
    double scale = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / scale;
}

// Scalar loss of a list of input tensors. When grads_out is non-null the
// callee must fill one gradient tensor per input via autodiff.
using LossFn =
    std::function<double(const std::vector<Tensor64>&, std::vector<Tensor64>*)>;

// Central finite differences against reverse-mode gradients. Checks every
// coordinate unless max_coords_per_input caps it, in which case a
// deterministic subsample is used. Returns the worst relative error.
inline double gradcheck(const LossFn& fn, std::vector<Tensor64> inputs,
                        double h = 1e-5, size_t max_coords_per_input = 0,
                        uint64_t sample_seed = 42) {
    std::vector<Tensor64> grads;
    fn(inputs, &grads);
    double worst = 0.0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        size_t n = inputs[t].numel();
        std::vector<size_t> coords;
        if (max_coords_per_input == 0 || n <= max_coords_per_input) {
            coords.resize(n);
            for (size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            Rng rng = Rng(sample_seed).split("gradcheck-coords", t);
            for (size_t i = 0; i < max_coords_per_input; ++i)
                coords.push_back(rng.uniform_int(n));
        }
        for (size_t i : coords) {
            double orig = inputs[t][i];
            inputs[t][i] = orig + h;
            double fp = fn(inputs, nullptr);
            inputs[t][i] = orig - h;
            double fm = fn(inputs, nullptr);
            inputs[t][i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, rel_err(grads[t][i], fd));
        }
    }
    return worst;
}

// Fixed pseudo-random linear functional; turns any op output into a scalar
// loss with a non-degenerate gradient.
template <typename S>
gaitkit::VarT<S> weighted_sum(gaitkit::VarT<S> x, uint64_t seed = 7) {
    Rng rng = Rng(seed).split("weighted-sum");
    TensorT<S> w(x.val().shape());
    for (size_t i = 0; i < w.numel(); ++i) w[i] = S(rng.uniform(-1.0, 1.0));
    auto wleaf = x.tape->leaf(std::move(w));
    return gaitkit::sum(gaitkit::mul(x, wleaf));
}

}  // namespace testkit
