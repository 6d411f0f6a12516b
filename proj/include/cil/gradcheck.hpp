#pragma once

// Central finite-difference check of reverse-mode gradients.
// Meant to run at 64-bit precision.

#include <cmath>
#include <functional>

#include "cil/tensor.hpp"

namespace cil {

template <typename T>
T grad_check(const std::function<Tensor<T>(Tensor<T>&)>& f, Tensor<T>& x, T h = T(1e-5)) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<T> y = f(x);
    y.backward();
    std::vector<T> analytic = x.has_grad() ? x.grad() : std::vector<T>(x.numel(), T(0));
    if (analytic.size() != x.numel()) analytic.assign(x.numel(), T(0));

    T max_rel = 0;
    for (size_t i = 0; i < x.numel(); ++i) {
        T saved = x.data()[i];
        x.data()[i] = saved + h;
        T fp = f(x).item();
        x.data()[i] = saved - h;
        T fm = f(x).item();
        x.data()[i] = saved;
        T fd = (fp - fm) / (T(2) * h);
        T denom = std::max(std::abs(analytic[i]) + std::abs(fd), T(1e-8));
        T rel = std::abs(analytic[i] - fd) / denom;
        if (std::abs(analytic[i] - fd) < T(1e-10)) rel = 0;  // both effectively zero
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace cil
