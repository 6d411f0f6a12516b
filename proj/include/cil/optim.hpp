#pragma once

// Adam with bias correction and coupled L2 weight decay.

#include <unordered_map>

#include "cil/tensor.hpp"

namespace cil {

template <typename T>
struct AdamConfig {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0);
};

template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

    const AdamConfig<T>& config() const { return cfg_; }

    void add_param(Tensor<T> p) { params_.push_back(std::move(p)); }

    void set_params(std::vector<Tensor<T>> params) {
        params_ = std::move(params);
        // slots for new parameters are created lazily; old slots keyed by
        // impl pointer stay valid across set_params for surviving tensors
    }

    std::vector<Tensor<T>>& params() { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (auto& p : params_) {
            if (!p.requires_grad()) continue;
            auto& slot = state_[p.impl().get()];
            if (slot.m.size() != p.numel()) {
                slot.m.assign(p.numel(), T(0));
                slot.v.assign(p.numel(), T(0));
                slot.t = 0;
            }
            ++slot.t;
            const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(slot.t));
            const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(slot.t));
            const bool has_grad = p.has_grad();
            for (size_t i = 0; i < p.numel(); ++i) {
                T g = has_grad ? p.grad()[i] : T(0);
                g += cfg_.weight_decay * p.data()[i];
                slot.m[i] = cfg_.beta1 * slot.m[i] + (T(1) - cfg_.beta1) * g;
                slot.v[i] = cfg_.beta2 * slot.v[i] + (T(1) - cfg_.beta2) * g * g;
                T mhat = slot.m[i] / bc1;
                T vhat = slot.v[i] / bc2;
                p.data()[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    struct Slot {
        std::vector<T> m, v;
        long t = 0;
    };
    AdamConfig<T> cfg_;
    std::vector<Tensor<T>> params_;
    std::unordered_map<const TensorImpl<T>*, Slot> state_;
};

}  // namespace cil
