#pragma once

// The three loss terms and their weighted, mask-routed combination.

#include "cil/backbone.hpp"
#include "cil/tensor.hpp"

namespace cil {

template <typename T>
struct LossWeights {
    T lambda_kd = T(10);
    T gamma_proto = T(10);
};

template <typename T>
Tensor<T> masked_ce(const Tensor<T>& logits, const std::vector<int>& labels,
                    const std::vector<bool>& mask) {
    return softmax_cross_entropy(logits, labels, &mask);
}

// Mean squared Euclidean distance between student and frozen teacher features.
// r_old must be detached; gradient flows only into r_new.
template <typename T>
Tensor<T> kd_loss(const Tensor<T>& r_new, const Tensor<T>& r_old, const std::vector<bool>& mask) {
    return masked_sq_dist(r_new, r_old, &mask);
}

template <typename T>
Tensor<T> proto_loss(Classifier<T>& classifier, const Tensor<T>& proto_batch,
                     const std::vector<int>& proto_labels) {
    Tensor<T> logits = classifier.logits(proto_batch);
    return softmax_cross_entropy(logits, proto_labels);
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& ce, const Tensor<T>& kd, const Tensor<T>& proto,
                     const LossWeights<T>& w) {
    if (w.lambda_kd < T(0) || w.gamma_proto < T(0))
        throw config_error("total_loss: negative loss weight");
    return add(ce, add(scale(kd, w.lambda_kd), scale(proto, w.gamma_proto)));
}

}  // namespace cil
