#pragma once

// Per-class deep-feature prototypes, over-sampling for classifier calibration,
// and the cosine-score partition that routes samples to CE or distillation.

#include <map>
#include <random>
#include <set>

#include "cil/tensor.hpp"

namespace cil {

template <typename T>
struct PrototypeEntry {
    std::vector<T> centroid;
    int phase_learned = 0;
};

template <typename T>
class PrototypeStore {
public:
    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }
    bool contains(int class_id) const { return entries_.count(class_id) != 0; }
    const PrototypeEntry<T>& at(int class_id) const { return entries_.at(class_id); }
    const std::map<int, PrototypeEntry<T>>& entries() const { return entries_; }

    void insert(int class_id, std::vector<T> centroid, int phase) {
        if (contains(class_id))
            throw state_error("prototype for class " + std::to_string(class_id) +
                              " already exists");
        entries_[class_id] = {std::move(centroid), phase};
    }

private:
    std::map<int, PrototypeEntry<T>> entries_;
};

// centroid[c] = mean of features rows labelled c, for c in new_classes only.
template <typename T>
void compute_prototypes(PrototypeStore<T>& store, const Tensor<T>& features,
                        const std::vector<int>& labels, const std::set<int>& new_classes,
                        int phase) {
    const int M = features.dim(0), D = features.dim(1);
    if (static_cast<int>(labels.size()) != M)
        throw shape_error("compute_prototypes: label count mismatch");
    for (int c : new_classes) {
        std::vector<T> sum(D, T(0));
        int count = 0;
        for (int i = 0; i < M; ++i) {
            if (labels[i] != c) continue;
            for (int j = 0; j < D; ++j) sum[j] += features.data()[static_cast<size_t>(i) * D + j];
            ++count;
        }
        if (count == 0)
            throw config_error("compute_prototypes: class " + std::to_string(c) +
                               " has zero samples");
        for (int j = 0; j < D; ++j) sum[j] /= static_cast<T>(count);
        store.insert(c, std::move(sum), phase);
    }
}

// B rows drawn uniformly with replacement; every row is a stored centroid
// verbatim, no noise.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> oversample(const PrototypeStore<T>& store, int B,
                                                  std::mt19937& rng) {
    if (store.empty()) throw state_error("oversample: empty prototype store");
    if (B < 1) throw config_error("oversample: B must be >= 1");
    std::vector<int> ids;
    for (auto& [cid, _] : store.entries()) ids.push_back(cid);
    const int D = static_cast<int>(store.entries().begin()->second.centroid.size());
    std::uniform_int_distribution<int> pick(0, static_cast<int>(ids.size()) - 1);
    Tensor<T> batch(Shape{B, D});
    std::vector<int> labels(B);
    for (int i = 0; i < B; ++i) {
        int cid = ids[pick(rng)];
        const auto& proto = store.at(cid).centroid;
        std::copy(proto.begin(), proto.end(), batch.data().begin() + static_cast<size_t>(i) * D);
        labels[i] = cid;
    }
    return {batch, labels};
}

// Si = max over prototypes of cosine(r_i, p_c); zero vectors score 0.
template <typename T>
std::vector<T> cosine_scores(const Tensor<T>& features, const PrototypeStore<T>& store) {
    if (store.empty()) throw state_error("cosine_scores: empty prototype store");
    const int N = features.dim(0), D = features.dim(1);
    std::vector<std::vector<T>> normed;
    for (auto& [cid, entry] : store.entries()) {
        if (static_cast<int>(entry.centroid.size()) != D)
            throw shape_error("cosine_scores: prototype dim mismatch");
        T norm = 0;
        for (T v : entry.centroid) norm += v * v;
        norm = std::sqrt(norm);
        std::vector<T> p(D, T(0));
        if (norm > T(0))
            for (int j = 0; j < D; ++j) p[j] = entry.centroid[j] / norm;
        normed.push_back(std::move(p));
    }
    std::vector<T> scores(N, T(0));
    for (int i = 0; i < N; ++i) {
        const T* r = features.data().data() + static_cast<size_t>(i) * D;
        T rn = 0;
        for (int j = 0; j < D; ++j) rn += r[j] * r[j];
        rn = std::sqrt(rn);
        if (rn == T(0)) continue;
        T best = T(-1);
        bool any = false;
        for (auto& p : normed) {
            T dot = 0;
            for (int j = 0; j < D; ++j) dot += r[j] / rn * p[j];
            if (!any || dot > best) best = dot, any = true;
        }
        scores[i] = any ? best : T(0);
    }
    return scores;
}

struct SelectionMasks {
    std::vector<bool> ce_mask;
    std::vector<bool> kd_mask;
    std::vector<double> scores;
};

// kd if score > sigma (strictly), ce otherwise; exact partition.
template <typename T>
SelectionMasks partition(const std::vector<T>& scores, T sigma) {
    if (sigma < T(-1) || sigma > T(1)) throw config_error("partition: sigma outside [-1,1]");
    SelectionMasks m;
    m.ce_mask.resize(scores.size());
    m.kd_mask.resize(scores.size());
    m.scores.resize(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        bool kd = scores[i] > sigma;
        m.kd_mask[i] = kd;
        m.ce_mask[i] = !kd;
        m.scores[i] = static_cast<double>(scores[i]);
    }
    return m;
}

}  // namespace cil
