#pragma once

// The class-incremental phase protocol: full training on the base classes,
// then per incremental phase expand -> masked joint training against the
// frozen previous-phase teacher -> fuse -> prototype update -> cumulative
// evaluation.

#include <functional>
#include <set>

#include "cil/data.hpp"
#include "cil/losses.hpp"
#include "cil/metrics.hpp"
#include "cil/model.hpp"
#include "cil/optim.hpp"

namespace cil {

template <typename T>
struct TrainConfig {
    int epochs = 100;       // per phase
    int batch_size = 128;
    T lr = T(1e-3);
    T weight_decay = T(5e-4);
    LossWeights<T> weights;
    T sigma = T(0.8);
    AdapterKind adapter_kind = AdapterKind::Conv1x1;
    // method toggles; all off = plain fine-tuning baseline
    bool expand = true;
    bool distill = true;
    bool select = true;
    bool proto = true;
    bool train_old_classifier_rows = true;
    bool freeze_adapter_bn_stats = false;
    bool per_step_scores = true;  // recompute selection scores every step
    uint32_t seed = 0;
    BackboneConfig backbone;
    // invoked right before fusion in each incremental phase, while the
    // adapters are still attached (checkpointing hook)
    std::function<void(Model<T>&, int)> on_pre_fuse;
    // verification hooks for incremental phases: after every optimizer step,
    // and after every mask partition
    std::function<void(Model<T>&, int, int)> on_step;           // (model, phase, step)
    std::function<void(const SelectionMasks&, int)> on_masks;   // (masks, phase)
};

template <typename T>
struct PhaseState {
    Model<T> model;
    Backbone<T> teacher;                 // frozen fused net from the previous phase
    std::vector<int> seen_classes;       // classifier row -> class id
    std::vector<std::vector<int>> phase_classes;
    MetricsLog log;
    std::vector<std::vector<Shape>> fingerprints;  // per completed phase
    // instrumentation: dataset indices touched during the last phase
    std::set<size_t> touched_last_phase;
};

namespace detail {

template <typename T>
std::vector<int> labels_to_rows(const std::vector<int>& labels,
                                const std::vector<int>& seen_classes) {
    std::vector<int> rows(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        auto it = std::find(seen_classes.begin(), seen_classes.end(), labels[i]);
        if (it == seen_classes.end())
            throw state_error("label " + std::to_string(labels[i]) + " has no classifier row");
        rows[i] = static_cast<int>(it - seen_classes.begin());
    }
    return rows;
}

template <typename T>
std::vector<Tensor<T>> trainable_params(Model<T>& model) {
    std::vector<Tensor<T>> ps;
    for (auto& blk : model.backbone.blocks()) {
        if (blk.main_weight.requires_grad()) ps.push_back(blk.main_weight);
        if (blk.main_bias.requires_grad()) ps.push_back(blk.main_bias);
        if (blk.main_bn && blk.main_bn->gamma.requires_grad()) {
            ps.push_back(blk.main_bn->gamma);
            ps.push_back(blk.main_bn->beta);
        }
        if (blk.adapter) {
            ps.push_back(blk.adapter->weight);
            ps.push_back(blk.adapter->bias);
            if (blk.adapter->bn) {
                ps.push_back(blk.adapter->bn->gamma);
                ps.push_back(blk.adapter->bn->beta);
            }
        }
    }
    ps.push_back(model.classifier.weight());
    ps.push_back(model.classifier.bias());
    return ps;
}

}  // namespace detail

// Per-task and cumulative top-1 accuracy over all phases seen so far.
template <typename T>
void evaluate(PhaseState<T>& st, const Dataset& test, int upto_phase, int eval_batch = 256) {
    std::vector<double> task_acc;
    std::map<int, std::pair<int, int>> per_class;  // class -> (correct, total)
    int correct_all = 0, total_all = 0;
    for (int p = 0; p < upto_phase; ++p) {
        std::set<int> classes(st.phase_classes[p].begin(), st.phase_classes[p].end());
        PhaseView view(test, classes);
        int correct = 0, total = 0;
        for (size_t start = 0; start < view.size(); start += eval_batch) {
            size_t end = std::min(view.size(), start + static_cast<size_t>(eval_batch));
            std::vector<size_t> idx(view.indices().begin() + start, view.indices().begin() + end);
            std::vector<int> labels;
            Tensor<T> x = make_batch<T>(test, idx, &labels);
            Tensor<T> feats = st.model.backbone.features_eval(x);
            Tensor<T> logits = st.model.classifier.logits(feats);
            const int K = logits.dim(1);
            for (size_t i = 0; i < idx.size(); ++i) {
                int best = 0;
                for (int k = 1; k < K; ++k)
                    if (logits.data()[i * K + k] > logits.data()[i * K + best]) best = k;
                int pred = st.seen_classes[best];
                bool ok = pred == labels[i];
                correct += ok;
                auto& pc = per_class[labels[i]];
                pc.first += ok;
                pc.second += 1;
            }
            total += static_cast<int>(idx.size());
        }
        task_acc.push_back(total ? static_cast<double>(correct) / total : 0.0);
        correct_all += correct;
        total_all += total;
    }
    st.log.acc.push_back(task_acc);
    st.log.overall.push_back(total_all ? static_cast<double>(correct_all) / total_all : 0.0);
    std::map<int, double> pc;
    for (auto& [c, ct] : per_class) pc[c] = ct.second ? static_cast<double>(ct.first) / ct.second : 0.0;
    st.log.per_class.push_back(std::move(pc));
}

// End-of-phase bookkeeping shared by all phases: prototypes from the fused
// extractor in eval mode, fingerprint, cumulative evaluation.
template <typename T>
void finish_phase(PhaseState<T>& st, const TrainConfig<T>& cfg, const Dataset& train,
                  const Dataset& test, int phase) {
    const auto& new_classes_vec = st.phase_classes[phase - 1];
    std::set<int> new_classes(new_classes_vec.begin(), new_classes_vec.end());
    PhaseView view(train, new_classes);

    // batched feature extraction to bound memory
    const int B = 256;
    std::vector<T> all_feats;
    std::vector<int> all_labels;
    for (size_t start = 0; start < view.size(); start += B) {
        size_t end = std::min(view.size(), start + static_cast<size_t>(B));
        std::vector<size_t> idx(view.indices().begin() + start, view.indices().begin() + end);
        std::vector<int> labels;
        Tensor<T> x = make_batch<T>(train, idx, &labels);
        Tensor<T> feats = st.model.backbone.features_eval(x);
        all_feats.insert(all_feats.end(), feats.data().begin(), feats.data().end());
        all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    }
    const int D = st.model.backbone.feature_dim();
    Tensor<T> feats(Shape{static_cast<int>(all_labels.size()), D}, std::move(all_feats));
    compute_prototypes(st.model.prototypes, feats, all_labels, new_classes, phase);

    st.model.phase = phase;
    st.fingerprints.push_back(st.model.backbone.shape_fingerprint());
    evaluate(st, test, phase);
}

template <typename T>
PhaseState<T> train_phase1(const TrainConfig<T>& cfg, const Dataset& train, const Dataset& test,
                           const IncrementalSplit& split) {
    PhaseState<T> st;
    st.phase_classes = split.phase_classes;
    st.seen_classes = split.phase_classes.at(0);
    if (st.seen_classes.empty()) throw config_error("train_phase1: empty base class set");

    st.model.backbone = Backbone<T>(cfg.backbone, cfg.seed);
    st.model.classifier = Classifier<T>(static_cast<int>(st.seen_classes.size()),
                                        st.model.backbone.feature_dim(), cfg.seed + 1);

    std::set<int> classes(st.seen_classes.begin(), st.seen_classes.end());
    PhaseView view(train, classes);
    if (view.size() == 0) throw config_error("train_phase1: empty dataset");

    Adam<T> opt(AdamConfig<T>{cfg.lr, T(0.9), T(0.999), T(1e-8), cfg.weight_decay});
    opt.set_params(detail::trainable_params(st.model));

    std::mt19937 rng(cfg.seed + 100);
    std::vector<size_t> order(view.indices());
    st.touched_last_phase.clear();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<size_t> idx(order.begin() + start, order.begin() + end);
            st.touched_last_phase.insert(idx.begin(), idx.end());
            std::vector<int> labels;
            Tensor<T> x = make_batch<T>(train, idx, &labels);
            auto rows = detail::labels_to_rows<T>(labels, st.seen_classes);
            Tensor<T> feats = st.model.backbone.features(x, true, true);
            Tensor<T> logits = st.model.classifier.logits(feats);
            Tensor<T> loss = softmax_cross_entropy(logits, rows);
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
    }
    finish_phase(st, cfg, train, test, 1);
    return st;
}

template <typename T>
void train_incremental_phase(PhaseState<T>& st, const TrainConfig<T>& cfg, const Dataset& train,
                             const Dataset& test, int phase) {
    if (phase < 2) throw config_error("train_incremental_phase: phase must be >= 2");
    const auto& new_classes_vec = st.phase_classes.at(phase - 1);
    std::set<int> classes(new_classes_vec.begin(), new_classes_vec.end());
    PhaseView view(train, classes);
    if (view.size() == 0) throw config_error("incremental phase: empty dataset");

    // (1) frozen teacher = the fused network carried out of phase n-1
    st.teacher = clone_detached(st.model.backbone);

    // (2) structural expansion; main branch and its BN statistics freeze
    if (cfg.expand) st.model.backbone.expand_all(cfg.adapter_kind);

    // (3) classifier rows for the new label set
    size_t old_rows = st.seen_classes.size();
    st.model.classifier.extend(static_cast<int>(new_classes_vec.size()),
                               cfg.seed + 1000 * phase);
    for (int c : new_classes_vec) st.seen_classes.push_back(c);

    Adam<T> opt(AdamConfig<T>{cfg.lr, T(0.9), T(0.999), T(1e-8), cfg.weight_decay});
    opt.set_params(detail::trainable_params(st.model));

    std::mt19937 rng(cfg.seed + 100 * phase);
    std::vector<size_t> order(view.indices());
    st.touched_last_phase.clear();

    const bool main_training = !cfg.expand;  // frozen main branch runs on eval statistics
    const bool adapter_training = !cfg.freeze_adapter_bn_stats;

    // dataset index -> score, refreshed once per epoch when per-step scoring
    // is disabled
    std::map<size_t, T> epoch_scores;
    int step_counter = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        if (!cfg.per_step_scores && cfg.select && cfg.distill && !st.model.prototypes.empty()) {
            epoch_scores.clear();
            const int B = 256;
            for (size_t s = 0; s < order.size(); s += B) {
                size_t e = std::min(order.size(), s + static_cast<size_t>(B));
                std::vector<size_t> idx(order.begin() + s, order.begin() + e);
                Tensor<T> x = make_batch<T>(train, idx, nullptr);
                Tensor<T> f = st.model.backbone.features(x, main_training, false).detached();
                auto sc = cosine_scores(f, st.model.prototypes);
                for (size_t i = 0; i < idx.size(); ++i) epoch_scores[idx[i]] = sc[i];
            }
        }
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<size_t> idx(order.begin() + start, order.begin() + end);
            st.touched_last_phase.insert(idx.begin(), idx.end());
            std::vector<int> labels;
            Tensor<T> x = make_batch<T>(train, idx, &labels);
            auto rows = detail::labels_to_rows<T>(labels, st.seen_classes);
            const int N = static_cast<int>(idx.size());

            Tensor<T> feats = st.model.backbone.features(x, main_training, adapter_training);
            Tensor<T> logits = st.model.classifier.logits(feats);

            Tensor<T> teacher_feats;
            if (cfg.distill) teacher_feats = st.teacher.features_eval(x);

            std::vector<bool> ce_mask(N, true), kd_mask(N, cfg.distill);
            if (cfg.select && cfg.distill && !st.model.prototypes.empty()) {
                std::vector<T> scores;
                if (cfg.per_step_scores) {
                    scores = cosine_scores(feats.detached(), st.model.prototypes);
                } else {
                    scores.reserve(idx.size());
                    for (size_t id : idx) scores.push_back(epoch_scores.at(id));
                }
                SelectionMasks masks = partition(scores, cfg.sigma);
                if (cfg.on_masks) cfg.on_masks(masks, phase);
                ce_mask = masks.ce_mask;
                kd_mask = masks.kd_mask;
            }

            Tensor<T> loss = masked_ce(logits, rows, ce_mask);
            if (cfg.distill)
                loss = add(loss, scale(kd_loss(feats, teacher_feats, kd_mask), cfg.weights.lambda_kd));
            if (cfg.proto && !st.model.prototypes.empty()) {
                auto [pb, plabels] = oversample(st.model.prototypes, cfg.batch_size, rng);
                auto prows = detail::labels_to_rows<T>(plabels, st.seen_classes);
                Tensor<T> pl = st.model.classifier.logits(pb);
                loss = add(loss, scale(softmax_cross_entropy(pl, prows), cfg.weights.gamma_proto));
            }

            opt.zero_grad();
            loss.backward();
            if (!cfg.train_old_classifier_rows) {
                // freeze old rows exactly: clear their gradient slice and undo
                // any weight-decay drift the optimizer applies
                auto& w = st.model.classifier.weight();
                auto& b = st.model.classifier.bias();
                const int D = st.model.classifier.feature_dim();
                if (!w.grad().empty())
                    std::fill(w.grad().begin(), w.grad().begin() + old_rows * D, T(0));
                if (!b.grad().empty()) std::fill(b.grad().begin(), b.grad().begin() + old_rows, T(0));
                std::vector<T> w_keep(w.data().begin(), w.data().begin() + old_rows * D);
                std::vector<T> b_keep(b.data().begin(), b.data().begin() + old_rows);
                opt.step();
                std::copy(w_keep.begin(), w_keep.end(), w.data().begin());
                std::copy(b_keep.begin(), b_keep.end(), b.data().begin());
            } else {
                opt.step();
            }
            if (cfg.on_step) cfg.on_step(st.model, phase, step_counter);
            ++step_counter;
        }
    }

    if (cfg.on_pre_fuse) cfg.on_pre_fuse(st.model, phase);

    // (5) fold the adapters back; architecture returns to the fixed shape
    if (cfg.expand) st.model.backbone.fuse_all();

    // (6)-(7) prototypes for the new classes, cumulative evaluation
    finish_phase(st, cfg, train, test, phase);
}

// Full protocol over every phase of the split.
template <typename T>
PhaseState<T> run_protocol(const TrainConfig<T>& cfg, const Dataset& train, const Dataset& test,
                           const IncrementalSplit& split,
                           const std::function<void(PhaseState<T>&, int)>& on_phase_done = {}) {
    PhaseState<T> st = train_phase1(cfg, train, test, split);
    if (on_phase_done) on_phase_done(st, 1);
    for (int phase = 2; phase <= split.phases; ++phase) {
        train_incremental_phase(st, cfg, train, test, phase);
        if (on_phase_done) on_phase_done(st, phase);
    }
    return st;
}

}  // namespace cil
