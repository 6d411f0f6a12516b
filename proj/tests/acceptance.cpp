// End-to-end acceptance harness. Each check prints exactly one PASS/FAIL line;
// the process exits nonzero if any check fails.

#include <chrono>
#include <cstdio>
#include <random>
#include <set>

#include "cil/gradcheck.hpp"
#include "cil/losses.hpp"
#include "cil/trainer.hpp"

using namespace cil;

namespace {

int g_failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
    std::printf("%s: %s  (%s)\n", id, ok ? "PASS" : "FAIL", detail.c_str());
    if (!ok) ++g_failures;
}

double now_s() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

template <typename T>
void randomize(std::vector<T>& v, std::mt19937& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : v) x = static_cast<T>(dist(rng));
}

// ---- fusion losslessness over many seeded instances --------------------------

template <typename T>
double fusion_max_err(AdapterKind kind, int stride, uint32_t seed) {
    std::mt19937 rng(seed);
    const int C = 3, O = 4, H = 8;
    ConvBlock<T> blk(C, O, stride, true);
    randomize(blk.main_weight.data(), rng, -1, 1);
    randomize(blk.main_bias.data(), rng, -0.5, 0.5);
    randomize(blk.main_bn->gamma.data(), rng, 0.5, 1.5);
    randomize(blk.main_bn->beta.data(), rng, -0.5, 0.5);
    randomize(blk.main_bn->running_mean, rng, -0.5, 0.5);
    randomize(blk.main_bn->running_var, rng, 0.2, 2.0);
    expand(blk, kind);
    randomize(blk.adapter->weight.data(), rng, -1, 1);
    randomize(blk.adapter->bias.data(), rng, -0.5, 0.5);
    if (blk.adapter->bn) {
        randomize(blk.adapter->bn->gamma.data(), rng, 0.5, 1.5);
        randomize(blk.adapter->bn->beta.data(), rng, -0.5, 0.5);
        randomize(blk.adapter->bn->running_mean, rng, -0.5, 0.5);
        randomize(blk.adapter->bn->running_var, rng, 0.2, 2.0);
    }
    Tensor<T> x(Shape{2, C, H, H});
    randomize(x.data(), rng, 0, 1);

    Tensor<T> ye = block_forward(blk, x, false, false);
    ConvBlock<T> fused = blk;
    fuse(fused);
    Tensor<T> yf = block_forward(fused, x, false, false);
    double m = 0;
    for (size_t i = 0; i < ye.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(ye.data()[i]) - yf.data()[i]));
    return m;
}

void ac1() {
    double t0 = now_s();
    double worst_f = 0, worst_d = 0;
    int instances = 0;
    for (AdapterKind kind : {AdapterKind::Conv1x1, AdapterKind::Conv1x1WithBN, AdapterKind::Conv3x3})
        for (int stride : {1, 2})
            for (uint32_t seed = 0; seed < 17; ++seed) {
                worst_f = std::max(worst_f, fusion_max_err<float>(kind, stride, seed));
                worst_d = std::max(worst_d, fusion_max_err<double>(kind, stride, seed));
                ++instances;
            }
    double dt = now_s() - t0;
    bool ok = instances >= 100 && worst_f <= 1e-5 && worst_d <= 1e-10 && dt < 30;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "fusion losslessness: %d instances, max err %.2e f32 / %.2e f64, %.1fs",
                  instances, worst_f, worst_d, dt);
    report("AC-1", ok, buf);
}

// ---- shared desk fixture -----------------------------------------------------

struct Desk {
    Dataset train, test;
    IncrementalSplit split;
};

Desk make_desk(int classes, int base, int phases, int per_class_train, int per_class_test,
               uint32_t data_seed, uint32_t split_seed, float noise = 0.05f) {
    Desk d;
    auto ds = make_synthetic(classes, per_class_train + per_class_test, 3, 8, data_seed, noise);
    std::tie(d.train, d.test) = split_train_test(ds, per_class_train);
    d.split = build_split(classes, base, phases, split_seed);
    return d;
}

template <typename T>
TrainConfig<T> desk_cfg(uint32_t seed, int epochs, int batch = 16) {
    TrainConfig<T> cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.seed = seed;
    cfg.lr = T(5e-3);
    cfg.backbone.in_channels = 3;
    cfg.backbone.channels = {32, 64};
    cfg.backbone.strides = {1, 2};
    return cfg;
}

// ---- structure invariance ----------------------------------------------------

void ac2() {
    Desk d = make_desk(8, 2, 4, 12, 6, 31, 5);
    TrainConfig<double> cfg = desk_cfg<double>(1, 2);
    std::vector<std::vector<Shape>> fps;
    std::vector<size_t> counts;
    bool expanded_pre_fuse = true, collapsed_after = true;
    cfg.on_pre_fuse = [&](Model<double>& m, int) {
        expanded_pre_fuse = expanded_pre_fuse && m.backbone.expanded();
    };
    std::function<void(PhaseState<double>&, int)> done = [&](PhaseState<double>& st, int) {
        fps.push_back(st.model.backbone.shape_fingerprint());
        counts.push_back(st.model.backbone.param_count());
        collapsed_after = collapsed_after && !st.model.backbone.expanded();
    };
    run_protocol(cfg, d.train, d.test, d.split, done);
    bool ok = fps.size() == 4 && expanded_pre_fuse && collapsed_after;
    for (size_t i = 1; i < fps.size(); ++i)
        ok = ok && fps[i] == fps[0] && counts[i] == counts[0];
    report("AC-2", ok, "shape fingerprint and parameter count constant across 4 phases");
}

// ---- frozen main branch per training step ------------------------------------

void ac3() {
    // enough base training that the score partition mixes CE and KD samples;
    // an all-KD phase would leave zero-init adapters at a zero-gradient point
    Desk d = make_desk(10, 4, 3, 24, 8, 41, 7);
    TrainConfig<double> cfg = desk_cfg<double>(2, 8);
    PhaseState<double> st = train_phase1(cfg, d.train, d.test, d.split);

    bool frozen_ok = true, adapters_move = false, classifier_moves = false;
    std::vector<std::vector<double>> w0, bn_var0, bn_mean0;
    for (auto& blk : st.model.backbone.blocks()) {
        w0.push_back(blk.main_weight.data());
        bn_var0.push_back(blk.main_bn->running_var);
        bn_mean0.push_back(blk.main_bn->running_mean);
    }
    std::vector<std::vector<double>> last_adapter;
    std::vector<double> last_cls;
    cfg.on_step = [&](Model<double>& m, int, int step) {
        auto& blocks = m.backbone.blocks();
        for (size_t i = 0; i < blocks.size(); ++i) {
            frozen_ok = frozen_ok && blocks[i].main_weight.data() == w0[i];
            frozen_ok = frozen_ok && blocks[i].main_bn->running_var == bn_var0[i];
            frozen_ok = frozen_ok && blocks[i].main_bn->running_mean == bn_mean0[i];
        }
        std::vector<std::vector<double>> ad;
        for (auto& blk : blocks) ad.push_back(blk.adapter->weight.data());
        if (step > 0 && ad != last_adapter) adapters_move = true;
        if (step > 0 && m.classifier.weight().data() != last_cls) classifier_moves = true;
        last_adapter = ad;
        last_cls = m.classifier.weight().data();
    };
    train_incremental_phase(st, cfg, d.train, d.test, 2);
    bool ok = frozen_ok && adapters_move && classifier_moves;
    report("AC-3", ok,
           "main weights and BN stats bit-identical every step; adapter and classifier move");
}

// ---- full-pipeline gradient check --------------------------------------------

void ac4() {
    double t0 = now_s();
    double worst = 0;
    for (uint32_t seed = 0; seed < 3; ++seed) {
        std::mt19937 rng(seed);
        BackboneConfig bc;
        bc.in_channels = 2;
        bc.channels = {3, 4};
        bc.strides = {1, 2};
        Backbone<double> net(bc, seed + 50);
        Classifier<double> cls(3, net.feature_dim(), seed + 51);
        Tensor<double> teacher(Shape{2, net.feature_dim()});
        randomize(teacher.data(), rng, -1, 1);
        Tensor<double> protos(Shape{2, net.feature_dim()});
        randomize(protos.data(), rng, -1, 1);
        std::vector<int> labels = {0, 2};
        std::vector<bool> ce_mask = {true, true}, kd_mask = {true, false};
        LossWeights<double> w;  // 10, 10
        auto f = [&](Tensor<double>& x) {
            Tensor<double> feats = net.features(x, true, true);
            Tensor<double> ce = masked_ce(cls.logits(feats), labels, ce_mask);
            Tensor<double> kd = kd_loss(feats, teacher, kd_mask);
            Tensor<double> proto = proto_loss(cls, protos, {0, 1});
            return total_loss(ce, kd, proto, w);
        };
        Tensor<double> x(Shape{2, 2, 6, 6});
        randomize(x.data(), rng, 0, 1);
        worst = std::max(worst, grad_check<double>(f, x));
    }
    double dt = now_s() - t0;
    bool ok = worst <= 1e-4 && dt < 120;
    char buf[120];
    std::snprintf(buf, sizeof buf, "full-pipeline gradcheck: max rel err %.2e, %.1fs", worst, dt);
    report("AC-4", ok, buf);
}

// ---- selection masks: partition property and degenerate sigma ----------------

void ac5() {
    Desk d = make_desk(10, 4, 3, 24, 8, 33, 5);
    bool xor_ok = true, range_ok = true;
    size_t batches = 0;
    TrainConfig<double> cfg = desk_cfg<double>(3, 2);
    cfg.on_masks = [&](const SelectionMasks& m, int) {
        ++batches;
        for (size_t i = 0; i < m.ce_mask.size(); ++i) {
            xor_ok = xor_ok && (m.ce_mask[i] != m.kd_mask[i]);
            range_ok = range_ok && m.scores[i] >= -1.0 && m.scores[i] <= 1.0;
        }
    };
    run_protocol(cfg, d.train, d.test, d.split);

    // sigma = 1 routes everything to CE and must be bitwise identical to a run
    // with the selection and distillation terms disabled outright
    TrainConfig<double> deg = desk_cfg<double>(3, 2);
    deg.sigma = 1.0;
    auto a = run_protocol(deg, d.train, d.test, d.split);
    TrainConfig<double> off = desk_cfg<double>(3, 2);
    off.select = false;
    off.distill = false;
    auto b = run_protocol(off, d.train, d.test, d.split);
    bool bitwise = a.model.classifier.weight().data() == b.model.classifier.weight().data() &&
                   a.log.overall == b.log.overall;
    for (size_t i = 0; i < a.model.backbone.blocks().size(); ++i)
        bitwise = bitwise && a.model.backbone.blocks()[i].main_weight.data() ==
                                 b.model.backbone.blocks()[i].main_weight.data();
    bool ok = xor_ok && range_ok && batches > 0 && bitwise;
    char buf[120];
    std::snprintf(buf, sizeof buf,
                  "mask partition exact on %zu batches; sigma=1 bitwise equals selection-off", batches);
    report("AC-5", ok, buf);
}

// ---- forgetting ordering vs the fine-tuning baseline -------------------------

struct RunMetrics {
    double forget = 0, acc = 0;
};

RunMetrics avg_runs(bool full_method, const std::vector<uint32_t>& seeds, int epochs) {
    RunMetrics m;
    for (uint32_t s : seeds) {
        Desk d = make_desk(10, 4, 3, 24, 8, 40 + s, 6 + s);
        TrainConfig<double> cfg = desk_cfg<double>(s, epochs);
        if (!full_method) cfg.expand = cfg.distill = cfg.select = cfg.proto = false;
        auto st = run_protocol(cfg, d.train, d.test, d.split);
        m.forget += avg_forgetting(st.log);
        m.acc += avg_incremental_accuracy(st.log);
    }
    m.forget /= static_cast<double>(seeds.size());
    m.acc /= static_cast<double>(seeds.size());
    return m;
}

void ac6() {
    double t0 = now_s();
    std::vector<uint32_t> seeds = {1, 2, 3};
    RunMetrics full = avg_runs(true, seeds, 8);
    RunMetrics base = avg_runs(false, seeds, 8);
    double dt = now_s() - t0;
    bool ok = full.forget < base.forget && full.acc > base.acc && dt < 1800;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "full method forget %.3f vs baseline %.3f; acc %.3f vs %.3f; %.0fs",
                  full.forget, base.forget, full.acc, base.acc, dt);
    report("AC-6", ok, buf);
}

// ---- sigma sweep peaks at an interior value ----------------------------------

void ac7() {
    std::vector<double> sigmas = {0.0, 0.4, 0.8, 1.0};
    std::vector<double> acc(sigmas.size(), 0.0);
    std::vector<uint32_t> seeds = {1, 2, 3};
    for (uint32_t s : seeds) {
        Desk d = make_desk(10, 4, 3, 24, 8, 40 + s, 6 + s);
        for (size_t i = 0; i < sigmas.size(); ++i) {
            TrainConfig<double> cfg = desk_cfg<double>(s, 8);
            cfg.sigma = sigmas[i];
            auto st = run_protocol(cfg, d.train, d.test, d.split);
            acc[i] += avg_incremental_accuracy(st.log) / seeds.size();
        }
    }
    size_t best = 0;
    for (size_t i = 1; i < acc.size(); ++i)
        if (acc[i] > acc[best]) best = i;
    bool ok = best != 0 && best != acc.size() - 1;
    char buf[160];
    std::snprintf(buf, sizeof buf, "acc by sigma {0.0, 0.4, 0.8, 1.0} = {%.3f, %.3f, %.3f, %.3f}",
                  acc[0], acc[1], acc[2], acc[3]);
    report("AC-7", ok, buf);
}

// ---- zero-adapter start: distillation is exactly zero ------------------------

void ac8() {
    double t0 = now_s();
    Desk d = make_desk(6, 2, 3, 10, 5, 34, 5);
    TrainConfig<float> cfg = desk_cfg<float>(4, 1);
    PhaseState<float> st = train_phase1(cfg, d.train, d.test, d.split);
    bool ok = true;
    float worst_feat = 0;
    for (int phase = 2; phase <= 3; ++phase) {
        // replicate the state at the phase's first step: frozen fused teacher,
        // freshly expanded student
        Backbone<float> teacher = clone_detached(st.model.backbone);
        Backbone<float> student = clone_detached(st.model.backbone);
        student.expand_all(cfg.adapter_kind);
        std::set<int> classes(st.phase_classes[phase - 1].begin(),
                              st.phase_classes[phase - 1].end());
        PhaseView view(d.train, classes);
        std::vector<size_t> idx(view.indices().begin(),
                                view.indices().begin() + std::min<size_t>(view.size(), 16));
        Tensor<float> x = make_batch<float>(d.train, idx, nullptr);
        Tensor<float> sf = student.features(x, false, true);
        Tensor<float> tf = teacher.features_eval(x);
        std::vector<bool> mask(idx.size(), true);
        Tensor<float> kd = kd_loss(sf, tf, mask);
        ok = ok && kd.item() == 0.0f;
        for (size_t i = 0; i < sf.numel(); ++i)
            worst_feat = std::max(worst_feat, std::abs(sf.data()[i] - tf.data()[i]));
        if (phase < 3) train_incremental_phase(st, cfg, d.train, d.test, phase);
    }
    double dt = now_s() - t0;
    ok = ok && worst_feat <= 1e-6f && dt < 5;
    char buf[140];
    std::snprintf(buf, sizeof buf,
                  "KD exactly 0 at the first step of each phase; max feature gap %.1e; %.1fs",
                  static_cast<double>(worst_feat), dt);
    report("AC-8", ok, buf);
}

// ---- dataset parser round trip -----------------------------------------------

void ac9() {
    std::mt19937 rng(77);
    std::uniform_int_distribution<int> byte(0, 255);
    std::vector<uint8_t> bytes;
    for (int r = 0; r < 3; ++r) {
        bytes.push_back(static_cast<uint8_t>(byte(rng) % 20));
        bytes.push_back(static_cast<uint8_t>(byte(rng) % 100));
        for (int i = 0; i < 3072; ++i) bytes.push_back(static_cast<uint8_t>(byte(rng)));
    }
    bool round = serialize_cifar100(parse_cifar100(bytes)) == bytes;
    bool offset_ok = false;
    std::vector<uint8_t> bad(bytes.begin(), bytes.begin() + 3074 + 200);
    try {
        parse_cifar100(bad);
    } catch (const parse_error& e) {
        offset_ok = e.offset == 3074;
    }
    report("AC-9", round && offset_ok,
           "3-record fixture round-trips bit-exactly; truncation reports offset 3074");
}

// ---- metrics against brute force ---------------------------------------------

void ac10() {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> dist(0, 1);
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
        MetricsLog log;
        int n = 5;
        for (int k = 0; k < n; ++k) {
            std::vector<double> row;
            for (int j = 0; j <= k; ++j) row.push_back(dist(rng));
            log.acc.push_back(row);
            log.overall.push_back(dist(rng));
        }
        double f = 0;
        for (int j = 0; j < n - 1; ++j) {
            double best = -1;
            for (int l = j; l < n - 1; ++l) best = std::max(best, log.acc[l][j]);
            f += best - log.acc[n - 1][j];
        }
        f /= n - 1;
        double a = 0;
        for (double v : log.overall) a += v;
        a /= n;
        worst = std::max(worst, std::abs(avg_forgetting(log) - f));
        worst = std::max(worst, std::abs(avg_incremental_accuracy(log) - a));
    }
    char buf[100];
    std::snprintf(buf, sizeof buf, "metrics match brute force on 10 matrices, max diff %.1e", worst);
    report("AC-10", worst <= 1e-12, buf);
}

}  // namespace

int main() {
    ac1();
    ac2();
    ac3();
    ac4();
    ac5();
    ac6();
    ac7();
    ac8();
    ac9();
    ac10();
    if (g_failures) std::printf("%d acceptance check(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
