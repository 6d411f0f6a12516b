#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cil/trainer.hpp"

using namespace cil;

namespace {

struct Fixture {
    Dataset train, test;
    IncrementalSplit split;
    TrainConfig<double> cfg;
};

Fixture make_fixture(int epochs = 4, uint32_t seed = 3) {
    Fixture f;
    auto ds = make_synthetic(6, 18, 1, 8, 21, 0.08f);
    std::tie(f.train, f.test) = split_train_test(ds, 12);
    f.split = build_split(6, 2, 3, 17);
    f.cfg.epochs = epochs;
    f.cfg.batch_size = 16;
    f.cfg.seed = seed;
    f.cfg.backbone.in_channels = 1;
    f.cfg.backbone.channels = {4, 8};
    f.cfg.backbone.strides = {1, 2};
    return f;
}

template <typename T>
std::vector<std::vector<T>> main_weights(const Backbone<T>& net) {
    std::vector<std::vector<T>> out;
    for (const auto& blk : net.blocks()) out.push_back(blk.main_weight.data());
    return out;
}

}  // namespace

TEST_CASE("phase 1 learns well-separated data far above chance") {
    Fixture f = make_fixture(12);
    PhaseState<double> st = train_phase1(f.cfg, f.train, f.test, f.split);
    REQUIRE(st.log.overall.size() == 1);
    CHECK(st.log.overall[0] > 0.75);  // chance on 2 classes is 0.5
    CHECK(st.model.phase == 1);
    CHECK(st.seen_classes.size() == 2);
    // prototypes exist exactly for the base classes
    for (int c : f.split.phase_classes[0]) CHECK(st.model.prototypes.contains(c));
    CHECK(st.model.prototypes.size() == 2);
}

TEST_CASE("whole protocol is bit-deterministic per seed") {
    Fixture f = make_fixture(2);
    auto a = run_protocol(f.cfg, f.train, f.test, f.split);
    auto b = run_protocol(f.cfg, f.train, f.test, f.split);
    CHECK(a.model.classifier.weight().data() == b.model.classifier.weight().data());
    CHECK(a.log.overall == b.log.overall);
    CHECK(a.log.acc == b.log.acc);
    for (size_t i = 0; i < a.model.backbone.blocks().size(); ++i)
        CHECK(a.model.backbone.blocks()[i].main_weight.data() ==
              b.model.backbone.blocks()[i].main_weight.data());

    Fixture g = make_fixture(2, 4);  // different seed diverges
    auto c = run_protocol(g.cfg, g.train, g.test, g.split);
    CHECK(c.model.classifier.weight().data() != a.model.classifier.weight().data());
}

TEST_CASE("incremental phase keeps the frozen trunk bit-identical") {
    Fixture f = make_fixture(2);
    PhaseState<double> st = train_phase1(f.cfg, f.train, f.test, f.split);
    // after phase 1 fuse there are no adapters; the trunk entering phase 2 is
    // exactly what must come back out of fusion untouched in weight values is
    // not required (fusion folds adapters in), but during training the frozen
    // main weights must never move. Capture them right after expansion.
    TrainConfig<double> cfg = f.cfg;
    std::vector<std::vector<double>> frozen;
    cfg.on_pre_fuse = [&](Model<double>& m, int) { frozen = main_weights(m.backbone); };

    auto before_phase = main_weights(st.model.backbone);
    train_incremental_phase(st, cfg, f.train, f.test, 2);
    // pre-fuse main weights == weights entering the phase (frozen throughout)
    REQUIRE(frozen.size() == before_phase.size());
    for (size_t i = 0; i < frozen.size(); ++i) CHECK(frozen[i] == before_phase[i]);
    // adapters are gone again and the shape fingerprint matches phase 1
    CHECK_FALSE(st.model.backbone.expanded());
    CHECK(st.fingerprints.size() == 2);
    CHECK(st.fingerprints[0] == st.fingerprints[1]);
}

TEST_CASE("expansion state errors: cannot run phase 1 twice into phase <2") {
    Fixture f = make_fixture(1);
    PhaseState<double> st = train_phase1(f.cfg, f.train, f.test, f.split);
    CHECK_THROWS_AS(train_incremental_phase(st, f.cfg, f.train, f.test, 1), config_error);
}

TEST_CASE("incremental training touches only new-phase samples") {
    Fixture f = make_fixture(1);
    PhaseState<double> st = train_phase1(f.cfg, f.train, f.test, f.split);
    train_incremental_phase(st, f.cfg, f.train, f.test, 2);
    std::set<int> phase2(f.split.phase_classes[1].begin(), f.split.phase_classes[1].end());
    CHECK_FALSE(st.touched_last_phase.empty());
    for (size_t idx : st.touched_last_phase)
        CHECK(phase2.count(f.train.images[idx].fine_label) == 1);
}

TEST_CASE("classifier grows monotonically and predicts over all seen classes") {
    Fixture f = make_fixture(1);
    auto st = run_protocol(f.cfg, f.train, f.test, f.split);
    CHECK(st.seen_classes.size() == 6);
    CHECK(st.model.classifier.num_classes() == 6);
    // lower-triangular metrics matrix, cumulative rows
    REQUIRE(st.log.acc.size() == 3);
    for (size_t k = 0; k < 3; ++k) CHECK(st.log.acc[k].size() == k + 1);
    // one prototype per seen class, tagged with its learning phase
    CHECK(st.model.prototypes.size() == 6);
    for (int p = 1; p <= 3; ++p)
        for (int c : f.split.phase_classes[p - 1])
            CHECK(st.model.prototypes.at(c).phase_learned == p);
}

TEST_CASE("teacher is the fused previous-phase network") {
    Fixture f = make_fixture(1);
    PhaseState<double> st = train_phase1(f.cfg, f.train, f.test, f.split);
    auto phase1_weights = main_weights(st.model.backbone);
    train_incremental_phase(st, f.cfg, f.train, f.test, 2);
    // the teacher captured at the start of phase 2 still holds phase-1 weights
    CHECK(main_weights(st.teacher) == phase1_weights);
    // and is detached from training
    for (const auto& blk : st.teacher.blocks()) CHECK_FALSE(blk.main_weight.requires_grad());
}

TEST_CASE("old classifier rows freeze when requested") {
    Fixture f = make_fixture(2);
    PhaseState<double> st = train_phase1(f.cfg, f.train, f.test, f.split);
    const int D = st.model.classifier.feature_dim();
    auto w_old = st.model.classifier.weight().data();  // 2 x D
    auto b_old = st.model.classifier.bias().data();
    TrainConfig<double> cfg = f.cfg;
    cfg.train_old_classifier_rows = false;
    train_incremental_phase(st, cfg, f.train, f.test, 2);
    for (int i = 0; i < 2 * D; ++i) CHECK(st.model.classifier.weight().data()[i] == w_old[i]);
    for (int i = 0; i < 2; ++i) CHECK(st.model.classifier.bias().data()[i] == b_old[i]);
    // new rows did train
    bool new_moved = false;
    for (size_t i = 2 * D; i < st.model.classifier.weight().data().size(); ++i)
        if (st.model.classifier.weight().data()[i] != 0.0) new_moved = true;
    CHECK(new_moved);
}

TEST_CASE("fine-tuning baseline (all toggles off) still runs end to end") {
    Fixture f = make_fixture(1);
    TrainConfig<double> cfg = f.cfg;
    cfg.expand = cfg.distill = cfg.select = cfg.proto = false;
    auto st = run_protocol(cfg, f.train, f.test, f.split);
    CHECK(st.log.overall.size() == 3);
    CHECK_FALSE(st.model.backbone.expanded());
    // baseline never expands, so every fingerprint trivially matches
    CHECK(st.fingerprints[0] == st.fingerprints[2]);
}

TEST_CASE("per-epoch cached scores run and stay deterministic") {
    Fixture f = make_fixture(2);
    TrainConfig<double> cfg = f.cfg;
    cfg.per_step_scores = false;
    auto a = run_protocol(cfg, f.train, f.test, f.split);
    auto b = run_protocol(cfg, f.train, f.test, f.split);
    CHECK(a.model.classifier.weight().data() == b.model.classifier.weight().data());
    CHECK(a.log.overall == b.log.overall);
}
