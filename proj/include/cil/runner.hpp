#pragma once

// Glue from a RunConfig document to a full training run with metrics and
// checkpoint files.

#include <filesystem>
#include <fstream>

#include "cil/config.hpp"
#include "cil/metrics.hpp"
#include "cil/trainer.hpp"

namespace cil {

void write_metrics_files(const MetricsLog& log, const nlohmann::json& config_echo,
                         const std::string& out_dir);

template <typename T>
TrainConfig<T> make_train_config(const RunConfig& rc) {
    TrainConfig<T> cfg;
    cfg.epochs = rc.epochs;
    cfg.batch_size = rc.batch_size;
    cfg.lr = static_cast<T>(rc.lr);
    cfg.weight_decay = static_cast<T>(rc.weight_decay);
    cfg.weights.lambda_kd = static_cast<T>(rc.lambda_kd);
    cfg.weights.gamma_proto = static_cast<T>(rc.gamma_proto);
    cfg.sigma = static_cast<T>(rc.sigma);
    cfg.adapter_kind = adapter_kind_from_string(rc.adapter);
    cfg.expand = rc.expand;
    cfg.distill = rc.distill;
    cfg.select = rc.select;
    cfg.proto = rc.proto;
    cfg.train_old_classifier_rows = rc.train_old_classifier_rows;
    cfg.freeze_adapter_bn_stats = rc.freeze_adapter_bn_stats;
    cfg.per_step_scores = rc.per_step_scores;
    cfg.seed = rc.seed;
    cfg.backbone.in_channels = rc.dataset == "cifar100" ? 3 : rc.synth_channels;
    cfg.backbone.channels = rc.channels;
    cfg.backbone.strides = rc.strides;
    return cfg;
}

inline std::pair<Dataset, Dataset> load_datasets(const RunConfig& rc) {
    if (rc.dataset == "cifar100") {
        Dataset train, test;
        train.images = parse_cifar100(read_file_bytes(rc.cifar_train));
        test.images = parse_cifar100(read_file_bytes(rc.cifar_test));
        train.num_classes = test.num_classes = 100;
        return {train, test};
    }
    Dataset all = make_synthetic(rc.synth_classes, rc.synth_per_class + rc.synth_test_per_class,
                                 rc.synth_channels, rc.synth_size, rc.synth_seed,
                                 static_cast<float>(rc.synth_noise));
    return split_train_test(all, rc.synth_per_class);
}

template <typename T>
PhaseState<T> run_from_config(const RunConfig& rc, bool write_outputs = true) {
    auto [train, test] = load_datasets(rc);
    IncrementalSplit split =
        build_split(train.num_classes, rc.base_classes, rc.phases, rc.split_seed);
    TrainConfig<T> cfg = make_train_config<T>(rc);

    namespace fs = std::filesystem;
    if (write_outputs) {
        fs::create_directories(rc.output_dir);
        cfg.on_pre_fuse = [&rc](Model<T>& m, int phase) {
            save_checkpoint(m, rc.output_dir + "/phase" + std::to_string(phase) +
                                   "_expanded.ckpt");
        };
    }

    std::function<void(PhaseState<T>&, int)> on_done = [&](PhaseState<T>& st, int phase) {
        if (write_outputs)
            save_checkpoint(st.model,
                            rc.output_dir + "/phase" + std::to_string(phase) + ".ckpt");
    };
    PhaseState<T> st = run_protocol(cfg, train, test, split, on_done);
    if (write_outputs) write_metrics_files(st.log, rc.to_json(), rc.output_dir);
    return st;
}

}  // namespace cil
