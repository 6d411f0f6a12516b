#pragma once

// JSON run configuration: one document drives a full run; unknown keys are
// rejected so a config echo is a complete record.

#include <string>

#include <nlohmann/json.hpp>

namespace cil {

struct RunConfig {
    // dataset
    std::string dataset = "synthetic";  // "synthetic" | "cifar100"
    std::string cifar_train;
    std::string cifar_test;
    int synth_classes = 10;
    int synth_per_class = 200;
    int synth_test_per_class = 50;
    int synth_channels = 3;
    int synth_size = 16;
    double synth_noise = 0.15;
    uint32_t synth_seed = 7;

    // split
    int base_classes = 4;
    int phases = 4;  // total phases: base + 3 incremental
    uint32_t split_seed = 11;

    // training (desk-scale defaults; paper-scale values are 100 / 128)
    int epochs = 20;
    int batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double lambda_kd = 10.0;
    double gamma_proto = 10.0;
    double sigma = 0.8;
    std::string adapter = "conv1x1";  // conv1x1 | conv1x1_bn | conv3x3
    std::string precision = "f32";    // f32 | f64
    uint32_t seed = 0;
    bool train_old_classifier_rows = true;
    bool freeze_adapter_bn_stats = false;
    bool per_step_scores = true;

    // backbone
    std::vector<int> channels = {16, 32, 64};
    std::vector<int> strides = {1, 2, 2};

    // method toggles (all off = plain fine-tuning baseline)
    bool expand = true;
    bool distill = true;
    bool select = true;
    bool proto = true;

    std::string output_dir = "run_out";

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    // "a.b=value" override, values parsed as JSON when possible
    void apply_override(const std::string& kv);
};

}  // namespace cil
