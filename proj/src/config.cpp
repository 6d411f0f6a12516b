#include "cil/config.hpp"

#include <fstream>
#include <set>

#include "cil/tensor.hpp"

namespace cil {

using nlohmann::json;

json RunConfig::to_json() const {
    json j;
    j["dataset"] = json{{"kind", dataset},
                        {"cifar_train", cifar_train},
                        {"cifar_test", cifar_test},
                        {"synthetic",
                         json{{"classes", synth_classes},
                              {"per_class", synth_per_class},
                              {"test_per_class", synth_test_per_class},
                              {"channels", synth_channels},
                              {"size", synth_size},
                              {"noise", synth_noise},
                              {"seed", synth_seed}}}};
    j["split"] = json{{"base", base_classes}, {"phases", phases}, {"seed", split_seed}};
    j["train"] = json{{"epochs", epochs},
                      {"batch_size", batch_size},
                      {"lr", lr},
                      {"weight_decay", weight_decay},
                      {"lambda_kd", lambda_kd},
                      {"gamma_proto", gamma_proto},
                      {"sigma", sigma},
                      {"adapter", adapter},
                      {"precision", precision},
                      {"seed", seed},
                      {"train_old_classifier_rows", train_old_classifier_rows},
                      {"freeze_adapter_bn_stats", freeze_adapter_bn_stats},
                      {"per_step_scores", per_step_scores}};
    j["backbone"] = json{{"channels", channels}, {"strides", strides}};
    j["method"] = json{{"expand", expand}, {"distill", distill}, {"select", select}, {"proto", proto}};
    j["output_dir"] = output_dir;
    return j;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw config_error("unknown config key: " + scope + it.key());
}

template <typename V>
void get_if(const json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).template get<V>();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    reject_unknown(j, {"dataset", "split", "train", "backbone", "method", "output_dir"}, "");
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        reject_unknown(d, {"kind", "cifar_train", "cifar_test", "synthetic"}, "dataset.");
        get_if(d, "kind", c.dataset);
        get_if(d, "cifar_train", c.cifar_train);
        get_if(d, "cifar_test", c.cifar_test);
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            reject_unknown(
                s, {"classes", "per_class", "test_per_class", "channels", "size", "noise", "seed"},
                "dataset.synthetic.");
            get_if(s, "classes", c.synth_classes);
            get_if(s, "per_class", c.synth_per_class);
            get_if(s, "test_per_class", c.synth_test_per_class);
            get_if(s, "channels", c.synth_channels);
            get_if(s, "size", c.synth_size);
            get_if(s, "noise", c.synth_noise);
            get_if(s, "seed", c.synth_seed);
        }
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        reject_unknown(s, {"base", "phases", "seed"}, "split.");
        get_if(s, "base", c.base_classes);
        get_if(s, "phases", c.phases);
        get_if(s, "seed", c.split_seed);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown(t,
                       {"epochs", "batch_size", "lr", "weight_decay", "lambda_kd", "gamma_proto",
                        "sigma", "adapter", "precision", "seed", "train_old_classifier_rows",
                        "freeze_adapter_bn_stats", "per_step_scores"},
                       "train.");
        get_if(t, "epochs", c.epochs);
        get_if(t, "batch_size", c.batch_size);
        get_if(t, "lr", c.lr);
        get_if(t, "weight_decay", c.weight_decay);
        get_if(t, "lambda_kd", c.lambda_kd);
        get_if(t, "gamma_proto", c.gamma_proto);
        get_if(t, "sigma", c.sigma);
        get_if(t, "adapter", c.adapter);
        get_if(t, "precision", c.precision);
        get_if(t, "seed", c.seed);
        get_if(t, "train_old_classifier_rows", c.train_old_classifier_rows);
        get_if(t, "freeze_adapter_bn_stats", c.freeze_adapter_bn_stats);
        get_if(t, "per_step_scores", c.per_step_scores);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        reject_unknown(b, {"channels", "strides"}, "backbone.");
        get_if(b, "channels", c.channels);
        get_if(b, "strides", c.strides);
    }
    if (j.contains("method")) {
        const auto& m = j.at("method");
        reject_unknown(m, {"expand", "distill", "select", "proto"}, "method.");
        get_if(m, "expand", c.expand);
        get_if(m, "distill", c.distill);
        get_if(m, "select", c.select);
        get_if(m, "proto", c.proto);
    }
    get_if(j, "output_dir", c.output_dir);
    if (c.precision != "f32" && c.precision != "f64")
        throw config_error("precision must be f32 or f64");
    if (c.dataset != "synthetic" && c.dataset != "cifar100")
        throw config_error("dataset.kind must be synthetic or cifar100");
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config: " + path);
    json j = json::parse(f);
    return from_json(j);
}

void RunConfig::apply_override(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got: " + kv);
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    json j = to_json();
    json* node = &j;
    size_t pos = 0;
    while (true) {
        size_t dot = key.find('.', pos);
        std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (dot == std::string::npos) {
            json v;
            try {
                v = json::parse(value);
            } catch (const json::parse_error&) {
                v = value;  // bare string
            }
            if (!node->contains(part)) throw config_error("unknown config key: " + key);
            (*node)[part] = v;
            break;
        }
        if (!node->contains(part)) throw config_error("unknown config key: " + key);
        node = &(*node)[part];
        pos = dot + 1;
    }
    *this = from_json(j);
}

}  // namespace cil
