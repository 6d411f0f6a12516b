#pragma once

// Block-structured feature extractor and a class-count-growing FC classifier.

#include <random>

#include "cil/reparam.hpp"

namespace cil {

struct BackboneConfig {
    int in_channels = 3;
    std::vector<int> channels = {16, 32, 64};
    std::vector<int> strides = {1, 2, 2};
    bool with_bn = true;
};

template <typename T>
void he_init(Tensor<T>& w, int fan_in, std::mt19937& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : w.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, uint32_t seed) : cfg_(cfg) {
        if (cfg.channels.size() != cfg.strides.size())
            throw config_error("backbone: channels/strides length mismatch");
        std::mt19937 rng(seed);
        int cin = cfg.in_channels;
        for (size_t i = 0; i < cfg.channels.size(); ++i) {
            ConvBlock<T> blk(cin, cfg.channels[i], cfg.strides[i], cfg.with_bn);
            he_init(blk.main_weight, cin * 9, rng);
            blocks_.push_back(std::move(blk));
            cin = cfg.channels[i];
        }
    }

    int feature_dim() const { return cfg_.channels.back(); }
    std::vector<ConvBlock<T>>& blocks() { return blocks_; }
    const std::vector<ConvBlock<T>>& blocks() const { return blocks_; }
    const BackboneConfig& config() const { return cfg_; }

    Tensor<T> features(const Tensor<T>& x, bool main_training, bool adapter_training) {
        Tensor<T> h = x;
        for (auto& blk : blocks_) h = relu(block_forward(blk, h, main_training, adapter_training));
        return global_avg_pool(h);
    }

    Tensor<T> features_eval(const Tensor<T>& x) { return features(x, false, false); }

    void expand_all(AdapterKind kind) {
        for (auto& blk : blocks_) expand(blk, kind);
    }
    void fuse_all() {
        for (auto& blk : blocks_) fuse(blk);
    }
    bool expanded() const {
        for (auto& blk : blocks_)
            if (blk.adapter) return true;
        return false;
    }

    size_t param_count() const {
        size_t n = 0;
        for (auto& blk : blocks_) n += blk.param_count();
        return n;
    }

    // List of every parameter tensor shape, in a fixed order.
    std::vector<Shape> shape_fingerprint() const {
        std::vector<Shape> fp;
        for (auto& blk : blocks_) {
            fp.push_back(blk.main_weight.shape());
            fp.push_back(blk.main_bias.shape());
            if (blk.main_bn) {
                fp.push_back(blk.main_bn->gamma.shape());
                fp.push_back(blk.main_bn->beta.shape());
            }
            if (blk.adapter) {
                fp.push_back(blk.adapter->weight.shape());
                fp.push_back(blk.adapter->bias.shape());
                if (blk.adapter->bn) {
                    fp.push_back(blk.adapter->bn->gamma.shape());
                    fp.push_back(blk.adapter->bn->beta.shape());
                }
            }
        }
        return fp;
    }

private:
    BackboneConfig cfg_;
    std::vector<ConvBlock<T>> blocks_;
};

// Deep copy with every parameter detached and frozen; used for the
// distillation teacher.
template <typename T>
Backbone<T> clone_detached(const Backbone<T>& src) {
    Backbone<T> out = src;
    for (auto& blk : out.blocks()) {
        blk.main_weight = blk.main_weight.detached();
        blk.main_bias = blk.main_bias.detached();
        if (blk.main_bn) {
            blk.main_bn->gamma = blk.main_bn->gamma.detached();
            blk.main_bn->beta = blk.main_bn->beta.detached();
        }
        if (blk.adapter) {
            blk.adapter->weight = blk.adapter->weight.detached();
            blk.adapter->bias = blk.adapter->bias.detached();
            if (blk.adapter->bn) {
                blk.adapter->bn->gamma = blk.adapter->bn->gamma.detached();
                blk.adapter->bn->beta = blk.adapter->bn->beta.detached();
            }
        }
    }
    return out;
}

template <typename T>
class Classifier {
public:
    Classifier() = default;
    Classifier(int k, int feature_dim, uint32_t seed)
        : weight_(Shape{k, feature_dim}, true), bias_(Shape{k}, true) {
        std::mt19937 rng(seed);
        std::uniform_real_distribution<double> dist(-1e-2, 1e-2);
        for (auto& v : weight_.data()) v = static_cast<T>(dist(rng));
    }

    int num_classes() const { return weight_.dim(0); }
    int feature_dim() const { return weight_.dim(1); }
    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    const Tensor<T>& weight() const { return weight_; }
    const Tensor<T>& bias() const { return bias_; }

    Tensor<T> logits(const Tensor<T>& features) { return linear(features, weight_, bias_); }

    // Appends k_new rows with small seeded uniform noise; old rows are
    // preserved bit-exactly and stay trainable.
    void extend(int k_new, uint32_t seed) {
        if (k_new <= 0) throw config_error("extend_classifier: k_new must be >= 1");
        const int k_old = num_classes(), d = feature_dim();
        Tensor<T> w(Shape{k_old + k_new, d}, true);
        Tensor<T> b(Shape{k_old + k_new}, true);
        std::copy(weight_.data().begin(), weight_.data().end(), w.data().begin());
        std::copy(bias_.data().begin(), bias_.data().end(), b.data().begin());
        std::mt19937 rng(seed);
        std::uniform_real_distribution<double> dist(-1e-2, 1e-2);
        for (size_t i = static_cast<size_t>(k_old) * d; i < w.numel(); ++i)
            w.data()[i] = static_cast<T>(dist(rng));
        weight_ = w;
        bias_ = b;
    }

private:
    Tensor<T> weight_;
    Tensor<T> bias_;
};

}  // namespace cil
