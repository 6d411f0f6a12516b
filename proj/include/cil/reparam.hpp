#pragma once

// Expandable conv blocks: a frozen 3x3 main branch plus a trainable residual
// adapter, and the lossless fusion of the adapter back into the main kernel.

#include <optional>
#include <random>

#include "cil/tensor.hpp"

namespace cil {

enum class AdapterKind { Conv1x1, Conv1x1WithBN, Conv3x3 };

inline const char* to_string(AdapterKind k) {
    switch (k) {
        case AdapterKind::Conv1x1: return "conv1x1";
        case AdapterKind::Conv1x1WithBN: return "conv1x1_bn";
        case AdapterKind::Conv3x3: return "conv3x3";
    }
    return "?";
}

inline AdapterKind adapter_kind_from_string(const std::string& s) {
    if (s == "conv1x1") return AdapterKind::Conv1x1;
    if (s == "conv1x1_bn") return AdapterKind::Conv1x1WithBN;
    if (s == "conv3x3") return AdapterKind::Conv3x3;
    throw config_error("unknown adapter kind: " + s);
}

// Per output channel: s = gamma / sqrt(var + eps); w' = s*w; b' = beta + s*(b - mean).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> fuse_conv_bn(const Tensor<T>& w, const Tensor<T>& b,
                                             const BatchNormState<T>& bn) {
    const int O = w.dim(0);
    Tensor<T> wf(w.shape());
    Tensor<T> bf(b.shape());
    const size_t per_out = w.numel() / O;
    for (int o = 0; o < O; ++o) {
        T denom = bn.running_var[o] + bn.eps;
        if (denom <= T(0)) throw numeric_error("fuse_conv_bn: var + eps not positive");
        T s = bn.gamma.data()[o] / std::sqrt(denom);
        for (size_t i = 0; i < per_out; ++i)
            wf.data()[o * per_out + i] = s * w.data()[o * per_out + i];
        bf.data()[o] = bn.beta.data()[o] + s * (b.data()[o] - bn.running_mean[o]);
    }
    return {wf, bf};
}

template <typename T>
Tensor<T> pad_1x1_to_3x3(const Tensor<T>& w) {
    if (w.rank() != 4 || w.dim(2) != 1 || w.dim(3) != 1)
        throw shape_error("pad_1x1_to_3x3: expected [O,C,1,1], got " + shape_str(w.shape()));
    const int O = w.dim(0), C = w.dim(1);
    Tensor<T> out(Shape{O, C, 3, 3});
    for (int o = 0; o < O; ++o)
        for (int c = 0; c < C; ++c)
            out.data()[((static_cast<size_t>(o) * C + c) * 3 + 1) * 3 + 1] =
                w.data()[static_cast<size_t>(o) * C + c];
    return out;
}

template <typename T>
struct Adapter {
    AdapterKind kind = AdapterKind::Conv1x1;
    Tensor<T> weight;
    Tensor<T> bias;
    std::optional<BatchNormState<T>> bn;
};

template <typename T>
struct ConvBlock {
    Tensor<T> main_weight;  // [O,C,3,3]
    Tensor<T> main_bias;    // [O]
    std::optional<BatchNormState<T>> main_bn;
    std::optional<Adapter<T>> adapter;
    bool frozen_main = false;
    int stride = 1;
    int padding = 1;

    ConvBlock() = default;
    ConvBlock(int in_channels, int out_channels, int stride_, bool with_bn = true)
        : main_weight(Shape{out_channels, in_channels, 3, 3}, true),
          main_bias(Shape{out_channels}, true),
          stride(stride_),
          padding(1) {
        if (with_bn) main_bn.emplace(out_channels);
    }

    int in_channels() const { return main_weight.dim(1); }
    int out_channels() const { return main_weight.dim(0); }

    size_t param_count() const {
        size_t n = main_weight.numel() + main_bias.numel();
        if (main_bn) n += 2 * static_cast<size_t>(main_bn->channels());
        if (adapter) {
            n += adapter->weight.numel() + adapter->bias.numel();
            if (adapter->bn) n += 2 * static_cast<size_t>(adapter->bn->channels());
        }
        return n;
    }
};

// forward as a free function so BN state threading stays explicit
template <typename T>
Tensor<T> block_forward(ConvBlock<T>& blk, const Tensor<T>& x, bool main_training,
                        bool adapter_training) {
    Tensor<T> y = conv2d(x, blk.main_weight, blk.main_bias, blk.stride, blk.padding);
    if (blk.main_bn) y = batchnorm2d(y, *blk.main_bn, main_training);
    if (blk.adapter) {
        auto& ad = *blk.adapter;
        int pad = ad.kind == AdapterKind::Conv3x3 ? 1 : 0;
        Tensor<T> a = conv2d(x, ad.weight, ad.bias, blk.stride, pad);
        if (ad.bn) a = batchnorm2d(a, *ad.bn, adapter_training);
        y = add(y, a);
    }
    return y;
}

// Attach a zero-initialized adapter and freeze the main branch. Forward is
// unchanged at the moment of expansion.
template <typename T>
void expand(ConvBlock<T>& blk, AdapterKind kind) {
    if (blk.adapter) throw state_error("expand: block already has an adapter");
    const int O = blk.out_channels(), C = blk.in_channels();
    Adapter<T> ad;
    ad.kind = kind;
    int k = kind == AdapterKind::Conv3x3 ? 3 : 1;
    ad.weight = Tensor<T>(Shape{O, C, k, k}, true);
    ad.bias = Tensor<T>(Shape{O}, true);
    if (kind == AdapterKind::Conv1x1WithBN) ad.bn.emplace(O);
    blk.adapter = std::move(ad);
    blk.frozen_main = true;
    blk.main_weight.set_requires_grad(false);
    blk.main_bias.set_requires_grad(false);
    if (blk.main_bn) {
        blk.main_bn->gamma.set_requires_grad(false);
        blk.main_bn->beta.set_requires_grad(false);
    }
}

// Fold both branches to plain convs, add the (padded) adapter kernel into the
// main kernel, drop the adapter, and reset BN to identity so the block keeps
// its shape fingerprint. Requires eval-mode statistics.
template <typename T>
void fuse(ConvBlock<T>& blk) {
    if (!blk.adapter) throw state_error("fuse: block has no adapter");
    auto& ad = *blk.adapter;
    if (blk.main_weight.dim(2) != 3 || blk.padding != 1)
        throw state_error("fuse: main branch must be a 3x3 conv with padding 1");

    Tensor<T> wm = blk.main_weight.detached();
    Tensor<T> bm = blk.main_bias.detached();
    if (blk.main_bn) {
        auto [wf, bf] = fuse_conv_bn(wm, bm, *blk.main_bn);
        wm = wf;
        bm = bf;
    }
    Tensor<T> wa = ad.weight.detached();
    Tensor<T> ba = ad.bias.detached();
    if (ad.bn) {
        auto [wf, bf] = fuse_conv_bn(wa, ba, *ad.bn);
        wa = wf;
        ba = bf;
    }
    if (ad.kind != AdapterKind::Conv3x3) wa = pad_1x1_to_3x3(wa);

    for (size_t i = 0; i < wm.numel(); ++i) wm.data()[i] += wa.data()[i];
    for (size_t i = 0; i < bm.numel(); ++i) bm.data()[i] += ba.data()[i];

    bool rg = !blk.frozen_main;
    wm.set_requires_grad(rg);
    bm.set_requires_grad(rg);
    blk.main_weight = wm;
    blk.main_bias = bm;
    if (blk.main_bn) {
        // fresh identity BN tensors, so copies of the pre-fusion block are
        // not mutated through shared parameter handles
        const int O = blk.out_channels();
        T eps = blk.main_bn->eps;
        T momentum = blk.main_bn->momentum;
        blk.main_bn.emplace(O, eps, momentum);
        // var + eps must equal exactly 1 for the eval-mode map to be identity
        std::fill(blk.main_bn->running_var.begin(), blk.main_bn->running_var.end(), T(1) - eps);
        blk.main_bn->gamma.set_requires_grad(rg);
        blk.main_bn->beta.set_requires_grad(rg);
    }
    blk.adapter.reset();
}

// Unfreeze after fusion so the next phase can decide what to train.
template <typename T>
void unfreeze(ConvBlock<T>& blk) {
    blk.frozen_main = false;
    blk.main_weight.set_requires_grad(true);
    blk.main_bias.set_requires_grad(true);
    if (blk.main_bn) {
        blk.main_bn->gamma.set_requires_grad(true);
        blk.main_bn->beta.set_requires_grad(true);
    }
}

}  // namespace cil
