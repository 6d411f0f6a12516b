#pragma once

// Model aggregate (backbone + classifier + prototype store) and its
// bit-exact binary checkpoint format.

#include <cstring>
#include <fstream>

#include "cil/backbone.hpp"
#include "cil/protomem.hpp"

namespace cil {

template <typename T>
struct Model {
    Backbone<T> backbone;
    Classifier<T> classifier;
    PrototypeStore<T> prototypes;
    int phase = 0;  // 1-based index of the last completed phase; 0 = untrained
};

namespace ckpt {

constexpr char kMagic[8] = {'C', 'I', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

inline std::runtime_error parse_error_msg() {
    return std::runtime_error("checkpoint: truncated or corrupted file");
}

template <typename S>
void write_pod(std::ostream& os, const S& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(S));
}

template <typename S>
S read_pod(std::istream& is) {
    S v;
    is.read(reinterpret_cast<char*>(&v), sizeof(S));
    if (!is) throw parse_error_msg();
    return v;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) write_pod<int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(T));
}

template <typename T>
Tensor<T> read_tensor(std::istream& is, bool requires_grad) {
    uint32_t rank = read_pod<uint32_t>(is);
    if (rank > 8) throw parse_error_msg();
    Shape shape(rank);
    for (auto& d : shape) d = read_pod<int32_t>(is);
    Tensor<T> t(shape, requires_grad);
    is.read(reinterpret_cast<char*>(t.data().data()), t.numel() * sizeof(T));
    if (!is) throw parse_error_msg();
    return t;
}

template <typename T>
void write_bn(std::ostream& os, const BatchNormState<T>& bn) {
    write_tensor(os, bn.gamma);
    write_tensor(os, bn.beta);
    write_pod<uint32_t>(os, static_cast<uint32_t>(bn.running_mean.size()));
    os.write(reinterpret_cast<const char*>(bn.running_mean.data()),
             bn.running_mean.size() * sizeof(T));
    os.write(reinterpret_cast<const char*>(bn.running_var.data()),
             bn.running_var.size() * sizeof(T));
    write_pod<T>(os, bn.eps);
    write_pod<T>(os, bn.momentum);
}

template <typename T>
BatchNormState<T> read_bn(std::istream& is, bool requires_grad) {
    BatchNormState<T> bn;
    bn.gamma = read_tensor<T>(is, requires_grad);
    bn.beta = read_tensor<T>(is, requires_grad);
    uint32_t c = read_pod<uint32_t>(is);
    bn.running_mean.resize(c);
    bn.running_var.resize(c);
    is.read(reinterpret_cast<char*>(bn.running_mean.data()), c * sizeof(T));
    is.read(reinterpret_cast<char*>(bn.running_var.data()), c * sizeof(T));
    if (!is) throw parse_error_msg();
    bn.eps = read_pod<T>(is);
    bn.momentum = read_pod<T>(is);
    return bn;
}

}  // namespace ckpt

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw config_error("cannot write checkpoint: " + path);
    os.write(ckpt::kMagic, 8);
    ckpt::write_pod<uint32_t>(os, ckpt::kVersion);
    ckpt::write_pod<uint8_t>(os, sizeof(T));
    ckpt::write_pod<int32_t>(os, model.phase);

    const auto& cfg = model.backbone.config();
    ckpt::write_pod<int32_t>(os, cfg.in_channels);
    ckpt::write_pod<uint32_t>(os, static_cast<uint32_t>(cfg.channels.size()));
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
        ckpt::write_pod<int32_t>(os, cfg.channels[i]);
        ckpt::write_pod<int32_t>(os, cfg.strides[i]);
    }
    ckpt::write_pod<uint8_t>(os, cfg.with_bn ? 1 : 0);

    for (const auto& blk : model.backbone.blocks()) {
        ckpt::write_pod<int32_t>(os, blk.stride);
        ckpt::write_pod<int32_t>(os, blk.padding);
        ckpt::write_pod<uint8_t>(os, blk.frozen_main ? 1 : 0);
        ckpt::write_tensor(os, blk.main_weight);
        ckpt::write_tensor(os, blk.main_bias);
        ckpt::write_pod<uint8_t>(os, blk.main_bn ? 1 : 0);
        if (blk.main_bn) ckpt::write_bn(os, *blk.main_bn);
        ckpt::write_pod<uint8_t>(os, blk.adapter ? 1 : 0);
        if (blk.adapter) {
            ckpt::write_pod<uint8_t>(os, static_cast<uint8_t>(blk.adapter->kind));
            ckpt::write_tensor(os, blk.adapter->weight);
            ckpt::write_tensor(os, blk.adapter->bias);
            ckpt::write_pod<uint8_t>(os, blk.adapter->bn ? 1 : 0);
            if (blk.adapter->bn) ckpt::write_bn(os, *blk.adapter->bn);
        }
    }

    ckpt::write_tensor(os, model.classifier.weight());
    ckpt::write_tensor(os, model.classifier.bias());

    ckpt::write_pod<uint32_t>(os, static_cast<uint32_t>(model.prototypes.size()));
    for (const auto& [cid, entry] : model.prototypes.entries()) {
        ckpt::write_pod<int32_t>(os, cid);
        ckpt::write_pod<int32_t>(os, entry.phase_learned);
        ckpt::write_pod<uint32_t>(os, static_cast<uint32_t>(entry.centroid.size()));
        os.write(reinterpret_cast<const char*>(entry.centroid.data()),
                 entry.centroid.size() * sizeof(T));
    }
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw config_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, ckpt::kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = ckpt::read_pod<uint32_t>(is);
    if (version != ckpt::kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint8_t scalar = ckpt::read_pod<uint8_t>(is);
    if (scalar != sizeof(T))
        throw std::runtime_error("checkpoint: precision mismatch (file " +
                                 std::to_string(scalar * 8) + "-bit)");

    Model<T> model;
    model.phase = ckpt::read_pod<int32_t>(is);

    BackboneConfig cfg;
    cfg.in_channels = ckpt::read_pod<int32_t>(is);
    uint32_t stages = ckpt::read_pod<uint32_t>(is);
    cfg.channels.resize(stages);
    cfg.strides.resize(stages);
    for (uint32_t i = 0; i < stages; ++i) {
        cfg.channels[i] = ckpt::read_pod<int32_t>(is);
        cfg.strides[i] = ckpt::read_pod<int32_t>(is);
    }
    cfg.with_bn = ckpt::read_pod<uint8_t>(is) != 0;
    model.backbone = Backbone<T>(cfg, 0);

    for (auto& blk : model.backbone.blocks()) {
        blk.stride = ckpt::read_pod<int32_t>(is);
        blk.padding = ckpt::read_pod<int32_t>(is);
        blk.frozen_main = ckpt::read_pod<uint8_t>(is) != 0;
        blk.main_weight = ckpt::read_tensor<T>(is, !blk.frozen_main);
        blk.main_bias = ckpt::read_tensor<T>(is, !blk.frozen_main);
        if (ckpt::read_pod<uint8_t>(is)) blk.main_bn = ckpt::read_bn<T>(is, !blk.frozen_main);
        else blk.main_bn.reset();
        if (ckpt::read_pod<uint8_t>(is)) {
            Adapter<T> ad;
            ad.kind = static_cast<AdapterKind>(ckpt::read_pod<uint8_t>(is));
            ad.weight = ckpt::read_tensor<T>(is, true);
            ad.bias = ckpt::read_tensor<T>(is, true);
            if (ckpt::read_pod<uint8_t>(is)) ad.bn = ckpt::read_bn<T>(is, true);
            blk.adapter = std::move(ad);
        }
    }

    Tensor<T> w = ckpt::read_tensor<T>(is, true);
    Tensor<T> b = ckpt::read_tensor<T>(is, true);
    model.classifier = Classifier<T>(w.dim(0), w.dim(1), 0);
    model.classifier.weight() = w;
    model.classifier.bias() = b;

    uint32_t nproto = ckpt::read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < nproto; ++i) {
        int cid = ckpt::read_pod<int32_t>(is);
        int phase = ckpt::read_pod<int32_t>(is);
        uint32_t d = ckpt::read_pod<uint32_t>(is);
        std::vector<T> centroid(d);
        is.read(reinterpret_cast<char*>(centroid.data()), d * sizeof(T));
        if (!is) throw ckpt::parse_error_msg();
        model.prototypes.insert(cid, std::move(centroid), phase);
    }
    return model;
}

}  // namespace cil
