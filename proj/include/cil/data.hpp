#pragma once

// Dataset ingestion: CIFAR-100 binary records, a seeded synthetic generator,
// and class-incremental split construction.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cil/tensor.hpp"

namespace cil {

struct LabeledImage {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // C*H*W row-major, values in [0,1]
    int fine_label = 0;
    int coarse_label = 0;  // parsed but unused
};

struct Dataset {
    std::vector<LabeledImage> images;
    int num_classes = 0;
};

struct parse_error : std::runtime_error {
    size_t offset;
    parse_error(const std::string& msg, size_t off) : std::runtime_error(msg), offset(off) {}
};

// One record = 1 coarse byte + 1 fine byte + 3072 pixel bytes.
std::vector<LabeledImage> parse_cifar100(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> serialize_cifar100(const std::vector<LabeledImage>& images);
std::vector<uint8_t> read_file_bytes(const std::string& path);

// Seeded class templates (Gaussian blob + frequency pattern) with per-sample
// noise; fully deterministic per (seed, dims).
Dataset make_synthetic(int classes, int per_class, int channels, int size, uint32_t seed,
                       float noise = 0.15f);

struct IncrementalSplit {
    int base_classes = 0;
    int phases = 0;  // total, including the base phase
    std::vector<std::vector<int>> phase_classes;
    uint32_t class_order_seed = 0;
};

IncrementalSplit build_split(int num_classes, int base, int phases, uint32_t seed);

// First `train_per_class` samples of each class go to train, the rest to test.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, int train_per_class);

// Access-restricted per-phase view: yields only indices whose label is in the
// phase's class set; asking for anything else is a hard error.
class PhaseView {
public:
    PhaseView(const Dataset& ds, const std::set<int>& allowed);
    const std::vector<size_t>& indices() const { return indices_; }
    const LabeledImage& image(size_t dataset_index) const;
    const std::set<int>& allowed() const { return allowed_; }
    size_t size() const { return indices_.size(); }

private:
    const Dataset* ds_;
    std::set<int> allowed_;
    std::vector<size_t> indices_;
};

// Pack images into an [N,C,H,W] batch for the requested precision.
template <typename T>
Tensor<T> make_batch(const Dataset& ds, const std::vector<size_t>& idx, std::vector<int>* labels) {
    if (idx.empty()) throw config_error("make_batch: empty index list");
    const auto& first = ds.images.at(idx[0]);
    const int C = first.channels, H = first.height, W = first.width;
    Tensor<T> x(Shape{static_cast<int>(idx.size()), C, H, W});
    if (labels) labels->resize(idx.size());
    const size_t sz = static_cast<size_t>(C) * H * W;
    for (size_t i = 0; i < idx.size(); ++i) {
        const auto& img = ds.images.at(idx[i]);
        for (size_t j = 0; j < sz; ++j) x.data()[i * sz + j] = static_cast<T>(img.pixels[j]);
        if (labels) (*labels)[i] = img.fine_label;
    }
    return x;
}

}  // namespace cil
