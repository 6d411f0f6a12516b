#include "cil/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace cil {

namespace {
constexpr size_t kRecordSize = 3074;
constexpr size_t kPixelBytes = 3072;
}  // namespace

std::vector<LabeledImage> parse_cifar100(const std::vector<uint8_t>& bytes) {
    if (bytes.size() % kRecordSize != 0) {
        size_t offset = (bytes.size() / kRecordSize) * kRecordSize;
        throw parse_error("truncated CIFAR-100 record at offset " + std::to_string(offset) +
                              " (file size " + std::to_string(bytes.size()) + ")",
                          offset);
    }
    std::vector<LabeledImage> out;
    out.reserve(bytes.size() / kRecordSize);
    for (size_t off = 0; off < bytes.size(); off += kRecordSize) {
        LabeledImage img;
        img.channels = 3;
        img.height = 32;
        img.width = 32;
        img.coarse_label = bytes[off];
        img.fine_label = bytes[off + 1];
        img.pixels.resize(kPixelBytes);
        for (size_t i = 0; i < kPixelBytes; ++i)
            img.pixels[i] = static_cast<float>(bytes[off + 2 + i]) / 255.0f;
        out.push_back(std::move(img));
    }
    return out;
}

std::vector<uint8_t> serialize_cifar100(const std::vector<LabeledImage>& images) {
    std::vector<uint8_t> bytes;
    bytes.reserve(images.size() * kRecordSize);
    for (const auto& img : images) {
        bytes.push_back(static_cast<uint8_t>(img.coarse_label));
        bytes.push_back(static_cast<uint8_t>(img.fine_label));
        for (float p : img.pixels)
            bytes.push_back(static_cast<uint8_t>(std::lround(p * 255.0f)));
    }
    return bytes;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

Dataset make_synthetic(int classes, int per_class, int channels, int size, uint32_t seed,
                       float noise) {
    if (classes < 1 || per_class < 1 || channels < 1 || size < 2)
        throw config_error("make_synthetic: bad dimensions");
    Dataset ds;
    ds.num_classes = classes;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> uni(0.0f, 1.0f);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    const size_t plane = static_cast<size_t>(size) * size;
    // per-class template: a Gaussian blob at a class-specific location plus a
    // class-specific sinusoidal pattern, differing per channel
    std::vector<std::vector<float>> templates(classes);
    for (int c = 0; c < classes; ++c) {
        std::vector<float> t(static_cast<size_t>(channels) * plane);
        float cx = uni(rng) * (size - 1);
        float cy = uni(rng) * (size - 1);
        float sx = 1.0f + uni(rng) * 2.5f;
        float fx = 0.5f + uni(rng) * 2.0f;
        float fy = 0.5f + uni(rng) * 2.0f;
        float phase = uni(rng) * 6.2831853f;
        for (int ch = 0; ch < channels; ++ch) {
            float amp = 0.3f + 0.4f * uni(rng);
            for (int i = 0; i < size; ++i)
                for (int j = 0; j < size; ++j) {
                    float d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
                    float blob = std::exp(-d2 / (2.0f * sx * sx));
                    float wave =
                        0.5f + 0.5f * std::sin(fx * j + fy * i + phase + 1.7f * ch);
                    t[static_cast<size_t>(ch) * plane + static_cast<size_t>(i) * size + j] =
                        std::clamp(0.6f * blob + amp * wave, 0.0f, 1.0f);
                }
        }
        templates[c] = std::move(t);
    }

    for (int c = 0; c < classes; ++c) {
        for (int s = 0; s < per_class; ++s) {
            LabeledImage img;
            img.channels = channels;
            img.height = size;
            img.width = size;
            img.fine_label = c;
            img.coarse_label = 0;
            img.pixels.resize(templates[c].size());
            for (size_t i = 0; i < img.pixels.size(); ++i)
                img.pixels[i] = std::clamp(templates[c][i] + noise * gauss(rng), 0.0f, 1.0f);
            ds.images.push_back(std::move(img));
        }
    }
    return ds;
}

IncrementalSplit build_split(int num_classes, int base, int phases, uint32_t seed) {
    if (phases < 1) throw config_error("build_split: phases must be >= 1");
    if (base < 1 || base > num_classes) throw config_error("build_split: bad base class count");
    int remaining = num_classes - base;
    int incr_phases = phases - 1;
    if (incr_phases > 0 && remaining % incr_phases != 0)
        throw config_error("build_split: " + std::to_string(remaining) +
                           " incremental classes not divisible by " +
                           std::to_string(incr_phases) + " phases");
    if (incr_phases == 0 && remaining != 0)
        throw config_error("build_split: base must cover all classes when phases == 1");

    std::vector<int> order(num_classes);
    for (int i = 0; i < num_classes; ++i) order[i] = i;
    std::mt19937 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    IncrementalSplit split;
    split.base_classes = base;
    split.phases = phases;
    split.class_order_seed = seed;
    split.phase_classes.emplace_back(order.begin(), order.begin() + base);
    int per_phase = incr_phases > 0 ? remaining / incr_phases : 0;
    for (int p = 0; p < incr_phases; ++p)
        split.phase_classes.emplace_back(order.begin() + base + p * per_phase,
                                         order.begin() + base + (p + 1) * per_phase);
    return split;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, int train_per_class) {
    Dataset train, test;
    train.num_classes = test.num_classes = ds.num_classes;
    std::map<int, int> seen;
    for (const auto& img : ds.images) {
        if (seen[img.fine_label]++ < train_per_class)
            train.images.push_back(img);
        else
            test.images.push_back(img);
    }
    std::map<int, int> test_counts;
    for (const auto& img : test.images) test_counts[img.fine_label]++;
    for (const auto& [label, total] : seen)
        if (test_counts[label] == 0)
            throw config_error("split_train_test: class " + std::to_string(label) +
                               " has no test samples left");
    return {train, test};
}

PhaseView::PhaseView(const Dataset& ds, const std::set<int>& allowed)
    : ds_(&ds), allowed_(allowed) {
    for (size_t i = 0; i < ds.images.size(); ++i)
        if (allowed_.count(ds.images[i].fine_label)) indices_.push_back(i);
}

const LabeledImage& PhaseView::image(size_t dataset_index) const {
    const auto& img = ds_->images.at(dataset_index);
    if (!allowed_.count(img.fine_label))
        throw state_error("phase view: access to class " + std::to_string(img.fine_label) +
                          " outside the current phase is forbidden");
    return img;
}

}  // namespace cil
