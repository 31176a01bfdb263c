#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ood/image.hpp"

namespace ood {

struct ImageDataset {
    std::vector<Image> images;
    std::vector<int> labels;  // empty when unlabeled
    std::string source;
    int image_size = 0;

    std::size_t size() const { return images.size(); }
    bool labeled() const { return !labels.empty(); }
};

enum class CifarVariant { C10, C100 };

// CIFAR binary records: 3073 bytes (label + 3x1024 channel-planar pixels) for
// CIFAR-10, 3074 (coarse + fine label) for CIFAR-100. Pixels map to [0,1].
// The CIFAR-100 loader keeps the fine label.
ImageDataset load_cifar_bin(const std::string& path, CifarVariant variant);
void save_cifar_bin(const std::string& path, const ImageDataset& ds, CifarVariant variant);

// Loads every decodable image (PPM P6) in a flat directory, bilinearly
// resized to target_size. Undecodable files are skipped with a warning on
// stderr; an empty result is an error.
ImageDataset load_image_folder(const std::string& path, int target_size);

enum class SynthKind { Stripes, Blobs, Noise, Checker };

SynthKind synth_kind_from_string(const std::string& name);

// Parametric desk-scale datasets. Stripes carry an orientation class label
// (0 deg / 45 deg), blobs a blob-count class, checker a cell-size class.
ImageDataset synth_dataset(SynthKind kind, int n, int size, std::uint64_t seed);

struct ColorHistogram {
    int bins = 32;
    std::vector<Real> channel[3];  // normalized, each sums to 1
};

ColorHistogram color_histogram(const ImageDataset& ds, int bins = 32);
// Mean over channels of the L1 distance between normalized histograms.
Real histogram_distance(const ColorHistogram& a, const ColorHistogram& b);

}  // namespace ood
