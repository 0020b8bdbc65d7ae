#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fixquant/tensor.hpp"

namespace fixquant {

/// Images in [0,1] with one integer class label per sample.
struct LabeledDataset {
    Tensor images;  // [N,H,W,C] or [N,features]
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const { return labels.size(); }
    /// Copy of sample i with a leading batch dimension of 1.
    Tensor sample(std::size_t i) const;
    /// Batch of the samples at `indices`, in the given order.
    Tensor gather(const std::vector<std::size_t>& indices) const;
};

/// IDX (big-endian) image/label file pair, as distributed for MNIST.
/// Pixels are scaled by 1/255.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes a dataset back out as an IDX pair (pixels re-quantized to bytes).
void write_idx(const LabeledDataset& ds, const std::string& images_path,
               const std::string& labels_path);

/// Seeded, well-separated Gaussian clusters; a desk-scale trainability fixture.
LabeledDataset synth_gaussian_blobs(int classes, int samples_per_class, int dims,
                                    std::uint64_t seed, double separation = 6.0,
                                    double sigma = 1.0);

/// Seeded synthetic digit images: 28x28x1 glyphs with random shift, scale,
/// rotation and pixel noise. Same shapes and value range as MNIST.
LabeledDataset synth_digits(int samples, std::uint64_t seed);

/// Seeded sample without replacement; stable ordering for a given seed.
LabeledDataset subset(const LabeledDataset& ds, double fraction, std::uint64_t seed);
LabeledDataset subset_by_indices(const LabeledDataset& ds,
                                 const std::vector<std::size_t>& indices);
std::vector<std::size_t> subset_indices(std::size_t total, double fraction,
                                        std::uint64_t seed);

}  // namespace fixquant
