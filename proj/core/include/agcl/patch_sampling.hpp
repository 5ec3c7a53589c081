#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "agcl/tensor.hpp"

namespace agcl {

inline constexpr double kEntropyClamp = 1e-7;

/// Patch origin in pixels. Values are gathered on demand from the source image.
struct PatchLocation {
    std::size_t row = 0;
    std::size_t col = 0;
};

/// Square patches covering an image, ordered row-major by (row, col).
struct PatchGrid {
    std::size_t patch_size = 0;
    std::size_t stride = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<PatchLocation> patches;
    int class_id = 1;

    std::size_t count() const { return patches.size(); }
    std::size_t pixels_per_patch() const { return patch_size * patch_size; }

    /// Flattened values of patch `index` across all channels of `image`.
    std::vector<float> values(const ImageTensor &image, std::size_t index) const;
    /// Mean of each channel of `image` over patch `index`.
    std::vector<double> channel_means(const ImageTensor &image, std::size_t index) const;
};

/// stride == 0 means non-overlapping (stride = patch_size).
PatchGrid make_grid(std::size_t height, std::size_t width, std::size_t patch_size,
                    std::size_t stride = 0, int class_id = 1);

struct SampledPatches {
    std::size_t anchor = 0;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    std::vector<double> entropies; // per-patch score used for the ranking
};

/// Per-image min-max rescale to [0, 1]. A constant image maps to zeros.
ImageTensor normalize_minmax(const ImageTensor &image);

/// Element-wise product of a [0,1] image with a single-channel [0,1] confidence map.
ImageTensor attend(const ImageTensor &image, const ImageTensor &confidence, int class_id);

/// Mean binary entropy (nats) of the values, each clamped to [eps, 1 - eps].
double average_patch_entropy(std::span<const float> values);
double average_patch_entropy(const ImageTensor &attended, const PatchGrid &grid, std::size_t index);

/// Top-n scores (excluding the anchor) become positives, ties broken by ascending index.
SampledPatches select_top_n(std::span<const double> scores, std::size_t anchor, std::size_t n);

/// Entropy-driven sampling over every patch of `grid`.
SampledPatches sample(const ImageTensor &attended, const PatchGrid &grid, std::size_t anchor,
                      std::size_t n);

/// Index of the patch with the largest mean confidence (lowest index on ties).
std::size_t anchor_by_confidence(const ImageTensor &confidence, const PatchGrid &grid);

enum class Sampler { entropy, cosine, class_confidence, random };

Sampler parse_sampler(std::string_view name);
std::string_view to_string(Sampler s);

/// Ranking scores for the alternative samplers; `random_seed` feeds Sampler::random only.
std::vector<double> patch_scores(Sampler sampler, const ImageTensor &attended,
                                 const ImageTensor &confidence, const PatchGrid &grid,
                                 std::size_t anchor, std::uint64_t random_seed);

} // namespace agcl
