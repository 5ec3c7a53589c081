#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "agcl/random.hpp"
#include "agcl/tensor.hpp"

namespace agcl {

/// Per-pixel integer labels, 0 = background.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
        : height(h), width(w), labels(h * w, fill) {}

    std::uint8_t &at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
    bool empty() const { return labels.empty(); }

    friend bool operator==(const LabelMap &, const LabelMap &) = default;
};

struct Sample {
    std::size_t id = 0;
    ImageTensor image; // 1 x H x W in [0,1]
    LabelMap mask;     // may be empty for unlabeled samples loaded from disk
    bool labeled = false;

    friend bool operator==(const Sample &, const Sample &) = default;
};

/// Synthetic dataset: elliptical blobs per foreground class on a textured background.
/// Foreground class k draws its intensity from the k-th of `classes` equal slices of
/// [intensity_min, intensity_max].
struct DatasetSpec {
    std::size_t count = 200;
    std::size_t size = 32;
    std::size_t classes = 2; // foreground classes; labels span 0..classes
    double labeled_fraction = 0.05;
    std::uint64_t seed = 0;

    std::size_t blobs_min = 1; // per foreground class
    std::size_t blobs_max = 2;
    double radius_min = 3.0;
    double radius_max = 7.0;
    double background_min = 0.15;
    double background_max = 0.45;
    double texture_amplitude = 0.08;
    double intensity_min = 0.5;
    double intensity_max = 0.9;
    double noise_sigma = 0.1;

    void validate() const;
    std::size_t labeled_count() const;
};

/// Deterministic in `spec` (seed included). Throws GenerationError when blobs cannot be placed.
std::vector<Sample> generate(const DatasetSpec &spec);

struct WeakParams {
    bool flip = false;
    int shift_x = 0; // columns, positive moves content right
    int shift_y = 0; // rows, positive moves content down
};

struct StrongParams {
    WeakParams weak;
    bool noise = false;
    double noise_sigma = 0.1;
    std::uint64_t noise_seed = 0;
    bool gamma = false;
    double gamma_value = 1.0;
    bool cutout = false;
    std::size_t cutout_row = 0;
    std::size_t cutout_col = 0;
    std::size_t cutout_side = 0;
};

WeakParams draw_weak(Rng &rng);
/// Draws photometric parameters on top of the given geometric ones.
StrongParams draw_strong(Rng &rng, const WeakParams &weak, std::size_t height, std::size_t width);

Sample apply_weak(const Sample &sample, const WeakParams &p);
/// Geometric ops, then gamma, noise and cutout on the image only; output clamped to [0,1].
Sample apply_strong(const Sample &sample, const StrongParams &p);

/// Horizontal flip (p=0.5) and integer shift up to +-2 px, zero padded.
Sample augment_weak(const Sample &sample, Rng &rng);
/// Weak ops plus N(0, 0.1) noise, gamma in [0.7, 1.4] and one cutout square of side <= H/4
/// filled with the image mean.
Sample augment_strong(const Sample &sample, Rng &rng);

/// "AGT1" tensor file: u8 rank, u32 dims, float32 payload, CRC32 trailer.
void write_tensor(const ImageTensor &tensor, const std::filesystem::path &path);
ImageTensor read_tensor(const std::filesystem::path &path);
std::vector<std::uint8_t> encode_tensor(const ImageTensor &tensor);
ImageTensor decode_tensor(std::span<const std::uint8_t> bytes);

/// "AGM1" mask file: u32 H, u32 W, u8 labels, CRC32 trailer.
void write_mask(const LabelMap &mask, const std::filesystem::path &path);
LabelMap read_mask(const std::filesystem::path &path);
std::vector<std::uint8_t> encode_mask(const LabelMap &mask);
LabelMap decode_mask(std::span<const std::uint8_t> bytes);

/// images/NNNN.agt, masks/NNNN.agm and split.txt ("NNNN labeled|unlabeled" per line).
void write_dataset(const std::vector<Sample> &samples, const std::filesystem::path &dir);
/// Masks of unlabeled samples are loaded when present.
std::vector<Sample> read_dataset(const std::filesystem::path &dir);

} // namespace agcl
