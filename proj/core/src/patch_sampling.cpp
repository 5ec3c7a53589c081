#include "agcl/patch_sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "agcl/error.hpp"
#include "agcl/random.hpp"

namespace agcl {

std::vector<float> PatchGrid::values(const ImageTensor &image, std::size_t index) const {
    const PatchLocation &p = patches.at(index);
    std::vector<float> out;
    out.reserve(image.channels * pixels_per_patch());
    for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t y = 0; y < patch_size; ++y)
            for (std::size_t x = 0; x < patch_size; ++x)
                out.push_back(image.at(c, p.row + y, p.col + x));
    return out;
}

std::vector<double> PatchGrid::channel_means(const ImageTensor &image, std::size_t index) const {
    const PatchLocation &p = patches.at(index);
    std::vector<double> out(image.channels, 0.0);
    for (std::size_t c = 0; c < image.channels; ++c) {
        double s = 0;
        for (std::size_t y = 0; y < patch_size; ++y)
            for (std::size_t x = 0; x < patch_size; ++x)
                s += image.at(c, p.row + y, p.col + x);
        out[c] = s / static_cast<double>(pixels_per_patch());
    }
    return out;
}

PatchGrid make_grid(std::size_t height, std::size_t width, std::size_t patch_size,
                    std::size_t stride, int class_id) {
    if (patch_size == 0 || patch_size > height || patch_size > width)
        throw ParameterError("make_grid: patch size " + std::to_string(patch_size) +
                             " does not fit a " + std::to_string(height) + "x" +
                             std::to_string(width) + " image");
    if (stride == 0)
        stride = patch_size;
    PatchGrid grid{patch_size, stride, height, width, {}, class_id};
    for (std::size_t r = 0; r + patch_size <= height; r += stride)
        for (std::size_t c = 0; c + patch_size <= width; c += stride)
            grid.patches.push_back({r, c});
    return grid;
}

ImageTensor normalize_minmax(const ImageTensor &image) {
    ImageTensor out = image;
    if (image.data.empty())
        return out;
    const auto [lo, hi] = std::minmax_element(image.data.begin(), image.data.end());
    const float range = *hi - *lo;
    for (float &v : out.data)
        v = range > 0.0f ? (v - *lo) / range : 0.0f;
    return out;
}

ImageTensor attend(const ImageTensor &image, const ImageTensor &confidence, int class_id) {
    if (confidence.channels != 1 || image.height != confidence.height ||
        image.width != confidence.width)
        throw ShapeError("attend: image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " vs confidence map for class " +
                         std::to_string(class_id) + " " + std::to_string(confidence.height) +
                         "x" + std::to_string(confidence.width));
    for (float v : confidence.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw DomainError("attend: confidence outside [0,1]");
    for (float v : image.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw DomainError("attend: image must be normalised to [0,1]");
    ImageTensor out = image;
    const std::size_t plane = image.plane();
    for (std::size_t c = 0; c < image.channels; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            out.data[c * plane + i] *= confidence.data[i];
    return out;
}

double average_patch_entropy(std::span<const float> values) {
    if (values.empty())
        throw DomainError("average_patch_entropy: empty patch");
    double total = 0;
    for (float raw : values) {
        const double x = std::clamp(static_cast<double>(raw), kEntropyClamp, 1.0 - kEntropyClamp);
        total += x * std::log(x) + (1.0 - x) * std::log(1.0 - x);
    }
    return -total / static_cast<double>(values.size());
}

double average_patch_entropy(const ImageTensor &attended, const PatchGrid &grid,
                             std::size_t index) {
    const std::vector<float> v = grid.values(attended, index);
    return average_patch_entropy(v);
}

SampledPatches select_top_n(std::span<const double> scores, std::size_t anchor, std::size_t n) {
    const std::size_t total = scores.size();
    if (anchor >= total)
        throw ParameterError("sample: anchor " + std::to_string(anchor) + " out of range");
    if (n < 1 || n >= total)
        throw ParameterError("sample: n = " + std::to_string(n) + " must lie in [1, " +
                             std::to_string(total) + ")");
    std::vector<std::size_t> order;
    order.reserve(total - 1);
    for (std::size_t i = 0; i < total; ++i)
        if (i != anchor)
            order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    SampledPatches out;
    out.anchor = anchor;
    out.entropies.assign(scores.begin(), scores.end());
    out.positives.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    out.negatives.assign(order.begin() + static_cast<std::ptrdiff_t>(n), order.end());
    std::sort(out.negatives.begin(), out.negatives.end());
    return out;
}

SampledPatches sample(const ImageTensor &attended, const PatchGrid &grid, std::size_t anchor,
                      std::size_t n) {
    std::vector<double> entropies(grid.count());
    for (std::size_t i = 0; i < grid.count(); ++i)
        entropies[i] = average_patch_entropy(attended, grid, i);
    return select_top_n(entropies, anchor, n);
}

std::size_t anchor_by_confidence(const ImageTensor &confidence, const PatchGrid &grid) {
    if (grid.count() == 0)
        throw ParameterError("anchor_by_confidence: empty grid");
    std::size_t best = 0;
    double best_mean = -1.0;
    for (std::size_t i = 0; i < grid.count(); ++i) {
        const double m = grid.channel_means(confidence, i)[0];
        if (m > best_mean) {
            best_mean = m;
            best = i;
        }
    }
    return best;
}

Sampler parse_sampler(std::string_view name) {
    if (name == "entropy")
        return Sampler::entropy;
    if (name == "cosine")
        return Sampler::cosine;
    if (name == "class_confidence")
        return Sampler::class_confidence;
    if (name == "random")
        return Sampler::random;
    throw ParameterError("unknown sampler '" + std::string(name) +
                         "' (expected entropy|cosine|class_confidence|random)");
}

std::string_view to_string(Sampler s) {
    switch (s) {
    case Sampler::entropy: return "entropy";
    case Sampler::cosine: return "cosine";
    case Sampler::class_confidence: return "class_confidence";
    case Sampler::random: return "random";
    }
    return "?";
}

std::vector<double> patch_scores(Sampler sampler, const ImageTensor &attended,
                                 const ImageTensor &confidence, const PatchGrid &grid,
                                 std::size_t anchor, std::uint64_t random_seed) {
    const std::size_t count = grid.count();
    std::vector<double> scores(count, 0.0);
    switch (sampler) {
    case Sampler::entropy:
        for (std::size_t i = 0; i < count; ++i)
            scores[i] = average_patch_entropy(attended, grid, i);
        break;
    case Sampler::cosine: {
        // Similarity of each attended patch to the anchor's attended patch.
        const std::vector<float> a = grid.values(attended, anchor);
        double na = 0;
        for (float v : a)
            na += double(v) * v;
        for (std::size_t i = 0; i < count; ++i) {
            const std::vector<float> b = grid.values(attended, i);
            double dot = 0, nb = 0;
            for (std::size_t j = 0; j < a.size(); ++j) {
                dot += double(a[j]) * b[j];
                nb += double(b[j]) * b[j];
            }
            const double denom = std::sqrt(na * nb);
            scores[i] = denom > 0 ? dot / denom : 0.0;
        }
        break;
    }
    case Sampler::class_confidence: {
        // Patches whose mean confidence is closest to the anchor's rank highest.
        const double ref = grid.channel_means(confidence, anchor)[0];
        for (std::size_t i = 0; i < count; ++i)
            scores[i] = -std::abs(grid.channel_means(confidence, i)[0] - ref);
        break;
    }
    case Sampler::random: {
        Rng rng(random_seed);
        for (double &s : scores)
            s = rng.uniform();
        break;
    }
    }
    return scores;
}

} // namespace agcl
