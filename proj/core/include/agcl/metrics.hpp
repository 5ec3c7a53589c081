#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "agcl/data.hpp"

namespace agcl {

struct BinaryMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> bits; // 0 or 1

    BinaryMask() = default;
    BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

    bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
    void set(std::size_t y, std::size_t x, bool v = true) { bits[y * width + x] = v ? 1 : 0; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }

    /// One-vs-rest mask of `label` in `map`.
    static BinaryMask from_labels(const LabelMap &map, std::uint8_t label);
};

/// Pixels of the mask removed by a 4-connected erosion (outside the image counts as empty).
BinaryMask boundary(const BinaryMask &m);

/// Overlap metrics; both masks empty scores 1.
double dsc(const BinaryMask &a, const BinaryMask &b);
double jaccard(const BinaryMask &a, const BinaryMask &b);

/// Pooled directed boundary-to-boundary distances {d(x, db) : x in da} u {d(y, da) : y in db},
/// via an exact Euclidean distance transform. Throws UndefinedMetric if either mask is empty.
std::vector<double> boundary_distances(const BinaryMask &a, const BinaryMask &b);

/// 95th percentile (linear interpolation) of the pooled boundary distances, in pixels.
double hd95(const BinaryMask &a, const BinaryMask &b);
/// Mean of the pooled boundary distances, in pixels.
double asd(const BinaryMask &a, const BinaryMask &b);

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

struct ClassMetrics {
    double dsc = 0.0;
    double jaccard = 0.0;
    double hd95 = kUndefined; // NaN when undefined
    double asd = kUndefined;
};

struct MetricReport {
    double dsc = 0.0;
    double jaccard = 0.0;
    double hd95 = kUndefined;
    double asd = kUndefined;
    std::vector<ClassMetrics> per_class; // index 0 is class 1
};

/// One-vs-rest metrics for labels 1..classes and their macro average. Undefined distances
/// are left out of the distance averages.
MetricReport evaluate(const LabelMap &prediction, const LabelMap &truth, std::size_t classes);

/// Mean of several reports (undefined distances skipped).
MetricReport average(const std::vector<MetricReport> &reports);

} // namespace agcl
