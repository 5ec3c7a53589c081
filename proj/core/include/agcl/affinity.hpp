#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "agcl/linalg.hpp"

namespace agcl {

/// N probability vectors of length C (one per patch), row-major.
class PredictionSet {
public:
    PredictionSet() = default;
    /// Validates that each row is a probability vector (sum 1 within 1e-5, entries in [0,1]).
    PredictionSet(std::size_t count, std::size_t dim, std::vector<double> values);

    std::size_t count() const { return count_; }
    std::size_t dim() const { return dim_; }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values_).subspan(i * dim_, dim_);
    }
    std::span<const double> values() const { return values_; }

private:
    std::size_t count_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> values_;
};

enum class KernelDistance {
    squared,   // exp(-d^2 / (2 sigma^2))
    unsquared, // exp(-d / (2 sigma^2))
};

KernelDistance parse_kernel_distance(std::string_view name);
std::string_view to_string(KernelDistance d);

/// Gaussian-kernel graph between teacher rows i and student rows j.
struct AffinityGraph {
    DenseMatrix matrix;
    double sigma = 1.0;
    KernelDistance distance = KernelDistance::squared;
    std::vector<double> diagonal;

    std::size_t size() const { return matrix.rows(); }
};

AffinityGraph build_graph(const PredictionSet &teacher, const PredictionSet &student, double sigma,
                          KernelDistance distance = KernelDistance::squared);

/// Median of all N^2 teacher/student distances, falling back to the smallest nonzero
/// distance when the median is zero and to 1 when every distance is zero.
double median_bandwidth(const PredictionSet &teacher, const PredictionSet &student);

/// Indices whose diagonal weight lies strictly below the theta-quantile of the diagonal.
std::vector<std::size_t> hard_negative_mask(const AffinityGraph &graph, double theta);

/// Chain rule through the kernel: given dL/dA, returns dL/d(student rows), N x C row-major.
/// The teacher side and sigma are treated as constants.
std::vector<double> student_gradient(const AffinityGraph &graph, const PredictionSet &teacher,
                                     const PredictionSet &student, const DenseMatrix &grad_a);

/// Linear-interpolation (type 7) quantile of `values`, p in [0, 1].
double quantile(std::vector<double> values, double p);

} // namespace agcl
