#include "agcl/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agcl/error.hpp"

namespace agcl {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        const double d = a[c] - b[c];
        s += d * d;
    }
    return s;
}

void require_compatible(const PredictionSet &teacher, const PredictionSet &student) {
    if (teacher.count() != student.count() || teacher.dim() != student.dim())
        throw ShapeError("affinity: teacher is " + std::to_string(teacher.count()) + "x" +
                         std::to_string(teacher.dim()) + ", student is " +
                         std::to_string(student.count()) + "x" + std::to_string(student.dim()));
}

} // namespace

PredictionSet::PredictionSet(std::size_t count, std::size_t dim, std::vector<double> values)
    : count_(count), dim_(dim), values_(std::move(values)) {
    if (values_.size() != count * dim)
        throw ShapeError("PredictionSet: expected " + std::to_string(count * dim) +
                         " values, got " + std::to_string(values_.size()));
    for (std::size_t i = 0; i < count; ++i) {
        double sum = 0;
        for (double v : row(i)) {
            if (!(v >= 0.0 && v <= 1.0))
                throw DomainError("PredictionSet: row " + std::to_string(i) +
                                  " has an entry outside [0,1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-5)
            throw DomainError("PredictionSet: row " + std::to_string(i) + " sums to " +
                              std::to_string(sum));
    }
}

KernelDistance parse_kernel_distance(std::string_view name) {
    if (name == "squared")
        return KernelDistance::squared;
    if (name == "unsquared")
        return KernelDistance::unsquared;
    throw ParameterError("unknown kernel distance '" + std::string(name) +
                         "' (expected squared|unsquared)");
}

std::string_view to_string(KernelDistance d) {
    return d == KernelDistance::squared ? "squared" : "unsquared";
}

AffinityGraph build_graph(const PredictionSet &teacher, const PredictionSet &student, double sigma,
                          KernelDistance distance) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw ParameterError("build_graph: sigma must be positive, got " + std::to_string(sigma));
    require_compatible(teacher, student);
    const std::size_t n = teacher.count();
    const double scale = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> values(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double d2 = squared_distance(teacher.row(i), student.row(j));
            const double d = distance == KernelDistance::squared ? d2 : std::sqrt(d2);
            values[i * n + j] = std::exp(-d * scale);
        }
    AffinityGraph g{DenseMatrix(n, n, std::move(values)), sigma, distance, {}};
    g.diagonal.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        g.diagonal[i] = g.matrix(i, i);
    return g;
}

double median_bandwidth(const PredictionSet &teacher, const PredictionSet &student) {
    require_compatible(teacher, student);
    const std::size_t n = teacher.count();
    std::vector<double> d;
    d.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            d.push_back(std::sqrt(squared_distance(teacher.row(i), student.row(j))));
    if (d.empty())
        return 1.0;
    std::sort(d.begin(), d.end());
    const std::size_t m = d.size();
    const double median = m % 2 == 1 ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
    if (median > 0.0)
        return median;
    const auto nonzero = std::upper_bound(d.begin(), d.end(), 0.0);
    return nonzero == d.end() ? 1.0 : *nonzero;
}

double quantile(std::vector<double> values, double p) {
    if (values.empty())
        throw ParameterError("quantile: empty input");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<std::size_t> hard_negative_mask(const AffinityGraph &graph, double theta) {
    if (!(theta > 0.0 && theta < 1.0))
        throw ParameterError("hard_negative_mask: theta must lie in (0,1), got " +
                             std::to_string(theta));
    std::vector<std::size_t> out;
    if (graph.diagonal.empty())
        return out;
    const double q = quantile(graph.diagonal, theta);
    for (std::size_t i = 0; i < graph.diagonal.size(); ++i)
        if (graph.diagonal[i] < q)
            out.push_back(i);
    return out;
}

std::vector<double> student_gradient(const AffinityGraph &graph, const PredictionSet &teacher,
                                     const PredictionSet &student, const DenseMatrix &grad_a) {
    require_compatible(teacher, student);
    const std::size_t n = student.count(), dim = student.dim();
    if (grad_a.rows() != n || grad_a.cols() != n || graph.size() != n)
        throw ShapeError("student_gradient: gradient/graph size does not match prediction count");
    const double inv_s2 = 1.0 / (graph.sigma * graph.sigma);
    std::vector<double> out(n * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = teacher.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double g = grad_a(i, j) * graph.matrix(i, j);
            if (g == 0.0)
                continue;
            const auto s = student.row(j);
            double coeff = 0;
            if (graph.distance == KernelDistance::squared) {
                // d/ds exp(-|t-s|^2/(2 s^2)) = A (t - s) / sigma^2
                coeff = g * inv_s2;
            } else {
                const double d = std::sqrt(squared_distance(t, s));
                if (d == 0.0)
                    continue;
                coeff = g * 0.5 * inv_s2 / d;
            }
            for (std::size_t c = 0; c < dim; ++c)
                out[j * dim + c] += coeff * (t[c] - s[c]);
        }
    }
    return out;
}

} // namespace agcl
