#include "agcl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "agcl/error.hpp"

namespace agcl {

namespace {

constexpr int kMaxSweeps = 80;

void require_finite(std::span<const double> values) {
    for (double v : values)
        if (!std::isfinite(v))
            throw DomainError("DenseMatrix: non-finite entry");
}

// Columns of `a` (rows x cols, cols <= rows) stored column-major for cache-friendly rotations.
struct ColumnStore {
    std::size_t rows, cols;
    std::vector<double> values;
    double *col(std::size_t j) { return values.data() + j * rows; }
};

// Hestenes one-sided Jacobi on a tall (rows >= cols) matrix.
SvdResult jacobi_tall(const DenseMatrix &m) {
    const std::size_t rows = m.rows(), cols = m.cols();
    ColumnStore a{rows, cols, std::vector<double>(rows * cols)};
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            a.values[j * rows + i] = m(i, j);
    ColumnStore v{cols, cols, std::vector<double>(cols * cols, 0.0)};
    for (std::size_t j = 0; j < cols; ++j)
        v.values[j * cols + j] = 1.0;

    const double eps = std::numeric_limits<double>::epsilon();
    const double tol = eps * static_cast<double>(rows);
    double frob2 = 0;
    for (double x : a.values)
        frob2 += x * x;
    // Columns this small carry no recoverable direction; rotating them only cycles.
    const double negligible = frob2 * eps * eps;
    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                double *ap = a.col(p), *aq = a.col(q);
                double alpha = 0, beta = 0, gamma = 0;
                for (std::size_t i = 0; i < rows; ++i) {
                    alpha += ap[i] * ap[i];
                    beta += aq[i] * aq[i];
                    gamma += ap[i] * aq[i];
                }
                if (alpha <= negligible || beta <= negligible)
                    continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta))
                    continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double x = ap[i], y = aq[i];
                    ap[i] = c * x - s * y;
                    aq[i] = s * x + c * y;
                }
                double *vp = v.col(p), *vq = v.col(q);
                for (std::size_t i = 0; i < cols; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
            }
        }
    }
    if (!converged)
        throw SpectralFailure(m.rows(), m.cols());

    std::vector<double> norms(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        const double *aj = a.col(j);
        double s = 0;
        for (std::size_t i = 0; i < rows; ++i)
            s += aj[i] * aj[i];
        norms[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult out{DenseMatrix(rows, cols), std::vector<double>(cols), DenseMatrix(cols, cols)};
    const double tiny = norms.empty() ? 0.0 : norms[order[0]] * eps * static_cast<double>(rows);
    std::vector<std::size_t> null_columns;
    for (std::size_t k = 0; k < cols; ++k) {
        const std::size_t j = order[k];
        double sigma = norms[j];
        if (sigma <= tiny)
            sigma = 0.0;
        out.sigma[k] = sigma;
        const double *aj = a.col(j);
        if (sigma > 0.0) {
            for (std::size_t i = 0; i < rows; ++i)
                out.u(i, k) = aj[i] / sigma;
        } else {
            null_columns.push_back(k);
        }
        const double *vj = v.col(j);
        for (std::size_t i = 0; i < cols; ++i)
            out.vt(k, i) = vj[i];
    }

    // Complete U with orthonormal directions where sigma vanished.
    std::size_t basis = 0;
    for (std::size_t k : null_columns) {
        while (basis < rows) {
            std::vector<double> e(rows, 0.0);
            e[basis++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t c = 0; c < cols; ++c) {
                    // Unfilled null columns are still zero and drop out of the projection.
                    if (c == k)
                        continue;
                    double d = 0;
                    for (std::size_t i = 0; i < rows; ++i)
                        d += out.u(i, c) * e[i];
                    for (std::size_t i = 0; i < rows; ++i)
                        e[i] -= d * out.u(i, c);
                }
            }
            double n = 0;
            for (double x : e)
                n += x * x;
            n = std::sqrt(n);
            if (n > 1e-8) {
                for (std::size_t i = 0; i < rows; ++i)
                    out.u(i, k) = e[i] / n;
                break;
            }
        }
    }

    for (std::size_t k = 0; k < cols; ++k) {
        for (std::size_t i = 0; i < rows; ++i) {
            const double x = out.u(i, k);
            if (std::abs(x) > 0.0) {
                if (x < 0.0) {
                    for (std::size_t r = 0; r < rows; ++r)
                        out.u(r, k) = -out.u(r, k);
                    for (std::size_t c = 0; c < cols; ++c)
                        out.vt(k, c) = -out.vt(k, c);
                }
                break;
            }
        }
    }
    return out;
}

} // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols)
        throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    require_finite(data_);
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        m(i, i) = 1.0;
    return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> values) {
    require_finite(values);
    DenseMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        m(i, i) = values[i];
    return m;
}

DenseMatrix DenseMatrix::transposed() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j)
            t(j, i) = (*this)(i, j);
    return t;
}

double DenseMatrix::frobenius_norm() const {
    double s = 0;
    for (double v : data_)
        s += v * v;
    return std::sqrt(s);
}

DenseMatrix operator*(const DenseMatrix &a, const DenseMatrix &b) {
    if (a.cols_ != b.rows_)
        throw ShapeError("matrix product: inner dimensions differ");
    DenseMatrix c(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
        for (std::size_t k = 0; k < a.cols_; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0)
                continue;
            for (std::size_t j = 0; j < b.cols_; ++j)
                c(i, j) += aik * b(k, j);
        }
    return c;
}

DenseMatrix operator-(const DenseMatrix &a, const DenseMatrix &b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_)
        throw ShapeError("matrix difference: shapes differ");
    DenseMatrix c = a;
    for (std::size_t i = 0; i < c.data_.size(); ++i)
        c.data_[i] -= b.data_[i];
    return c;
}

DenseMatrix operator+(const DenseMatrix &a, const DenseMatrix &b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_)
        throw ShapeError("matrix sum: shapes differ");
    DenseMatrix c = a;
    for (std::size_t i = 0; i < c.data_.size(); ++i)
        c.data_[i] += b.data_[i];
    return c;
}

DenseMatrix operator*(double s, const DenseMatrix &a) {
    DenseMatrix c = a;
    for (double &v : c.data_)
        v *= s;
    return c;
}

DenseMatrix SvdResult::reconstruct() const {
    DenseMatrix us = u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t k = 0; k < sigma.size(); ++k)
            us(i, k) *= sigma[k];
    return us * vt;
}

SvdResult svd(const DenseMatrix &m) {
    if (m.empty())
        throw ShapeError("svd: empty matrix");
    require_finite(m.data());
    if (m.rows() >= m.cols())
        return jacobi_tall(m);
    // Wide input: decompose the transpose and swap the factors.
    SvdResult t = jacobi_tall(m.transposed());
    SvdResult out{t.vt.transposed(), std::move(t.sigma), t.u.transposed()};
    for (std::size_t k = 0; k < out.sigma.size(); ++k) {
        for (std::size_t i = 0; i < out.u.rows(); ++i) {
            const double x = out.u(i, k);
            if (x != 0.0) {
                if (x < 0.0) {
                    for (std::size_t r = 0; r < out.u.rows(); ++r)
                        out.u(r, k) = -out.u(r, k);
                    for (std::size_t c = 0; c < out.vt.cols(); ++c)
                        out.vt(k, c) = -out.vt(k, c);
                }
                break;
            }
        }
    }
    return out;
}

double nuclear_norm(const DenseMatrix &m) {
    const SvdResult s = svd(m);
    return std::accumulate(s.sigma.begin(), s.sigma.end(), 0.0);
}

DenseMatrix svt(const DenseMatrix &m, double threshold) {
    if (!(threshold >= 0.0) || !std::isfinite(threshold))
        throw ParameterError("svt: threshold must be finite and non-negative");
    if (threshold == 0.0)
        return m;
    SvdResult s = svd(m);
    for (double &sigma : s.sigma)
        sigma = std::max(sigma - threshold, 0.0);
    return s.reconstruct();
}

DenseMatrix nuclear_norm_subgradient(const DenseMatrix &m) {
    const SvdResult s = svd(m);
    return s.u * s.vt;
}

double trace(const DenseMatrix &m) {
    if (!m.square())
        throw ShapeError("trace: matrix is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", not square");
    double t = 0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        t += m(i, i);
    return t;
}

} // namespace agcl
