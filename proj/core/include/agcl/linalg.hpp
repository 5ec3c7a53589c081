#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace agcl {

/// Dense row-major float64 matrix. Constructors reject non-finite entries.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols);
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix diagonal(std::span<const double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }
    bool square() const { return rows_ == cols_; }

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }

    DenseMatrix transposed() const;
    double frobenius_norm() const;

    friend DenseMatrix operator*(const DenseMatrix &a, const DenseMatrix &b);
    friend DenseMatrix operator-(const DenseMatrix &a, const DenseMatrix &b);
    friend DenseMatrix operator+(const DenseMatrix &a, const DenseMatrix &b);
    friend DenseMatrix operator*(double s, const DenseMatrix &a);
    friend bool operator==(const DenseMatrix &, const DenseMatrix &) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Thin SVD: u is rows x r, vt is r x cols, r = min(rows, cols).
struct SvdResult {
    DenseMatrix u;
    std::vector<double> sigma;
    DenseMatrix vt;

    DenseMatrix reconstruct() const;
};

/// One-sided Jacobi SVD. Singular values descend; the first nonzero entry of each
/// left singular vector is non-negative. Throws SpectralFailure past the sweep cap.
SvdResult svd(const DenseMatrix &m);

double nuclear_norm(const DenseMatrix &m);

/// Proximal map of threshold * nuclear norm (singular value soft-thresholding).
DenseMatrix svt(const DenseMatrix &m, double threshold);

/// U * V^T from the thin SVD; a subgradient of the nuclear norm at m.
DenseMatrix nuclear_norm_subgradient(const DenseMatrix &m);

double trace(const DenseMatrix &m);

} // namespace agcl
