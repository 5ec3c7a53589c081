#pragma once

// Reference implementations used to check the library from the outside. Each one takes
// a different route from the code it checks (power iteration instead of Jacobi sweeps,
// exhaustive distances instead of a distance transform, full sorts instead of ranking).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace agcl::oracle {

/// Row-major rows x cols matrix.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    double &operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
};

struct PowerSvd {
    std::vector<double> sigma;           // descending
    std::vector<std::vector<double>> u;  // left vectors
    std::vector<std::vector<double>> v;  // right vectors
};

inline double norm2(const std::vector<double> &x) {
    double s = 0;
    for (double v : x)
        s += v * v;
    return std::sqrt(s);
}

/// Singular triplets by power iteration on the deflated matrix, one triplet at a time.
/// Right vectors are re-orthogonalised against earlier ones every iteration.
inline PowerSvd power_svd(const Mat &m, int max_iter = 400000) {
    PowerSvd out;
    Mat r = m;
    const std::size_t k = std::min(m.rows, m.cols);
    double scale = 0;
    for (double x : m.a)
        scale = std::max(scale, std::abs(x));
    for (std::size_t t = 0; t < k; ++t) {
        std::vector<double> v(m.cols), u(m.rows);
        for (std::size_t j = 0; j < m.cols; ++j)
            v[j] = 1.0 + 0.1 * double(j % 7) + 0.01 * double(t + j);
        double sigma = 0;
        for (int it = 0; it < max_iter; ++it) {
            for (const auto &prev : out.v) {
                double d = 0;
                for (std::size_t j = 0; j < m.cols; ++j)
                    d += prev[j] * v[j];
                for (std::size_t j = 0; j < m.cols; ++j)
                    v[j] -= d * prev[j];
            }
            const double nv = norm2(v);
            if (nv <= 1e-300)
                break;
            for (double &x : v)
                x /= nv;
            std::fill(u.begin(), u.end(), 0.0);
            for (std::size_t i = 0; i < m.rows; ++i)
                for (std::size_t j = 0; j < m.cols; ++j)
                    u[i] += r(i, j) * v[j];
            const double s = norm2(u);
            if (s <= scale * 1e-15) {
                sigma = s;
                break;
            }
            for (double &x : u)
                x /= s;
            std::vector<double> next(m.cols, 0.0);
            for (std::size_t i = 0; i < m.rows; ++i)
                for (std::size_t j = 0; j < m.cols; ++j)
                    next[j] += r(i, j) * u[i];
            const double s2 = norm2(next);
            for (double &x : next)
                x /= (s2 > 0 ? s2 : 1);
            double change = 0;
            for (std::size_t j = 0; j < m.cols; ++j)
                change = std::max(change, std::abs(next[j] - v[j]));
            v = next;
            sigma = s2;
            if (change < 1e-15 && it > 3)
                break;
        }
        // Final triplet from the converged right vector.
        std::fill(u.begin(), u.end(), 0.0);
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                u[i] += r(i, j) * v[j];
        sigma = norm2(u);
        if (sigma > 0)
            for (double &x : u)
                x /= sigma;
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                r(i, j) -= sigma * u[i] * v[j];
        out.sigma.push_back(sigma);
        out.u.push_back(u);
        out.v.push_back(v);
    }
    return out;
}

inline double nuclear_norm(const Mat &m) {
    const auto s = power_svd(m).sigma;
    return std::accumulate(s.begin(), s.end(), 0.0);
}

inline Mat svt(const Mat &m, double threshold) {
    const PowerSvd d = power_svd(m);
    Mat out{m.rows, m.cols, std::vector<double>(m.a.size(), 0.0)};
    for (std::size_t t = 0; t < d.sigma.size(); ++t) {
        const double s = std::max(d.sigma[t] - threshold, 0.0);
        if (s == 0.0)
            continue;
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                out(i, j) += s * d.u[t][i] * d.v[t][j];
    }
    return out;
}

/// 0.5 ||x - m||_F^2 + threshold * ||x||_*, the objective svt minimises.
inline double prox_objective(const Mat &x, const Mat &m, double threshold) {
    double f = 0;
    for (std::size_t i = 0; i < x.a.size(); ++i)
        f += 0.5 * (x.a[i] - m.a[i]) * (x.a[i] - m.a[i]);
    return f + threshold * nuclear_norm(x);
}

// ---------------------------------------------------------------------------
// Entropy and ranking

inline double patch_entropy(std::span<const double> values, double eps = 1e-7) {
    double s = 0;
    for (double x : values) {
        x = std::min(std::max(x, eps), 1.0 - eps);
        s += x * std::log(x) + (1.0 - x) * std::log(1.0 - x);
    }
    return -s / double(values.size());
}

/// Full sort by (score desc, index asc) with the anchor removed, then the first n.
inline std::vector<std::size_t> top_n(std::span<const double> scores, std::size_t anchor,
                                      std::size_t n) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (i != anchor)
            idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b])
            return scores[a] > scores[b];
        return a < b;
    });
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// Segmentation metrics by exhaustive search

struct Grid {
    std::size_t h = 0, w = 0;
    std::vector<int> on;
    bool at(long y, long x) const {
        return y >= 0 && x >= 0 && y < long(h) && x < long(w) && on[std::size_t(y) * w + std::size_t(x)];
    }
};

struct Point {
    long y, x;
};

inline std::vector<Point> boundary_points(const Grid &g) {
    std::vector<Point> pts;
    for (long y = 0; y < long(g.h); ++y)
        for (long x = 0; x < long(g.w); ++x)
            if (g.at(y, x) && !(g.at(y - 1, x) && g.at(y + 1, x) && g.at(y, x - 1) && g.at(y, x + 1)))
                pts.push_back({y, x});
    return pts;
}

inline std::vector<double> directed(const std::vector<Point> &from, const std::vector<Point> &to) {
    std::vector<double> out;
    for (const Point &p : from) {
        double best = INFINITY;
        for (const Point &q : to) {
            const double dy = double(p.y - q.y), dx = double(p.x - q.x);
            best = std::min(best, std::sqrt(dy * dy + dx * dx));
        }
        out.push_back(best);
    }
    return out;
}

struct Scores {
    double dsc, jaccard, hd95, asd;
};

inline double quantile7(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double h = (double(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - double(lo)) * (v[hi] - v[lo]);
}

/// Both masks must be nonempty for the distance scores.
inline Scores score(const Grid &a, const Grid &b) {
    std::size_t inter = 0, ca = 0, cb = 0;
    for (std::size_t i = 0; i < a.on.size(); ++i) {
        ca += a.on[i] != 0;
        cb += b.on[i] != 0;
        inter += a.on[i] && b.on[i];
    }
    Scores s{};
    s.dsc = (ca + cb) == 0 ? 1.0 : 2.0 * double(inter) / double(ca + cb);
    const std::size_t uni = ca + cb - inter;
    s.jaccard = uni == 0 ? 1.0 : double(inter) / double(uni);
    const auto ba = boundary_points(a), bb = boundary_points(b);
    std::vector<double> all = directed(ba, bb);
    const auto back = directed(bb, ba);
    all.insert(all.end(), back.begin(), back.end());
    s.hd95 = quantile7(all, 0.95);
    s.asd = std::accumulate(all.begin(), all.end(), 0.0) / double(all.size());
    return s;
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central difference of f along every coordinate of x.
template <class F>
std::vector<double> central_gradient(F &&f, std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(max_i |b_i|, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-12) {
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return diff / std::max(scale, floor);
}

} // namespace agcl::oracle
