#include "agcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "agcl/affinity.hpp"
#include "agcl/error.hpp"

namespace agcl {

namespace {

void require_same_dims(const BinaryMask &a, const BinaryMask &b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("metrics: mask sizes " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " and " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + " differ");
}

constexpr double kInf = 1e30;

// Felzenszwalb-Huttenlocher lower envelope of parabolas: exact 1-D squared distance transform.
void edt_1d(const std::vector<double> &f, std::vector<double> &d) {
    const std::size_t n = f.size();
    std::vector<std::size_t> v(n);
    std::vector<double> z(n + 1);
    std::size_t k = 0;
    v[0] = 0;
    constexpr double inf = std::numeric_limits<double>::infinity();
    z[0] = -inf;
    z[1] = inf;
    auto intersect = [&](std::size_t q, std::size_t p) {
        const double qd = double(q), pd = double(p);
        return ((f[q] + qd * qd) - (f[p] + pd * pd)) / (2.0 * qd - 2.0 * pd);
    };
    for (std::size_t q = 1; q < n; ++q) {
        double s = intersect(q, v[k]);
        while (s <= z[k]) { // z[0] = -inf stops the walk
            --k;
            s = intersect(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    d.assign(n, 0.0);
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < double(q))
            ++k;
        const double diff = double(q) - double(v[k]);
        d[q] = diff * diff + f[v[k]];
    }
}

// Squared Euclidean distance from every pixel to the nearest set pixel of `m`.
std::vector<double> squared_distance_transform(const BinaryMask &m) {
    const std::size_t h = m.height, w = m.width;
    std::vector<double> grid(h * w);
    for (std::size_t i = 0; i < h * w; ++i)
        grid[i] = m.bits[i] ? 0.0 : kInf;
    std::vector<double> f, d;
    f.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y)
            f[y] = grid[y * w + x];
        edt_1d(f, d);
        for (std::size_t y = 0; y < h; ++y)
            grid[y * w + x] = d[y];
    }
    f.resize(w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x)
            f[x] = grid[y * w + x];
        edt_1d(f, d);
        for (std::size_t x = 0; x < w; ++x)
            grid[y * w + x] = d[x];
    }
    return grid;
}

double nan_mean(const std::vector<double> &v) {
    double s = 0;
    std::size_t n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += x;
            ++n;
        }
    return n == 0 ? kUndefined : s / double(n);
}

} // namespace

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

BinaryMask BinaryMask::from_labels(const LabelMap &map, std::uint8_t label) {
    BinaryMask m(map.height, map.width);
    for (std::size_t i = 0; i < map.labels.size(); ++i)
        m.bits[i] = map.labels[i] == label ? 1 : 0;
    return m;
}

BinaryMask boundary(const BinaryMask &m) {
    BinaryMask out(m.height, m.width);
    for (std::size_t y = 0; y < m.height; ++y)
        for (std::size_t x = 0; x < m.width; ++x) {
            if (!m.at(y, x))
                continue;
            const bool interior = y > 0 && x > 0 && y + 1 < m.height && x + 1 < m.width &&
                                  m.at(y - 1, x) && m.at(y + 1, x) && m.at(y, x - 1) &&
                                  m.at(y, x + 1);
            out.set(y, x, !interior);
        }
    return out;
}

double dsc(const BinaryMask &a, const BinaryMask &b) {
    require_same_dims(a, b);
    std::size_t inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        sa += a.bits[i];
        sb += b.bits[i];
    }
    if (sa + sb == 0)
        return 1.0;
    return 2.0 * double(inter) / double(sa + sb);
}

double jaccard(const BinaryMask &a, const BinaryMask &b) {
    require_same_dims(a, b);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    if (uni == 0)
        return 1.0;
    return double(inter) / double(uni);
}

std::vector<double> boundary_distances(const BinaryMask &a, const BinaryMask &b) {
    require_same_dims(a, b);
    if (a.empty() || b.empty())
        throw UndefinedMetric("boundary distance undefined: a mask is empty");
    const BinaryMask ba = boundary(a), bb = boundary(b);
    const std::vector<double> to_a = squared_distance_transform(ba);
    const std::vector<double> to_b = squared_distance_transform(bb);
    std::vector<double> out;
    for (std::size_t i = 0; i < ba.bits.size(); ++i)
        if (ba.bits[i])
            out.push_back(std::sqrt(to_b[i]));
    for (std::size_t i = 0; i < bb.bits.size(); ++i)
        if (bb.bits[i])
            out.push_back(std::sqrt(to_a[i]));
    return out;
}

double hd95(const BinaryMask &a, const BinaryMask &b) {
    return quantile(boundary_distances(a, b), 0.95);
}

double asd(const BinaryMask &a, const BinaryMask &b) {
    const std::vector<double> d = boundary_distances(a, b);
    return std::accumulate(d.begin(), d.end(), 0.0) / double(d.size());
}

MetricReport evaluate(const LabelMap &prediction, const LabelMap &truth, std::size_t classes) {
    if (prediction.height != truth.height || prediction.width != truth.width)
        throw ShapeError("evaluate: prediction and truth sizes differ");
    MetricReport r;
    std::vector<double> d, j, h, s;
    for (std::size_t k = 1; k <= classes; ++k) {
        const BinaryMask p = BinaryMask::from_labels(prediction, static_cast<std::uint8_t>(k));
        const BinaryMask t = BinaryMask::from_labels(truth, static_cast<std::uint8_t>(k));
        ClassMetrics c;
        c.dsc = dsc(p, t);
        c.jaccard = jaccard(p, t);
        if (!p.empty() && !t.empty()) {
            const std::vector<double> dist = boundary_distances(p, t);
            c.hd95 = quantile(dist, 0.95);
            c.asd = std::accumulate(dist.begin(), dist.end(), 0.0) / double(dist.size());
        }
        r.per_class.push_back(c);
        d.push_back(c.dsc);
        j.push_back(c.jaccard);
        h.push_back(c.hd95);
        s.push_back(c.asd);
    }
    r.dsc = nan_mean(d);
    r.jaccard = nan_mean(j);
    r.hd95 = nan_mean(h);
    r.asd = nan_mean(s);
    return r;
}

MetricReport average(const std::vector<MetricReport> &reports) {
    MetricReport out;
    if (reports.empty())
        return out;
    std::vector<double> d, j, h, s;
    std::size_t classes = reports.front().per_class.size();
    std::vector<std::vector<ClassMetrics>> per(classes);
    for (const MetricReport &r : reports) {
        d.push_back(r.dsc);
        j.push_back(r.jaccard);
        h.push_back(r.hd95);
        s.push_back(r.asd);
        for (std::size_t k = 0; k < std::min(classes, r.per_class.size()); ++k)
            per[k].push_back(r.per_class[k]);
    }
    out.dsc = nan_mean(d);
    out.jaccard = nan_mean(j);
    out.hd95 = nan_mean(h);
    out.asd = nan_mean(s);
    for (const auto &cls : per) {
        std::vector<double> cd, cj, ch, cs;
        for (const ClassMetrics &c : cls) {
            cd.push_back(c.dsc);
            cj.push_back(c.jaccard);
            ch.push_back(c.hd95);
            cs.push_back(c.asd);
        }
        out.per_class.push_back({nan_mean(cd), nan_mean(cj), nan_mean(ch), nan_mean(cs)});
    }
    return out;
}

} // namespace agcl
