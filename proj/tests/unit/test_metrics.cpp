#include <gtest/gtest.h>

#include <cmath>

#include "agcl/error.hpp"
#include "agcl/metrics.hpp"
#include "agcl/random.hpp"
#include "oracles.hpp"

using namespace agcl;

namespace {

BinaryMask rect(std::size_t n, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    BinaryMask m(n, n);
    for (std::size_t y = y0; y < y0 + h; ++y)
        for (std::size_t x = x0; x < x0 + w; ++x)
            m.set(y, x);
    return m;
}

oracle::Grid grid_of(const BinaryMask &m) {
    oracle::Grid g{m.height, m.width, {}};
    for (auto b : m.bits)
        g.on.push_back(b);
    return g;
}

BinaryMask random_blobby(Rng &rng, std::size_t n) {
    BinaryMask m(n, n);
    const double cy = rng.uniform(3, double(n) - 3), cx = rng.uniform(3, double(n) - 3);
    const double r = rng.uniform(1.5, 5.0);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double dy = double(y) - cy, dx = double(x) - cx;
            if (dy * dy + dx * dx <= r * r || rng.bernoulli(0.05))
                m.set(y, x);
        }
    return m;
}

} // namespace

TEST(Overlap, HandCases) {
    const BinaryMask a = rect(4, 0, 0, 2, 2), b = rect(4, 0, 1, 2, 2);
    EXPECT_DOUBLE_EQ(dsc(a, b), 0.5);
    EXPECT_DOUBLE_EQ(jaccard(a, b), 2.0 / 6.0);
    EXPECT_DOUBLE_EQ(dsc(a, a), 1.0);
    EXPECT_DOUBLE_EQ(dsc(BinaryMask(4, 4), BinaryMask(4, 4)), 1.0);
    EXPECT_DOUBLE_EQ(jaccard(BinaryMask(4, 4), BinaryMask(4, 4)), 1.0);
    EXPECT_DOUBLE_EQ(dsc(a, BinaryMask(4, 4)), 0.0);
    EXPECT_DOUBLE_EQ(dsc(a, rect(4, 2, 2, 2, 2)), 0.0);
}

TEST(Distances, SinglePixelTranslation) {
    BinaryMask a(8, 8), b(8, 8);
    a.set(2, 2);
    b.set(2, 5);
    EXPECT_DOUBLE_EQ(hd95(a, b), 3.0);
    EXPECT_DOUBLE_EQ(asd(a, b), 3.0);
    EXPECT_DOUBLE_EQ(hd95(a, a), 0.0);
}

TEST(Distances, DiagonalOffset) {
    BinaryMask a(8, 8), b(8, 8);
    a.set(1, 1);
    b.set(4, 5);
    EXPECT_DOUBLE_EQ(hd95(a, b), 5.0);
}

TEST(Distances, EmptyMaskIsUndefined) {
    const BinaryMask a = rect(8, 1, 1, 3, 3);
    EXPECT_THROW(hd95(a, BinaryMask(8, 8)), UndefinedMetric);
    EXPECT_THROW(asd(BinaryMask(8, 8), a), UndefinedMetric);
}

TEST(Boundary, InteriorRemoved) {
    const BinaryMask m = rect(6, 1, 1, 4, 4);
    const BinaryMask b = boundary(m);
    EXPECT_EQ(b.count(), 12u);
    EXPECT_FALSE(b.at(2, 2));
    // Pixels touching the image edge count as boundary.
    EXPECT_EQ(boundary(rect(3, 0, 0, 3, 3)).count(), 8u);
}

TEST(BruteForce, RandomPairsAgree) {
    Rng rng(21);
    for (int c = 0; c < 50; ++c) {
        const BinaryMask a = random_blobby(rng, 16), b = random_blobby(rng, 16);
        const auto o = oracle::score(grid_of(a), grid_of(b));
        EXPECT_NEAR(dsc(a, b), o.dsc, 1e-12);
        EXPECT_NEAR(jaccard(a, b), o.jaccard, 1e-12);
        EXPECT_NEAR(hd95(a, b), o.hd95, 1e-9);
        EXPECT_NEAR(asd(a, b), o.asd, 1e-9);
    }
}

TEST(Properties, SymmetryAndDiceJaccardIdentity) {
    Rng rng(22);
    for (int c = 0; c < 30; ++c) {
        const BinaryMask a = random_blobby(rng, 16), b = random_blobby(rng, 16);
        EXPECT_DOUBLE_EQ(dsc(a, b), dsc(b, a));
        EXPECT_DOUBLE_EQ(hd95(a, b), hd95(b, a));
        EXPECT_NEAR(asd(a, b), asd(b, a), 1e-12);
        const double j = jaccard(a, b);
        EXPECT_NEAR(dsc(a, b), 2 * j / (1 + j), 1e-12);
    }
}

TEST(Evaluate, MacroAverageAndUndefinedClass) {
    LabelMap pred(8, 8), truth(8, 8);
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x) {
            pred.at(y, x) = 1;
            truth.at(y, x) = 1;
        }
    truth.at(6, 6) = 2; // class 2 missed entirely
    const MetricReport r = evaluate(pred, truth, 2);
    ASSERT_EQ(r.per_class.size(), 2u);
    EXPECT_DOUBLE_EQ(r.per_class[0].dsc, 1.0);
    EXPECT_DOUBLE_EQ(r.per_class[1].dsc, 0.0);
    EXPECT_DOUBLE_EQ(r.dsc, 0.5);
    EXPECT_DOUBLE_EQ(r.per_class[0].hd95, 0.0);
    EXPECT_TRUE(std::isnan(r.per_class[1].hd95));
    EXPECT_DOUBLE_EQ(r.hd95, 0.0);
}

TEST(Evaluate, AverageSkipsUndefined) {
    MetricReport a, b;
    a.dsc = 0.2;
    b.dsc = 0.6;
    a.hd95 = 4.0;
    const MetricReport m = average({a, b});
    EXPECT_DOUBLE_EQ(m.dsc, 0.4);
    EXPECT_DOUBLE_EQ(m.hd95, 4.0);
    EXPECT_TRUE(std::isnan(m.asd));
}
