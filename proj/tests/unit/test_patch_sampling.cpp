#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "agcl/error.hpp"
#include "agcl/patch_sampling.hpp"
#include "agcl/random.hpp"
#include "oracles.hpp"

using namespace agcl;

TEST(Grid, RowMajorAndInBounds) {
    const PatchGrid g = make_grid(16, 24, 8);
    ASSERT_EQ(g.count(), 6u);
    EXPECT_EQ(g.patches[1].row, 0u);
    EXPECT_EQ(g.patches[1].col, 8u);
    EXPECT_EQ(g.patches[3].row, 8u);
    EXPECT_EQ(g.patches[3].col, 0u);
    const PatchGrid o = make_grid(8, 8, 4, 2);
    EXPECT_EQ(o.count(), 9u);
    for (const auto &p : o.patches) {
        EXPECT_LE(p.row + 4, 8u);
        EXPECT_LE(p.col + 4, 8u);
    }
    EXPECT_THROW(make_grid(4, 4, 8), ParameterError);
}

TEST(Attend, ProductOfImageAndConfidence) {
    ImageTensor img(1, 2, 2, 0.8f), ones(1, 2, 2, 1.0f), zeros(1, 2, 2, 0.0f), half(1, 2, 2, 0.5f);
    EXPECT_EQ(attend(img, ones, 1), img);
    EXPECT_EQ(attend(img, zeros, 1), zeros);
    EXPECT_FLOAT_EQ(attend(img, half, 1).data[0], 0.4f);
    ImageTensor bad(1, 2, 2, 1.5f);
    EXPECT_THROW(attend(img, bad, 1), DomainError);
}

TEST(Normalize, MinMaxPerImage) {
    ImageTensor img(1, 1, 3, std::vector<float>{2.f, 4.f, 6.f});
    const ImageTensor n = normalize_minmax(img);
    EXPECT_FLOAT_EQ(n.data[0], 0.f);
    EXPECT_FLOAT_EQ(n.data[1], 0.5f);
    EXPECT_FLOAT_EQ(n.data[2], 1.f);
    EXPECT_EQ(normalize_minmax(ImageTensor(1, 2, 2, 0.7f)), ImageTensor(1, 2, 2, 0.0f));
}

TEST(Entropy, UniformHalfIsLn2) {
    const std::vector<float> v(64, 0.5f);
    EXPECT_NEAR(average_patch_entropy(v), std::log(2.0), 1e-9);
}

TEST(Entropy, BinaryValuesNearZero) {
    const std::vector<float> v{0.f, 1.f, 0.f, 0.f, 1.f, 1.f};
    EXPECT_LE(average_patch_entropy(v), 2e-6);
    EXPECT_GE(average_patch_entropy(v), 0.0);
}

TEST(Entropy, TwoPixelHandValue) {
    const std::vector<float> v{0.5f, 1.0f};
    EXPECT_NEAR(average_patch_entropy(v), std::log(2.0) / 2.0, 1e-6);
    EXPECT_NEAR(average_patch_entropy(v), 0.346574, 1e-6);
}

TEST(Entropy, MatchesDirectFormulaAndIsSymmetric) {
    Rng rng(3);
    for (int c = 0; c < 100; ++c) {
        std::vector<float> v(16), flipped(16);
        std::vector<double> d(16);
        for (std::size_t i = 0; i < 16; ++i) {
            v[i] = float(rng.uniform());
            flipped[i] = 1.0f - v[i];
            d[i] = v[i];
        }
        EXPECT_NEAR(average_patch_entropy(v), oracle::patch_entropy(d), 1e-12);
        EXPECT_NEAR(average_patch_entropy(v), average_patch_entropy(flipped), 1e-7);
        EXPECT_LE(average_patch_entropy(v), std::log(2.0));
        std::vector<float> shuffled = v;
        std::reverse(shuffled.begin(), shuffled.end());
        EXPECT_NEAR(average_patch_entropy(v), average_patch_entropy(shuffled), 1e-12);
    }
}

TEST(Entropy, FromGridPatch) {
    ImageTensor img(1, 4, 4, 0.5f);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x)
            img.at(0, y, x) = 1.0f;
    const PatchGrid g = make_grid(4, 4, 2);
    EXPECT_LE(average_patch_entropy(img, g, 0), 2e-6);
    EXPECT_NEAR(average_patch_entropy(img, g, 3), std::log(2.0), 1e-9);
}

TEST(TopN, HandExample) {
    const std::vector<double> e{0.1, 0.6, 0.3, 0.5};
    const SampledPatches s = select_top_n(e, 0, 2);
    std::vector<std::size_t> pos = s.positives;
    std::sort(pos.begin(), pos.end());
    EXPECT_EQ(pos, (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(s.negatives, (std::vector<std::size_t>{2}));
}

TEST(TopN, FullTiePicksLowestIndices) {
    const std::vector<double> e(6, 0.4);
    const SampledPatches s = select_top_n(e, 2, 3);
    std::vector<std::size_t> pos = s.positives;
    std::sort(pos.begin(), pos.end());
    EXPECT_EQ(pos, (std::vector<std::size_t>{0, 1, 3}));
}

TEST(TopN, AllButAnchorLeavesNoNegatives) {
    const std::vector<double> e{0.3, 0.1, 0.2};
    EXPECT_TRUE(select_top_n(e, 0, 2).negatives.empty());
    EXPECT_THROW(select_top_n(e, 0, 3), ParameterError);
    EXPECT_THROW(select_top_n(e, 0, 0), ParameterError);
}

TEST(TopN, MatchesSortOracleIncludingTies) {
    Rng rng(9);
    for (int c = 0; c < 1000; ++c) {
        const std::size_t len = 2 + rng.index(30);
        std::vector<double> s(len);
        for (double &x : s)
            x = c % 2 ? rng.uniform() : double(rng.index(3));
        const std::size_t anchor = rng.index(len), n = 1 + rng.index(len - 1);
        const SampledPatches sp = select_top_n(s, anchor, n);
        std::vector<std::size_t> pos = sp.positives;
        std::sort(pos.begin(), pos.end());
        ASSERT_EQ(pos, oracle::top_n(s, anchor, n)) << "case " << c;
        // Partition and ranking properties.
        std::set<std::size_t> all(sp.positives.begin(), sp.positives.end());
        for (std::size_t i : sp.negatives) {
            EXPECT_FALSE(all.count(i));
            all.insert(i);
            for (std::size_t p : sp.positives)
                EXPECT_GE(s[p], s[i]);
        }
        all.insert(anchor);
        EXPECT_EQ(all.size(), len);
    }
}

TEST(Sample, RanksByPatchEntropy) {
    ImageTensor img(1, 4, 4, 0.0f);
    // Patch 1 is maximally uncertain, patch 2 slightly, patch 3 certain.
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 2; ++x) {
            img.at(0, y, x + 2) = 0.5f;
            img.at(0, y + 2, x) = 0.2f;
            img.at(0, y + 2, x + 2) = 1.0f;
        }
    const SampledPatches s = sample(img, make_grid(4, 4, 2), 0, 1);
    EXPECT_EQ(s.positives, (std::vector<std::size_t>{1}));
    EXPECT_EQ(s.negatives, (std::vector<std::size_t>{2, 3}));
}

TEST(Anchor, HighestMeanConfidence) {
    ImageTensor conf(1, 4, 4, 0.1f);
    conf.at(0, 3, 3) = 0.9f;
    EXPECT_EQ(anchor_by_confidence(conf, make_grid(4, 4, 2)), 3u);
    EXPECT_EQ(anchor_by_confidence(ImageTensor(1, 4, 4, 0.5f), make_grid(4, 4, 2)), 0u);
}

TEST(Samplers, ParseAndScore) {
    EXPECT_EQ(parse_sampler("cosine"), Sampler::cosine);
    EXPECT_EQ(to_string(Sampler::class_confidence), "class_confidence");
    EXPECT_THROW(parse_sampler("bogus"), ParameterError);
    Rng rng(4);
    ImageTensor img(1, 8, 8), conf(1, 8, 8);
    for (std::size_t i = 0; i < 64; ++i) {
        img.data[i] = float(rng.uniform());
        conf.data[i] = float(rng.uniform());
    }
    const PatchGrid g = make_grid(8, 8, 4);
    const auto ent = patch_scores(Sampler::entropy, img, conf, g, 0, 1);
    for (std::size_t i = 0; i < g.count(); ++i)
        EXPECT_DOUBLE_EQ(ent[i], average_patch_entropy(img, g, i));
    EXPECT_EQ(patch_scores(Sampler::random, img, conf, g, 0, 5),
              patch_scores(Sampler::random, img, conf, g, 0, 5));
    EXPECT_NE(patch_scores(Sampler::random, img, conf, g, 0, 5),
              patch_scores(Sampler::random, img, conf, g, 0, 6));
    const auto cos = patch_scores(Sampler::cosine, img, conf, g, 2, 1);
    EXPECT_NEAR(cos[2], 1.0, 1e-12);
}
