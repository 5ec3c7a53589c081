#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "agcl/binary_io.hpp"
#include "agcl/error.hpp"
#include "agcl/model.hpp"
#include "agcl/random.hpp"
#include "oracles.hpp"

using namespace agcl;

namespace {

Architecture small_arch() {
    Architecture a;
    a.classes = 3;
    a.c1 = 3;
    a.c2 = 4;
    a.c3 = 5;
    a.embed_hidden = 6;
    a.embed_dim = 4;
    return a;
}

template <class T>
Tensor3<T> random_image(Rng &rng, std::size_t size) {
    Tensor3<T> img(1, size, size);
    for (T &v : img.data)
        v = static_cast<T>(rng.uniform());
    return img;
}

std::filesystem::path temp_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("agcl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST(Model, ZeroParametersGiveUniformProbabilities) {
    const Architecture a = small_arch();
    const auto p = zero_params<double>(a);
    Rng rng(1);
    const auto t = forward(p, a, random_image<double>(rng, 8));
    for (double v : t.probs.data)
        EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Model, ProbabilitiesSumToOne) {
    const Architecture a = small_arch();
    const auto p = init_params<double>(a, 7);
    Rng rng(2);
    const auto t = forward(p, a, random_image<double>(rng, 16));
    for (std::size_t m = 0; m < t.probs.plane(); ++m) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = t.probs.data[c * t.probs.plane() + m];
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Model, HeadPermutationPermutesClasses) {
    const Architecture a = small_arch();
    const auto p = init_params<double>(a, 8);
    auto q = p;
    const std::size_t w = q.index_of("head.w"), b = q.index_of("head.b");
    const std::size_t perm[3] = {2, 0, 1};
    {
        auto dw = q.mutable_values(w);
        auto db = q.mutable_values(b);
        const auto sw = p.values(w);
        const auto sb = p.values(b);
        for (std::size_t c = 0; c < 3; ++c) {
            db[c] = sb[perm[c]] + 0.1 * double(c);
            for (std::size_t i = 0; i < a.c1; ++i)
                dw[c * a.c1 + i] = sw[perm[c] * a.c1 + i];
        }
    }
    // Bias shifts keep the check non-trivial on the unpermuted side.
    auto r = p;
    {
        auto db = r.mutable_values(b);
        for (std::size_t c = 0; c < 3; ++c)
            db[perm[c]] += 0.1 * double(c);
    }
    Rng rng(3);
    const auto img = random_image<double>(rng, 8);
    const auto tq = forward(q, a, img), tr = forward(r, a, img);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t m = 0; m < 64; ++m)
            EXPECT_NEAR(tq.probs.data[c * 64 + m], tr.probs.data[perm[c] * 64 + m], 1e-14);
}

TEST(Model, RejectsBadShapes) {
    const Architecture a = small_arch();
    const auto p = init_params<double>(a, 1);
    EXPECT_THROW(forward(p, a, Tensor3<double>(1, 12, 12)), ShapeError);
    EXPECT_THROW(forward(p, a, Tensor3<double>(2, 8, 8)), ShapeError);
}

TEST(Model, InferArchitectureRoundTrip) {
    const Architecture a = small_arch();
    EXPECT_EQ(infer_architecture(init_params<float>(a, 1)), a);
    EXPECT_EQ(infer_architecture(init_params<float>(Architecture{}, 1)), Architecture{});
}

TEST(Model, InitIsDeterministicInSeed) {
    const Architecture a = small_arch();
    EXPECT_EQ(init_params<float>(a, 5), init_params<float>(a, 5));
    EXPECT_FALSE(init_params<float>(a, 5) == init_params<float>(a, 6));
}

TEST(Model, BackwardMatchesFiniteDifferences) {
    const Architecture a = small_arch();
    Rng rng(4);
    const auto img = random_image<double>(rng, 8);
    auto params = init_params<double>(a, 9);
    Tensor3<double> wp(3, 8, 8), wf(a.c1, 8, 8);
    for (double &v : wp.data)
        v = rng.normal();
    for (double &v : wf.data)
        v = rng.normal();
    const auto objective = [&](const ParamSet<double> &p) {
        const auto t = forward(p, a, img);
        double s = 0;
        for (std::size_t i = 0; i < wp.size(); ++i)
            s += wp.data[i] * t.probs.data[i];
        for (std::size_t i = 0; i < wf.size(); ++i)
            s += wf.data[i] * t.features().data[i];
        return s;
    };
    const auto trace = forward(params, a, img);
    const auto grads = backward(trace, wp, wf);
    for (std::size_t gi = 0; gi < params.group_count(); ++gi) {
        const std::size_t n = params.group(gi).size();
        for (std::size_t probe = 0; probe < std::min<std::size_t>(n, 6); ++probe) {
            const std::size_t j = rng.index(n);
            const double keep = params.values(gi)[j];
            params.mutable_values(gi)[j] = keep + 1e-6;
            const double up = objective(params);
            params.mutable_values(gi)[j] = keep - 1e-6;
            const double down = objective(params);
            params.mutable_values(gi)[j] = keep;
            const double fd = (up - down) / 2e-6;
            const double an = grads.values(gi)[j];
            EXPECT_LE(std::abs(an - fd), 1e-6 * std::max(1.0, std::abs(fd)))
                << params.group(gi).name << "[" << j << "]";
        }
    }
}

TEST(Model, StaleTraceIsRejected) {
    const Architecture a = small_arch();
    auto p = init_params<double>(a, 1);
    Rng rng(5);
    const auto t = forward(p, a, random_image<double>(rng, 8));
    p.mutable_values(0)[0] += 1.0;
    EXPECT_THROW(backward(t, Tensor3<double>(3, 8, 8)), UsageError);
}

TEST(Projection, UnitNormAndDegenerate) {
    const Architecture a = small_arch();
    const auto p = init_params<double>(a, 2);
    const std::vector<double> pooled{0.3, -0.2, 0.9};
    const Embedding e = project(p, std::span<const double>(pooled));
    EXPECT_EQ(e.dim(), a.embed_dim);
    EXPECT_NEAR(std::sqrt(e.dot(e)), 1.0, 1e-12);
    const auto z = zero_params<double>(a);
    EXPECT_THROW(project(z, std::span<const double>(pooled)), DegenerateError);
    const std::vector<double> wrong{1.0};
    EXPECT_THROW(project(p, std::span<const double>(wrong)), ShapeError);
}

TEST(Projection, BackwardMatchesFiniteDifferences) {
    const Architecture a = small_arch();
    auto p = init_params<double>(a, 3);
    Rng rng(6);
    std::vector<double> pooled(a.c1), w(a.embed_dim);
    for (double &v : pooled)
        v = rng.normal();
    for (double &v : w)
        v = rng.normal();
    const auto f = [&](const std::vector<double> &x) {
        const Embedding e = project(p, std::span<const double>(x));
        double s = 0;
        for (std::size_t i = 0; i < w.size(); ++i)
            s += w[i] * e.values[i];
        return s;
    };
    auto grads = p.zeros_like();
    const auto trace = project_forward(p, std::span<const double>(pooled));
    const auto g = project_backward(p, trace, std::span<const double>(w), grads);
    EXPECT_LT(oracle::relative_error(g, oracle::central_gradient(f, pooled, 1e-6)), 1e-7);
}

TEST(Patches, PoolAndUnpoolAreAdjoint) {
    Rng rng(7);
    Tensor3<double> f(2, 8, 8), g(2, 8, 8);
    for (double &v : f.data)
        v = rng.normal();
    const auto pooled = pool_patch(f, 2, 4, 4);
    std::vector<double> y{rng.normal(), rng.normal()};
    unpool_patch(std::span<const double>(y), 2, 4, 4, g);
    double lhs = 0, rhs = 0;
    for (std::size_t c = 0; c < 2; ++c)
        lhs += pooled[c] * y[c];
    for (std::size_t i = 0; i < f.size(); ++i)
        rhs += f.data[i] * g.data[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
    EXPECT_THROW(pool_patch(f, 6, 6, 4), ShapeError);
}

TEST(Ema, EndpointsAndContraction) {
    const Architecture a = small_arch();
    const auto t = init_params<double>(a, 1), s = init_params<double>(a, 2);
    EXPECT_EQ(ema_update(t, s, 1.0), t);
    EXPECT_EQ(ema_update(t, s, 0.0), s);
    const auto half = ema_update(t, s, 0.99);
    for (std::size_t gi = 0; gi < t.group_count(); ++gi)
        for (std::size_t j = 0; j < t.group(gi).size(); ++j) {
            const double before = t.values(gi)[j] - s.values(gi)[j];
            const double after = half.values(gi)[j] - s.values(gi)[j];
            EXPECT_NEAR(after, 0.99 * before, 1e-15);
        }
    EXPECT_THROW(ema_update(t, s, 1.01), ParameterError);
    EXPECT_THROW(ema_update(t, init_params<double>(Architecture{}, 1), 0.5), ShapeError);
}

TEST(ParamSetOps, AxpyAndGeneration) {
    const Architecture a = small_arch();
    auto p = init_params<double>(a, 1);
    const auto q = init_params<double>(a, 2);
    const auto keep = p;
    const auto g0 = p.generation();
    p.axpy(2.0, q);
    EXPECT_GT(p.generation(), g0);
    EXPECT_DOUBLE_EQ(p.values(0)[0], keep.values(0)[0] + 2.0 * q.values(0)[0]);
    EXPECT_THROW(p["missing"], ParameterError);
    EXPECT_TRUE(p.all_finite());
}

TEST(Checkpoint, RoundTripIsExact) {
    const auto dir = temp_dir("ckpt");
    const auto p = init_params<float>(Architecture{}, 11);
    write_params(p, dir / "m.agcl");
    EXPECT_EQ(read_params(dir / "m.agcl"), p);
}

TEST(Checkpoint, DetectsCorruptionAndVersion) {
    const auto p = init_params<float>(small_arch(), 12);
    std::vector<NamedArray> arrays;
    for (const auto &g : p.groups())
        arrays.push_back({g.name, g.dims, g.values});
    const auto bytes = encode_checkpoint(arrays);
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(flipped), ChecksumError);
    auto newer = bytes;
    newer[4] = 2;
    EXPECT_THROW(decode_checkpoint(newer), VersionError);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 3);
    EXPECT_THROW(decode_checkpoint(cut), TruncationError);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
}
