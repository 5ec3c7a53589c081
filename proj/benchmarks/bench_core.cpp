#include <benchmark/benchmark.h>

#include "agcl/affinity.hpp"
#include "agcl/data.hpp"
#include "agcl/linalg.hpp"
#include "agcl/losses.hpp"
#include "agcl/metrics.hpp"
#include "agcl/model.hpp"
#include "agcl/random.hpp"
#include "agcl/trainer.hpp"

using namespace agcl;

namespace {

DenseMatrix random_matrix(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n * n);
    for (double &x : v)
        x = rng.normal();
    return DenseMatrix(n, n, std::move(v));
}

PredictionSet random_predictions(std::size_t n, std::size_t dim, Rng &rng) {
    std::vector<double> v(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t d = 0; d < dim; ++d)
            s += (v[i * dim + d] = rng.uniform(0.01, 1.0));
        for (std::size_t d = 0; d < dim; ++d)
            v[i * dim + d] /= s;
    }
    return PredictionSet(n, dim, std::move(v));
}

} // namespace

static void BM_NuclearNorm(benchmark::State &state) {
    const DenseMatrix m = random_matrix(std::size_t(state.range(0)), 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(nuclear_norm(m));
}
BENCHMARK(BM_NuclearNorm)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

static void BM_Svt(benchmark::State &state) {
    const DenseMatrix m = random_matrix(std::size_t(state.range(0)), 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(svt(m, 0.5));
}
BENCHMARK(BM_Svt)->Arg(32)->Arg(64);

static void BM_BuildGraph(benchmark::State &state) {
    Rng rng(3);
    const std::size_t n = std::size_t(state.range(0));
    const PredictionSet t = random_predictions(n, 3, rng), s = random_predictions(n, 3, rng);
    for (auto _ : state) {
        const double sigma = median_bandwidth(t, s);
        benchmark::DoNotOptimize(build_graph(t, s, sigma));
    }
}
BENCHMARK(BM_BuildGraph)->Arg(64)->Arg(256);

static void BM_Contrastive(benchmark::State &state) {
    Rng rng(4);
    auto unit = [&] {
        std::vector<double> v(32);
        for (double &x : v)
            x = rng.normal();
        return Embedding::normalized(std::move(v));
    };
    const Embedding q = unit(), k = unit();
    std::vector<Embedding> negs;
    for (int i = 0; i < state.range(0); ++i)
        negs.push_back(unit());
    for (auto _ : state)
        benchmark::DoNotOptimize(contrastive_loss(q, k, negs, 0.2));
}
BENCHMARK(BM_Contrastive)->Arg(16)->Arg(512);

static void BM_ForwardBackward(benchmark::State &state) {
    const Architecture arch;
    const auto params = init_params<float>(arch, 5);
    Rng rng(6);
    const std::size_t n = std::size_t(state.range(0));
    ImageTensor img(1, n, n);
    for (float &v : img.data)
        v = float(rng.uniform());
    Tensor3<float> g(arch.classes, n, n, 0.01f);
    for (auto _ : state) {
        const auto t = forward(params, arch, img);
        benchmark::DoNotOptimize(backward(t, g));
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Hd95(benchmark::State &state) {
    Rng rng(7);
    BinaryMask a(64, 64), b(64, 64);
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        a.bits[i] = rng.bernoulli(0.3);
        b.bits[i] = rng.bernoulli(0.3);
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(hd95(a, b));
}
BENCHMARK(BM_Hd95);

static void BM_TrainStep(benchmark::State &state) {
    static const std::vector<Sample> data = generate(DatasetSpec{});
    TrainConfig config;
    config.enable_reg = config.enable_pl = config.enable_rw = state.range(0) != 0;
    const DatasetSplit split = split_dataset(data, config.val_count);
    TrainState s = init_state(config);
    std::vector<const Sample *> batch;
    for (std::size_t i = 0; i < 4; ++i) {
        batch.push_back(split.labeled[i]);
        batch.push_back(split.unlabeled[i]);
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(train_step(s, batch, config));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
