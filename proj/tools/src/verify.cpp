#include "verify.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "agcl/affinity.hpp"
#include "agcl/data.hpp"
#include "agcl/linalg.hpp"
#include "agcl/losses.hpp"
#include "agcl/metrics.hpp"
#include "agcl/model.hpp"
#include "agcl/patch_sampling.hpp"
#include "agcl/random.hpp"
#include "agcl/trainer.hpp"
#include "oracles.hpp"

namespace agcl::cli {

namespace {

std::string join(const std::vector<double> &v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i)
        os << (i ? " " : "") << v[i];
    return os.str();
}

Embedding random_unit(Rng &rng, std::size_t dim) {
    std::vector<double> v(dim);
    for (double &x : v)
        x = rng.normal();
    return Embedding::normalized(std::move(v));
}

} // namespace

CheckResult check_contrastive_gradient(std::uint64_t seed) {
    CheckResult r{"contrastive_grad_fd", true, 0.0, 1e-6, {}};
    Rng rng(derive_seed(seed, {1}));
    for (int c = 0; c < 100; ++c) {
        const std::size_t dim = 2 + rng.index(15);
        const Embedding q = random_unit(rng, dim), k = random_unit(rng, dim);
        std::vector<Embedding> neg(1 + rng.index(12));
        for (auto &n : neg)
            n = random_unit(rng, dim);
        const auto f = [&](const std::vector<double> &x) {
            return contrastive_loss(Embedding{x, false}, k, neg, 0.2).value;
        };
        const auto fd = oracle::central_gradient(f, q.values, 1e-6);
        const auto g = contrastive_grad_q(q, k, neg, 0.2);
        const double err = oracle::relative_error(g, fd);
        r.worst = std::max(r.worst, err);
        if (err > r.tolerance && r.passed) {
            r.passed = false;
            r.detail = "case " + std::to_string(c) + " q=[" + join(q.values) + "] k=[" +
                       join(k.values) + "] negatives=" + std::to_string(neg.size());
        }
    }
    return r;
}

oracle::Mat to_oracle(const DenseMatrix &m) {
    return {m.rows(), m.cols(), std::vector<double>(m.data().begin(), m.data().end())};
}

DenseMatrix random_matrix(Rng &rng, std::size_t max_side) {
    const std::size_t rows = 1 + rng.index(max_side), cols = 1 + rng.index(max_side);
    std::vector<double> v(rows * cols);
    for (double &x : v)
        x = rng.normal();
    return DenseMatrix(rows, cols, std::move(v));
}

CheckResult check_spectral(std::uint64_t seed, int count) {
    CheckResult r{"svd_power_iteration_oracle", true, 0.0, 1e-9, {}};
    Rng rng(derive_seed(seed, {2}));
    for (int c = 0; c < count; ++c) {
        const DenseMatrix m = random_matrix(rng, 16);
        const double threshold = rng.uniform(0.0, 2.0);
        const oracle::Mat om = to_oracle(m);
        double err = std::abs(nuclear_norm(m) - oracle::nuclear_norm(om));
        const DenseMatrix s = svt(m, threshold);
        const oracle::Mat os = oracle::svt(om, threshold);
        for (std::size_t i = 0; i < os.a.size(); ++i)
            err = std::max(err, std::abs(s.data()[i] - os.a[i]));
        r.worst = std::max(r.worst, err);
        if (err > r.tolerance && r.passed) {
            r.passed = false;
            r.detail = "matrix " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                       " threshold " + std::to_string(threshold) + " entries [" +
                       join(om.a) + "]";
        }
    }
    return r;
}

CheckResult check_prox(std::uint64_t seed, int count) {
    CheckResult r{"svt_prox_optimality", true, 0.0, 1e-8, {}};
    Rng rng(derive_seed(seed, {3}));
    for (int c = 0; c < count; ++c) {
        const DenseMatrix m = random_matrix(rng, 8);
        const double threshold = rng.uniform(0.05, 1.5);
        const oracle::Mat om = to_oracle(m);
        const oracle::Mat x = to_oracle(svt(m, threshold));
        const double base = oracle::prox_objective(x, om, threshold);
        for (int p = 0; p < 5; ++p) {
            oracle::Mat y = x;
            const double eps = std::pow(10.0, -1.0 - double(p));
            for (double &v : y.a)
                v += eps * rng.normal();
            const double drop = base - oracle::prox_objective(y, om, threshold);
            r.worst = std::max(r.worst, drop);
            if (drop > r.tolerance && r.passed) {
                r.passed = false;
                r.detail = "perturbation " + std::to_string(eps) + " lowered the objective by " +
                           std::to_string(drop);
            }
        }
    }
    return r;
}

CheckResult check_kernel(std::uint64_t seed) {
    CheckResult r{"kernel_psd_and_symmetry", true, 0.0, 1e-8, {}};
    Rng rng(derive_seed(seed, {4}));
    for (int c = 0; c < 50; ++c) {
        const std::size_t n = 2 + rng.index(31), dim = 2 + rng.index(4);
        auto random_set = [&] {
            std::vector<double> v(n * dim);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0;
                for (std::size_t d = 0; d < dim; ++d)
                    s += (v[i * dim + d] = rng.uniform(0.01, 1.0));
                for (std::size_t d = 0; d < dim; ++d)
                    v[i * dim + d] /= s;
            }
            return PredictionSet(n, dim, std::move(v));
        };
        const PredictionSet a = random_set(), b = random_set();
        const double sigma = rng.uniform(0.05, 1.0);
        const AffinityGraph self = build_graph(a, a, sigma);
        const AffinityGraph ab = build_graph(a, b, sigma), ba = build_graph(b, a, sigma);
        Eigen::MatrixXd k(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                k(long(i), long(j)) = self.matrix(i, j);
                if (ab.matrix(i, j) != ba.matrix(j, i) || self.diagonal[i] != 1.0) {
                    r.passed = false;
                    r.detail = "swap symmetry or unit diagonal broken in case " + std::to_string(c);
                }
            }
        const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues().minCoeff();
        r.worst = std::max(r.worst, -lo);
        if (lo < -r.tolerance && r.passed) {
            r.passed = false;
            r.detail = "min eigenvalue " + std::to_string(lo) + " in case " + std::to_string(c);
        }
    }
    return r;
}

CheckResult check_entropy(std::uint64_t seed) {
    CheckResult r{"entropy_and_top_n", true, 0.0, 0.0, {}};
    const std::vector<float> half(64, 0.5f), binary = {0.f, 1.f, 1.f, 0.f, 1.f, 0.f};
    const double e_half = std::abs(average_patch_entropy(half) - std::log(2.0));
    const double e_bin = average_patch_entropy(binary);
    if (e_half > 1e-9 || e_bin > 2e-6) {
        r.passed = false;
        r.detail = "uniform-0.5 error " + std::to_string(e_half) + ", binary entropy " +
                   std::to_string(e_bin);
    }
    Rng rng(derive_seed(seed, {5}));
    std::size_t mismatches = 0;
    for (int c = 0; c < 1000; ++c) {
        const std::size_t len = 2 + rng.index(40);
        std::vector<double> s(len);
        const bool ties = c % 2 == 0;
        for (double &x : s)
            x = ties ? double(rng.index(4)) : rng.uniform();
        const std::size_t anchor = rng.index(len), n = 1 + rng.index(len - 1);
        const SampledPatches sp = select_top_n(s, anchor, n);
        std::vector<std::size_t> got = sp.positives;
        std::sort(got.begin(), got.end());
        if (got != oracle::top_n(s, anchor, n)) {
            ++mismatches;
            if (r.passed)
                r.detail = "scores [" + join(s) + "] anchor " + std::to_string(anchor) + " n " +
                           std::to_string(n);
            r.passed = false;
        }
    }
    r.worst = double(mismatches);
    return r;
}

static oracle::Grid to_grid(const BinaryMask &m) {
    return {m.height, m.width, std::vector<int>(m.bits.begin(), m.bits.end())};
}

CheckResult check_metrics(std::uint64_t seed) {
    CheckResult r{"metrics_brute_force", true, 0.0, 1e-9, {}};
    const auto fail = [&](std::string why) {
        if (r.passed)
            r.detail = std::move(why);
        r.passed = false;
    };
    // Hand cases: identical masks, and a single-pixel square moved by 3 px.
    BinaryMask sq(16, 16), px(16, 16), moved(16, 16);
    for (std::size_t y = 4; y < 9; ++y)
        for (std::size_t x = 4; x < 9; ++x)
            sq.set(y, x);
    px.set(7, 5);
    moved.set(7, 8);
    if (dsc(sq, sq) != 1.0 || jaccard(sq, sq) != 1.0 || hd95(sq, sq) != 0.0 || asd(sq, sq) != 0.0)
        fail("identical masks do not score {1, 1, 0, 0}");
    if (std::abs(hd95(px, moved) - 3.0) > r.tolerance || std::abs(asd(px, moved) - 3.0) > r.tolerance)
        fail("translated pixel does not score hd95 = asd = 3");

    Rng rng(derive_seed(seed, {6}));
    for (int c = 0; c < 50; ++c) {
        BinaryMask a(16, 16), b(16, 16);
        const double pa = rng.uniform(0.1, 0.7), pb = rng.uniform(0.1, 0.7);
        for (std::size_t i = 0; i < 256; ++i) {
            a.bits[i] = rng.bernoulli(pa);
            b.bits[i] = rng.bernoulli(pb);
        }
        a.bits[rng.index(256)] = 1;
        b.bits[rng.index(256)] = 1;
        const oracle::Scores o = oracle::score(to_grid(a), to_grid(b));
        if (dsc(a, b) != o.dsc || jaccard(a, b) != o.jaccard)
            fail("pair " + std::to_string(c) + ": overlap scores differ from the oracle");
        const double err = std::max(std::abs(hd95(a, b) - o.hd95), std::abs(asd(a, b) - o.asd));
        r.worst = std::max(r.worst, err);
        if (err > r.tolerance)
            fail("pair " + std::to_string(c) + " distances differ by " + std::to_string(err));
    }
    return r;
}

CheckResult check_formats(std::uint64_t seed) {
    CheckResult r{"format_round_trips", true, 0.0, 0.0, {}};
    DatasetSpec spec;
    spec.count = 2;
    spec.size = 16;
    spec.radius_min = 2;
    spec.radius_max = 3;
    spec.blobs_max = 1;
    spec.labeled_fraction = 0.5;
    spec.seed = seed;
    const std::vector<Sample> samples = generate(spec);
    const auto tbytes = encode_tensor(samples[0].image);
    const auto mbytes = encode_mask(samples[0].mask);
    bool ok = decode_tensor(tbytes) == samples[0].image && decode_mask(mbytes) == samples[0].mask;

    TrainConfig config;
    config.seed = seed;
    config.arch = Architecture{1, 3, 4, 4, 4, 4, 4};
    const TrainState state = init_state(config);
    const auto sbytes = encode_state(state);
    ok = ok && decode_state(sbytes) == state && encode_state(decode_state(sbytes)) == sbytes;

    // A flipped payload bit must be caught by the checksum.
    auto corrupt = sbytes;
    corrupt[corrupt.size() / 2] ^= 0x10;
    bool caught = false;
    try {
        decode_state(corrupt);
    } catch (const ChecksumError &) {
        caught = true;
    }
    if (!ok || !caught) {
        r.passed = false;
        r.detail = ok ? "corrupted checkpoint was accepted" : "round trip changed bytes";
        r.worst = 1;
    }
    return r;
}

// Full objective of a tiny double-precision network on 8x8 inputs against central differences.
CheckResult check_objective_gradient(std::uint64_t seed, std::size_t coordinates) {
    CheckResult r{"objective_grad_fd", true, 0.0, 1e-5, {}};
    TrainConfig config;
    config.seed = seed;
    config.arch = Architecture{1, 3, 3, 4, 4, 6, 5};
    config.patch_size = 4;
    config.hyper.n_positives = 2;
    config.mix_neighborhood = 3;
    Rng rng(derive_seed(seed, {7}));
    ParamSet<double> student = init_params<double>(config.arch, derive_seed(seed, {8}));
    const ParamSet<double> teacher = init_params<double>(config.arch, derive_seed(seed, {9}));

    auto image = [&] {
        ImageTensor t(1, 8, 8);
        for (float &v : t.data)
            v = float(rng.uniform());
        return t;
    };
    std::vector<LabeledView> labeled(1);
    labeled[0].input = image();
    labeled[0].mask = LabelMap(8, 8);
    for (auto &l : labeled[0].mask.labels)
        l = std::uint8_t(rng.index(3));
    std::vector<UnlabeledView> views(2);
    for (auto &v : views)
        v = {image(), image()};
    std::vector<MemoryBank> banks(2, MemoryBank(8));
    for (auto &b : banks)
        for (int i = 0; i < 6; ++i)
            b.push(random_unit(rng, config.arch.embed_dim));

    auto traces_for = [&](const ParamSet<double> &p, auto pick, std::size_t n) {
        std::vector<ForwardTrace<double>> t;
        for (std::size_t i = 0; i < n; ++i)
            t.push_back(forward(p, config.arch, tensor_cast<double>(pick(i))));
        return t;
    };
    auto lab = [&](std::size_t i) -> const ImageTensor & { return labeled[i].input; };
    auto unl = [&](std::size_t i) -> const ImageTensor & { return views[i].student_input; };

    const auto utr0 = traces_for(student, unl, views.size());
    const StepPlan plan = build_plan<double>(student, teacher, views, utr0, banks, config, seed);
    const auto ltr = traces_for(student, lab, labeled.size());
    const ParamSet<double> grads =
        evaluate_objective<double>(student, labeled, ltr, utr0, plan, config, true).grads;

    // Coordinates spread over every group.
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t g = 0; g < student.group_count(); ++g) {
        const std::size_t size = student.group(g).size();
        const std::size_t take = std::min(size, std::max<std::size_t>(2, coordinates / student.group_count()));
        for (std::size_t i = 0; i < take; ++i)
            picks.emplace_back(g, rng.index(size));
    }
    std::vector<double> analytic, numeric;
    const double h = 1e-6;
    for (const auto &[g, i] : picks) {
        auto loss_at = [&](double delta) {
            ParamSet<double> p = student;
            p.mutable_values(g)[i] += delta;
            const auto lt = traces_for(p, lab, labeled.size());
            const auto ut = traces_for(p, unl, views.size());
            return evaluate_objective<double>(p, labeled, lt, ut, plan, config, false).losses.total;
        };
        analytic.push_back(grads.values(g)[i]);
        numeric.push_back((loss_at(h) - loss_at(-h)) / (2 * h));
    }
    r.worst = oracle::relative_error(analytic, numeric);
    if (r.worst > r.tolerance) {
        r.passed = false;
        r.detail = "analytic [" + join(analytic) + "] numeric [" + join(numeric) + "]";
    }
    return r;
}

std::vector<CheckResult> run_verification(std::uint64_t seed) {
    std::vector<CheckResult> out;
    out.push_back(check_contrastive_gradient(seed));
    out.push_back(check_objective_gradient(seed, 120));
    out.push_back(check_spectral(seed, 200));
    out.push_back(check_prox(seed, 40));
    out.push_back(check_kernel(seed));
    out.push_back(check_entropy(seed));
    out.push_back(check_metrics(seed));
    out.push_back(check_formats(seed));
    return out;
}

std::string format_report(const std::vector<CheckResult> &results) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %-6s %-12s %-10s\n", "check", "status", "worst", "tolerance");
    out += line;
    for (const CheckResult &r : results) {
        std::snprintf(line, sizeof line, "%-28s %-6s %-12.3e %-10.1e\n", r.name.c_str(),
                      r.passed ? "PASS" : "FAIL", r.worst, r.tolerance);
        out += line;
        if (!r.passed)
            out += "  reproduce: " + r.detail + "\n";
    }
    return out;
}

} // namespace agcl::cli
