#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "agcl/binary_io.hpp"
#include "agcl/error.hpp"
#include "agcl/trainer.hpp"

using namespace agcl;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.arch.classes = 3;
    c.arch.c1 = 4;
    c.arch.c2 = 6;
    c.arch.c3 = 8;
    c.arch.embed_hidden = 8;
    c.arch.embed_dim = 6;
    c.patch_size = 4;
    c.hyper.n_positives = 2;
    c.hyper.bank_capacity = 12;
    c.batch_size = 4;
    c.iterations = 6;
    c.eval_interval = 4;
    c.val_count = 3;
    c.mix_neighborhood = 4;
    c.lr = 1e-3;
    c.seed = 5;
    return c;
}

const std::vector<Sample> &small_data() {
    static const std::vector<Sample> data = [] {
        DatasetSpec s;
        s.count = 14;
        s.size = 16;
        s.labeled_fraction = 0.3;
        s.radius_min = 2.0;
        s.radius_max = 3.0;
        s.blobs_max = 1;
        s.seed = 9;
        return generate(s);
    }();
    return data;
}

std::vector<const Sample *> mixed_batch() {
    std::vector<const Sample *> labeled, unlabeled;
    for (const Sample &s : small_data())
        (s.labeled ? labeled : unlabeled).push_back(&s);
    return {labeled[0], labeled[1], unlabeled[0], unlabeled[1]};
}

std::filesystem::path temp_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("agcl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

Embedding unit(std::vector<double> v) { return Embedding::normalized(std::move(v)); }

} // namespace

TEST(MemoryBankTest, FifoWrapAndFloatRounding) {
    MemoryBank b(3);
    EXPECT_THROW(b.push(Embedding{{1.0, 0.0}, false}), DomainError);
    for (int i = 0; i < 5; ++i)
        b.push(unit({1.0, 0.1 * i}));
    EXPECT_EQ(b.size(), 3u);
    EXPECT_EQ(b.cursor(), 2u);
    // Slots 0 and 1 were overwritten by the 4th and 5th pushes.
    EXPECT_EQ(b.entries()[0].values[1], double(float(unit({1.0, 0.3}).values[1])));
    EXPECT_EQ(b.entries()[2].values[1], double(float(unit({1.0, 0.2}).values[1])));
}

TEST(MemoryBankTest, NearestOrdersByDotProduct) {
    MemoryBank b(8);
    b.push(unit({1, 0}));
    b.push(unit({0, 1}));
    b.push(unit({1, 1}));
    b.push(unit({-1, 0}));
    const auto n = b.nearest(unit({1, 0.2}), 2);
    ASSERT_EQ(n.size(), 2u);
    EXPECT_EQ(n[0], b.entries()[0]);
    EXPECT_EQ(n[1], b.entries()[2]);
    EXPECT_EQ(b.nearest(unit({1, 0}), 10).size(), 4u);
    EXPECT_THROW(MemoryBank::restore(2, {unit({1, 0})}, 2), FormatError);
}

TEST(Config, ValidationRejectsBadValues) {
    TrainConfig c = small_config();
    EXPECT_NO_THROW(c.validate());
    c.iterations = 0;
    EXPECT_THROW(c.validate(), ParameterError);
    EXPECT_THROW(train(c, small_data()), ParameterError);
    c = small_config();
    c.arch.classes = 1;
    EXPECT_THROW(c.validate(), ParameterError);
    c = small_config();
    c.beta1 = 1.0;
    EXPECT_THROW(c.validate(), ParameterError);
    EXPECT_EQ(parse_negative_selection("random"), NegativeSelection::random);
    EXPECT_THROW(parse_negative_selection("hard"), ParameterError);
}

TEST(Step, LabeledOnlyBatchHasNoUnlabeledTerms) {
    const TrainConfig c = small_config();
    TrainState s = init_state(c);
    const auto all = mixed_batch();
    const std::vector<const Sample *> batch{all[0], all[1]};
    const StepLosses l = train_step(s, batch, c);
    EXPECT_GT(l.sup, 0.0);
    EXPECT_EQ(l.reg, 0.0);
    EXPECT_EQ(l.pl, 0.0);
    EXPECT_EQ(l.rw, 0.0);
    EXPECT_EQ(l.total, l.sup);
    EXPECT_EQ(s.step, 1u);
}

TEST(Step, MixedBatchUsesAllTerms) {
    const TrainConfig c = small_config();
    TrainState s = init_state(c);
    const auto batch = mixed_batch();
    StepLosses l;
    for (int i = 0; i < 3; ++i)
        l = train_step(s, batch, c);
    EXPECT_GT(l.reg, 0.0);
    EXPECT_NE(l.pl, 0.0);
    EXPECT_TRUE(std::isfinite(l.total));
    EXPECT_NEAR(l.total, l.sup + l.reg + l.pl + l.rw, 1e-12);
    EXPECT_EQ(l.positives.size(), 2u * 2u);
    for (const auto &p : l.positives)
        EXPECT_LE(p.size(), c.hyper.n_positives);
}

TEST(Step, FrozenTeacherWithUnitAlpha) {
    TrainConfig c = small_config();
    c.hyper.ema_alpha = 1.0;
    TrainState s = init_state(c);
    const auto teacher = s.teacher;
    for (int i = 0; i < 2; ++i)
        train_step(s, mixed_batch(), c);
    EXPECT_EQ(s.teacher, teacher);
    EXPECT_FALSE(s.student == teacher);
}

TEST(Step, TeacherStaysInsideStudentEnvelope) {
    const TrainConfig c = small_config();
    TrainState s = init_state(c);
    auto lo = s.teacher, hi = s.teacher;
    for (int i = 0; i < 4; ++i) {
        train_step(s, mixed_batch(), c);
        for (std::size_t g = 0; g < s.student.group_count(); ++g) {
            auto l = lo.mutable_values(g), h = hi.mutable_values(g);
            const auto sv = s.student.values(g);
            for (std::size_t j = 0; j < sv.size(); ++j) {
                l[j] = std::min(l[j], sv[j]);
                h[j] = std::max(h[j], sv[j]);
            }
        }
        for (std::size_t g = 0; g < s.teacher.group_count(); ++g) {
            const auto tv = s.teacher.values(g);
            for (std::size_t j = 0; j < tv.size(); ++j) {
                EXPECT_GE(tv[j], lo.values(g)[j] - 1e-7f);
                EXPECT_LE(tv[j], hi.values(g)[j] + 1e-7f);
            }
        }
    }
}

TEST(Step, BanksGrowMonotonicallyToCapacity) {
    const TrainConfig c = small_config();
    TrainState s = init_state(c);
    ASSERT_EQ(s.banks.size(), 2u);
    std::vector<std::size_t> prev(2, 0);
    for (int i = 0; i < 8; ++i) {
        train_step(s, mixed_batch(), c);
        for (std::size_t k = 0; k < 2; ++k) {
            EXPECT_GE(s.banks[k].size(), prev[k]);
            EXPECT_LE(s.banks[k].size(), c.hyper.bank_capacity);
            prev[k] = s.banks[k].size();
        }
    }
    EXPECT_GT(prev[0] + prev[1], 0u);
}

TEST(Step, SupervisedAblationMatchesPlainOracle) {
    TrainConfig c = small_config();
    c.enable_reg = c.enable_pl = c.enable_rw = false;
    TrainState s = init_state(c);
    const auto batch = mixed_batch();

    // Oracle: supervised loss on the weak labeled views, one Adam step from zero moments.
    auto grads = s.student.zeros_like();
    std::size_t slot = 0;
    const double inv = 0.5;
    for (const Sample *p : batch) {
        if (!p->labeled)
            continue;
        const Sample v = labeled_view(*p, s.seed, 0, slot++);
        const auto t = forward(s.student, c.arch, v.image);
        const LossValue l = loss_supervised(tensor_cast<double>(t.probs), v.mask.labels);
        Tensor3<float> gp(t.probs.channels, t.probs.height, t.probs.width);
        for (std::size_t i = 0; i < gp.size(); ++i)
            gp.data[i] = float(l.gradients.at("probs")[i] * inv);
        grads.axpy(1.0f, backward(t, gp));
    }
    auto expect = s.student;
    for (std::size_t g = 0; g < expect.group_count(); ++g) {
        auto pv = expect.mutable_values(g);
        const auto gv = grads.values(g);
        for (std::size_t j = 0; j < pv.size(); ++j) {
            const double m = (1 - c.beta1) * gv[j], v = (1 - c.beta2) * double(gv[j]) * gv[j];
            const double mh = m / (1 - c.beta1), vh = v / (1 - c.beta2);
            pv[j] = float(pv[j] - c.lr * mh / (std::sqrt(vh) + c.adam_eps));
        }
    }
    const StepLosses l = train_step(s, batch, c);
    EXPECT_EQ(l.reg + l.pl + l.rw, 0.0);
    for (std::size_t g = 0; g < expect.group_count(); ++g)
        for (std::size_t j = 0; j < expect.group(g).size(); ++j)
            ASSERT_NEAR(s.student.values(g)[j], expect.values(g)[j], 1e-6)
                << expect.group(g).name << "[" << j << "]";
    EXPECT_TRUE(s.banks[0].empty());
}

TEST(Train, ReplayIsBitIdentical) {
    TrainConfig c = small_config();
    c.iterations = 20;
    c.eval_interval = 10;
    const TrainResult a = train(c, small_data()), b = train(c, small_data());
    EXPECT_EQ(a.state, b.state);
    EXPECT_EQ(encode_state(a.state), encode_state(b.state));
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        EXPECT_EQ(metrics_csv_row(a.history[i]), metrics_csv_row(b.history[i]));
}

TEST(Train, ThreadCountDoesNotChangeResults) {
    TrainConfig c = small_config();
    c.iterations = 4;
    const TrainResult a = train(c, small_data());
    c.threads = 3;
    EXPECT_EQ(train(c, small_data()).state, a.state);
}

TEST(Train, ResumeEqualsUninterrupted) {
    TrainConfig c = small_config();
    c.iterations = 8;
    const TrainResult full = train(c, small_data());
    c.iterations = 4;
    const auto dir = temp_dir("resume");
    train(c, small_data(), TrainOutputs{dir, {}, {}});
    TrainState mid = load_checkpoint(dir / "checkpoint.agcl");
    EXPECT_EQ(mid.step, 4u);
    c.iterations = 8;
    const TrainResult resumed = train(c, small_data(), TrainOutputs{dir, {}, {}}, &mid);
    EXPECT_EQ(resumed.state, full.state);
}

TEST(Train, CsvRowsAndCheckpointFiles) {
    TrainConfig c = small_config();
    c.iterations = 7;
    c.eval_interval = 3;
    c.checkpoint_interval = 3;
    const auto dir = temp_dir("csv");
    std::size_t evals = 0, steps = 0;
    const TrainResult r = train(c, small_data(),
                                TrainOutputs{dir, [&](const LogRow &) { ++evals; },
                                             [&](std::uint64_t, const StepLosses &) { ++steps; }});
    EXPECT_EQ(steps, 7u);
    EXPECT_EQ(evals, 3u); // steps 3, 6, 7
    EXPECT_EQ(r.history.size(), 3u);
    std::ifstream csv(dir / "metrics.csv");
    std::string line;
    std::size_t lines = 0;
    std::getline(csv, line);
    EXPECT_EQ(line, metrics_csv_header());
    while (std::getline(csv, line))
        ++lines;
    EXPECT_EQ(lines, 3u);
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_3.agcl"));
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_6.agcl"));
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint.agcl"));
}

TEST(Train, RejectsOverrunCheckpointAndBadSplit) {
    TrainConfig c = small_config();
    c.iterations = 2;
    TrainState s = train(c, small_data()).state;
    c.iterations = 1;
    EXPECT_THROW(train(c, small_data(), {}, &s), ParameterError);
    c = small_config();
    c.val_count = 100;
    EXPECT_THROW(train(c, small_data()), ParameterError);
}

TEST(Checkpoint, StateSaveLoadSaveIsIdentical) {
    TrainConfig c = small_config();
    c.iterations = 5;
    const TrainState s = train(c, small_data()).state;
    const auto dir = temp_dir("state");
    save_checkpoint(s, dir / "a.agcl");
    const TrainState t = load_checkpoint(dir / "a.agcl");
    EXPECT_EQ(t, s);
    save_checkpoint(t, dir / "b.agcl");
    EXPECT_EQ(read_file(dir / "a.agcl"), read_file(dir / "b.agcl"));
    auto bytes = read_file(dir / "a.agcl");
    bytes[bytes.size() / 3] ^= 4;
    EXPECT_THROW(decode_state(bytes), ChecksumError);
}

TEST(Checkpoint, LargeSeedAndStepSurvive) {
    TrainState s = init_state(small_config());
    s.seed = 0xfedcba9876543210ULL;
    s.step = (1ULL << 40) + 3;
    EXPECT_EQ(decode_state(encode_state(s)), s);
}

TEST(Batches, DrawIsDeterministicAndDistinct) {
    const auto a = draw_batch(1, 7, true, 10, 4);
    EXPECT_EQ(a, draw_batch(1, 7, true, 10, 4));
    EXPECT_NE(a, draw_batch(1, 8, true, 10, 4));
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
    EXPECT_EQ(draw_batch(1, 7, true, 2, 5).size(), 5u);
    EXPECT_TRUE(draw_batch(1, 7, false, 0, 3).empty());
}
