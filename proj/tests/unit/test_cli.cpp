#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "agcl/data.hpp"
#include "agcl/model.hpp"
#include "run_config.hpp"

using namespace agcl;
using agcl::cli::RunConfig;
using agcl::cli::ValidationError;

namespace {

std::filesystem::path temp_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("agcl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct Outcome {
    int code;
    std::string out;
};

Outcome run(const std::string &binary, const std::string &args) {
    const std::string cmd = "'" + binary + "' " + args + " 2>&1";
    FILE *pipe = popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof buf, pipe))
        out.append(buf, n);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

Outcome invoke(const std::string &args) { return run(AGCL_CLI_PATH, args); }

std::string slurp(const std::filesystem::path &p) {
    std::ifstream f(p);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

} // namespace

TEST(RunConfigTest, DefaultsAndOverrides) {
    RunConfig c;
    EXPECT_EQ(c.train.arch.classes, c.dataset.classes + 1);
    c.load_text("# comment\ntrainer.lr = 0.003\n\nloss.sign_mode = literal  # trailing\n"
                "negatives.selection = random\nkernel.sigma = 0.5\n");
    EXPECT_DOUBLE_EQ(c.train.lr, 0.003);
    EXPECT_EQ(c.train.sign_mode, SignMode::literal);
    EXPECT_EQ(c.train.selection, NegativeSelection::random);
    EXPECT_DOUBLE_EQ(c.train.sigma, 0.5);
    c.set("dataset.classes", "3");
    EXPECT_EQ(c.train.arch.classes, 4u);
    EXPECT_NO_THROW(c.validate());
}

TEST(RunConfigTest, ErrorsNameTheLine) {
    RunConfig c;
    try {
        c.load_text("trainer.lr = 0.1\ntrainer.lrr = 0.2\n", "cfg");
        FAIL() << "unknown key accepted";
    } catch (const ValidationError &e) {
        EXPECT_NE(std::string(e.what()).find("cfg:2"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("trainer.lrr"), std::string::npos);
    }
    EXPECT_THROW(c.set("trainer.batch_size", "-3"), ValidationError);
    EXPECT_THROW(c.set("loss.tau", "abc"), ValidationError);
    EXPECT_THROW(c.load_text("no equals sign here"), ValidationError);
    c.set("trainer.iterations", "0");
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(RunConfigTest, ResolvedListsEveryKey) {
    const RunConfig c;
    const std::string text = c.resolved();
    for (const auto &k : RunConfig::keys())
        EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
    RunConfig round;
    EXPECT_NO_THROW(round.load_text(text));
    EXPECT_EQ(round.resolved(), text);
}

TEST(RunConfigTest, SplitAssignment) {
    EXPECT_EQ(cli::split_assignment("a.b=3"), (std::pair<std::string, std::string>{"a.b", "3"}));
    EXPECT_THROW(cli::split_assignment("a.b"), ValidationError);
}

TEST(CliBinary, GenerateWritesLabeledSplit) {
    const auto dir = temp_dir("cli_gen");
    const Outcome r = invoke("generate --out " + (dir / "data").string() +
                      " --set dataset.count=10 --set dataset.labeled_fraction=0.5 --seed 4");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto samples = read_dataset(dir / "data");
    ASSERT_EQ(samples.size(), 10u);
    std::size_t labeled = 0;
    for (const auto &s : samples)
        labeled += s.labeled;
    EXPECT_EQ(labeled, 5u);
    EXPECT_NE(slurp(dir / "data" / "config.resolved.txt").find("dataset.seed = 4"),
              std::string::npos);
}

TEST(CliBinary, ExitCodes) {
    EXPECT_EQ(invoke("generate --out /tmp/x --set dataset.bogus=1").code, 1);
    EXPECT_EQ(invoke("generate --out /tmp/x --set dataset.size=12").code, 1);
    EXPECT_EQ(invoke("nonsense").code, 1);
    // A missing input path is a bad argument; an unreadable file is a runtime failure.
    EXPECT_EQ(invoke("train --data /nonexistent/dir --out /tmp/agcl_test_none").code, 1);
    const auto dir = temp_dir("cli_codes");
    std::ofstream(dir / "bad.agcl") << "not a checkpoint";
    EXPECT_EQ(invoke("eval --checkpoint " + (dir / "bad.agcl").string() + " --data " + dir.string()).code, 2);
}

TEST(CliBinary, TrainEvalAndMetrics) {
    const auto dir = temp_dir("cli_train");
    const std::string cfg = (dir / "run.cfg").string();
    std::ofstream(cfg) << "dataset.count = 12\ndataset.size = 16\ndataset.labeled_fraction = 0.25\n"
                          "dataset.radius_min = 2\ndataset.radius_max = 3\ndataset.blobs_max = 1\n"
                          "model.c1 = 4\nmodel.c2 = 4\nmodel.c3 = 4\nmodel.embed_hidden = 4\n"
                          "model.embed_dim = 4\npatch.size = 4\ntrainer.batch_size = 4\n"
                          "trainer.val_count = 3\ntrainer.eval_interval = 2\nsampler.n = 2\n";
    ASSERT_EQ(invoke("generate --config " + cfg + " --out " + (dir / "data").string()).code, 0);
    const Outcome t = invoke("train --config " + cfg + " --data " + (dir / "data").string() + " --out " +
                      (dir / "run").string() + " --iterations 3 --ablate rw");
    ASSERT_EQ(t.code, 0) << t.out;
    for (const char *f : {"config.resolved.txt", "metrics.csv", "checkpoint.agcl", "positives.log"})
        EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
    EXPECT_NE(slurp(dir / "run" / "config.resolved.txt").find("loss.rw = false"), std::string::npos);

    const Outcome e = invoke("eval --checkpoint " + (dir / "run" / "checkpoint.agcl").string() +
                      " --data " + (dir / "data").string() + " --json");
    ASSERT_EQ(e.code, 0) << e.out;
    EXPECT_NE(e.out.find("\"dsc\""), std::string::npos);

    // A mask scored against itself is perfect.
    const auto m = (dir / "data" / "masks" / "0000.agm").string();
    const Outcome s = invoke("metrics --pred " + m + " --truth " + m + " --json");
    ASSERT_EQ(s.code, 0) << s.out;
    EXPECT_NE(s.out.find("\"dsc\": 1"), std::string::npos) << s.out;
}

TEST(CliBinary, VerifyRejectsInjectedGradientError) {
    const Outcome r = run(AGCL_FAULTY_CLI_PATH, "verify");
    EXPECT_EQ(r.code, 3) << r.out;
    EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}
