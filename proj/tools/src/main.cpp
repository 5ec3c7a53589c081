#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agcl/binary_io.hpp"
#include "agcl/data.hpp"
#include "agcl/error.hpp"
#include "agcl/metrics.hpp"
#include "agcl/trainer.hpp"
#include "run_config.hpp"
#include "verify.hpp"

namespace fs = std::filesystem;
using namespace agcl;
using agcl::cli::RunConfig;
using agcl::cli::ValidationError;

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2, kVerification = 3 };

struct CommonArgs {
    std::string config;
    std::vector<std::string> sets;
};

void add_common(CLI::App *cmd, CommonArgs &args) {
    cmd->add_option("--config", args.config, "Config file of dotted `key = value` lines");
    cmd->add_option("--set", args.sets, "Override one key (key=value); repeatable");
}

RunConfig resolve(const CommonArgs &args) {
    RunConfig rc;
    if (!args.config.empty())
        rc.load_file(args.config);
    for (const std::string &s : args.sets) {
        const auto [k, v] = cli::split_assignment(s);
        rc.set(k, v);
    }
    return rc;
}

void echo_config(const RunConfig &rc, const fs::path &dir) {
    const std::string text = rc.resolved();
    write_file(dir / "config.resolved.txt", std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

nlohmann::json json_num(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::vector<Sample> load_dataset(const fs::path &path) {
    if (path.empty())
        throw ValidationError("no dataset path given (use --data or dataset.path)");
    if (!fs::is_directory(path))
        throw ValidationError("dataset directory not found: " + path.string());
    std::vector<Sample> samples = read_dataset(path);
    if (samples.empty())
        throw ValidationError("dataset " + path.string() + " is empty");
    return samples;
}

std::size_t max_label(const std::vector<Sample> &samples) {
    std::size_t m = 0;
    for (const Sample &s : samples)
        for (std::uint8_t l : s.mask.labels)
            m = std::max<std::size_t>(m, l);
    return m;
}

// ---------------------------------------------------------------------------

int cmd_generate(const CommonArgs &args, std::optional<std::string> out,
                 std::optional<std::uint64_t> seed) {
    RunConfig rc = resolve(args);
    if (out)
        rc.output_dir = *out;
    if (seed)
        rc.dataset.seed = *seed;
    rc.validate();
    if (rc.output_dir.empty())
        throw ValidationError("no output directory given (use --out or output.dir)");
    const std::vector<Sample> samples = generate(rc.dataset);
    write_dataset(samples, rc.output_dir);
    echo_config(rc, rc.output_dir);
    const std::size_t labeled = rc.dataset.labeled_count();
    std::printf("generated %zu samples (%zu labeled, %zu unlabeled) in %s\n", samples.size(),
                labeled, samples.size() - labeled, rc.output_dir.string().c_str());
    return kOk;
}

struct TrainArgs {
    std::optional<std::string> data, out, sampler, resume;
    std::optional<std::uint64_t> seed, iterations;
    std::vector<std::string> ablate;
};

int cmd_train(const CommonArgs &args, const TrainArgs &t) {
    RunConfig rc = resolve(args);
    if (t.data)
        rc.dataset_path = *t.data;
    if (t.out)
        rc.output_dir = *t.out;
    if (t.sampler)
        rc.set("sampler.name", *t.sampler);
    if (t.seed)
        rc.train.seed = *t.seed;
    if (t.iterations)
        rc.train.iterations = *t.iterations;
    for (const std::string &a : t.ablate) {
        if (a == "pl")
            rc.train.enable_pl = false;
        else if (a == "rw")
            rc.train.enable_rw = false;
        else if (a == "reg")
            rc.train.enable_reg = false;
        else
            throw ValidationError("--ablate expects pl|rw|reg, got '" + a + "'");
    }
    rc.validate();
    if (rc.output_dir.empty())
        throw ValidationError("no output directory given (use --out or output.dir)");

    const std::vector<Sample> samples = load_dataset(rc.dataset_path);
    const std::size_t classes = rc.train.arch.classes - 1;
    if (max_label(samples) > classes)
        throw ValidationError("dataset labels exceed dataset.classes = " + std::to_string(classes));
    if (samples[0].image.height % 8 != 0 || samples[0].image.width % 8 != 0)
        throw ValidationError("image size must be a multiple of 8");

    std::optional<TrainState> resume;
    if (t.resume)
        resume = load_checkpoint(*t.resume);

    fs::create_directories(rc.output_dir);
    echo_config(rc, rc.output_dir);
    std::string positives_log;
    TrainOutputs outputs;
    outputs.dir = rc.output_dir;
    outputs.on_step = [&](std::uint64_t step, const StepLosses &l) {
        for (std::size_t i = 0; i < l.positives.size(); ++i) {
            positives_log += std::to_string(step) + " " + std::to_string(i / classes) + " " +
                             std::to_string(1 + i % classes);
            for (std::size_t p : l.positives[i])
                positives_log += " " + std::to_string(p);
            positives_log += "\n";
        }
    };
    outputs.on_eval = [](const LogRow &r) {
        std::printf("step %llu  loss %.4f (sup %.4f reg %.4f pl %.4f rw %.4f)  val dsc %.4f "
                    "jaccard %.4f hd95 %.3f asd %.3f\n",
                    static_cast<unsigned long long>(r.step), r.loss_total, r.loss_sup, r.loss_reg,
                    r.loss_pl, r.loss_rw, r.val.dsc, r.val.jaccard, r.val.hd95, r.val.asd);
        std::fflush(stdout);
    };
    try {
        train(rc.train, samples, outputs, resume ? &*resume : nullptr);
    } catch (...) {
        write_file(rc.output_dir / "positives.log",
                   std::vector<std::uint8_t>(positives_log.begin(), positives_log.end()));
        throw;
    }
    write_file(rc.output_dir / "positives.log",
               std::vector<std::uint8_t>(positives_log.begin(), positives_log.end()));
    std::printf("checkpoint written to %s\n", (rc.output_dir / "checkpoint.agcl").string().c_str());
    return kOk;
}

ParamSet<float> load_student(const fs::path &path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    try {
        return decode_state(bytes).student;
    } catch (const ChecksumError &) {
        throw;
    } catch (const FormatError &) {
        // Not a training state: a bare parameter checkpoint.
        return read_params(path);
    }
}

struct ReportRow {
    std::string id;
    MetricReport report;
};

void emit(const std::vector<ReportRow> &rows, const MetricReport &macro, bool json,
          const std::optional<std::string> &csv_path) {
    if (csv_path) {
        std::string text = "id,dsc,jaccard,hd95,asd\n";
        for (const auto &r : rows)
            text += r.id + "," + num(r.report.dsc) + "," + num(r.report.jaccard) + "," +
                    num(r.report.hd95) + "," + num(r.report.asd) + "\n";
        text += "macro," + num(macro.dsc) + "," + num(macro.jaccard) + "," + num(macro.hd95) +
                "," + num(macro.asd) + "\n";
        write_file(*csv_path, std::vector<std::uint8_t>(text.begin(), text.end()));
    }
    if (json) {
        nlohmann::json j;
        j["samples"] = nlohmann::json::array();
        for (const auto &r : rows)
            j["samples"].push_back({{"id", r.id},
                                    {"dsc", json_num(r.report.dsc)},
                                    {"jaccard", json_num(r.report.jaccard)},
                                    {"hd95", json_num(r.report.hd95)},
                                    {"asd", json_num(r.report.asd)}});
        j["macro"] = {{"dsc", json_num(macro.dsc)},
                      {"jaccard", json_num(macro.jaccard)},
                      {"hd95", json_num(macro.hd95)},
                      {"asd", json_num(macro.asd)}};
        std::cout << j.dump(2) << "\n";
        return;
    }
    for (const auto &r : rows)
        std::printf("%s %s %s %s %s\n", r.id.c_str(), num(r.report.dsc).c_str(),
                    num(r.report.jaccard).c_str(), num(r.report.hd95).c_str(),
                    num(r.report.asd).c_str());
    std::printf("macro %s %s %s %s\n", num(macro.dsc).c_str(), num(macro.jaccard).c_str(),
                num(macro.hd95).c_str(), num(macro.asd).c_str());
}

std::string sample_id(std::size_t id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", id);
    return buf;
}

int cmd_eval(const std::string &checkpoint, const std::string &data, const std::string &split,
             bool json, const std::optional<std::string> &csv) {
    if (split != "all" && split != "labeled" && split != "unlabeled")
        throw ValidationError("--split expects all|labeled|unlabeled");
    if (!fs::is_regular_file(checkpoint))
        throw ValidationError("checkpoint not found: " + checkpoint);
    const std::vector<Sample> samples = load_dataset(data);
    const ParamSet<float> params = load_student(checkpoint);
    const Architecture arch = infer_architecture(params);
    const std::size_t classes = arch.classes - 1;
    if (max_label(samples) > classes)
        throw ShapeError("dataset labels exceed the checkpoint's " + std::to_string(classes) +
                         " foreground classes");

    std::vector<ReportRow> rows;
    std::vector<MetricReport> reports;
    for (const Sample &s : samples) {
        if ((split == "labeled" && !s.labeled) || (split == "unlabeled" && s.labeled) || s.mask.empty())
            continue;
        if (s.image.channels != arch.in_channels)
            throw ShapeError("sample " + sample_id(s.id) + " has the wrong channel count");
        rows.push_back({sample_id(s.id), evaluate(predict(params, arch, s.image), s.mask, classes)});
        reports.push_back(rows.back().report);
    }
    if (rows.empty())
        throw ValidationError("no samples with masks in the selected split");
    emit(rows, average(reports), json, csv);
    return kOk;
}

std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> mask_pairs(const fs::path &pred,
                                                                              const fs::path &truth) {
    std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> out;
    if (fs::is_regular_file(pred) && fs::is_regular_file(truth)) {
        out.push_back({pred.stem().string(), {pred, truth}});
        return out;
    }
    if (!fs::is_directory(pred) || !fs::is_directory(truth))
        throw ValidationError("--pred and --truth must both be mask files or both directories");
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(pred))
        if (e.path().extension() == ".agm")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const fs::path &f : files) {
        const fs::path t = truth / f.filename();
        if (!fs::exists(t))
            throw ValidationError("no ground-truth mask for " + f.filename().string());
        out.push_back({f.stem().string(), {f, t}});
    }
    if (out.empty())
        throw ValidationError("no .agm files in " + pred.string());
    return out;
}

int cmd_metrics(const std::string &pred, const std::string &truth, std::size_t classes, bool json,
                const std::optional<std::string> &csv) {
    const auto pairs = mask_pairs(pred, truth);
    std::vector<std::pair<std::string, std::pair<LabelMap, LabelMap>>> masks;
    std::size_t seen = 1;
    for (const auto &[id, files] : pairs) {
        masks.push_back({id, {read_mask(files.first), read_mask(files.second)}});
        for (std::uint8_t l : masks.back().second.second.labels)
            seen = std::max<std::size_t>(seen, l);
    }
    if (classes == 0)
        classes = seen;
    std::vector<ReportRow> rows;
    std::vector<MetricReport> reports;
    for (const auto &[id, m] : masks) {
        rows.push_back({id, evaluate(m.first, m.second, classes)});
        reports.push_back(rows.back().report);
    }
    emit(rows, average(reports), json, csv);
    return kOk;
}

int cmd_verify(std::uint64_t seed, bool json) {
    const auto results = cli::run_verification(seed);
    bool all = true;
    for (const auto &r : results)
        all = all && r.passed;
    if (json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto &r : results)
            j.push_back({{"check", r.name},
                         {"passed", r.passed},
                         {"worst", r.worst},
                         {"tolerance", r.tolerance},
                         {"detail", r.detail}});
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << cli::format_report(results);
        std::cout << (all ? "all checks passed\n" : "verification FAILED\n");
    }
    return all ? kOk : kVerification;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"agcl: affinity-graph guided contrastive learning toolkit"};
    app.require_subcommand(1);

    CommonArgs gen_common;
    std::optional<std::string> gen_out;
    std::optional<std::uint64_t> gen_seed;
    auto *gen = app.add_subcommand("generate", "Write a synthetic dataset");
    add_common(gen, gen_common);
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--seed", gen_seed, "Dataset seed");

    CommonArgs train_common;
    TrainArgs targs;
    auto *tr = app.add_subcommand("train", "Train the student/teacher pair");
    add_common(tr, train_common);
    tr->add_option("--data", targs.data, "Dataset directory");
    tr->add_option("--out", targs.out, "Output directory");
    tr->add_option("--ablate", targs.ablate, "Disable a term: pl|rw|reg (repeatable)");
    tr->add_option("--sampler", targs.sampler, "entropy|cosine|class_confidence|random");
    tr->add_option("--seed", targs.seed, "Training seed");
    tr->add_option("--iterations", targs.iterations, "Total steps");
    tr->add_option("--resume", targs.resume, "Continue from a training checkpoint");

    std::string ev_ckpt, ev_data, ev_split = "all";
    bool ev_json = false;
    std::optional<std::string> ev_csv;
    auto *ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--split", ev_split, "all|labeled|unlabeled");
    ev->add_flag("--json", ev_json, "JSON report on stdout");
    ev->add_option("--csv", ev_csv, "Also write a CSV report");

    std::string m_pred, m_truth;
    std::size_t m_classes = 0;
    bool m_json = false;
    std::optional<std::string> m_csv;
    auto *me = app.add_subcommand("metrics", "Score predicted masks against ground truth");
    me->add_option("--pred", m_pred, "Mask file or directory of .agm files")->required();
    me->add_option("--truth", m_truth, "Mask file or directory with matching names")->required();
    me->add_option("--classes", m_classes, "Foreground classes (default: largest truth label)");
    me->add_flag("--json", m_json, "JSON report on stdout");
    me->add_option("--csv", m_csv, "Also write a CSV report");

    std::uint64_t v_seed = 0;
    bool v_json = false;
    auto *ve = app.add_subcommand("verify", "Run the built-in oracle suite");
    ve->add_option("--seed", v_seed, "Seed for the randomized cases");
    ve->add_flag("--json", v_json, "JSON report on stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return kValidation;
    }

    try {
        if (*gen)
            return cmd_generate(gen_common, gen_out, gen_seed);
        if (*tr)
            return cmd_train(train_common, targs);
        if (*ev)
            return cmd_eval(ev_ckpt, ev_data, ev_split, ev_json, ev_csv);
        if (*me)
            return cmd_metrics(m_pred, m_truth, m_classes, m_json, m_csv);
        if (*ve)
            return cmd_verify(v_seed, v_json);
    } catch (const ValidationError &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const ParameterError &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const UsageError &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntime;
    }
    return kRuntime;
}
