#include "run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace agcl::cli {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(std::string_view key, std::string_view v) {
    const std::string s(v);
    try {
        std::size_t used = 0;
        const double d = std::stod(s, &used);
        if (used == s.size())
            return d;
    } catch (const std::exception &) {
    }
    throw ValidationError(std::string(key) + ": expected a number, got '" + s + "'");
}

std::uint64_t parse_count(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
        throw ValidationError(std::string(key) + ": expected a non-negative integer, got '" +
                              std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes")
        return true;
    if (v == "false" || v == "0" || v == "off" || v == "no")
        return false;
    throw ValidationError(std::string(key) + ": expected true|false, got '" + std::string(v) + "'");
}

template <class F>
auto parse_enum(std::string_view key, std::string_view v, F parse) {
    try {
        return parse(v);
    } catch (const ParameterError &e) {
        throw ValidationError(std::string(key) + ": " + e.what());
    }
}

struct Field {
    const char *key;
    std::function<void(RunConfig &, std::string_view)> set;
    std::function<std::string(const RunConfig &)> get;
};

#define REAL(KEY, EXPR)                                                                         \
    Field {                                                                                     \
        KEY, [](RunConfig &c, std::string_view v) { c.EXPR = parse_double(KEY, v); },          \
            [](const RunConfig &c) { return fmt_double(c.EXPR); }                               \
    }
#define COUNT(KEY, EXPR)                                                                        \
    Field {                                                                                     \
        KEY, [](RunConfig &c, std::string_view v) { c.EXPR = parse_count(KEY, v); },           \
            [](const RunConfig &c) { return std::to_string(c.EXPR); }                           \
    }
#define FLAG(KEY, EXPR)                                                                         \
    Field {                                                                                     \
        KEY, [](RunConfig &c, std::string_view v) { c.EXPR = parse_bool(KEY, v); },            \
            [](const RunConfig &c) { return std::string(c.EXPR ? "true" : "false"); }           \
    }
#define CHOICE(KEY, EXPR, PARSE)                                                                \
    Field {                                                                                     \
        KEY,                                                                                    \
            [](RunConfig &c, std::string_view v) {                                              \
                c.EXPR = parse_enum(KEY, v, [](std::string_view s) { return PARSE(s); });       \
            },                                                                                  \
            [](const RunConfig &c) { return std::string(to_string(c.EXPR)); }                   \
    }

const std::vector<Field> &fields() {
    static const std::vector<Field> table = {
        COUNT("dataset.count", dataset.count),
        COUNT("dataset.size", dataset.size),
        COUNT("dataset.classes", dataset.classes),
        REAL("dataset.labeled_fraction", dataset.labeled_fraction),
        COUNT("dataset.seed", dataset.seed),
        COUNT("dataset.blobs_min", dataset.blobs_min),
        COUNT("dataset.blobs_max", dataset.blobs_max),
        REAL("dataset.radius_min", dataset.radius_min),
        REAL("dataset.radius_max", dataset.radius_max),
        REAL("dataset.background_min", dataset.background_min),
        REAL("dataset.background_max", dataset.background_max),
        REAL("dataset.texture_amplitude", dataset.texture_amplitude),
        REAL("dataset.intensity_min", dataset.intensity_min),
        REAL("dataset.intensity_max", dataset.intensity_max),
        REAL("dataset.noise_sigma", dataset.noise_sigma),
        Field{"dataset.path", [](RunConfig &c, std::string_view v) { c.dataset_path = v; },
              [](const RunConfig &c) { return c.dataset_path.string(); }},
        Field{"output.dir", [](RunConfig &c, std::string_view v) { c.output_dir = v; },
              [](const RunConfig &c) { return c.output_dir.string(); }},

        REAL("trainer.lr", train.lr),
        REAL("trainer.beta1", train.beta1),
        REAL("trainer.beta2", train.beta2),
        REAL("trainer.eps", train.adam_eps),
        COUNT("trainer.batch_size", train.batch_size),
        COUNT("trainer.iterations", train.iterations),
        COUNT("trainer.seed", train.seed),
        COUNT("trainer.eval_interval", train.eval_interval),
        COUNT("trainer.val_count", train.val_count),
        COUNT("trainer.checkpoint_interval", train.checkpoint_interval),
        REAL("teacher.ema_alpha", train.hyper.ema_alpha),

        COUNT("model.c1", train.arch.c1),
        COUNT("model.c2", train.arch.c2),
        COUNT("model.c3", train.arch.c3),
        COUNT("model.embed_hidden", train.arch.embed_hidden),
        COUNT("model.embed_dim", train.arch.embed_dim),

        REAL("loss.tau", train.hyper.tau),
        REAL("loss.gamma", train.hyper.gamma),
        REAL("loss.lambda", train.hyper.lambda_unused),
        CHOICE("loss.sign_mode", train.sign_mode, parse_sign_mode),
        FLAG("loss.nuclear", train.use_nuclear),
        FLAG("loss.reg", train.enable_reg),
        FLAG("loss.pl", train.enable_pl),
        FLAG("loss.rw", train.enable_rw),

        COUNT("patch.size", train.patch_size),
        COUNT("patch.stride", train.patch_stride),
        CHOICE("sampler.name", train.sampler, parse_sampler),
        COUNT("sampler.n", train.hyper.n_positives),

        CHOICE("kernel.distance", train.kernel, parse_kernel_distance),
        REAL("kernel.sigma", train.sigma),

        REAL("negatives.theta", train.hyper.theta),
        CHOICE("negatives.selection", train.selection, parse_negative_selection),
        COUNT("bank.capacity", train.hyper.bank_capacity),
        COUNT("mix.neighborhood", train.mix_neighborhood),
        FLAG("mix.include_raw", train.rw_include_raw),
    };
    return table;
}

#undef REAL
#undef COUNT
#undef FLAG
#undef CHOICE

} // namespace

RunConfig::RunConfig() {
    // Defaults for the trainer follow the dataset's class count.
    train.arch.classes = dataset.classes + 1;
    train.threads = env_thread_cap();
}

void RunConfig::set(std::string_view key, std::string_view value) {
    const std::string v = trim(value);
    for (const Field &f : fields())
        if (key == f.key) {
            f.set(*this, v);
            if (key == "dataset.classes")
                train.arch.classes = dataset.classes + 1;
            return;
        }
    throw ValidationError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::load_text(std::string_view text, std::string_view origin) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        if (trim(line).empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(std::string(origin) + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
        try {
            set(trim(std::string_view(line).substr(0, eq)), std::string_view(line).substr(eq + 1));
        } catch (const ValidationError &e) {
            throw ValidationError(std::string(origin) + ":" + std::to_string(lineno) + ": " +
                                  e.what());
        }
    }
}

void RunConfig::load_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw ValidationError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path.string());
}

void RunConfig::validate() const {
    try {
        dataset.validate();
        train.validate();
    } catch (const ParameterError &e) {
        throw ValidationError(e.what());
    }
    if (dataset.size % 8 != 0)
        throw ValidationError("dataset.size must be a multiple of 8 (three pooling stages)");
}

std::string RunConfig::resolved() const {
    std::string out;
    for (const Field &f : fields())
        out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const Field &f : fields())
        out.emplace_back(f.key);
    return out;
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos)
        throw ValidationError("--set expects key=value, got '" + std::string(text) + "'");
    return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

} // namespace agcl::cli
