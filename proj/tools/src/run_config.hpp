#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "agcl/data.hpp"
#include "agcl/parallel.hpp"
#include "agcl/trainer.hpp"

namespace agcl::cli {

/// Bad user input: unknown key, malformed value, out-of-range parameter. Exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

struct RunConfig {
    DatasetSpec dataset;
    TrainConfig train;
    std::filesystem::path dataset_path;
    std::filesystem::path output_dir;

    RunConfig();

    /// Sets one dotted key from its text form; throws ValidationError on unknown keys or
    /// unparsable values.
    void set(std::string_view key, std::string_view value);

    /// Reads `key = value` lines; '#' starts a comment.
    void load_file(const std::filesystem::path &path);
    void load_text(std::string_view text, std::string_view origin = "<text>");

    /// Range checks on every field (dataset and trainer). Throws ValidationError.
    void validate() const;

    /// Every key with its resolved value, one `key = value` line each, in table order.
    std::string resolved() const;

    static std::vector<std::string> keys();
};

/// Splits "key=value" (as given to --set).
std::pair<std::string, std::string> split_assignment(std::string_view text);

} // namespace agcl::cli
