#pragma once

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "aplab/prompting.hpp"

namespace aplab::io {

using Json = nlohmann::json;

/// 17 significant digits, '.' decimal point; round-trips every finite double.
std::string format_double(double v);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    std::size_t column(const std::string& name) const;
};

std::string to_csv(const CsvTable& t);
CsvTable parse_csv(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parse failure carrying the dotted path of the offending field.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& path, const std::string& what)
        : std::invalid_argument(path + ": " + what), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

/// Strict view of a JSON object: every key must be consumed or listed,
/// leftovers are reported by finish().
class ConfigObject {
public:
    ConfigObject(const Json& j, std::string path);

    bool has(const std::string& key) const;
    ConfigObject object(const std::string& key);
    const Json& raw(const std::string& key);

    double number(const std::string& key, double fallback);
    std::uint64_t uint(const std::string& key, std::uint64_t fallback);
    bool boolean(const std::string& key, bool fallback);
    std::string string(const std::string& key, const std::string& fallback);
    std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback);
    std::vector<std::uint64_t> uints(const std::string& key, const std::vector<std::uint64_t>& fallback);

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    const std::string& path() const { return path_; }
    /// Throws ConfigError naming the first key never read.
    void finish() const;

private:
    const Json* j_;
    std::string path_;
    std::vector<std::string> seen_;
    const Json* take(const std::string& key);
};

Json parse_json(const std::string& text, const std::string& source);

/// Missing keys keep their defaults.
prompting::TrainConfig read_train_config(ConfigObject o, const prompting::TrainConfig& defaults = {});
prompting::PromptSpec read_prompt_spec(ConfigObject o);

Json to_json(const prompting::RunRecord& r);
/// Same record without the wall-time field, for byte-level reproducibility checks.
Json to_json_stable(const prompting::RunRecord& r);

/// Header `label,f0,f1,...`; every row must have prod(geometry) features and
/// a label in [0, num_classes).
prompting::Dataset load_csv_dataset(const std::filesystem::path& path, const Shape& geometry,
                                    std::size_t num_classes);
std::string dataset_to_csv(const prompting::Dataset& d);

}  // namespace aplab::io
