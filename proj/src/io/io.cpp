#include "aplab/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace aplab::io {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void CsvTable::add_row(std::vector<std::string> row) {
    if (row.size() != header.size()) {
        throw std::invalid_argument("csv: row has " + std::to_string(row.size()) + " cells, header has " +
                                    std::to_string(header.size()));
    }
    rows.push_back(std::move(row));
}

std::size_t CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::out_of_range("csv: no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

namespace {

void put_cell(std::string& out, const std::string& cell) {
    if (cell.find_first_of(",\"\n\r") == std::string::npos) {
        out += cell;
        return;
    }
    out += '"';
    for (char c : cell) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
}

void put_row(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        put_cell(out, row[i]);
    }
    out += '\n';
}

}  // namespace

std::string to_csv(const CsvTable& t) {
    std::string out;
    put_row(out, t.header);
    for (const auto& r : t.rows) put_row(out, r);
    return out;
}

CsvTable parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(cell));
            cell.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !cell.empty()) {
                row.push_back(std::move(cell));
                rows.push_back(std::move(row));
            }
            row.clear();
            cell.clear();
            any = false;
        } else {
            cell += c;
            any = true;
        }
    }
    if (quoted) throw std::invalid_argument("csv: unterminated quoted cell");
    if (any || !cell.empty()) {
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
    }
    CsvTable t;
    if (rows.empty()) return t;
    t.header = std::move(rows.front());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != t.header.size()) {
            throw std::invalid_argument("csv: line " + std::to_string(i + 1) + " has " + std::to_string(rows[i].size()) +
                                        " cells, expected " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(rows[i]));
    }
    return t;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------

ConfigObject::ConfigObject(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
}

bool ConfigObject::has(const std::string& key) const { return j_->contains(key); }

const Json* ConfigObject::take(const std::string& key) {
    seen_.push_back(key);
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
}

ConfigObject ConfigObject::object(const std::string& key) {
    static const Json empty = Json::object();
    const Json* v = take(key);
    return ConfigObject(v ? *v : empty, field(key));
}

const Json& ConfigObject::raw(const std::string& key) {
    const Json* v = take(key);
    if (!v) throw ConfigError(field(key), "missing");
    return *v;
}

double ConfigObject::number(const std::string& key, double fallback) {
    const Json* v = take(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(field(key), "expected a number");
    return v->get<double>();
}

std::uint64_t ConfigObject::uint(const std::string& key, std::uint64_t fallback) {
    const Json* v = take(key);
    if (!v) return fallback;
    if (!v->is_number_unsigned()) throw ConfigError(field(key), "expected a nonnegative integer");
    return v->get<std::uint64_t>();
}

bool ConfigObject::boolean(const std::string& key, bool fallback) {
    const Json* v = take(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v->get<bool>();
}

std::string ConfigObject::string(const std::string& key, const std::string& fallback) {
    const Json* v = take(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(field(key), "expected a string");
    return v->get<std::string>();
}

std::vector<double> ConfigObject::numbers(const std::string& key, const std::vector<double>& fallback) {
    const Json* v = take(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ConfigError(field(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back((*v)[i].get<double>());
    }
    return out;
}

std::vector<std::uint64_t> ConfigObject::uints(const std::string& key, const std::vector<std::uint64_t>& fallback) {
    const Json* v = take(key);
    if (!v) return fallback;
    if (!v->is_array()) throw ConfigError(field(key), "expected an array of integers");
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number_unsigned()) {
            throw ConfigError(field(key) + "[" + std::to_string(i) + "]", "expected a nonnegative integer");
        }
        out.push_back((*v)[i].get<std::uint64_t>());
    }
    return out;
}

void ConfigObject::finish() const {
    for (auto it = j_->begin(); it != j_->end(); ++it) {
        if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
            throw ConfigError(field(it.key()), "unknown key");
        }
    }
}

Json parse_json(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError(source, std::string("malformed JSON: ") + e.what());
    }
}

prompting::TrainConfig read_train_config(ConfigObject o, const prompting::TrainConfig& defaults) {
    prompting::TrainConfig c = defaults;
    const std::string opt = o.string("optimizer", c.optimizer == prompting::Optimizer::sgd ? "sgd" : "adam");
    if (opt == "sgd") {
        c.optimizer = prompting::Optimizer::sgd;
    } else if (opt == "adam") {
        c.optimizer = prompting::Optimizer::adam;
    } else {
        throw ConfigError(o.field("optimizer"), "expected \"sgd\" or \"adam\", got \"" + opt + "\"");
    }
    c.learning_rate = o.number("learning_rate", c.learning_rate);
    if (!(c.learning_rate >= 0.0)) throw ConfigError(o.field("learning_rate"), "must be nonnegative");
    c.epochs = o.uint("epochs", c.epochs);
    c.batch_size = o.uint("batch_size", c.batch_size);
    if (c.batch_size == 0) throw ConfigError(o.field("batch_size"), "must be positive");
    c.seed = o.uint("seed", c.seed);
    c.weight_decay = o.number("weight_decay", c.weight_decay);
    c.max_steps = o.uint("max_steps", c.max_steps);
    o.finish();
    return c;
}

prompting::PromptSpec read_prompt_spec(ConfigObject o) {
    prompting::PromptSpec s;
    try {
        s.method = prompting::parse_method(o.string("method", prompting::to_string(s.method)));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(o.field("method"), e.what());
    }
    s.site = o.string("site", s.site);
    try {
        s.shape_mode = prompting::parse_shape_mode(o.string("shape_mode", prompting::to_string(s.shape_mode)));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(o.field("shape_mode"), e.what());
    }
    s.train_head = o.boolean("train_head", s.train_head);
    s.inner_h = o.uint("inner_h", s.inner_h);
    s.inner_w = o.uint("inner_w", s.inner_w);
    o.finish();
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(o.path(), e.what());
    }
    return s;
}

namespace {

// Non-finite values are not representable in JSON; they are written as strings.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(format_double(v)); }

}  // namespace

Json to_json_stable(const prompting::RunRecord& r) {
    Json j;
    j["seed"] = r.seed;
    j["method"] = r.method;
    j["site"] = r.site;
    j["shape_mode"] = r.shape_mode;
    j["optimizer"] = r.optimizer;
    j["learning_rate"] = num(r.learning_rate);
    j["epochs"] = r.epochs;
    j["batch_size"] = r.batch_size;
    j["weight_decay"] = num(r.weight_decay);
    j["n_train"] = r.n_train;
    j["n_test"] = r.n_test;
    j["steps"] = r.steps;
    Json losses = Json::array();
    for (double l : r.losses) losses.push_back(num(l));
    j["losses"] = losses;
    j["initial_test_acc"] = num(r.initial_test_acc);
    j["final_train_acc"] = num(r.final_train_acc);
    j["final_test_acc"] = num(r.final_test_acc);
    j["param_count"] = r.param_count;
    j["diverged"] = r.diverged;
    j["divergence_threshold"] = num(r.divergence_threshold);
    Json dist = Json::array();
    for (double d : r.attention_distances) dist.push_back(num(d));
    j["attention_distances"] = dist;
    return j;
}

Json to_json(const prompting::RunRecord& r) {
    Json j = to_json_stable(r);
    j["wall_time_s"] = num(r.wall_time_s);
    return j;
}

prompting::Dataset load_csv_dataset(const std::filesystem::path& path, const Shape& geometry,
                                    std::size_t num_classes) {
    if (!std::filesystem::exists(path)) throw IoError("dataset file not found: " + path.string());
    CsvTable t;
    try {
        t = parse_csv(read_text(path));
    } catch (const std::invalid_argument& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    std::size_t features = 1;
    for (auto g : geometry) features *= g;
    if (t.header.size() != features + 1 || t.header[0] != "label") {
        throw IoError(path.string() + ": header must be label,f0..f" + std::to_string(features - 1) + " for geometry " +
                      shape_str(geometry));
    }
    for (std::size_t i = 0; i < features; ++i) {
        if (t.header[i + 1] != "f" + std::to_string(i)) {
            throw IoError(path.string() + ": column " + std::to_string(i + 1) + " must be named f" + std::to_string(i));
        }
    }
    prompting::Dataset d;
    d.num_classes = num_classes;
    Shape shape{t.rows.size()};
    shape.insert(shape.end(), geometry.begin(), geometry.end());
    d.x = Tensor(shape);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        auto where = [&](std::size_t c) { return path.string() + ": row " + std::to_string(r + 2) + ", column " + std::to_string(c + 1); };
        std::size_t used = 0;
        long label = 0;
        try {
            label = std::stol(row[0], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != row[0].size() || label < 0 || static_cast<std::size_t>(label) >= num_classes) {
            throw IoError(where(0) + ": label '" + row[0] + "' is not in [0, " + std::to_string(num_classes) + ")");
        }
        d.labels.push_back(static_cast<int>(label));
        for (std::size_t c = 0; c < features; ++c) {
            double v = 0.0;
            try {
                v = std::stod(row[c + 1], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != row[c + 1].size() || row[c + 1].empty()) throw IoError(where(c + 1) + ": not a number");
            d.x.data[r * features + c] = v;
        }
    }
    return d;
}

std::string dataset_to_csv(const prompting::Dataset& d) {
    CsvTable t;
    const std::size_t n = d.size();
    const std::size_t features = n ? d.x.size() / n : 0;
    t.header.push_back("label");
    for (std::size_t i = 0; i < features; ++i) t.header.push_back("f" + std::to_string(i));
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<std::string> row{std::to_string(d.labels[r])};
        for (std::size_t i = 0; i < features; ++i) row.push_back(format_double(d.x.data[r * features + i]));
        t.add_row(std::move(row));
    }
    return to_csv(t);
}

}  // namespace aplab::io
