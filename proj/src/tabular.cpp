#include "normdae/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "normdae/errors.hpp"
#include "normdae/fsio.hpp"

namespace normdae::tab {

namespace {

template <typename T>
std::string format_shortest(T v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw NumericError("number formatting failed");
    return std::string(buf, ptr);
}

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

} // namespace

std::string format_double(double v) { return format_shortest(v); }
std::string format_float(float v) { return format_shortest(v); }

std::string to_csv_text(const Csv& csv) {
    std::string out;
    auto append_row = [&out](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out.push_back(',');
            out += row[i];
        }
        out.push_back('\n');
    };
    append_row(csv.header);
    for (const auto& row : csv.rows) {
        if (row.size() != csv.header.size()) {
            throw DataError("csv: row width " + std::to_string(row.size()) +
                            " does not match header width " + std::to_string(csv.header.size()));
        }
        append_row(row);
    }
    return out;
}

Csv parse_csv(const std::string& text) {
    Csv csv;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t start = 0;
        while (true) {
            const size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (first) {
            csv.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != csv.header.size()) {
                throw DataError("csv: line " + std::to_string(line_no) + " has " +
                                std::to_string(fields.size()) + " fields, expected " +
                                std::to_string(csv.header.size()));
            }
            csv.rows.push_back(std::move(fields));
        }
    }
    if (first) throw DataError("csv: empty input");
    return csv;
}

void write_csv(const std::string& path, const Csv& csv) {
    io::atomic_write(path, to_csv_text(csv));
}

Csv read_csv(const std::string& path) { return parse_csv(io::read_file(path)); }

size_t column_index(const Csv& csv, const std::string& name) {
    const auto it = std::find(csv.header.begin(), csv.header.end(), name);
    if (it == csv.header.end()) throw DataError("csv: missing column '" + name + "'");
    return static_cast<size_t>(it - csv.header.begin());
}

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.resize(comment);
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        if (trimmed.front() == '[') {
            if (trimmed.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unterminated section header");
            }
            section = trim(std::string_view(trimmed).substr(1, trimmed.size() - 2));
            continue;
        }
        const size_t eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + trimmed + "'");
        }
        std::string key = trim(std::string_view(trimmed).substr(0, eq));
        const std::string value = trim(std::string_view(trimmed).substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        if (!section.empty()) key = section + "." + key;
        if (cfg.values_.count(key)) {
            throw ConfigError("config: duplicate key '" + key + "'");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

Config Config::load(const std::string& path) { return parse(io::read_file(path)); }

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::string Config::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
    consumed_.insert(key);
    return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    consumed_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

namespace {

double parse_double(const std::string& key, const std::string& raw) {
    double v = 0.0;
    const char* begin = raw.data();
    const char* end = raw.data() + raw.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("config: key '" + key + "' has non-numeric value '" + raw + "'");
    }
    return v;
}

long long parse_int(const std::string& key, const std::string& raw) {
    long long v = 0;
    const char* begin = raw.data();
    const char* end = raw.data() + raw.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw ConfigError("config: key '" + key + "' has non-integer value '" + raw + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
    if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
    throw ConfigError("config: key '" + key + "' has non-boolean value '" + raw + "'");
}

} // namespace

double Config::get_double(const std::string& key) const {
    return parse_double(key, get_string(key));
}
double Config::get_double(const std::string& key, double fallback) const {
    consumed_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(key, it->second);
}
long long Config::get_int(const std::string& key) const { return parse_int(key, get_string(key)); }
long long Config::get_int(const std::string& key, long long fallback) const {
    consumed_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(key, it->second);
}
bool Config::get_bool(const std::string& key) const { return parse_bool(key, get_string(key)); }
bool Config::get_bool(const std::string& key, bool fallback) const {
    consumed_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_bool(key, it->second);
}

std::vector<std::string> Config::unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_) {
        if (!consumed_.count(key)) out.push_back(key);
    }
    return out;
}

void Config::require_all_consumed() const {
    const std::vector<std::string> extra = unconsumed();
    if (extra.empty()) return;
    std::string msg = "config: unknown key(s):";
    for (const std::string& k : extra) msg += " '" + k + "'";
    throw ConfigError(msg);
}

} // namespace normdae::tab
