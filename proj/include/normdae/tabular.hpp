#pragma once

// Small text-data utilities shared across the pipeline: shortest round-trip
// float formatting, rectangular CSV read/write, and an INI-style config
// parser that tracks which keys were consumed so typos can be rejected.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace normdae::tab {

// Shortest representation that round-trips exactly (std::to_chars).
std::string format_double(double v);
std::string format_float(float v);

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::string to_csv_text(const Csv& csv);
// Parses header + rows; throws DataError when rows are ragged or input is empty.
Csv parse_csv(const std::string& text);
// Atomic write (temp file + rename).
void write_csv(const std::string& path, const Csv& csv);
Csv read_csv(const std::string& path);
// Index of a named column; throws DataError when absent.
size_t column_index(const Csv& csv, const std::string& name);

// `key = value` lines; `#` and `;` start comments; `[section]` headers prefix
// subsequent keys as "section.key". Values keep internal whitespace.
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const;

    // Getters mark the key as consumed. The no-default overloads throw
    // ConfigError when the key is missing; all throw on malformed values.
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Keys present in the file but never read by any getter.
    std::vector<std::string> unconsumed() const;
    // Throws ConfigError naming every unconsumed key.
    void require_all_consumed() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

} // namespace normdae::tab
