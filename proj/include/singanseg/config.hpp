#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace singanseg {

/// Minimal TOML-style config: [section] headers followed by key = value
/// lines; '#' starts a comment; values may be quoted.
struct ConfigFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static ConfigFile parse_string(const std::string& text);
    static ConfigFile parse_file(const std::filesystem::path& path);

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback = "") const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    std::int64_t get_int64(const std::string& section, const std::string& key,
                           std::int64_t fallback) const;
    double get_double(const std::string& section, const std::string& key,
                      double fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    /// Section contents as a JSON object string; numeric and boolean values
    /// are typed, everything else stays a string.
    std::string section_json(const std::string& section) const;
};

}  // namespace singanseg
