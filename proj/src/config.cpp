#include "singanseg/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "singanseg/errors.hpp"

namespace singanseg {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string strip_quotes(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": empty section name");
            }
            cfg.sections[section];
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value");
        }
        auto key = trim(line.substr(0, eq));
        auto value = strip_quotes(trim(line.substr(eq + 1)));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        cfg.sections[section][key] = value;
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    auto it = sections.find(section);
    return it != sections.end() && it->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    auto it = sections.find(section);
    if (it == sections.end()) return fallback;
    auto kit = it->second.find(key);
    return kit == it->second.end() ? fallback : kit->second;
}

namespace {

template <typename T, typename Conv>
T parse_typed(const ConfigFile& cfg, const std::string& section, const std::string& key,
              T fallback, Conv conv, const char* kind) {
    if (!cfg.has(section, key)) return fallback;
    const auto raw = cfg.get(section, key);
    try {
        std::size_t pos = 0;
        T v = conv(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config [" + section + "] " + key + ": expected " + kind +
                          ", got \"" + raw + "\"");
    }
}

}  // namespace

int ConfigFile::get_int(const std::string& section, const std::string& key,
                        int fallback) const {
    return parse_typed<int>(*this, section, key, fallback,
                            [](const std::string& s, std::size_t* p) {
                                return std::stoi(s, p);
                            },
                            "integer");
}

std::int64_t ConfigFile::get_int64(const std::string& section, const std::string& key,
                                   std::int64_t fallback) const {
    return parse_typed<std::int64_t>(*this, section, key, fallback,
                                     [](const std::string& s, std::size_t* p) {
                                         return std::stoll(s, p);
                                     },
                                     "integer");
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    return parse_typed<double>(*this, section, key, fallback,
                               [](const std::string& s, std::size_t* p) {
                                   return std::stod(s, p);
                               },
                               "number");
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
    if (!has(section, key)) return fallback;
    auto raw = get(section, key);
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError("config [" + section + "] " + key + ": expected boolean, got \"" +
                      raw + "\"");
}

std::string ConfigFile::section_json(const std::string& section) const {
    nlohmann::json j = nlohmann::json::object();
    auto it = sections.find(section);
    if (it != sections.end()) {
        for (const auto& [key, raw] : it->second) {
            if (raw == "true") { j[key] = true; continue; }
            if (raw == "false") { j[key] = false; continue; }
            try {
                std::size_t pos = 0;
                if (raw.find('.') == std::string::npos &&
                    raw.find('e') == std::string::npos &&
                    raw.find('E') == std::string::npos) {
                    auto v = std::stoll(raw, &pos);
                    if (pos == raw.size()) { j[key] = v; continue; }
                } else {
                    auto v = std::stod(raw, &pos);
                    if (pos == raw.size()) { j[key] = v; continue; }
                }
            } catch (const std::exception&) {
            }
            j[key] = raw;
        }
    }
    return j.dump();
}

}  // namespace singanseg
