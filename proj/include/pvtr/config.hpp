#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/io.hpp"

namespace pvtr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Declarative key/value configuration with [section] headers, `#` or `;`
/// comments and `key = value` lines.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string trimmed = trim(strip_comment(line));
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']')
                    throw ConfigError("config line " + std::to_string(lineno) +
                                      ": unterminated section header");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                continue;
            }
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[section + "/" + key] = value;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        const io::Bytes bytes = io::read_file(path);
        return parse(std::string(bytes.begin(), bytes.end()));
    }

    bool has(const std::string& section, const std::string& key) const {
        return values_.count(section + "/" + key) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key) const {
        const auto it = values_.find(section + "/" + key);
        if (it == values_.end())
            throw ConfigError("config: missing [" + section + "] " + key);
        return it->second;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        return has(section, key) ? get_string(section, key) : fallback;
    }

    double get_double(const std::string& section, const std::string& key) const {
        return parse_double(get_string(section, key), section, key);
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        return has(section, key) ? get_double(section, key) : fallback;
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key) const {
        const std::string s = get_string(section, key);
        try {
            std::size_t used = 0;
            const std::uint64_t v = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: [" + section + "] " + key + " is not an integer: " + s);
        }
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const {
        return has(section, key) ? get_u64(section, key) : fallback;
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const std::string s = get_string(section, key);
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError("config: [" + section + "] " + key + " is not a boolean: " + s);
    }

    /// Comma-separated list of doubles.
    std::vector<double> get_double_list(const std::string& section, const std::string& key) const {
        std::vector<double> out;
        std::istringstream in(get_string(section, key));
        std::string item;
        while (std::getline(in, item, ','))
            out.push_back(parse_double(trim(item), section, key));
        if (out.empty()) throw ConfigError("config: [" + section + "] " + key + " is empty");
        return out;
    }

    std::vector<std::string> sections() const {
        std::vector<std::string> out;
        std::string last;
        bool first = true;
        for (const auto& [path, _] : values_) {
            const std::string sec = path.substr(0, path.find('/'));
            if (first || sec != last) {
                out.push_back(sec);
                last = sec;
                first = false;
            }
        }
        return out;
    }

private:
    static std::string strip_comment(const std::string& s) {
        const std::size_t pos = s.find_first_of("#;");
        return pos == std::string::npos ? s : s.substr(0, pos);
    }

    static std::string trim(const std::string& s) {
        const std::size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const std::size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static double parse_double(const std::string& s, const std::string& section,
                               const std::string& key) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: [" + section + "] " + key + " is not a number: " + s);
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace pvtr
