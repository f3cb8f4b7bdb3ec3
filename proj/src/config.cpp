#include "dlm/config.hpp"

#include <fstream>

#include "dlm/error.hpp"

namespace dlm {

namespace {

std::string trim(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    size_t e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

void ResolvedConfig::set_default(const std::string & key, const std::string & value) {
    kv_[key] = Entry{value, Source::builtin};
}

void ResolvedConfig::load_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::io, "cannot open config file: " + path);
    }
    std::string line;
    size_t      lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::config, path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        auto        it  = kv_.find(key);
        if (it == kv_.end()) {
            fail(ErrorKind::config, path + ":" + std::to_string(lineno) + ": unknown config key \"" + key + "\"");
        }
        it->second = Entry{val, Source::file};
    }
}

void ResolvedConfig::set_cli(const std::string & key, const std::string & value) {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
        fail(ErrorKind::config, "unknown config key \"" + key + "\"");
    }
    it->second = Entry{value, Source::cli};
}

bool ResolvedConfig::has(const std::string & key) const {
    return kv_.count(key) != 0;
}

const ResolvedConfig::Entry & ResolvedConfig::entry(const std::string & key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
        fail(ErrorKind::config, "config key \"" + key + "\" was never declared");
    }
    return it->second;
}

std::string ResolvedConfig::str(const std::string & key) const {
    return entry(key).value;
}

int64_t ResolvedConfig::integer(const std::string & key) const {
    try {
        return std::stoll(entry(key).value);
    } catch (const std::exception &) {
        fail(ErrorKind::config, "config key " + key + ": \"" + entry(key).value + "\" is not an integer");
    }
}

double ResolvedConfig::real(const std::string & key) const {
    try {
        return std::stod(entry(key).value);
    } catch (const std::exception &) {
        fail(ErrorKind::config, "config key " + key + ": \"" + entry(key).value + "\" is not a number");
    }
}

bool ResolvedConfig::boolean(const std::string & key) const {
    const std::string & v = entry(key).value;
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    fail(ErrorKind::config, "config key " + key + ": \"" + v + "\" is not a boolean");
}

ResolvedConfig::Source ResolvedConfig::provenance(const std::string & key) const {
    return entry(key).source;
}

const char * ResolvedConfig::provenance_name(const std::string & key) const {
    switch (entry(key).source) {
        case Source::builtin: return "default";
        case Source::file:    return "file";
        case Source::cli:     return "cli";
    }
    return "?";
}

std::string ResolvedConfig::snapshot() const {
    std::string out;
    for (const auto & [key, e] : kv_) {  // std::map iterates sorted
        out += key + " = " + e.value + "  # " + provenance_name(key) + "\n";
    }
    return out;
}

}  // namespace dlm
