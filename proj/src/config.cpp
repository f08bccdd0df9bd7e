#include "pcsim/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pcsim/errors.hpp"

namespace pcsim {

namespace {

std::string trim(const std::string &s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string &s) {
    size_t pos = s.find('#');
    return pos == std::string::npos ? s : s.substr(0, pos);
}

} // namespace

ConfigDoc ConfigDoc::parse_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

ConfigDoc ConfigDoc::parse_string(const std::string &text, const std::string &origin) {
    ConfigDoc doc;
    doc.origin_ = origin;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed section header '" + line + "'");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (!doc.sections_.count(section)) {
                doc.sections_[section];
                doc.section_order_.push_back(section);
            }
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (section.empty()) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": key '" + key + "' outside any [section]");
        }
        if (doc.sections_[section].count(key)) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "' in [" + section + "]");
        }
        doc.sections_[section][key] = Entry{value, line_no};
        doc.key_order_[section].push_back(key);
    }
    return doc;
}

bool ConfigDoc::has_section(const std::string &section) const { return sections_.count(section) > 0; }

bool ConfigDoc::has_key(const std::string &section, const std::string &key) const { return find(section, key) != nullptr; }

std::vector<std::string> ConfigDoc::section_names() const { return section_order_; }

const ConfigDoc::Entry *ConfigDoc::find(const std::string &section, const std::string &key) const {
    auto sit = sections_.find(section);
    if (sit == sections_.end()) {
        return nullptr;
    }
    auto kit = sit->second.find(key);
    return kit == sit->second.end() ? nullptr : &kit->second;
}

void ConfigDoc::fail(const std::string &section, const std::string &key, const std::string &why) const {
    throw ConfigError(origin_ + ": [" + section + "] " + key + ": " + why);
}

std::string ConfigDoc::require_string(const std::string &section, const std::string &key) const {
    const Entry *e = find(section, key);
    if (!e) {
        fail(section, key, "missing required key");
    }
    return e->value;
}

double ConfigDoc::require_double(const std::string &section, const std::string &key) const {
    const std::string v = require_string(section, key);
    char *end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (!end || *end != '\0' || v.empty()) {
        fail(section, key, "not a number: '" + v + "'");
    }
    return d;
}

long ConfigDoc::require_int(const std::string &section, const std::string &key) const {
    const std::string v = require_string(section, key);
    char *end = nullptr;
    const long n = std::strtol(v.c_str(), &end, 10);
    if (!end || *end != '\0' || v.empty()) {
        fail(section, key, "not an integer: '" + v + "'");
    }
    return n;
}

std::string ConfigDoc::get_string(const std::string &section, const std::string &key, const std::string &fallback) const {
    const Entry *e = find(section, key);
    return e ? e->value : fallback;
}

double ConfigDoc::get_double(const std::string &section, const std::string &key, double fallback) const {
    return find(section, key) ? require_double(section, key) : fallback;
}

long ConfigDoc::get_int(const std::string &section, const std::string &key, long fallback) const {
    return find(section, key) ? require_int(section, key) : fallback;
}

bool ConfigDoc::get_bool(const std::string &section, const std::string &key, bool fallback) const {
    const Entry *e = find(section, key);
    if (!e) {
        return fallback;
    }
    std::string v = e->value;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "yes" || v == "on" || v == "1") {
        return true;
    }
    if (v == "false" || v == "no" || v == "off" || v == "0") {
        return false;
    }
    fail(section, key, "not a boolean: '" + e->value + "'");
}

std::vector<std::string> ConfigDoc::get_list(const std::string &section, const std::string &key) const {
    const Entry *e = find(section, key);
    std::vector<std::string> items;
    if (!e || trim(e->value).empty()) {
        return items;
    }
    std::istringstream in(e->value);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            items.push_back(item);
        }
    }
    return items;
}

void ConfigDoc::set(const std::string &section, const std::string &key, const std::string &value) {
    if (!sections_.count(section)) {
        sections_[section];
        section_order_.push_back(section);
    }
    if (!sections_[section].count(key)) {
        key_order_[section].push_back(key);
    }
    sections_[section][key] = Entry{value, 0};
}

std::string ConfigDoc::serialize() const {
    std::ostringstream out;
    for (const auto &section : section_order_) {
        out << "[" << section << "]\n";
        auto oit = key_order_.find(section);
        if (oit != key_order_.end()) {
            for (const auto &key : oit->second) {
                out << key << " = " << sections_.at(section).at(key).value << "\n";
            }
        }
        out << "\n";
    }
    return out.str();
}

} // namespace pcsim
