#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pcsim {

// Line-oriented "key = value" config with [section] headers and '#' comments.
// Length-bearing keys carry their unit in the name (a_nm, dx_nm, tau_ps, ...);
// see docs/config_schema.md.
class ConfigDoc {
  public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static ConfigDoc parse_file(const std::string &path);
    static ConfigDoc parse_string(const std::string &text, const std::string &origin = "<string>");

    bool has_section(const std::string &section) const;
    bool has_key(const std::string &section, const std::string &key) const;
    std::vector<std::string> section_names() const;

    // Typed getters. The require_* forms throw ConfigError when missing or
    // malformed; get_* forms fall back to a default.
    std::string require_string(const std::string &section, const std::string &key) const;
    double require_double(const std::string &section, const std::string &key) const;
    long require_int(const std::string &section, const std::string &key) const;

    std::string get_string(const std::string &section, const std::string &key, const std::string &fallback) const;
    double get_double(const std::string &section, const std::string &key, double fallback) const;
    long get_int(const std::string &section, const std::string &key, long fallback) const;
    bool get_bool(const std::string &section, const std::string &key, bool fallback) const;

    // Comma-separated list; empty value yields an empty list.
    std::vector<std::string> get_list(const std::string &section, const std::string &key) const;

    const std::string &origin() const { return origin_; }

    void set(const std::string &section, const std::string &key, const std::string &value);
    std::string serialize() const;

  private:
    const Entry *find(const std::string &section, const std::string &key) const;
    [[noreturn]] void fail(const std::string &section, const std::string &key, const std::string &why) const;

    std::string origin_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::vector<std::string> section_order_;
    std::map<std::string, std::vector<std::string>> key_order_;
};

} // namespace pcsim
