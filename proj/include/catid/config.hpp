#pragma once

#include <map>
#include <string>
#include <vector>

#include "catid/errors.hpp"

namespace catid {

// Flat key-value config with dotted-path keys ("train.alpha = 0.1").
// Command-line --set overrides land on top of the file values.
class Config {
  public:
    Config() = default;

    static Config from_file(const std::string& path);
    void apply_override(const std::string& key_equals_value);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        std::vector<double> fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace catid
