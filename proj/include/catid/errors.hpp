#pragma once

#include <stdexcept>
#include <string>

namespace catid {

// Exit-code buckets for the CLI: config=2, data=3, numeric=4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DepthError : std::runtime_error {
    DepthError(int h, int l)
        : std::runtime_error("category depth H=" + std::to_string(h) +
                             " must be strictly smaller than quantizer depth L=" +
                             std::to_string(l)),
          H(h), L(l) {}
    int H;
    int L;
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace catid
