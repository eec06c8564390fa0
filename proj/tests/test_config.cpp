#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "catid/config.hpp"

using namespace catid;

namespace {

std::string write_tmp(const std::string& text) {
    std::string path = "test_config_tmp.cfg";
    std::ofstream out(path);
    out << text;
    return path;
}

}  // namespace

TEST_CASE("config parses dotted keys, comments and blank lines") {
    auto path = write_tmp(
        "# top comment\n"
        "train.alpha = 0.1\n"
        "\n"
        "train.K = 256   # inline comment\n"
        "data.branching = 8, 4, 4\n"
        "train.baseline_mode = true\n");
    Config cfg = Config::from_file(path);
    CHECK(cfg.get_double("train.alpha", -1) == doctest::Approx(0.1));
    CHECK(cfg.get_int("train.K", -1) == 256);
    CHECK(cfg.get_int_list("data.branching", {}) == std::vector<int>{8, 4, 4});
    CHECK(cfg.get_bool("train.baseline_mode", false));
    CHECK(cfg.get_int("train.missing", 42) == 42);
    std::remove(path.c_str());
}

TEST_CASE("overrides replace file values") {
    Config cfg;
    cfg.set("train.alpha", "0.1");
    cfg.apply_override("train.alpha=0.5");
    CHECK(cfg.get_double("train.alpha", 0) == doctest::Approx(0.5));
    CHECK_THROWS_AS(cfg.apply_override("nonsense"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("=3"), ConfigError);
}

TEST_CASE("malformed values raise ConfigError") {
    Config cfg;
    cfg.set("a", "12x");
    cfg.set("b", "maybe");
    cfg.set("c", "1,two,3");
    CHECK_THROWS_AS(cfg.get_int("a", 0), ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("b", false), ConfigError);
    CHECK_THROWS_AS(cfg.get_int_list("c", {}), ConfigError);
    CHECK_THROWS_AS(Config::from_file("no_such_file.cfg"), ConfigError);
}

TEST_CASE("line without equals sign is rejected") {
    auto path = write_tmp("train.alpha 0.1\n");
    CHECK_THROWS_AS(Config::from_file(path), ConfigError);
    std::remove(path.c_str());
}
