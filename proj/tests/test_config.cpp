#include <doctest.h>

#include "mae/config.hpp"

using namespace mae;

TEST_CASE("config parses sections, comments, and typed values") {
    Config cfg = Config::parse_string(
        "# comment\n"
        "top = 1\n"
        "[model]\n"
        "d_model = 64   # trailing comment\n"
        "dropout = 0.1\n"
        "tie = true\n"
        "[run]\n"
        "out = runs/x\n");
    CHECK(cfg.get_int("top", 0) == 1);
    CHECK(cfg.get_int("model.d_model", 0) == 64);
    CHECK(cfg.get_real("model.dropout", 0) == doctest::Approx(0.1));
    CHECK(cfg.get_bool("model.tie", false));
    CHECK(cfg.get_string("run.out") == "runs/x");
    CHECK(cfg.get_int("model.missing", 7) == 7);
    CHECK_THROWS(cfg.get_string("run.missing"));
}

TEST_CASE("config rejects malformed lines") {
    CHECK_THROWS(Config::parse_string("[broken\nk = v\n"));
    CHECK_THROWS(Config::parse_string("novalue\n"));
    Config typed = Config::parse_string("[s]\nk = notanumber\n");
    CHECK_THROWS(typed.get_int("s.k", 0));
}

TEST_CASE("config hash is stable and order independent") {
    Config a = Config::parse_string("[s]\na = 1\nb = 2\n");
    Config b = Config::parse_string("[s]\nb = 2\na = 1\n");
    CHECK(a.hash() == b.hash());
    Config c = Config::parse_string("[s]\na = 1\nb = 3\n");
    CHECK(a.hash() != c.hash());
}
