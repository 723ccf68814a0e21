#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "lanhar/error.hpp"
#include "lanhar/toml.hpp"

using namespace lanhar;

TEST_CASE("scalars, comments and tables") {
  const std::string text = R"(# experiment
name = "demo"
seed = 42
alpha = 0.5
debug = false

[paths]
out = "runs"

[model.text]
layers = 2
)";
  auto doc = toml::parse(text);
  CHECK(doc["name"] == "demo");
  CHECK(doc["seed"] == 42);
  CHECK(doc["alpha"] == 0.5);
  CHECK(doc["debug"] == false);
  CHECK(doc["paths"]["out"] == "runs");
  CHECK(doc["model"]["text"]["layers"] == 2);
}

TEST_CASE("arrays and array-of-tables") {
  const std::string text = R"(labels = ["walking", "sitting"]
weights = [1.0, 2.5]

[[datasets]]
id = "hhar"

[[datasets]]
id = "uci"
rate = 50
)";
  auto doc = toml::parse(text);
  REQUIRE(doc["labels"].is_array());
  CHECK(doc["labels"][0] == "walking");
  CHECK(doc["weights"][1] == 2.5);
  REQUIRE(doc["datasets"].is_array());
  REQUIRE(doc["datasets"].size() == 2);
  CHECK(doc["datasets"][0]["id"] == "hhar");
  CHECK(doc["datasets"][1]["rate"] == 50);
}

TEST_CASE("string escapes and dotted keys") {
  const std::string text = "msg = \"line1\\nline2\\t\\\"q\\\"\"\na.b.c = 3\n";
  auto doc = toml::parse(text);
  CHECK(doc["msg"] == "line1\nline2\t\"q\"");
  CHECK(doc["a"]["b"]["c"] == 3);
}

TEST_CASE("negative numbers and exponents") {
  auto doc = toml::parse("x = -3\ny = 1e-3\nz = -0.25\n");
  CHECK(doc["x"] == -3);
  CHECK(doc["y"] == 1e-3);
  CHECK(doc["z"] == -0.25);
}

TEST_CASE("errors carry line numbers") {
  try {
    toml::parse("ok = 1\nbroken\n");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("duplicate keys are rejected") {
  CHECK_THROWS_AS(toml::parse("a = 1\na = 2\n"), Error);
  CHECK_THROWS_AS(toml::parse("[t]\nx = 1\n[t]\nx = 2\n"), Error);
}

TEST_CASE("unterminated string is an error") {
  CHECK_THROWS_AS(toml::parse("s = \"oops\n"), Error);
}
