#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mgta/config.hpp"
#include "mgta/errors.hpp"

using namespace mgta;
namespace fs = std::filesystem;

TEST_CASE("empty object gives the defaults") {
  RunConfig cfg = parse_config("{}");
  CHECK(cfg == RunConfig{});
  CHECK(cfg.model.head.num_classes == cfg.scene.classes.size());
}

TEST_CASE("config round trip through text and file") {
  RunConfig cfg = parse_config(R"({
    "scene": {"range": 20.0, "min_objects": 1, "max_objects": 3},
    "data": {"train_count": 5, "test_count": 2, "seed": 99},
    "model": {"channels": 8, "frames": 2, "aggregation": "concat", "align": true,
              "encoder": {"c_q": 4, "c_m": 8, "c_b": 8, "smvfe": true},
              "stfa": {"heads": 2, "points": 3, "layers": 2}},
    "train": {"stage1_epochs": 3, "lr": 0.001, "augment": {"max_paste": 1, "flip_probability": 0.25}},
    "paths": {"dataset": "d", "out": "o"}
  })");
  CHECK(cfg.model.aggregation == Aggregation::kConcat);
  CHECK(cfg.train.augment.similarity.flip_probability == 0.25);
  CHECK(parse_config(config_to_string(cfg)) == cfg);

  const fs::path path = fs::temp_directory_path() / "mgta_test_config.json";
  save_config(path, cfg);
  CHECK(load_config(path) == cfg);
  fs::remove(path);
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    parse_config(R"({"model": {"stfa": {"heads": 2, "depth": 3}}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("depth") != std::string::npos);
    CHECK(std::string(e.what()).find("stfa") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(R"({"trian": {}})"), ConfigError);
}

TEST_CASE("wrong types and invalid values are rejected") {
  CHECK_THROWS_AS(parse_config(R"({"model": {"channels": "32"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"channels": -1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"align": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"grid": {"size": [1, 1]}}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"aggregation": "sum", "frames": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"lr": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"batch": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"train\": "), ConfigError);
  // K = 1 takes neither aggregation nor alignment.
  CHECK_THROWS_AS(parse_config(R"({"model": {"frames": 1, "align": true}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"frames": 3, "aggregation": "none"}})"), ConfigError);
}

TEST_CASE("missing config file is a config error") {
  CHECK_THROWS_AS(load_config("/nonexistent/mgta.json"), ConfigError);
}
