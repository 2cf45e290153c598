#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <string>

#include <json.hpp>

#include "aen/config.h"
#include "aen/error.h"
#include "support/tempdir.h"

using namespace aen;

namespace {

std::string write_config(const testsupport::TempDir& dir, const std::string& name,
                         const std::string& body) {
  const auto path = dir.path() / name;
  std::ofstream(path) << body;
  return path.string();
}

}  // namespace

TEST_CASE("defaults validate and normalization derives the linked fields") {
  RunConfig cfg;
  cfg.normalize();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.model.n_mels == cfg.mel.n_mels);
  CHECK(cfg.train.seed == cfg.seed);

  cfg.mel.n_mels = 32;
  cfg.seed = 17;
  cfg.normalize();
  CHECK(cfg.model.n_mels == 32);
  CHECK(cfg.train.seed == 17);
}

TEST_CASE("config files load with overrides applied on top of defaults") {
  testsupport::TempDir dir;
  const auto path = write_config(dir, "run.json", R"({
    "mel.n_mels": 64,
    "train.lr": 0.005,
    "augment.enabled": false,
    "model.conv_filters": [8, 16, 32],
    "synth.classes": "lo:200:2,hi:2000:6",
    "seed": 99
  })");
  const RunConfig cfg = load_run_config(path);
  CHECK(cfg.mel.n_mels == 64);
  CHECK(cfg.model.n_mels == 64);  // derived, not set directly
  CHECK(cfg.train.lr == doctest::Approx(0.005));
  CHECK_FALSE(cfg.augment.enabled);
  CHECK(cfg.model.conv_filters == std::array<int, 3>{8, 16, 32});
  CHECK(cfg.seed == 99);
  CHECK(cfg.train.seed == 99);
  const auto specs = cfg.synth.parse_classes();
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].name == "lo");
  CHECK(specs[1].carrier_hz == doctest::Approx(2000.0));
}

TEST_CASE("config errors: missing file, malformed JSON, unknown key, types") {
  testsupport::TempDir dir;
  CHECK_THROWS_AS((void)load_run_config((dir.path() / "nope.json").string()),
                  IoError);

  const auto bad = write_config(dir, "bad.json", "{\"mel.n_mels\": 64");
  CHECK_THROWS_AS((void)load_run_config(bad), ConfigError);

  const auto arr = write_config(dir, "arr.json", "[1, 2]");
  CHECK_THROWS_AS((void)load_run_config(arr), ConfigError);

  const auto unknown = write_config(dir, "unknown.json",
                                    R"({"mel.bogus_key": 3})");
  CHECK_THROWS_WITH_AS((void)load_run_config(unknown),
                       doctest::Contains("mel.bogus_key"), ConfigError);

  // Derived fields are rejected as keys so they cannot drift out of sync.
  const auto derived = write_config(dir, "derived.json",
                                    R"({"model.n_mels": 32})");
  CHECK_THROWS_AS((void)load_run_config(derived), ConfigError);

  const auto wrong_type = write_config(dir, "type.json",
                                       R"({"mel.n_mels": "many"})");
  CHECK_THROWS_WITH_AS((void)load_run_config(wrong_type),
                       doctest::Contains("mel.n_mels"), ConfigError);

  const auto frac = write_config(dir, "frac.json", R"({"mel.n_mels": 2.5})");
  CHECK_THROWS_AS((void)load_run_config(frac), ConfigError);

  const auto filters = write_config(dir, "filters.json",
                                    R"({"model.conv_filters": [8, 16]})");
  CHECK_THROWS_AS((void)load_run_config(filters), ConfigError);

  // Loading defers semantic validation so overrides can still fix values.
  const auto invalid = write_config(dir, "invalid.json", R"({"eval.k": 1})");
  RunConfig loaded = load_run_config(invalid);
  CHECK_THROWS_AS(loaded.validate(), ConfigError);
  apply_override(loaded, "eval.k", "5");
  CHECK_NOTHROW(loaded.validate());
}

TEST_CASE("apply_override parses JSON literals and falls back to strings") {
  RunConfig cfg;
  cfg.normalize();
  apply_override(cfg, "train.lr", "1e-3");
  CHECK(cfg.train.lr == doctest::Approx(1e-3));
  apply_override(cfg, "augment.enabled", "true");
  CHECK(cfg.augment.enabled);
  apply_override(cfg, "synth.classes", "a:100:2,b:200:3");
  CHECK(cfg.synth.classes == "a:100:2,b:200:3");  // bare string, no quotes
  apply_override(cfg, "model.conv_filters", "[4,8,16]");
  CHECK(cfg.model.conv_filters == std::array<int, 3>{4, 8, 16});
  apply_override(cfg, "seed", "12345");
  CHECK(cfg.seed == 12345);
  CHECK(cfg.train.seed == 12345);  // re-derived after every override

  CHECK_THROWS_AS(apply_override(cfg, "no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train.lr", "fast"), ConfigError);
}

TEST_CASE("run_config_json round-trips through load") {
  testsupport::TempDir dir;
  RunConfig cfg;
  cfg.normalize();
  apply_override(cfg, "mel.hop", "128");
  apply_override(cfg, "train.batch_size", "8");
  apply_override(cfg, "seed", "42");

  const std::string text = run_config_json(cfg);
  CHECK(text.back() == '\n');
  const auto parsed = nlohmann::json::parse(text);
  CHECK(parsed.at("mel.hop") == 128);
  CHECK(parsed.at("train.batch_size") == 8);
  CHECK(parsed.at("seed") == 42);
  CHECK_FALSE(parsed.contains("model.n_mels"));  // derived keys stay internal

  const auto echoed = write_config(dir, "echo.json", text);
  const RunConfig reloaded = load_run_config(echoed);
  CHECK(run_config_json(reloaded) == text);
}

TEST_CASE("synth class specs reject malformed strings") {
  SynthConfig synth;
  synth.classes = "only_one:100:2";
  CHECK_THROWS_AS((void)synth.parse_classes(), ConfigError);
  synth.classes = "a:100:2,b:200:3";
  synth.duration_min = 0.5;
  synth.duration_max = 0.25;
  CHECK_THROWS_AS(synth.validate(), ConfigError);
  synth.duration_min = 0.25;
  synth.duration_max = 0.5;
  synth.classes = "a:oops:2,b:200:3";
  CHECK_THROWS_AS((void)synth.parse_classes(), ConfigError);
  synth.classes = "a:100,b:200:3";
  CHECK_THROWS_AS((void)synth.parse_classes(), ConfigError);
}
