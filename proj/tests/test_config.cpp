#include <doctest.h>

#include "mtdqn/config.hpp"

using namespace mtdqn;

TEST_CASE("empty config text yields desk defaults") {
  ExperimentConfig c = parse_config("");
  CHECK(c.fusion.model_dim == 16);
  CHECK(c.fusion.heads == 2);
  CHECK(c.fusion.layers == 2);
  CHECK(c.graph.layer_widths == std::vector<std::size_t>{16, 16, 16});
  CHECK(c.agent.gamma == 0.95);
  CHECK(c.agent.sync_interval == 1000);
  CHECK(c.agent.buffer_capacity == 100000);
  CHECK(c.optimizer.learning_rate == 0.001);
  CHECK(c.optimizer.clip_norm == 5.0);
  CHECK(c.run.split_train == 0.7);
  CHECK(c.run.variant == "MT-DQN");
  ExperimentConfig ws = parse_config("   \n\t  ");
  CHECK(ws.fusion.model_dim == 16);
}

TEST_CASE("paper preset") {
  ExperimentConfig c = parse_config(R"({"preset": "paper"})");
  CHECK(c.fusion.model_dim == 768);
  CHECK(c.fusion.heads == 12);
  CHECK(c.fusion.layers == 6);
  CHECK(c.graph.layer_widths == std::vector<std::size_t>{64, 128, 256});
  CHECK(c.agent.hidden == std::vector<std::size_t>{512, 256, 128});
  CHECK(c.agent.buffer_capacity == 100000);
  CHECK(c.agent.sync_interval == 1000);
  CHECK(c.agent.gamma == 0.95);
  CHECK(c.agent.batch_size == 64);
  CHECK(c.optimizer.learning_rate == 0.001);
  CHECK(c.optimizer.dropout == 0.2);
  CHECK(c.run.epochs == 50);

  // Explicit keys override the preset.
  ExperimentConfig c2 =
      parse_config(R"({"preset": "paper", "fusion": {"heads": 8, "model_dim": 64}})");
  CHECK(c2.fusion.heads == 8);
  CHECK(c2.fusion.model_dim == 64);
  CHECK(c2.fusion.layers == 6);
}

TEST_CASE("inconsistent model_dim vs heads is rejected") {
  CHECK_THROWS_AS(parse_config(R"({"fusion": {"model_dim": 10, "heads": 3}})"),
                  ValidationError);
}

TEST_CASE("unknown keys are rejected with their path") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"fusion": {"modeldim": 16}})"),
                       doctest::Contains("fusion.modeldim"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"fusio": {}})"),
                       doctest::Contains("fusio"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"run": {"epoch": 3}})"),
                       doctest::Contains("run.epoch"), ValidationError);
}

TEST_CASE("split must sum to one") {
  CHECK_THROWS_AS(parse_config(R"({"run": {"split": [0.5, 0.2, 0.2]}})"),
                  ValidationError);
  ExperimentConfig ok = parse_config(R"({"run": {"split": [0.6, 0.2, 0.2]}})");
  CHECK(ok.run.split_val == 0.2);
}

TEST_CASE("malformed json reports a parse error") {
  CHECK_THROWS_AS(parse_config("{"), ValidationError);
  CHECK_THROWS_AS(parse_config(R"(["a"])"), ValidationError);
}

TEST_CASE("canonical json and hash are deterministic and sensitive") {
  ExperimentConfig a = default_config();
  ExperimentConfig b = default_config();
  CHECK(canonical_json(a) == canonical_json(b));
  CHECK(config_hash(a) == config_hash(b));
  b.agent.gamma = 0.9;
  CHECK(config_hash(a) != config_hash(b));

  // Round trip: canonical json parses back to the same hash.
  ExperimentConfig c = parse_config(canonical_json(a));
  CHECK(config_hash(c) == config_hash(a));
}

TEST_CASE("seed and variant flow through parsing") {
  ExperimentConfig c =
      parse_config(R"({"seed": 99, "run": {"variant": "-TGNN"}})");
  CHECK(c.seed == 99);
  CHECK(c.run.variant == "-TGNN");
}
