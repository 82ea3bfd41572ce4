#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtdqn/agent.hpp"
#include "mtdqn/environment.hpp"
#include "mtdqn/fusion.hpp"
#include "mtdqn/temporal_graph.hpp"

namespace mtdqn {

struct OptimizerSettings {
  double learning_rate = 1e-3;
  double lr_min = 1e-5;
  double clip_norm = 5.0;
  double dropout = 0.2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct AgentSettings {
  std::vector<std::size_t> hidden = {32, 32, 16};
  double gamma = 0.95;
  std::uint64_t sync_interval = 1000;
  std::size_t buffer_capacity = 100000;
  std::size_t batch_size = 32;
  double epsilon_start = 1.0;
  double epsilon_min = 0.05;
  double epsilon_decay_fraction = 0.3;
  RewardWeights rewards;
};

struct RunSettings {
  int epochs = 5;
  int train_every = 1;
  double split_train = 0.7;
  double split_val = 0.1;
  double split_test = 0.2;
  int eval_sessions_per_user = 2;
  std::string variant = "MT-DQN";
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  WorldConfig world;
  FusionConfig fusion;
  TgnnConfig graph;
  AgentSettings agent;
  OptimizerSettings optimizer;
  RunSettings run;
};

// Desk-scale defaults.
ExperimentConfig default_config();
// Paper-scale preset: 768-dim fusion with 12 heads and 6 layers, 64/128/256
// graph widths, 512/256/128 Q-network, 50 epochs, batch 64.
ExperimentConfig paper_config();

// Parses JSON text; an empty document yields the desk defaults, a top-level
// "preset" of "desk" or "paper" selects the base before explicit keys are
// applied. Unknown keys are rejected with their path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

void validate_config(const ExperimentConfig& config);

// Sorted-key JSON rendering of every field; hashing and checkpoints use it.
std::string canonical_json(const ExperimentConfig& config);
std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace mtdqn
