#include "mtdqn/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtdqn/error.hpp"

namespace mtdqn {

namespace {

using nlohmann::json;

ExperimentConfig desk_defaults() { return ExperimentConfig{}; }

// Reads one section, rejecting keys that no reader consumed.
class Section {
 public:
  Section(const json& parent, const std::string& name) : path_(name) {
    if (parent.contains(name)) {
      if (!parent.at(name).is_object()) {
        throw ValidationError("config: \"" + name + "\" must be an object");
      }
      obj_ = parent.at(name);
    }
  }

  template <class T>
  void read(const char* key, T& out) {
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config: bad value type at " + path_ + "." + key);
    }
    consumed_.push_back(key);
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (std::find(consumed_.begin(), consumed_.end(), key) ==
          consumed_.end()) {
        throw ValidationError("config: unknown key " + path_ + "." + key);
      }
    }
  }

 private:
  json obj_ = json::object();
  std::string path_;
  std::vector<std::string> consumed_;
};

}  // namespace

ExperimentConfig default_config() { return desk_defaults(); }

ExperimentConfig paper_config() {
  ExperimentConfig c = desk_defaults();
  c.fusion.model_dim = 768;
  c.fusion.heads = 12;
  c.fusion.layers = 6;
  c.graph.layer_widths = {64, 128, 256};
  c.graph.base_dim = 64;
  c.agent.hidden = {512, 256, 128};
  c.agent.buffer_capacity = 100000;
  c.agent.sync_interval = 1000;
  c.agent.gamma = 0.95;
  c.agent.batch_size = 64;
  c.optimizer.learning_rate = 1e-3;
  c.optimizer.dropout = 0.2;
  c.run.epochs = 50;
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  // An empty document (or whitespace) means "all defaults".
  bool blank = true;
  for (char ch : text) {
    if (!std::isspace(static_cast<unsigned char>(ch))) {
      blank = false;
      break;
    }
  }
  if (blank) return default_config();

  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& err) {
    throw ValidationError(std::string("config: ") + err.what());
  }
  if (root.is_null()) return default_config();
  if (!root.is_object()) {
    throw ValidationError("config: top level must be an object");
  }

  ExperimentConfig c = desk_defaults();
  std::vector<std::string> consumed;
  if (root.contains("preset")) {
    const std::string preset = root.at("preset").get<std::string>();
    if (preset == "paper") {
      c = paper_config();
    } else if (preset != "desk") {
      throw ValidationError("config: unknown preset \"" + preset + "\"");
    }
    consumed.push_back("preset");
  }
  if (root.contains("seed")) {
    try {
      c.seed = root.at("seed").get<std::uint64_t>();
    } catch (const json::exception&) {
      throw ValidationError("config: bad value type at seed");
    }
    consumed.push_back("seed");
  }

  Section world(root, "world");
  world.read("users", c.world.users);
  world.read("videos", c.world.videos);
  world.read("latent_dim", c.world.latent_dim);
  world.read("visual_dim", c.world.visual_dim);
  world.read("text_dim", c.world.text_dim);
  world.read("audio_dim", c.world.audio_dim);
  world.read("noise_visual", c.world.noise_visual);
  world.read("noise_text", c.world.noise_text);
  world.read("noise_audio", c.world.noise_audio);
  world.read("social_edge_prob", c.world.social_edge_prob);
  world.read("drift_rate", c.world.drift_rate);
  world.read("session_length", c.world.session_length);
  world.read("slate_size", c.world.slate_size);
  world.read("logistic_slope", c.world.logistic_slope);
  world.read("social_boost", c.world.social_boost);
  world.read("engaged_like", c.world.engaged_like);
  world.read("engaged_comment", c.world.engaged_comment);
  world.read("engaged_share", c.world.engaged_share);
  world.read("engaged_full_watch", c.world.engaged_full_watch);
  world.read("unengaged_early_exit", c.world.unengaged_early_exit);
  world.read("unengaged_none", c.world.unengaged_none);
  world.read("continue_base", c.world.continue_base);
  world.read("continue_gain", c.world.continue_gain);
  world.read("early_exit_continue_factor", c.world.early_exit_continue_factor);
  world.finish();

  Section fusion(root, "fusion");
  fusion.read("model_dim", c.fusion.model_dim);
  fusion.read("heads", c.fusion.heads);
  fusion.read("layers", c.fusion.layers);
  fusion.finish();

  Section graph(root, "graph");
  graph.read("base_dim", c.graph.base_dim);
  graph.read("layer_widths", c.graph.layer_widths);
  graph.read("windows", c.graph.windows);
  graph.read("window_len", c.graph.window_len);
  graph.read("include_follow_edges", c.graph.include_follow_edges);
  graph.finish();

  Section agent(root, "agent");
  agent.read("hidden", c.agent.hidden);
  agent.read("gamma", c.agent.gamma);
  agent.read("sync_interval", c.agent.sync_interval);
  agent.read("buffer_capacity", c.agent.buffer_capacity);
  agent.read("batch_size", c.agent.batch_size);
  agent.read("epsilon_start", c.agent.epsilon_start);
  agent.read("epsilon_min", c.agent.epsilon_min);
  agent.read("epsilon_decay_fraction", c.agent.epsilon_decay_fraction);
  agent.read("lambda_retention", c.agent.rewards.lambda_retention);
  agent.read("lambda_interest", c.agent.rewards.lambda_interest);
  agent.read("reward_like", c.agent.rewards.like);
  agent.read("reward_comment", c.agent.rewards.comment);
  agent.read("reward_share", c.agent.rewards.share);
  agent.read("reward_full_watch", c.agent.rewards.full_watch);
  agent.read("reward_early_exit", c.agent.rewards.early_exit);
  agent.read("reward_no_interaction", c.agent.rewards.no_interaction);
  agent.finish();

  Section optimizer(root, "optimizer");
  optimizer.read("learning_rate", c.optimizer.learning_rate);
  optimizer.read("lr_min", c.optimizer.lr_min);
  optimizer.read("clip_norm", c.optimizer.clip_norm);
  optimizer.read("dropout", c.optimizer.dropout);
  optimizer.read("adam_beta1", c.optimizer.adam_beta1);
  optimizer.read("adam_beta2", c.optimizer.adam_beta2);
  optimizer.read("adam_eps", c.optimizer.adam_eps);
  optimizer.finish();

  Section run(root, "run");
  run.read("epochs", c.run.epochs);
  run.read("train_every", c.run.train_every);
  run.read("eval_sessions_per_user", c.run.eval_sessions_per_user);
  run.read("variant", c.run.variant);
  if (root.contains("run") && root.at("run").contains("split")) {
    const json& split = root.at("run").at("split");
    if (!split.is_array() || split.size() != 3) {
      throw ValidationError("config: run.split must be [train, val, test]");
    }
    c.run.split_train = split.at(0).get<double>();
    c.run.split_val = split.at(1).get<double>();
    c.run.split_test = split.at(2).get<double>();
    double dummy_split[3];
    (void)dummy_split;
  }
  {
    // Section::finish would flag "split"; check remaining keys manually.
    static const char* kRunKeys[] = {"epochs", "train_every", "split",
                                     "eval_sessions_per_user", "variant"};
    if (root.contains("run")) {
      for (const auto& [key, _] : root.at("run").items()) {
        if (std::find_if(std::begin(kRunKeys), std::end(kRunKeys),
                         [&](const char* k) { return key == k; }) ==
            std::end(kRunKeys)) {
          throw ValidationError("config: unknown key run." + key);
        }
      }
    }
  }

  static const char* kTopKeys[] = {"preset", "seed",  "world", "fusion",
                                   "graph",  "agent", "optimizer", "run"};
  for (const auto& [key, _] : root.items()) {
    if (std::find_if(std::begin(kTopKeys), std::end(kTopKeys),
                     [&](const char* k) { return key == k; }) ==
        std::end(kTopKeys)) {
      throw ValidationError("config: unknown key " + key);
    }
  }

  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const ValidationError& err) {
    throw ValidationError(std::string(err.what()) + " (file " + path + ")");
  }
}

void validate_config(const ExperimentConfig& c) {
  if (c.fusion.model_dim == 0 || c.fusion.heads == 0) {
    throw ValidationError("config: fusion.model_dim and fusion.heads must be >= 1");
  }
  if (c.fusion.model_dim % c.fusion.heads != 0) {
    throw ValidationError("config: fusion.model_dim " +
                          std::to_string(c.fusion.model_dim) +
                          " is not divisible by fusion.heads " +
                          std::to_string(c.fusion.heads));
  }
  if (c.graph.layer_widths.empty()) {
    throw ValidationError("config: graph.layer_widths must name at least one layer");
  }
  if (c.graph.windows == 0 || c.graph.window_len <= 0.0) {
    throw ValidationError("config: graph.windows >= 1 and graph.window_len > 0");
  }
  if (c.agent.gamma < 0.0 || c.agent.gamma > 1.0) {
    throw ValidationError("config: agent.gamma must be in [0, 1]");
  }
  if (c.agent.batch_size == 0 || c.agent.buffer_capacity < c.agent.batch_size) {
    throw ValidationError("config: agent.buffer_capacity must cover batch_size");
  }
  if (c.agent.epsilon_start < 0.0 || c.agent.epsilon_start > 1.0 ||
      c.agent.epsilon_min < 0.0 || c.agent.epsilon_min > c.agent.epsilon_start) {
    throw ValidationError("config: epsilon schedule must satisfy 0 <= min <= start <= 1");
  }
  if (c.optimizer.learning_rate <= 0.0 || c.optimizer.lr_min < 0.0 ||
      c.optimizer.lr_min > c.optimizer.learning_rate) {
    throw ValidationError("config: learning rates must satisfy 0 < lr_min <= lr");
  }
  if (c.optimizer.clip_norm <= 0.0) {
    throw ValidationError("config: optimizer.clip_norm must be > 0");
  }
  if (c.optimizer.dropout < 0.0 || c.optimizer.dropout >= 1.0) {
    throw ValidationError("config: optimizer.dropout must be in [0, 1)");
  }
  const double split_sum = c.run.split_train + c.run.split_val + c.run.split_test;
  if (c.run.split_train <= 0.0 || c.run.split_val < 0.0 || c.run.split_test <= 0.0 ||
      std::abs(split_sum - 1.0) > 1e-9) {
    throw ValidationError("config: run.split must be positive and sum to 1");
  }
  if (c.run.epochs < 1 || c.run.train_every < 1 ||
      c.run.eval_sessions_per_user < 1) {
    throw ValidationError("config: run counts must be >= 1");
  }
  // World constants get their own checks when the world is built; do the
  // structural ones here so config errors surface before any training.
  if (c.world.users < 3) {
    throw ValidationError("config: world.users must be >= 3 to split 7:1:2");
  }
  if (c.world.slate_size < 2 || c.world.slate_size > c.world.videos) {
    throw ValidationError("config: world.slate_size must be in [2, videos]");
  }
  if (c.world.latent_dim < 2 || c.world.latent_dim % 2 != 0) {
    throw ValidationError("config: world.latent_dim must be even and >= 2");
  }
}

std::string canonical_json(const ExperimentConfig& c) {
  json root;
  root["seed"] = c.seed;
  json& world = root["world"];
  world["users"] = c.world.users;
  world["videos"] = c.world.videos;
  world["latent_dim"] = c.world.latent_dim;
  world["visual_dim"] = c.world.visual_dim;
  world["text_dim"] = c.world.text_dim;
  world["audio_dim"] = c.world.audio_dim;
  world["noise_visual"] = c.world.noise_visual;
  world["noise_text"] = c.world.noise_text;
  world["noise_audio"] = c.world.noise_audio;
  world["social_edge_prob"] = c.world.social_edge_prob;
  world["drift_rate"] = c.world.drift_rate;
  world["session_length"] = c.world.session_length;
  world["slate_size"] = c.world.slate_size;
  world["logistic_slope"] = c.world.logistic_slope;
  world["social_boost"] = c.world.social_boost;
  world["engaged_like"] = c.world.engaged_like;
  world["engaged_comment"] = c.world.engaged_comment;
  world["engaged_share"] = c.world.engaged_share;
  world["engaged_full_watch"] = c.world.engaged_full_watch;
  world["unengaged_early_exit"] = c.world.unengaged_early_exit;
  world["unengaged_none"] = c.world.unengaged_none;
  world["continue_base"] = c.world.continue_base;
  world["continue_gain"] = c.world.continue_gain;
  world["early_exit_continue_factor"] = c.world.early_exit_continue_factor;
  json& fusion = root["fusion"];
  fusion["model_dim"] = c.fusion.model_dim;
  fusion["heads"] = c.fusion.heads;
  fusion["layers"] = c.fusion.layers;
  json& graph = root["graph"];
  graph["base_dim"] = c.graph.base_dim;
  graph["layer_widths"] = c.graph.layer_widths;
  graph["windows"] = c.graph.windows;
  graph["window_len"] = c.graph.window_len;
  graph["include_follow_edges"] = c.graph.include_follow_edges;
  json& agent = root["agent"];
  agent["hidden"] = c.agent.hidden;
  agent["gamma"] = c.agent.gamma;
  agent["sync_interval"] = c.agent.sync_interval;
  agent["buffer_capacity"] = c.agent.buffer_capacity;
  agent["batch_size"] = c.agent.batch_size;
  agent["epsilon_start"] = c.agent.epsilon_start;
  agent["epsilon_min"] = c.agent.epsilon_min;
  agent["epsilon_decay_fraction"] = c.agent.epsilon_decay_fraction;
  agent["lambda_retention"] = c.agent.rewards.lambda_retention;
  agent["lambda_interest"] = c.agent.rewards.lambda_interest;
  agent["reward_like"] = c.agent.rewards.like;
  agent["reward_comment"] = c.agent.rewards.comment;
  agent["reward_share"] = c.agent.rewards.share;
  agent["reward_full_watch"] = c.agent.rewards.full_watch;
  agent["reward_early_exit"] = c.agent.rewards.early_exit;
  agent["reward_no_interaction"] = c.agent.rewards.no_interaction;
  json& optimizer = root["optimizer"];
  optimizer["learning_rate"] = c.optimizer.learning_rate;
  optimizer["lr_min"] = c.optimizer.lr_min;
  optimizer["clip_norm"] = c.optimizer.clip_norm;
  optimizer["dropout"] = c.optimizer.dropout;
  optimizer["adam_beta1"] = c.optimizer.adam_beta1;
  optimizer["adam_beta2"] = c.optimizer.adam_beta2;
  optimizer["adam_eps"] = c.optimizer.adam_eps;
  json& run = root["run"];
  run["epochs"] = c.run.epochs;
  run["train_every"] = c.run.train_every;
  run["split"] = {c.run.split_train, c.run.split_val, c.run.split_test};
  run["eval_sessions_per_user"] = c.run.eval_sessions_per_user;
  run["variant"] = c.run.variant;
  return root.dump();
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  return hash_tag(canonical_json(c));
}

}  // namespace mtdqn
