#include "mtdqn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtdqn/error.hpp"
#include "mtdqn/metrics.hpp"

namespace mtdqn {

namespace {

using nlohmann::json;

double aligned_time(double clock, double window_len) {
  return std::floor(clock / window_len) * window_len;
}

ImpressionContext make_context(const Observation& obs, double window_len) {
  ImpressionContext ctx;
  ctx.user = obs.user;
  ctx.query_time = aligned_time(obs.query_time, window_len);
  ctx.slate = obs.slate;
  ctx.history = obs.history;
  return ctx;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2);
  return a;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> raw_item_features(const World& world, int video) {
  const RawModalFeatures& f = world.video(video).features;
  std::vector<double> out;
  out.reserve(f.visual.size() + f.text.size() + f.audio.size());
  out.insert(out.end(), f.visual.begin(), f.visual.end());
  out.insert(out.end(), f.text.begin(), f.text.end());
  out.insert(out.end(), f.audio.begin(), f.audio.end());
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

VariantSpec variant_by_name(const std::string& label) {
  if (label == "MT-DQN") {
    return {label, ContentPath::fused_attention, HistoryPath::tgnn,
            DecisionPath::dqn};
  }
  if (label == "-Transformer") {
    return {label, ContentPath::concat_linear, HistoryPath::tgnn,
            DecisionPath::dqn};
  }
  if (label == "-TGNN") {
    return {label, ContentPath::fused_attention, HistoryPath::mean_content,
            DecisionPath::dqn};
  }
  if (label == "-DQN") {
    return {label, ContentPath::fused_attention, HistoryPath::tgnn,
            DecisionPath::supervised};
  }
  if (label == "Concat-Modal") {
    return {label, ContentPath::concat_linear, HistoryPath::mean_content,
            DecisionPath::supervised};
  }
  if (label == "Vanilla-DQN") {
    return {label, ContentPath::raw_concat, HistoryPath::none,
            DecisionPath::dqn};
  }
  throw ValidationError("unknown variant \"" + label + "\"");
}

std::vector<VariantSpec> ablation_variants() {
  return {variant_by_name("MT-DQN"), variant_by_name("-Transformer"),
          variant_by_name("-TGNN"), variant_by_name("-DQN")};
}

std::vector<VariantSpec> baseline_variants() {
  return {variant_by_name("MT-DQN"), variant_by_name("Concat-Modal"),
          variant_by_name("Vanilla-DQN")};
}

// ---------------------------------------------------------------------------
// PolicyModel

PolicyModel::PolicyModel(const ExperimentConfig& config,
                         const VariantSpec& variant, std::uint64_t seed)
    : config_(config), variant_(variant) {
  FusionConfig fusion_cfg = config_.fusion;
  fusion_cfg.visual_dim = config_.world.visual_dim;
  fusion_cfg.text_dim = config_.world.text_dim;
  fusion_cfg.audio_dim = config_.world.audio_dim;

  switch (variant_.content) {
    case ContentPath::fused_attention: {
      Rng rng(derive_seed(seed, "init-fusion"));
      fusion_ = std::make_unique<FusionModel>(fusion_cfg, rng);
      content_dim_ = fusion_cfg.model_dim;
      break;
    }
    case ContentPath::concat_linear: {
      Rng rng(derive_seed(seed, "init-concat"));
      const std::size_t d = fusion_cfg.model_dim;
      const std::size_t dims[3] = {fusion_cfg.visual_dim, fusion_cfg.text_dim,
                                   fusion_cfg.audio_dim};
      for (int m = 0; m < 3; ++m) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[m]));
        concat_proj_w_.push_back(
            Tensor::uniform(dims[m], d, -bound, bound, rng).set_requires_grad(true));
        concat_proj_b_.push_back(Tensor::zeros(1, d).set_requires_grad(true));
      }
      const double bound = 1.0 / std::sqrt(static_cast<double>(3 * d));
      concat_mix_w_ =
          Tensor::uniform(3 * d, d, -bound, bound, rng).set_requires_grad(true);
      concat_mix_b_ = Tensor::zeros(1, d).set_requires_grad(true);
      content_dim_ = d;
      break;
    }
    case ContentPath::raw_concat:
      content_dim_ = fusion_cfg.visual_dim + fusion_cfg.text_dim +
                     fusion_cfg.audio_dim;
      break;
  }

  switch (variant_.history) {
    case HistoryPath::tgnn: {
      Rng rng(derive_seed(seed, "init-tgnn"));
      tgnn_ = std::make_unique<TgnnModel>(
          config_.world.users + config_.world.videos, config_.graph, rng);
      history_dim_ = tgnn_->output_dim();
      break;
    }
    case HistoryPath::mean_content:
      history_dim_ = content_dim_;
      break;
    case HistoryPath::none:
      history_dim_ = 0;
      break;
  }

  const std::size_t slate = static_cast<std::size_t>(config_.world.slate_size);
  state_dim_ = slate * content_dim_ + history_dim_;
  if (variant_.decision == DecisionPath::dqn) {
    Rng rng(derive_seed(seed, "init-agent"));
    DqnConfig agent_cfg;
    agent_cfg.state_dim = state_dim_;
    agent_cfg.actions = slate;
    agent_cfg.hidden = config_.agent.hidden;
    agent_cfg.gamma = config_.agent.gamma;
    agent_cfg.sync_interval = config_.agent.sync_interval;
    agent_ = std::make_unique<DqnAgent>(agent_cfg, rng);
  } else {
    Rng rng(derive_seed(seed, "init-classifier"));
    classifier_ = std::make_unique<QNetwork>(content_dim_ + history_dim_,
                                             config_.agent.hidden, 1, rng);
  }
}

DqnAgent& PolicyModel::agent() {
  if (!agent_) throw StateError("PolicyModel::agent: supervised variant");
  return *agent_;
}

QNetwork& PolicyModel::classifier() {
  if (!classifier_) throw StateError("PolicyModel::classifier: DQN variant");
  return *classifier_;
}

void PolicyModel::ensure_content(const World& world,
                                 std::span<const int> videos, StepCache& cache,
                                 DropoutState* dropout_state) const {
  std::vector<int> missing;
  for (int video : videos) {
    if (cache.content.find(video) == cache.content.end()) {
      missing.push_back(video);
    }
  }
  std::sort(missing.begin(), missing.end());
  missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
  if (missing.empty()) return;

  switch (variant_.content) {
    case ContentPath::fused_attention: {
      std::vector<RawModalFeatures> raws;
      raws.reserve(missing.size());
      for (int video : missing) raws.push_back(world.video(video).features);
      Tensor fused = fusion_->forward_batch(raws, dropout_state);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        cache.content.emplace(missing[i], slice_rows(fused, i, i + 1));
      }
      break;
    }
    case ContentPath::concat_linear: {
      const std::size_t dims[3] = {world.config().visual_dim,
                                   world.config().text_dim,
                                   world.config().audio_dim};
      std::vector<Tensor> projected;
      for (int m = 0; m < 3; ++m) {
        std::vector<double> data;
        data.reserve(missing.size() * dims[m]);
        for (int video : missing) {
          const RawModalFeatures& f = world.video(video).features;
          const std::vector<double>& x =
              m == 0 ? f.visual : (m == 1 ? f.text : f.audio);
          data.insert(data.end(), x.begin(), x.end());
        }
        projected.push_back(add_rowwise(
            matmul(Tensor::matrix(missing.size(), dims[m], std::move(data)),
                   concat_proj_w_[static_cast<std::size_t>(m)]),
            concat_proj_b_[static_cast<std::size_t>(m)]));
      }
      Tensor mixed = add_rowwise(
          matmul(concat(std::span<const Tensor>(projected), 1), concat_mix_w_),
          concat_mix_b_);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        cache.content.emplace(missing[i], slice_rows(mixed, i, i + 1));
      }
      break;
    }
    case ContentPath::raw_concat:
      for (int video : missing) {
        cache.content.emplace(video, Tensor::row(raw_item_features(world, video)));
      }
      break;
  }
}

Tensor PolicyModel::content_vector(const World& world, int video,
                                   StepCache& cache,
                                   DropoutState* dropout_state) const {
  auto it = cache.content.find(video);
  if (it == cache.content.end()) {
    ensure_content(world, std::span<const int>(&video, 1), cache, dropout_state);
    it = cache.content.find(video);
  }
  return it->second;
}

Tensor PolicyModel::history_vector(const World& world,
                                   const ImpressionContext& ctx,
                                   StepCache& cache,
                                   DropoutState* dropout_state) const {
  switch (variant_.history) {
    case HistoryPath::tgnn:
      return tgnn_->forward_cached(world.graph(),
                                   world.graph().user_node(ctx.user),
                                   ctx.query_time, cache.windows);
    case HistoryPath::mean_content: {
      if (ctx.history.empty()) return Tensor::zeros(1, content_dim_);
      std::vector<Tensor> parts;
      parts.reserve(ctx.history.size());
      for (int video : ctx.history) {
        parts.push_back(content_vector(world, video, cache, dropout_state));
      }
      return reduce_mean(concat(std::span<const Tensor>(parts), 0), 0);
    }
    case HistoryPath::none:
      return Tensor();
  }
  throw ContractError("history_vector: unknown history path");
}

Tensor PolicyModel::dqn_state(const World& world, const ImpressionContext& ctx,
                              StepCache& cache,
                              DropoutState* dropout_state) const {
  if (ctx.slate.size() != static_cast<std::size_t>(config_.world.slate_size)) {
    throw ContractError("dqn_state: slate size " +
                        std::to_string(ctx.slate.size()) + ", expected " +
                        std::to_string(config_.world.slate_size));
  }
  std::vector<Tensor> parts;
  parts.reserve(ctx.slate.size() + 1);
  for (int video : ctx.slate) {
    parts.push_back(content_vector(world, video, cache, dropout_state));
  }
  Tensor history = history_vector(world, ctx, cache, dropout_state);
  if (history.defined()) parts.push_back(history);
  return concat(std::span<const Tensor>(parts), 1);
}

Tensor PolicyModel::candidate_state(const World& world,
                                    const ImpressionContext& ctx,
                                    std::size_t slate_index, StepCache& cache,
                                    DropoutState* dropout_state) const {
  if (slate_index >= ctx.slate.size()) {
    throw ContractError("candidate_state: slot out of range");
  }
  Tensor content =
      content_vector(world, ctx.slate[slate_index], cache, dropout_state);
  Tensor history = history_vector(world, ctx, cache, dropout_state);
  if (!history.defined()) return content;
  return concat({content, history}, 1);
}

std::vector<double> PolicyModel::scores(const World& world,
                                        const ImpressionContext& ctx) const {
  NoGradScope no_grad;
  StepCache cache;
  if (variant_.decision == DecisionPath::dqn) {
    Tensor state = dqn_state(world, ctx, cache, nullptr);
    Tensor q = agent_->policy().forward(state);
    return std::vector<double>(q.values().begin(), q.values().end());
  }
  std::vector<double> out;
  out.reserve(ctx.slate.size());
  for (std::size_t i = 0; i < ctx.slate.size(); ++i) {
    Tensor logit = classifier_->forward(candidate_state(world, ctx, i, cache, nullptr));
    out.push_back(1.0 / (1.0 + std::exp(-logit.item())));
  }
  return out;
}

std::vector<NamedParam> PolicyModel::named_trainable() {
  std::vector<NamedParam> out;
  if (fusion_) {
    auto p = fusion_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (concat_mix_w_.defined()) {
    static const char* kMods[3] = {"visual", "text", "audio"};
    for (int m = 0; m < 3; ++m) {
      out.push_back({std::string("concat/proj_w_") + kMods[m],
                     concat_proj_w_[static_cast<std::size_t>(m)]});
      out.push_back({std::string("concat/proj_b_") + kMods[m],
                     concat_proj_b_[static_cast<std::size_t>(m)]});
    }
    out.push_back({"concat/mix_w", concat_mix_w_});
    out.push_back({"concat/mix_b", concat_mix_b_});
  }
  if (tgnn_) {
    auto p = tgnn_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (agent_) {
    auto p = agent_->policy().parameters("qnet");
    out.insert(out.end(), p.begin(), p.end());
  }
  if (classifier_) {
    auto p = classifier_->parameters("classifier");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<NamedParam> PolicyModel::named_aux() {
  std::vector<NamedParam> out;
  if (agent_) {
    auto p = const_cast<QNetwork&>(agent_->target()).parameters("qnet_target");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Tensor> PolicyModel::trainable_tensors() {
  std::vector<Tensor> out;
  for (NamedParam& p : named_trainable()) out.push_back(p.tensor);
  return out;
}

// ---------------------------------------------------------------------------
// Split

UserSplit split_users(int num_users, const RunSettings& run, std::uint64_t seed) {
  std::vector<int> ids(static_cast<std::size_t>(num_users));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[rng.uniform_int(i)]);
  }
  const double n = static_cast<double>(num_users);
  std::size_t n_train = static_cast<std::size_t>(std::floor(n * run.split_train + 0.5));
  std::size_t n_val = static_cast<std::size_t>(std::floor(n * run.split_val + 0.5));
  n_train = std::max<std::size_t>(1, std::min(n_train, ids.size() - 2));
  if (run.split_val > 0.0) n_val = std::max<std::size_t>(1, n_val);
  n_val = std::min(n_val, ids.size() - n_train - 1);
  UserSplit split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                          ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                    ids.end());
  return split;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct TrainedArtifacts {
  std::unique_ptr<PolicyModel> model;
  std::unique_ptr<AdamOptimizer> optimizer;
  std::unique_ptr<World> world;
  UserSplit split;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  std::uint64_t train_steps = 0;
};

std::optional<double> supervised_train_step(
    PolicyModel& model, const World& world, ReplayBuffer<StoredStep>& buffer,
    const ExperimentConfig& cfg, AdamOptimizer& optimizer,
    const CosineSchedule& schedule, std::uint64_t step, std::uint64_t seed,
    Rng& sample_rng) {
  if (!buffer.ready(cfg.agent.batch_size)) return std::nullopt;
  auto batch = buffer.sample(cfg.agent.batch_size, sample_rng);
  optimizer.zero_grad();
  Rng dropout_rng(derive_seed(seed, "dropout", step));
  DropoutState ds{&dropout_rng, cfg.optimizer.dropout};
  Tape tape;
  PolicyModel::StepCache cache;
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (const Transition<StoredStep>* t : batch) {
    Tensor state = model.candidate_state(world, t->state.ctx,
                                         static_cast<std::size_t>(t->action),
                                         cache, &ds);
    Tensor logit = model.classifier().forward(state, &ds);
    const double label = t->state.engaged ? 1.0 : 0.0;
    // Binary cross-entropy on the logit: softplus(z) - y*z.
    losses.push_back(sub(softplus(logit), scale(logit, label)));
  }
  Tensor loss = mean_all(concat(std::span<const Tensor>(losses), 1));
  const double loss_value = loss.item();
  if (!std::isfinite(loss_value)) {
    throw StateError("supervised_train_step: non-finite loss at step " +
                     std::to_string(step));
  }
  tape.backward(loss);
  std::vector<Tensor> params(optimizer.params().begin(), optimizer.params().end());
  clip_gradients(params, cfg.optimizer.clip_norm);
  optimizer.step(schedule(step));
  return loss_value;
}

TrainedArtifacts train_variant(const ExperimentConfig& cfg,
                               const VariantSpec& variant, std::uint64_t seed) {
  TrainedArtifacts art;
  WorldConfig world_cfg = cfg.world;
  world_cfg.seed = derive_seed(seed, "world");
  art.world = std::make_unique<World>(world_cfg);
  art.world->set_history_limit(cfg.graph.windows);
  art.model = std::make_unique<PolicyModel>(cfg, variant, seed);
  art.optimizer = std::make_unique<AdamOptimizer>(
      art.model->trainable_tensors(),
      AdamConfig{cfg.optimizer.adam_beta1, cfg.optimizer.adam_beta2,
                 cfg.optimizer.adam_eps});
  art.split = split_users(cfg.world.users, cfg.run, seed);

  const std::uint64_t planned_acts =
      static_cast<std::uint64_t>(cfg.run.epochs) * art.split.train.size() *
      static_cast<std::uint64_t>(cfg.world.session_length);
  const std::uint64_t planned_train_steps = std::max<std::uint64_t>(
      1, planned_acts / static_cast<std::uint64_t>(cfg.run.train_every));
  const CosineSchedule lr_schedule{cfg.optimizer.learning_rate,
                                   cfg.optimizer.lr_min, planned_train_steps};
  const EpsilonSchedule eps_schedule{
      cfg.agent.epsilon_start, cfg.agent.epsilon_min,
      std::max<std::uint64_t>(
          1, static_cast<std::uint64_t>(static_cast<double>(planned_acts) *
                                        cfg.agent.epsilon_decay_fraction))};

  ReplayBuffer<StoredStep> buffer(cfg.agent.buffer_capacity);
  Rng explore_rng(derive_seed(seed, "explore"));
  Rng sample_rng(derive_seed(seed, "replay-sample"));
  World& world = *art.world;
  PolicyModel& model = *art.model;
  const double window_len = cfg.graph.window_len;

  std::uint64_t act_step = 0;
  std::uint64_t episode = 0;
  for (int epoch = 0; epoch < cfg.run.epochs; ++epoch) {
    std::vector<double> epoch_step_losses;
    for (int user : art.split.train) {
      Rng session_rng(derive_seed(seed, "session", episode));
      Observation obs = world.begin_session(user, session_rng);
      for (int t = 0; t < cfg.world.session_length; ++t) {
        ImpressionContext ctx = make_context(obs, window_len);
        const std::vector<double> slot_scores = model.scores(world, ctx);
        const int action =
            select_action(slot_scores, eps_schedule(act_step), explore_rng);
        World::StepResult result =
            world.step(user, ctx.slate[static_cast<std::size_t>(action)], session_rng);
        const double reward = compute_reward(result.outcome, cfg.agent.rewards);

        Transition<StoredStep> transition;
        transition.state = {ctx, response_is_engagement(result.outcome.behavior)};
        transition.action = action;
        transition.reward = reward;
        transition.done = result.session_over;
        if (!result.session_over) {
          transition.next = {make_context(result.next, window_len), false};
        }
        buffer.push(std::move(transition));
        ++act_step;

        if (act_step % static_cast<std::uint64_t>(cfg.run.train_every) == 0 &&
            buffer.ready(cfg.agent.batch_size)) {
          ++art.train_steps;
          std::optional<double> loss;
          if (variant.decision == DecisionPath::dqn) {
            PolicyModel::StepCache policy_cache, target_cache;
            Rng dropout_rng(derive_seed(seed, "dropout", art.train_steps));
            DropoutState ds{&dropout_rng, cfg.optimizer.dropout};
            auto policy_q = [&](const StoredStep& s) {
              Tensor state = model.dqn_state(world, s.ctx, policy_cache, &ds);
              return model.agent().policy().forward(state, &ds);
            };
            auto target_max = [&](const StoredStep& s) {
              Tensor state = model.dqn_state(world, s.ctx, target_cache, nullptr);
              Tensor q = model.agent().target().forward(state);
              auto v = q.values();
              return *std::max_element(v.begin(), v.end());
            };
            loss = train_step(model.agent(), buffer, cfg.agent.batch_size,
                              *art.optimizer, lr_schedule,
                              cfg.optimizer.clip_norm, art.train_steps,
                              sample_rng, policy_q, target_max);
          } else {
            loss = supervised_train_step(model, world, buffer, cfg,
                                         *art.optimizer, lr_schedule,
                                         art.train_steps, seed, sample_rng);
          }
          if (loss) {
            art.step_losses.push_back(*loss);
            epoch_step_losses.push_back(*loss);
          }
        }
        if (result.session_over) break;
        obs = std::move(result.next);
      }
      ++episode;
    }
    art.epoch_losses.push_back(mean_of(epoch_step_losses));
  }
  return art;
}

// ---------------------------------------------------------------------------
// Evaluation protocol (shared by every variant)

struct ImpressionRecord {
  std::vector<int> ranked_ids;
  std::vector<double> ranked_grades;
  std::vector<int> positives;
  double ils = 0.0;
};

struct EvalData {
  std::vector<ImpressionRecord> impressions;
  std::vector<std::pair<double, bool>> score_labels;  // per candidate
  std::vector<double> episode_returns;
  std::vector<std::pair<double, double>> value_pairs;  // (return, predicted Q)
};

EvalData rollout(PolicyModel& model, const ExperimentConfig& cfg, World& world,
                 std::span<const int> users, std::uint64_t seed,
                 const std::string& tag) {
  EvalData data;
  const double window_len = cfg.graph.window_len;
  const std::size_t k =
      std::min<std::size_t>(5, static_cast<std::size_t>(cfg.world.slate_size));
  const std::uint64_t grade_base = derive_seed(seed, tag + "-grade");
  std::uint64_t session_counter = 0;
  for (int user : users) {
    for (int s = 0; s < cfg.run.eval_sessions_per_user; ++s) {
      Rng session_rng(derive_seed(seed, tag + "-session", session_counter));
      ++session_counter;
      Observation obs = world.begin_session(user, session_rng);
      std::vector<double> rewards;
      std::vector<double> taken_q;
      double total_reward = 0.0;
      for (int t = 0; t < cfg.world.session_length; ++t) {
        ImpressionContext ctx = make_context(obs, window_len);
        const std::vector<double> slot_scores = model.scores(world, ctx);

        std::vector<std::size_t> order(slot_scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) {
                           return slot_scores[a] > slot_scores[b];
                         });

        // Counterfactual grade for every candidate, independent of the policy.
        std::vector<double> grades(ctx.slate.size());
        for (std::size_t i = 0; i < ctx.slate.size(); ++i) {
          std::uint64_t gs = mix_seed(grade_base, static_cast<std::uint64_t>(user));
          gs = mix_seed(gs, static_cast<std::uint64_t>(std::llround(obs.query_time)));
          gs = mix_seed(gs, static_cast<std::uint64_t>(ctx.slate[i]));
          Rng grade_rng(gs);
          const StepOutcome outcome =
              world.hypothetical_outcome(user, ctx.slate[i], grade_rng);
          grades[i] = response_grade(outcome.behavior);
        }

        ImpressionRecord rec;
        std::vector<std::vector<double>> top_features;
        for (std::size_t i = 0; i < order.size(); ++i) {
          rec.ranked_ids.push_back(ctx.slate[order[i]]);
          rec.ranked_grades.push_back(grades[order[i]]);
          if (i < k) top_features.push_back(raw_item_features(world, ctx.slate[order[i]]));
        }
        for (std::size_t i = 0; i < ctx.slate.size(); ++i) {
          if (grades[i] >= 1.0) rec.positives.push_back(ctx.slate[i]);
          data.score_labels.emplace_back(slot_scores[i], grades[i] >= 1.0);
        }
        rec.ils = metrics::intra_list_similarity(top_features);
        data.impressions.push_back(std::move(rec));

        const int chosen = static_cast<int>(order[0]);  // greedy
        if (model.variant().decision == DecisionPath::dqn) {
          taken_q.push_back(slot_scores[static_cast<std::size_t>(chosen)]);
        }
        World::StepResult result = world.step(
            user, ctx.slate[static_cast<std::size_t>(chosen)], session_rng);
        const double reward = compute_reward(result.outcome, cfg.agent.rewards);
        rewards.push_back(reward);
        total_reward += reward;
        if (result.session_over) break;
        obs = std::move(result.next);
      }
      data.episode_returns.push_back(total_reward);
      if (model.variant().decision == DecisionPath::dqn) {
        double discounted = 0.0;
        for (std::size_t i = rewards.size(); i-- > 0;) {
          discounted = rewards[i] + cfg.agent.gamma * discounted;
          data.value_pairs.emplace_back(discounted, taken_q[i]);
        }
      }
    }
  }
  return data;
}

double calibrate_threshold(std::span<const std::pair<double, bool>> pairs) {
  if (pairs.empty()) return 0.0;
  std::vector<double> candidates;
  candidates.reserve(pairs.size() + 1);
  double min_score = pairs[0].first;
  for (const auto& [score, _] : pairs) min_score = std::min(min_score, score);
  candidates.push_back(min_score - 1.0);
  for (const auto& [score, _] : pairs) candidates.push_back(score);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  double best_f1 = -1.0;
  double best_threshold = candidates.front();
  for (double threshold : candidates) {
    metrics::ConfusionCounts counts;
    for (const auto& [score, positive] : pairs) {
      const bool predicted = score > threshold;
      if (predicted && positive) ++counts.tp;
      else if (predicted && !positive) ++counts.fp;
      else if (!predicted && positive) ++counts.fn;
      else ++counts.tn;
    }
    const double f1 = metrics::precision_recall_f1(counts).f1;
    if (f1 > best_f1 + 1e-15) {
      best_f1 = f1;
      best_threshold = threshold;
    }
  }
  return best_threshold;
}

EvalMetrics metrics_from(const EvalData& data, double threshold,
                         std::size_t k, bool has_q_values) {
  EvalMetrics m;
  m.f1_threshold = threshold;
  metrics::ConfusionCounts counts;
  for (const auto& [score, positive] : data.score_labels) {
    const bool predicted = score > threshold;
    if (predicted && positive) ++counts.tp;
    else if (predicted && !positive) ++counts.fp;
    else if (!predicted && positive) ++counts.fn;
    else ++counts.tn;
  }
  m.f1 = metrics::precision_recall_f1(counts).f1;

  std::vector<double> ndcgs, ils_values;
  std::vector<std::vector<int>> recommended;
  std::vector<std::vector<int>> positives;
  for (const ImpressionRecord& rec : data.impressions) {
    ndcgs.push_back(
        metrics::ndcg_at_k({rec.ranked_ids, rec.ranked_grades}, k));
    ils_values.push_back(rec.ils);
    recommended.push_back(rec.ranked_ids);
    positives.push_back(rec.positives);
  }
  m.ndcg5 = mean_of(ndcgs);
  m.ils = mean_of(ils_values);
  const metrics::HitRateResult hits = metrics::hit_rate_at_k(
      std::span<const std::vector<int>>(recommended),
      std::span<const std::vector<int>>(positives), k);
  m.hit_rate = hits.rate;
  m.hit_positions = hits.position_rates;
  m.mean_return = mean_of(data.episode_returns);
  if (has_q_values && !data.value_pairs.empty()) {
    std::vector<double> actual, predicted;
    for (const auto& [g, q] : data.value_pairs) {
      actual.push_back(g);
      predicted.push_back(q);
    }
    m.mse = metrics::mse(actual, predicted);
    m.mae = metrics::mae(actual, predicted);
  }
  return m;
}

EvalMetrics evaluate_model(PolicyModel& model, const ExperimentConfig& cfg,
                           const World& trained_world, const UserSplit& split,
                           std::uint64_t seed) {
  const std::size_t k =
      std::min<std::size_t>(5, static_cast<std::size_t>(cfg.world.slate_size));
  World validation_world = trained_world;
  EvalData validation = rollout(model, cfg, validation_world, split.validation,
                                seed, "eval-val");
  const double threshold = calibrate_threshold(validation.score_labels);
  World test_world = trained_world;
  EvalData test = rollout(model, cfg, test_world, split.test, seed, "eval-test");
  return metrics_from(test, threshold, k,
                      model.variant().decision == DecisionPath::dqn);
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry points

ExperimentOutput run_experiment(const ExperimentConfig& config,
                                const VariantSpec& variant, std::uint64_t seed,
                                const std::string& checkpoint_path) {
  ExperimentConfig cfg = config;
  cfg.seed = seed;
  cfg.run.variant = variant.label;
  validate_config(cfg);

  const auto start = std::chrono::steady_clock::now();
  TrainedArtifacts art = train_variant(cfg, variant, seed);
  EvalMetrics metrics =
      evaluate_model(*art.model, cfg, *art.world, art.split, seed);
  const auto end = std::chrono::steady_clock::now();

  ExperimentOutput out;
  out.result.variant = variant.label;
  out.result.seed = seed;
  out.result.epoch_losses = art.epoch_losses;
  out.result.metrics = metrics;
  out.result.wall_seconds =
      std::chrono::duration<double>(end - start).count();
  out.step_losses = art.step_losses;

  if (!checkpoint_path.empty()) {
    auto trainable = art.model->named_trainable();
    auto aux = art.model->named_aux();
    save_checkpoint(checkpoint_path, config_hash(cfg), art.train_steps,
                    canonical_json(cfg), trainable, art.optimizer.get(), aux);
  }
  return out;
}

EvalMetrics evaluate_checkpoint(const std::string& checkpoint_path,
                                const std::string& out_dir) {
  CheckpointData data = load_checkpoint(checkpoint_path);
  ExperimentConfig cfg = parse_config(data.config_json);
  if (config_hash(cfg) != data.config_hash) {
    throw FormatError("evaluate_checkpoint: config hash mismatch in " +
                      checkpoint_path);
  }
  const VariantSpec variant = variant_by_name(cfg.run.variant);
  PolicyModel model(cfg, variant, cfg.seed);
  auto trainable = model.named_trainable();
  restore_params(data.trainable, trainable);
  auto aux = model.named_aux();
  restore_params(data.aux, aux);

  WorldConfig world_cfg = cfg.world;
  world_cfg.seed = derive_seed(cfg.seed, "world");
  World world(world_cfg);
  world.set_history_limit(cfg.graph.windows);
  const UserSplit split = split_users(cfg.world.users, cfg.run, cfg.seed);
  EvalMetrics metrics = evaluate_model(model, cfg, world, split, cfg.seed);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    RunResult result;
    result.variant = variant.label;
    result.seed = cfg.seed;
    result.metrics = metrics;
    emit_results(std::span<const RunResult>(&result, 1), cfg, out_dir);
    if (model.fusion() != nullptr) {
      AttentionTrace trace;
      NoGradScope no_grad;
      model.fusion()->forward(world.video(0).features, &trace);
      std::ofstream os(out_dir + "/attention.csv", std::ios::binary);
      if (!os) throw IoError("evaluate_checkpoint: cannot write attention.csv");
      write_attention_csv(trace, os);
    }
  }
  return metrics;
}

std::vector<RunResult> run_variants(const ExperimentConfig& config,
                                    std::span<const VariantSpec> variants,
                                    std::size_t num_seeds,
                                    std::uint64_t base_seed,
                                    const std::string& out_dir) {
  std::vector<RunResult> results;
  for (const VariantSpec& variant : variants) {
    for (std::size_t s = 0; s < num_seeds; ++s) {
      ExperimentOutput out =
          run_experiment(config, variant, base_seed + s, "");
      results.push_back(std::move(out.result));
    }
  }
  if (!out_dir.empty()) emit_results(results, config, out_dir);
  return results;
}

namespace {

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("emit_results: cannot open " + path);
  os << contents;
  if (!os) throw IoError("emit_results: write failure for " + path);
}

}  // namespace

void emit_results(std::span<const RunResult> results,
                  const ExperimentConfig& config, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::ostringstream results_csv;
  results_csv << "variant,seed,f1,ndcg5,mse,mae,hit_rate,ils,mean_return,"
                 "f1_threshold\n";
  for (const RunResult& r : results) {
    results_csv << r.variant << ',' << r.seed << ',' << format_double(r.metrics.f1)
                << ',' << format_double(r.metrics.ndcg5) << ','
                << (r.metrics.mse ? format_double(*r.metrics.mse) : "na") << ','
                << (r.metrics.mae ? format_double(*r.metrics.mae) : "na") << ','
                << format_double(r.metrics.hit_rate) << ','
                << format_double(r.metrics.ils) << ','
                << format_double(r.metrics.mean_return) << ','
                << format_double(r.metrics.f1_threshold) << '\n';
  }
  write_file(out_dir + "/results.csv", results_csv.str());

  std::ostringstream loss_csv;
  loss_csv << "variant,seed,epoch,mean_loss\n";
  for (const RunResult& r : results) {
    for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
      loss_csv << r.variant << ',' << r.seed << ',' << e << ','
               << format_double(r.epoch_losses[e]) << '\n';
    }
  }
  write_file(out_dir + "/train_loss.csv", loss_csv.str());

  // Aggregate per variant, preserving first-appearance order.
  std::vector<std::string> variant_order;
  for (const RunResult& r : results) {
    if (std::find(variant_order.begin(), variant_order.end(), r.variant) ==
        variant_order.end()) {
      variant_order.push_back(r.variant);
    }
  }
  std::ostringstream rd_csv;
  rd_csv << "variant,ndcg5,diversity\n";
  std::ostringstream hits_csv;
  std::size_t k = 0;
  for (const RunResult& r : results) {
    k = std::max(k, r.metrics.hit_positions.size());
  }
  hits_csv << "variant,avg_hit_rate";
  for (std::size_t p = 1; p <= k; ++p) hits_csv << ",pos_" << p;
  hits_csv << '\n';
  for (const std::string& name : variant_order) {
    std::vector<double> ndcg, diversity, rate;
    std::vector<double> positions(k, 0.0);
    std::size_t count = 0;
    for (const RunResult& r : results) {
      if (r.variant != name) continue;
      ndcg.push_back(r.metrics.ndcg5);
      diversity.push_back(1.0 - r.metrics.ils);
      rate.push_back(r.metrics.hit_rate);
      for (std::size_t p = 0; p < r.metrics.hit_positions.size(); ++p) {
        positions[p] += r.metrics.hit_positions[p];
      }
      ++count;
    }
    rd_csv << name << ',' << format_double(mean_of(ndcg)) << ','
           << format_double(mean_of(diversity)) << '\n';
    hits_csv << name << ',' << format_double(mean_of(rate));
    for (std::size_t p = 0; p < k; ++p) {
      hits_csv << ',' << format_double(positions[p] / static_cast<double>(count));
    }
    hits_csv << '\n';
  }
  write_file(out_dir + "/relevance_diversity.csv", rd_csv.str());
  write_file(out_dir + "/hit_positions.csv", hits_csv.str());

  json manifest;
  manifest["format_version"] = 1;
  manifest["config_hash"] = config_hash(config);
  json seeds = json::array();
  json variants = json::array();
  for (const RunResult& r : results) {
    seeds.push_back(r.seed);
    variants.push_back(r.variant);
  }
  manifest["seeds"] = seeds;
  manifest["variants"] = variants;
  manifest["files"] = {"results.csv", "train_loss.csv",
                       "relevance_diversity.csv", "hit_positions.csv"};
  write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
}

void simulate_events(const ExperimentConfig& config, const std::string& out_path) {
  ExperimentConfig cfg = config;
  validate_config(cfg);
  WorldConfig world_cfg = cfg.world;
  world_cfg.seed = derive_seed(cfg.seed, "world");
  World world(world_cfg);
  world.set_history_limit(cfg.graph.windows);
  const RewardWeights& rewards = cfg.agent.rewards;
  std::uint64_t episode = 0;
  for (int user = 0; user < cfg.world.users; ++user) {
    Rng session_rng(derive_seed(cfg.seed, "simulate-session", episode));
    Rng policy_rng(derive_seed(cfg.seed, "simulate-policy", episode));
    run_session(
        world, user,
        [&](const Observation& obs) {
          return static_cast<std::size_t>(policy_rng.uniform_int(obs.slate.size()));
        },
        [&](const StepOutcome& outcome) { return compute_reward(outcome, rewards); },
        cfg.world.session_length, session_rng);
    ++episode;
  }
  std::ofstream os(out_path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("simulate_events: cannot open " + out_path);
  export_events(world.graph().events(), os);
}

}  // namespace mtdqn
