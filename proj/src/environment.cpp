#include "mtdqn/environment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mtdqn/error.hpp"

namespace mtdqn {

namespace {

using nlohmann::json;

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void normalize_in_place(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm == 0.0) {
    v.assign(v.size(), 0.0);
    v[0] = 1.0;
    return;
  }
  for (double& x : v) x /= norm;
}

std::vector<double> random_unit_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  normalize_in_place(v);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
std::vector<double> random_rotation(std::size_t n, Rng& rng) {
  std::vector<std::vector<double>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].resize(n);
    for (double& x : rows[i]) x = rng.normal();
    for (std::size_t j = 0; j < i; ++j) {
      const double proj = dot(rows[i], rows[j]);
      for (std::size_t k = 0; k < n; ++k) rows[i][k] -= proj * rows[j][k];
    }
    normalize_in_place(rows[i]);
  }
  std::vector<double> flat(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) flat[i * n + j] = rows[i][j];
  return flat;
}

// y = x^T M for row-major M of shape (in x out).
std::vector<double> apply_map(std::span<const double> x,
                              std::span<const double> m, std::size_t out_dim) {
  std::vector<double> y(out_dim, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) y[j] += x[i] * m[i * out_dim + j];
  }
  return y;
}

void validate_config(const WorldConfig& c) {
  if (c.users < 1 || c.videos < 1) {
    throw ValidationError("WorldConfig: users and videos must be >= 1");
  }
  if (c.latent_dim < 2 || c.latent_dim % 2 != 0) {
    throw ValidationError("WorldConfig: latent_dim must be even and >= 2");
  }
  if (c.visual_dim < 1 || c.text_dim < 1 || c.audio_dim < 1) {
    throw ValidationError("WorldConfig: modality dims must be >= 1");
  }
  if (c.noise_visual < 0 || c.noise_text < 0 || c.noise_audio < 0) {
    throw ValidationError("WorldConfig: noise must be >= 0");
  }
  if (c.social_edge_prob < 0.0 || c.social_edge_prob > 1.0) {
    throw ValidationError("WorldConfig: social_edge_prob must be in [0, 1]");
  }
  if (c.session_length < 1 || c.slate_size < 2) {
    throw ValidationError("WorldConfig: session_length >= 1 and slate_size >= 2");
  }
  if (c.slate_size > c.videos) {
    throw ValidationError("WorldConfig: slate_size exceeds video count");
  }
  const double engaged_sum =
      c.engaged_like + c.engaged_comment + c.engaged_share + c.engaged_full_watch;
  const double unengaged_sum = c.unengaged_early_exit + c.unengaged_none;
  if (std::abs(engaged_sum - 1.0) > 1e-12 || std::abs(unengaged_sum - 1.0) > 1e-12) {
    throw ValidationError("WorldConfig: behavior splits must each sum to 1");
  }
}

}  // namespace

const char* response_name(ResponseKind r) {
  switch (r) {
    case ResponseKind::like: return "like";
    case ResponseKind::comment: return "comment";
    case ResponseKind::share: return "share";
    case ResponseKind::full_watch: return "full_watch";
    case ResponseKind::early_exit: return "early_exit";
    case ResponseKind::no_interaction: return "no_interaction";
  }
  throw ContractError("response_name: unknown response");
}

bool response_is_engagement(ResponseKind r) {
  return r == ResponseKind::like || r == ResponseKind::comment ||
         r == ResponseKind::share || r == ResponseKind::full_watch;
}

double response_grade(ResponseKind r) {
  switch (r) {
    case ResponseKind::share: return 3.0;
    case ResponseKind::comment: return 2.0;
    case ResponseKind::like: return 2.0;
    case ResponseKind::full_watch: return 1.0;
    case ResponseKind::early_exit: return 0.0;
    case ResponseKind::no_interaction: return 0.0;
  }
  throw ContractError("response_grade: unknown response");
}

World::World(WorldConfig config) : config_(config), graph_(config.users, config.videos) {
  validate_config(config_);
  const std::size_t kz = config_.latent_dim;
  const std::size_t half = kz / 2;

  Rng emission_rng(derive_seed(config_.seed, "world-emission"));
  visual_map_.resize(half * config_.visual_dim);
  for (double& x : visual_map_) x = emission_rng.normal(0.0, 1.0);
  text_map_.resize(half * config_.text_dim);
  for (double& x : text_map_) x = emission_rng.normal(0.0, 1.0);
  audio_map_.resize(kz * config_.audio_dim);
  for (double& x : audio_map_) x = emission_rng.normal(0.0, 1.0);
  audio_rotation_ = random_rotation(kz, emission_rng);

  Rng video_rng(derive_seed(config_.seed, "world-videos"));
  videos_.reserve(config_.videos);
  for (int i = 0; i < config_.videos; ++i) {
    VideoItem item;
    item.id = i;
    item.topic = random_unit_vector(kz, video_rng);
    item.features = emit_modal_features(item.topic, video_rng);
    videos_.push_back(std::move(item));
  }

  Rng user_rng(derive_seed(config_.seed, "world-users"));
  users_.reserve(config_.users);
  for (int i = 0; i < config_.users; ++i) {
    UserState u;
    u.id = i;
    u.preference = random_unit_vector(kz, user_rng);
    u.interest = u.preference;
    users_.push_back(std::move(u));
  }

  Rng social_rng(derive_seed(config_.seed, "world-social"));
  for (int i = 0; i < config_.users; ++i) {
    for (int j = i + 1; j < config_.users; ++j) {
      if (!social_rng.bernoulli(config_.social_edge_prob)) continue;
      users_[i].neighbors.push_back(j);
      users_[j].neighbors.push_back(i);
      clock_ += 1.0;
      graph_.append({i, j, TargetKind::user, Behavior::follow, clock_,
                     behavior_weight(Behavior::follow, 0.0)});
    }
  }

  engaged_.assign(config_.videos, std::vector<bool>(config_.users, false));
  current_slate_.resize(config_.users);
}

const VideoItem& World::video(int id) const {
  if (id < 0 || id >= config_.videos) {
    throw ValidationError("video id " + std::to_string(id) + " out of range");
  }
  return videos_[id];
}

const UserState& World::user(int id) const {
  if (id < 0 || id >= config_.users) {
    throw ValidationError("user id " + std::to_string(id) + " out of range");
  }
  return users_[id];
}

RawModalFeatures World::emit_modal_features(std::span<const double> topic,
                                            Rng& rng) const {
  const std::size_t kz = config_.latent_dim;
  const std::size_t half = kz / 2;
  if (topic.size() != kz) {
    throw DimensionError("emit_modal_features: topic length " +
                         std::to_string(topic.size()) + ", expected " +
                         std::to_string(kz));
  }
  RawModalFeatures out;
  out.visual = apply_map(topic.subspan(0, half), visual_map_, config_.visual_dim);
  out.text = apply_map(topic.subspan(half), text_map_, config_.text_dim);
  std::vector<double> rotated(kz, 0.0);
  for (std::size_t i = 0; i < kz; ++i) {
    for (std::size_t j = 0; j < kz; ++j) {
      rotated[i] += audio_rotation_[i * kz + j] * topic[j];
    }
  }
  out.audio = apply_map(rotated, audio_map_, config_.audio_dim);
  for (double& x : out.visual) x += rng.normal(0.0, config_.noise_visual);
  for (double& x : out.text) x += rng.normal(0.0, config_.noise_text);
  for (double& x : out.audio) x += rng.normal(0.0, config_.noise_audio);
  return out;
}

double World::boosted_alignment(const UserState& u, const VideoItem& v) const {
  double alignment = dot(u.preference, v.topic);
  if (!u.neighbors.empty()) {
    int engaged_neighbors = 0;
    for (int n : u.neighbors) {
      if (engaged_[v.id][n]) ++engaged_neighbors;
    }
    alignment += config_.social_boost * static_cast<double>(engaged_neighbors) /
                 static_cast<double>(u.neighbors.size());
  }
  return alignment;
}

World::ResponseDraw World::draw_response(const UserState& u, const VideoItem& v,
                                         Rng& rng) const {
  const double alignment = boosted_alignment(u, v);
  const double engage_p = sigmoid_scalar(config_.logistic_slope * alignment);
  const double probs[6] = {
      engage_p * config_.engaged_like,
      engage_p * config_.engaged_comment,
      engage_p * config_.engaged_share,
      engage_p * config_.engaged_full_watch,
      (1.0 - engage_p) * config_.unengaged_early_exit,
      (1.0 - engage_p) * config_.unengaged_none,
  };
  const double roll = rng.uniform();
  double cum = 0.0;
  int pick = 5;
  for (int i = 0; i < 6; ++i) {
    cum += probs[i];
    if (roll < cum) {
      pick = i;
      break;
    }
  }
  ResponseDraw draw;
  draw.behavior = static_cast<ResponseKind>(pick);
  switch (draw.behavior) {
    case ResponseKind::full_watch: draw.watch_fraction = rng.uniform(0.85, 1.0); break;
    case ResponseKind::like:
    case ResponseKind::comment:
    case ResponseKind::share: draw.watch_fraction = rng.uniform(0.6, 1.0); break;
    case ResponseKind::no_interaction: draw.watch_fraction = rng.uniform(0.2, 0.6); break;
    case ResponseKind::early_exit: draw.watch_fraction = rng.uniform(0.02, 0.25); break;
  }
  double cont_p = sigmoid_scalar(config_.continue_base + config_.continue_gain * alignment);
  if (draw.behavior == ResponseKind::early_exit) {
    cont_p *= config_.early_exit_continue_factor;
  }
  draw.continues = rng.bernoulli(cont_p);
  return draw;
}

Observation World::make_observation(int user, Rng& rng) const {
  Observation obs;
  obs.user = user;
  obs.query_time = clock_;
  const int k = config_.slate_size;
  // Partial Fisher-Yates over video ids.
  std::vector<int> ids(static_cast<std::size_t>(config_.videos));
  for (int i = 0; i < config_.videos; ++i) ids[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        rng.uniform_int(static_cast<std::uint64_t>(config_.videos - i));
    std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
  }
  obs.slate.assign(ids.begin(), ids.begin() + k);
  const auto& history = users_[static_cast<std::size_t>(user)].watched_history;
  const std::size_t take = std::min(history_limit_, history.size());
  obs.history.assign(history.end() - static_cast<std::ptrdiff_t>(take),
                     history.end());
  return obs;
}

Observation World::begin_session(int user, Rng& session_rng) {
  UserState& u = users_[static_cast<std::size_t>(this->user(user).id)];
  u.in_session = true;
  u.session_position = 0;
  Observation obs = make_observation(user, session_rng);
  current_slate_[static_cast<std::size_t>(user)] = obs.slate;
  return obs;
}

World::StepResult World::step(int user, int chosen_video, Rng& session_rng) {
  UserState& u = users_[static_cast<std::size_t>(this->user(user).id)];
  if (!u.in_session) {
    throw StateError("step: user " + std::to_string(user) + " has no session");
  }
  const auto& slate = current_slate_[static_cast<std::size_t>(user)];
  if (std::find(slate.begin(), slate.end(), chosen_video) == slate.end()) {
    throw ContractError("step: video " + std::to_string(chosen_video) +
                        " not in the current slate");
  }
  const VideoItem& v = videos_[static_cast<std::size_t>(chosen_video)];

  StepResult result;
  result.outcome.interest_before = u.interest;
  const ResponseDraw draw = draw_response(u, v, session_rng);
  result.outcome.behavior = draw.behavior;
  result.outcome.watch_fraction = draw.watch_fraction;

  // Every impression leaves a watch edge; engagement adds its own edge.
  clock_ += 1.0;
  InteractionEvent watch{user,       chosen_video,         TargetKind::video,
                         Behavior::watch, clock_,
                         behavior_weight(Behavior::watch, draw.watch_fraction)};
  graph_.append(watch);
  result.events.push_back(watch);
  Behavior engagement_edge = Behavior::watch;
  bool has_engagement_edge = false;
  switch (draw.behavior) {
    case ResponseKind::like: engagement_edge = Behavior::like; has_engagement_edge = true; break;
    case ResponseKind::comment: engagement_edge = Behavior::comment; has_engagement_edge = true; break;
    case ResponseKind::share: engagement_edge = Behavior::share; has_engagement_edge = true; break;
    default: break;
  }
  if (has_engagement_edge) {
    clock_ += 1.0;
    InteractionEvent e{user,           chosen_video, TargetKind::video,
                       engagement_edge, clock_,
                       behavior_weight(engagement_edge, draw.watch_fraction)};
    graph_.append(e);
    result.events.push_back(e);
  }

  if (response_is_engagement(draw.behavior)) {
    engaged_[static_cast<std::size_t>(chosen_video)][static_cast<std::size_t>(user)] = true;
  }
  u.watched_history.push_back(chosen_video);

  // Interest drifts toward the consumed topic; preference drifts slower.
  const double d = config_.drift_rate;
  for (std::size_t i = 0; i < u.interest.size(); ++i) {
    u.interest[i] = (1.0 - d) * u.interest[i] + d * v.topic[i];
  }
  normalize_in_place(u.interest);
  const double dp = 0.25 * d;
  for (std::size_t i = 0; i < u.preference.size(); ++i) {
    u.preference[i] = (1.0 - dp) * u.preference[i] + dp * v.topic[i];
  }
  normalize_in_place(u.preference);
  result.outcome.interest_after = u.interest;

  u.session_position += 1;
  const bool within_limit = u.session_position < config_.session_length;
  result.outcome.session_continued = draw.continues && within_limit;
  if (result.outcome.session_continued) {
    result.next = make_observation(user, session_rng);
    current_slate_[static_cast<std::size_t>(user)] = result.next.slate;
  } else {
    u.in_session = false;
    current_slate_[static_cast<std::size_t>(user)].clear();
    result.session_over = true;
  }
  return result;
}

StepOutcome World::hypothetical_outcome(int user, int video, Rng& rng) const {
  const UserState& u = this->user(user);
  const VideoItem& v = this->video(video);
  const ResponseDraw draw = draw_response(u, v, rng);
  StepOutcome outcome;
  outcome.behavior = draw.behavior;
  outcome.watch_fraction = draw.watch_fraction;
  outcome.session_continued = draw.continues;
  outcome.interest_before = u.interest;
  outcome.interest_after = u.interest;
  return outcome;
}

SessionRecord run_session(
    World& world, int user,
    const std::function<std::size_t(const Observation&)>& policy,
    const std::function<double(const StepOutcome&)>& reward_fn, int max_steps,
    Rng& session_rng) {
  SessionRecord record;
  record.user = user;
  if (max_steps <= 0) return record;
  Observation obs = world.begin_session(user, session_rng);
  for (int step = 0; step < max_steps; ++step) {
    const std::size_t choice = policy(obs);
    if (choice >= obs.slate.size()) {
      throw ContractError("run_session: policy chose slot " +
                          std::to_string(choice) + " of " +
                          std::to_string(obs.slate.size()));
    }
    World::StepResult result = world.step(user, obs.slate[choice], session_rng);
    SessionStep s;
    s.observation = std::move(obs);
    s.chosen = static_cast<int>(choice);
    s.outcome = result.outcome;
    s.reward = reward_fn(result.outcome);
    record.total_reward += s.reward;
    record.steps.push_back(std::move(s));
    if (result.session_over) break;
    obs = std::move(result.next);
  }
  return record;
}

void export_events(std::span<const InteractionEvent> events, std::ostream& os) {
  char buf[32];
  for (const InteractionEvent& e : events) {
    json line;
    line["actor"] = e.actor;
    line["target"] = e.target;
    line["target_kind"] = e.target_kind == TargetKind::video ? "video" : "user";
    line["behavior"] = behavior_name(e.behavior);
    line["timestamp"] = e.timestamp;
    line["weight"] = e.weight;
    os << line.dump() << '\n';
    (void)buf;
  }
  if (!os) throw IoError("export_events: write failure");
}

std::vector<InteractionEvent> import_events(std::istream& is) {
  std::vector<InteractionEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& err) {
      throw FormatError("import_events: line " + std::to_string(line_no) +
                        ": " + err.what());
    }
    if (!obj.is_object()) {
      throw FormatError("import_events: line " + std::to_string(line_no) +
                        ": expected an object");
    }
    static const char* kKeys[] = {"actor",    "target",    "target_kind",
                                  "behavior", "timestamp", "weight"};
    for (const auto& [key, _] : obj.items()) {
      if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) {
            return key == k;
          }) == std::end(kKeys)) {
        throw FormatError("import_events: line " + std::to_string(line_no) +
                          ": unknown field \"" + key + "\"");
      }
    }
    for (const char* key : kKeys) {
      if (!obj.contains(key)) {
        throw FormatError("import_events: line " + std::to_string(line_no) +
                          ": missing field \"" + key + "\"");
      }
    }
    if (!obj["actor"].is_number_integer() || !obj["target"].is_number_integer() ||
        !obj["target_kind"].is_string() || !obj["behavior"].is_string() ||
        !obj["timestamp"].is_number() || !obj["weight"].is_number()) {
      throw FormatError("import_events: line " + std::to_string(line_no) +
                        ": field type mismatch");
    }
    InteractionEvent e;
    e.actor = obj["actor"].get<int>();
    e.target = obj["target"].get<int>();
    const std::string kind = obj["target_kind"].get<std::string>();
    if (kind == "video") {
      e.target_kind = TargetKind::video;
    } else if (kind == "user") {
      e.target_kind = TargetKind::user;
    } else {
      throw FormatError("import_events: line " + std::to_string(line_no) +
                        ": bad target_kind \"" + kind + "\"");
    }
    e.behavior = behavior_from_name(obj["behavior"].get<std::string>());
    e.timestamp = obj["timestamp"].get<double>();
    e.weight = obj["weight"].get<double>();
    events.push_back(e);
  }
  return events;
}

}  // namespace mtdqn
