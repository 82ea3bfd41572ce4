#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtdqn/fusion.hpp"
#include "mtdqn/rng.hpp"
#include "mtdqn/temporal_graph.hpp"

namespace mtdqn {

struct WorldConfig {
  int users = 50;
  int videos = 200;
  std::size_t latent_dim = 8;  // must be even (split across visual/text)
  std::size_t visual_dim = 12;
  std::size_t text_dim = 12;
  std::size_t audio_dim = 12;
  double noise_visual = 0.3;
  double noise_text = 0.3;
  double noise_audio = 0.3;
  double social_edge_prob = 0.08;
  double drift_rate = 0.05;
  int session_length = 30;
  int slate_size = 5;
  std::uint64_t seed = 1;

  // Behavior model constants.
  double logistic_slope = 4.0;
  double social_boost = 0.1;
  // Conditional split of engaged steps over like/comment/share/full-watch.
  double engaged_like = 0.30;
  double engaged_comment = 0.15;
  double engaged_share = 0.10;
  double engaged_full_watch = 0.45;
  // Conditional split of non-engaged steps over early-exit/no-interaction.
  double unengaged_early_exit = 0.55;
  double unengaged_none = 0.45;
  double continue_base = 2.5;
  double continue_gain = 2.0;
  double early_exit_continue_factor = 0.6;
};

// Realized user response to one shown video.
enum class ResponseKind {
  like,
  comment,
  share,
  full_watch,
  early_exit,
  no_interaction
};

const char* response_name(ResponseKind r);
bool response_is_engagement(ResponseKind r);
// Relevance grade used for ranking metrics: share 3, comment/like 2,
// full watch 1, otherwise 0.
double response_grade(ResponseKind r);

struct StepOutcome {
  ResponseKind behavior = ResponseKind::no_interaction;
  double watch_fraction = 0.0;
  bool session_continued = false;
  std::vector<double> interest_before;
  std::vector<double> interest_after;
};

struct VideoItem {
  int id = 0;
  std::vector<double> topic;  // unit-norm latent z
  RawModalFeatures features;
};

struct UserState {
  int id = 0;
  std::vector<double> preference;  // unit-norm p
  std::vector<double> interest;    // unit-norm running interest
  std::vector<int> neighbors;      // sorted social neighbor ids
  std::vector<int> watched_history;  // behavior-target video ids, oldest first
  int session_position = 0;
  bool in_session = false;
};

struct Observation {
  int user = 0;
  double query_time = 0.0;
  std::vector<int> slate;    // candidate video ids
  std::vector<int> history;  // user's recent behavior-target video ids
};

// Synthetic short-video platform: latent-topic videos emitting three modality
// views, preference-driven users with drift and social links, session
// stepping, and an append-only interaction event log.
class World {
 public:
  explicit World(WorldConfig config);

  const WorldConfig& config() const { return config_; }
  int num_users() const { return config_.users; }
  int num_videos() const { return config_.videos; }
  const VideoItem& video(int id) const;
  const UserState& user(int id) const;
  const InteractionGraph& graph() const { return graph_; }
  double clock() const { return clock_; }

  // Three modality views of a unit-norm topic: visual sees the first half,
  // text the second half, audio a fixed rotation of the whole, each through
  // a fixed seeded linear map plus Gaussian noise.
  RawModalFeatures emit_modal_features(std::span<const double> topic,
                                       Rng& rng) const;

  Observation begin_session(int user, Rng& session_rng);

  struct StepResult {
    StepOutcome outcome;
    std::vector<InteractionEvent> events;
    Observation next;        // valid only when !session_over
    bool session_over = false;
  };
  // Responds to the chosen video, appends the realized events, and samples
  // the next slate. The chosen video must be in the current slate.
  StepResult step(int user, int chosen_video, Rng& session_rng);

  // Samples a response from the current user/video state without mutating
  // anything; used by the evaluation protocol to grade whole slates.
  StepOutcome hypothetical_outcome(int user, int video, Rng& rng) const;

  std::size_t history_limit() const { return history_limit_; }
  void set_history_limit(std::size_t n) { history_limit_ = n; }

 private:
  struct ResponseDraw {
    ResponseKind behavior;
    double watch_fraction;
    bool continues;
  };
  ResponseDraw draw_response(const UserState& u, const VideoItem& v,
                             Rng& rng) const;
  double boosted_alignment(const UserState& u, const VideoItem& v) const;
  Observation make_observation(int user, Rng& rng) const;

  WorldConfig config_;
  std::vector<VideoItem> videos_;
  std::vector<UserState> users_;
  // Fixed emission maps (row-major): visual_map_ is (Kz/2 x Dv), etc.
  std::vector<double> visual_map_, text_map_, audio_map_;
  std::vector<double> audio_rotation_;  // Kz x Kz orthogonal
  std::vector<std::vector<bool>> engaged_;  // [video][user]
  std::vector<std::vector<int>> current_slate_;  // per user, empty outside session
  InteractionGraph graph_;
  double clock_ = 0.0;
  std::size_t history_limit_ = 6;
};

struct SessionStep {
  Observation observation;
  int chosen = 0;  // slate index
  StepOutcome outcome;
  double reward = 0.0;
};

struct SessionRecord {
  int user = 0;
  std::vector<SessionStep> steps;
  double total_reward = 0.0;
};

// Runs one session under the given policy; reward_fn scores each outcome.
SessionRecord run_session(
    World& world, int user,
    const std::function<std::size_t(const Observation&)>& policy,
    const std::function<double(const StepOutcome&)>& reward_fn, int max_steps,
    Rng& session_rng);

// JSONL event log: one object per line with keys actor, target, target_kind,
// behavior, timestamp, weight. Ingestion rejects unknown fields.
void export_events(std::span<const InteractionEvent> events, std::ostream& os);
std::vector<InteractionEvent> import_events(std::istream& is);

}  // namespace mtdqn
