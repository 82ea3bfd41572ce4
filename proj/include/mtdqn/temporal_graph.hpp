#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtdqn/tensor.hpp"

namespace mtdqn {

enum class Behavior { watch, like, comment, share, follow };
enum class TargetKind { video, user };

const char* behavior_name(Behavior b);
Behavior behavior_from_name(const std::string& name);

// Intensity folded into the edge weight at ingestion. Watch events use the
// watch fraction directly; other behaviors use fixed weights.
double behavior_weight(Behavior behavior, double watch_fraction);

struct InteractionEvent {
  int actor = 0;  // user id
  int target = 0;  // video id or user id, per target_kind
  TargetKind target_kind = TargetKind::video;
  Behavior behavior = Behavior::watch;
  double timestamp = 0.0;
  double weight = 0.0;
};

// Users and videos as nodes, timestamped weighted behavior multi-edges.
// Events are kept in a canonical order (timestamp, then fields), so two
// graphs built from permutations of the same event list are identical.
class InteractionGraph {
 public:
  InteractionGraph(int num_users, int num_videos,
                   std::vector<InteractionEvent> events = {});

  int num_users() const { return num_users_; }
  int num_videos() const { return num_videos_; }
  int num_nodes() const { return num_users_ + num_videos_; }
  int user_node(int user) const;
  int video_node(int video) const;

  const std::vector<InteractionEvent>& events() const { return events_; }
  void append(const InteractionEvent& event);

 private:
  void validate(const InteractionEvent& event, std::size_t index) const;

  int num_users_;
  int num_videos_;
  std::vector<InteractionEvent> events_;
};

// Static symmetrized weighted adjacency over a half-open time window, with
// the GCN normalization coefficients w_uv / sqrt(deg(u) * deg(v))
// precomputed (degree factors of 0 are treated as 1).
struct GraphSnapshot {
  std::size_t num_nodes = 0;
  // Per destination node: (source node, normalized coefficient).
  std::vector<std::vector<std::pair<int, double>>> in_edges;
  // Per destination node: (source node, raw summed weight).
  std::vector<std::vector<std::pair<int, double>>> raw_in_edges;
  std::vector<double> degree;  // weighted symmetric degree
};

GraphSnapshot snapshot(const InteractionGraph& graph, double t_start,
                       double t_end, bool include_follow = true);

// out[v] = sum over in-neighbors u of coeff(u, v) * h[u]; differentiable in h.
Tensor graph_propagate(const GraphSnapshot& snap, const Tensor& node_features);

struct TgnnConfig {
  std::size_t base_dim = 16;                 // learned node embedding width
  std::vector<std::size_t> layer_widths = {16, 16, 16};
  std::size_t windows = 6;                   // T
  double window_len = 200.0;
  bool include_follow_edges = true;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// TGCN stack plus temporal attention over per-window node embeddings.
class TgnnModel {
 public:
  TgnnModel(int num_nodes, TgnnConfig config, Rng& init_rng);

  const TgnnConfig& config() const { return config_; }
  std::size_t output_dim() const { return config_.layer_widths.back(); }
  int num_nodes() const { return num_nodes_; }

  // One Eq-10 layer: relu(propagate(h) * W_l + b_l).
  Tensor layer_forward(const GraphSnapshot& snap, const Tensor& node_features,
                       std::size_t layer) const;

  // All layers from the embedding table -> num_nodes x output_dim.
  Tensor window_embeddings(const GraphSnapshot& snap) const;

  // Per-window embeddings of one node for the T consecutive windows ending
  // at query_time, oldest first.
  std::vector<Tensor> node_timeline(const InteractionGraph& graph, int node,
                                    double query_time) const;

  // Softmax over q^T tanh(W h_t + b) scores -> 1xT weights.
  Tensor temporal_attention(std::span<const Tensor> timeline) const;

  // h_seq = sum_t alpha_t h_t.
  Tensor aggregate(const Tensor& alpha, std::span<const Tensor> timeline) const;

  Tensor forward(const InteractionGraph& graph, int node,
                 double query_time) const;

  // As forward(), but reuses per-window embedding matrices across calls made
  // with the same parameters (one cache per optimization step).
  using WindowCache = std::map<std::pair<double, double>, Tensor>;
  Tensor forward_cached(const InteractionGraph& graph, int node,
                        double query_time, WindowCache& cache) const;

  std::vector<NamedParam> parameters();
  const Tensor& embeddings() const { return embeddings_; }

 private:
  Tensor timeline_from_windows(std::span<const Tensor> windows, int node) const;

  int num_nodes_;
  TgnnConfig config_;
  std::vector<Tensor> weights_;  // layer l: width(l) x width(l+1)
  std::vector<Tensor> biases_;   // layer l: 1 x width(l+1)
  Tensor embeddings_;            // num_nodes x base_dim
  Tensor attn_w_;                // out x out
  Tensor attn_b_;                // 1 x out
  Tensor attn_q_;                // out x 1
};

}  // namespace mtdqn
