#include "mtdqn/temporal_graph.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "mtdqn/error.hpp"

namespace mtdqn {

const char* behavior_name(Behavior b) {
  switch (b) {
    case Behavior::watch: return "watch";
    case Behavior::like: return "like";
    case Behavior::comment: return "comment";
    case Behavior::share: return "share";
    case Behavior::follow: return "follow";
  }
  throw ContractError("behavior_name: unknown behavior");
}

Behavior behavior_from_name(const std::string& name) {
  if (name == "watch") return Behavior::watch;
  if (name == "like") return Behavior::like;
  if (name == "comment") return Behavior::comment;
  if (name == "share") return Behavior::share;
  if (name == "follow") return Behavior::follow;
  throw ValidationError("unknown behavior name: " + name);
}

double behavior_weight(Behavior behavior, double watch_fraction) {
  switch (behavior) {
    case Behavior::watch: return watch_fraction;
    case Behavior::like: return 1.0;
    case Behavior::comment: return 1.5;
    case Behavior::share: return 2.0;
    case Behavior::follow: return 1.0;
  }
  throw ContractError("behavior_weight: unknown behavior");
}

namespace {

// Canonical event order: two graphs built from permutations of the same
// multiset sum weights in the same order (bitwise-identical snapshots).
bool event_less(const InteractionEvent& a, const InteractionEvent& b) {
  return std::tie(a.timestamp, a.actor, a.target_kind, a.target, a.behavior,
                  a.weight) < std::tie(b.timestamp, b.actor, b.target_kind,
                                       b.target, b.behavior, b.weight);
}

}  // namespace

InteractionGraph::InteractionGraph(int num_users, int num_videos,
                                   std::vector<InteractionEvent> events)
    : num_users_(num_users), num_videos_(num_videos), events_(std::move(events)) {
  if (num_users_ < 0 || num_videos_ < 0) {
    throw ValidationError("InteractionGraph: negative node count");
  }
  for (std::size_t i = 0; i < events_.size(); ++i) validate(events_[i], i);
  std::stable_sort(events_.begin(), events_.end(), event_less);
}

int InteractionGraph::user_node(int user) const {
  if (user < 0 || user >= num_users_) {
    throw ValidationError("user id " + std::to_string(user) + " out of range");
  }
  return user;
}

int InteractionGraph::video_node(int video) const {
  if (video < 0 || video >= num_videos_) {
    throw ValidationError("video id " + std::to_string(video) + " out of range");
  }
  return num_users_ + video;
}

void InteractionGraph::validate(const InteractionEvent& e,
                                std::size_t index) const {
  const std::string where = " (event " + std::to_string(index) + ")";
  if (e.actor < 0 || e.actor >= num_users_) {
    throw ValidationError("actor id " + std::to_string(e.actor) +
                          " out of range" + where);
  }
  const int limit = e.target_kind == TargetKind::video ? num_videos_ : num_users_;
  if (e.target < 0 || e.target >= limit) {
    throw ValidationError("target id " + std::to_string(e.target) +
                          " out of range" + where);
  }
  if (e.weight < 0.0 || !std::isfinite(e.weight)) {
    throw ValidationError("event weight must be finite and >= 0" + where);
  }
  if (!std::isfinite(e.timestamp)) {
    throw ValidationError("event timestamp must be finite" + where);
  }
}

void InteractionGraph::append(const InteractionEvent& event) {
  validate(event, events_.size());
  if (!events_.empty() && event_less(event, events_.back())) {
    throw ValidationError("append: events must arrive in canonical order");
  }
  events_.push_back(event);
}

GraphSnapshot snapshot(const InteractionGraph& graph, double t_start,
                       double t_end, bool include_follow) {
  if (!(t_start < t_end)) {
    throw ValidationError("snapshot: interval must satisfy t_start < t_end");
  }
  GraphSnapshot snap;
  snap.num_nodes = static_cast<std::size_t>(graph.num_nodes());
  snap.in_edges.resize(snap.num_nodes);
  snap.raw_in_edges.resize(snap.num_nodes);
  snap.degree.assign(snap.num_nodes, 0.0);

  // Events are sorted by timestamp; visit only the window's range.
  const auto& events = graph.events();
  const auto first = std::lower_bound(
      events.begin(), events.end(), t_start,
      [](const InteractionEvent& e, double t) { return e.timestamp < t; });
  const auto last = std::lower_bound(
      first, events.end(), t_end,
      [](const InteractionEvent& e, double t) { return e.timestamp < t; });

  // Aggregate multi-edges per (dst, src); the map gives a canonical order.
  std::map<std::pair<int, int>, double> weights;
  for (auto it = first; it != last; ++it) {
    const InteractionEvent& e = *it;
    if (!include_follow && e.behavior == Behavior::follow) continue;
    const int src = graph.user_node(e.actor);
    const int dst = e.target_kind == TargetKind::video
                        ? graph.video_node(e.target)
                        : graph.user_node(e.target);
    // Symmetrized: each behavior links both endpoints for aggregation.
    weights[{dst, src}] += e.weight;
    weights[{src, dst}] += e.weight;
  }
  for (const auto& [key, w] : weights) snap.degree[key.first] += w;
  for (const auto& [key, w] : weights) {
    const auto [dst, src] = key;
    snap.raw_in_edges[dst].emplace_back(src, w);
    const double du = snap.degree[src] > 0.0 ? snap.degree[src] : 1.0;
    const double dv = snap.degree[dst] > 0.0 ? snap.degree[dst] : 1.0;
    snap.in_edges[dst].emplace_back(src, w / std::sqrt(du * dv));
  }
  return snap;
}

Tensor graph_propagate(const GraphSnapshot& snap, const Tensor& node_features) {
  if (node_features.rows() != snap.num_nodes) {
    throw DimensionError("graph_propagate: features " +
                         node_features.shape_str() + " vs " +
                         std::to_string(snap.num_nodes) + " nodes");
  }
  const std::size_t n = snap.num_nodes;
  const std::size_t w = node_features.cols();
  Tensor out = detail::op_result(n, w, {&node_features});
  auto hv = node_features.values();
  auto ov = out.raw_values();
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto& [src, coeff] : snap.in_edges[v]) {
      for (std::size_t j = 0; j < w; ++j)
        ov[v * w + j] += coeff * hv[static_cast<std::size_t>(src) * w + j];
    }
  }
  if (detail::op_should_record(out)) {
    auto hn = node_features.node();
    auto on = out.node();
    // The closure keeps its own copy of the edge list; snapshots are cheap
    // and the caller may discard them before backward runs.
    auto edges = snap.in_edges;
    Tape::active()->record([hn, on, edges, n, w] {
      if (!on->has_grad || !hn->needs_grad) return;
      hn->ensure_grad();
      for (std::size_t v = 0; v < n; ++v) {
        for (const auto& [src, coeff] : edges[v]) {
          for (std::size_t j = 0; j < w; ++j)
            hn->grad[static_cast<std::size_t>(src) * w + j] +=
                coeff * on->grad[v * w + j];
        }
      }
    });
  }
  return out;
}

TgnnModel::TgnnModel(int num_nodes, TgnnConfig config, Rng& init_rng)
    : num_nodes_(num_nodes), config_(std::move(config)) {
  if (num_nodes_ <= 0) throw ConfigError("TgnnModel: need at least one node");
  if (config_.layer_widths.empty()) {
    throw ConfigError("TgnnModel: need at least one layer");
  }
  if (config_.windows == 0) throw ConfigError("TgnnModel: windows must be >= 1");
  if (config_.window_len <= 0.0) {
    throw ConfigError("TgnnModel: window_len must be > 0");
  }
  std::size_t in = config_.base_dim;
  for (std::size_t l = 0; l < config_.layer_widths.size(); ++l) {
    const std::size_t out = config_.layer_widths[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weights_.push_back(
        Tensor::uniform(in, out, -bound, bound, init_rng).set_requires_grad(true));
    biases_.push_back(Tensor::zeros(1, out).set_requires_grad(true));
    in = out;
  }
  embeddings_ =
      Tensor::uniform(static_cast<std::size_t>(num_nodes_), config_.base_dim,
                      -0.1, 0.1, init_rng)
          .set_requires_grad(true);
  const std::size_t out = output_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(out));
  attn_w_ = Tensor::uniform(out, out, -bound, bound, init_rng).set_requires_grad(true);
  attn_b_ = Tensor::zeros(1, out).set_requires_grad(true);
  attn_q_ = Tensor::uniform(out, 1, -bound, bound, init_rng).set_requires_grad(true);
}

Tensor TgnnModel::layer_forward(const GraphSnapshot& snap,
                                const Tensor& node_features,
                                std::size_t layer) const {
  if (layer >= weights_.size()) {
    throw ConfigError("layer_forward: layer index out of range");
  }
  if (node_features.cols() != weights_[layer].rows()) {
    throw DimensionError("layer_forward: features " +
                         node_features.shape_str() + " vs weight " +
                         weights_[layer].shape_str());
  }
  Tensor propagated = graph_propagate(snap, node_features);
  return relu(add_rowwise(matmul(propagated, weights_[layer]), biases_[layer]));
}

Tensor TgnnModel::window_embeddings(const GraphSnapshot& snap) const {
  Tensor h = embeddings_;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = layer_forward(snap, h, l);
  }
  return h;
}

std::vector<Tensor> TgnnModel::node_timeline(const InteractionGraph& graph,
                                             int node,
                                             double query_time) const {
  if (node < 0 || node >= graph.num_nodes()) {
    throw ValidationError("node_timeline: node out of range");
  }
  std::vector<Tensor> timeline;
  timeline.reserve(config_.windows);
  for (std::size_t k = config_.windows; k >= 1; --k) {
    const double start = query_time - static_cast<double>(k) * config_.window_len;
    const double end = start + config_.window_len;
    GraphSnapshot snap =
        snapshot(graph, start, end, config_.include_follow_edges);
    Tensor h = window_embeddings(snap);
    timeline.push_back(slice_rows(h, static_cast<std::size_t>(node),
                                  static_cast<std::size_t>(node) + 1));
  }
  return timeline;
}

Tensor TgnnModel::temporal_attention(std::span<const Tensor> timeline) const {
  if (timeline.empty()) {
    throw DegenerateInputError("temporal_attention: empty timeline");
  }
  std::vector<Tensor> scores;
  scores.reserve(timeline.size());
  for (const Tensor& h : timeline) {
    Tensor hidden = tanh_act(add_rowwise(matmul(h, attn_w_), attn_b_));
    scores.push_back(matmul(hidden, attn_q_));
  }
  return rowwise_softmax(concat(std::span<const Tensor>(scores), 1));
}

Tensor TgnnModel::aggregate(const Tensor& alpha,
                            std::span<const Tensor> timeline) const {
  if (alpha.rows() != 1 || alpha.cols() != timeline.size()) {
    throw DimensionError("aggregate: weights " + alpha.shape_str() + " vs " +
                         std::to_string(timeline.size()) + " steps");
  }
  Tensor stacked = concat(timeline, 0);
  return matmul(alpha, stacked);
}

Tensor TgnnModel::timeline_from_windows(std::span<const Tensor> windows,
                                        int node) const {
  std::vector<Tensor> timeline;
  timeline.reserve(windows.size());
  for (const Tensor& h : windows) {
    timeline.push_back(slice_rows(h, static_cast<std::size_t>(node),
                                  static_cast<std::size_t>(node) + 1));
  }
  Tensor alpha = temporal_attention(timeline);
  return aggregate(alpha, timeline);
}

Tensor TgnnModel::forward(const InteractionGraph& graph, int node,
                          double query_time) const {
  std::vector<Tensor> timeline = node_timeline(graph, node, query_time);
  Tensor alpha = temporal_attention(timeline);
  return aggregate(alpha, timeline);
}

Tensor TgnnModel::forward_cached(const InteractionGraph& graph, int node,
                                 double query_time, WindowCache& cache) const {
  if (node < 0 || node >= graph.num_nodes()) {
    throw ValidationError("forward_cached: node out of range");
  }
  std::vector<Tensor> windows;
  windows.reserve(config_.windows);
  for (std::size_t k = config_.windows; k >= 1; --k) {
    const double start = query_time - static_cast<double>(k) * config_.window_len;
    const double end = start + config_.window_len;
    auto it = cache.find({start, end});
    if (it == cache.end()) {
      GraphSnapshot snap =
          snapshot(graph, start, end, config_.include_follow_edges);
      it = cache.emplace(std::make_pair(start, end), window_embeddings(snap))
               .first;
    }
    windows.push_back(it->second);
  }
  return timeline_from_windows(windows, node);
}

std::vector<NamedParam> TgnnModel::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({"tgnn/w" + std::to_string(l), weights_[l]});
    out.push_back({"tgnn/b" + std::to_string(l), biases_[l]});
  }
  out.push_back({"tgnn/embeddings", embeddings_});
  out.push_back({"tgnn/attn_w", attn_w_});
  out.push_back({"tgnn/attn_b", attn_b_});
  out.push_back({"tgnn/attn_q", attn_q_});
  return out;
}

}  // namespace mtdqn
