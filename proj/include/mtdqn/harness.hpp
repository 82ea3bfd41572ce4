#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtdqn/agent.hpp"
#include "mtdqn/checkpoint.hpp"
#include "mtdqn/config.hpp"
#include "mtdqn/environment.hpp"
#include "mtdqn/fusion.hpp"
#include "mtdqn/temporal_graph.hpp"

namespace mtdqn {

enum class ContentPath { fused_attention, concat_linear, raw_concat };
enum class HistoryPath { tgnn, mean_content, none };
enum class DecisionPath { dqn, supervised };

struct VariantSpec {
  std::string label;
  ContentPath content = ContentPath::fused_attention;
  HistoryPath history = HistoryPath::tgnn;
  DecisionPath decision = DecisionPath::dqn;
};

VariantSpec variant_by_name(const std::string& label);
// Table-1 rows: MT-DQN, -Transformer, -TGNN, -DQN.
std::vector<VariantSpec> ablation_variants();
// Table-2 rows: MT-DQN, Concat-Modal, Vanilla-DQN.
std::vector<VariantSpec> baseline_variants();

// Everything needed to rebuild a state under the current parameters: the
// user, the grid-aligned query time for the graph windows, the slate, and
// the recent behavior-target history. Replay stores these instead of raw
// vectors so TD gradients reach the fusion and graph parameters.
struct ImpressionContext {
  int user = 0;
  double query_time = 0.0;
  std::vector<int> slate;
  std::vector<int> history;
};

struct StoredStep {
  ImpressionContext ctx;
  bool engaged = false;  // chosen candidate's realized engagement
};

// One trainable variant: content encoder + history encoder + decision head.
class PolicyModel {
 public:
  PolicyModel(const ExperimentConfig& config, const VariantSpec& variant,
              std::uint64_t seed);

  const VariantSpec& variant() const { return variant_; }
  std::size_t content_dim() const { return content_dim_; }
  std::size_t history_dim() const { return history_dim_; }
  std::size_t state_dim() const { return state_dim_; }

  // Per-optimization-step tensor reuse across a batch.
  struct StepCache {
    TgnnModel::WindowCache windows;
    std::map<int, Tensor> content;
  };

  // Computes any missing content vectors for the given videos in one batched
  // forward; dqn_state/candidate_state call it themselves, so this is only an
  // optimization hook for filling a cache across a whole replay batch.
  void ensure_content(const World& world, std::span<const int> videos,
                      StepCache& cache, DropoutState* dropout_state) const;
  Tensor content_vector(const World& world, int video, StepCache& cache,
                        DropoutState* dropout_state) const;
  Tensor history_vector(const World& world, const ImpressionContext& ctx,
                        StepCache& cache, DropoutState* dropout_state) const;
  // DQN slate state [f_1; ...; f_K; h_seq] as a 1 x state_dim row.
  Tensor dqn_state(const World& world, const ImpressionContext& ctx,
                   StepCache& cache, DropoutState* dropout_state) const;
  // Supervised per-candidate state [f_c; h_seq].
  Tensor candidate_state(const World& world, const ImpressionContext& ctx,
                         std::size_t slate_index, StepCache& cache,
                         DropoutState* dropout_state) const;

  // Ranking scores per slate slot, value-only (Q values or engagement
  // probabilities depending on the decision path).
  std::vector<double> scores(const World& world,
                             const ImpressionContext& ctx) const;

  DqnAgent& agent();
  QNetwork& classifier();
  FusionModel* fusion() { return fusion_.get(); }
  TgnnModel* tgnn() { return tgnn_.get(); }

  std::vector<NamedParam> named_trainable();
  std::vector<NamedParam> named_aux();  // target network parameters
  std::vector<Tensor> trainable_tensors();

 private:
  ExperimentConfig config_;
  VariantSpec variant_;
  std::size_t content_dim_ = 0;
  std::size_t history_dim_ = 0;
  std::size_t state_dim_ = 0;
  std::unique_ptr<FusionModel> fusion_;
  // Concat-linear content path: Eq 1-3 projections, then one linear map.
  std::vector<Tensor> concat_proj_w_, concat_proj_b_;
  Tensor concat_mix_w_, concat_mix_b_;
  std::unique_ptr<TgnnModel> tgnn_;
  std::unique_ptr<DqnAgent> agent_;
  std::unique_ptr<QNetwork> classifier_;
};

struct EvalMetrics {
  double f1 = 0.0;
  double ndcg5 = 0.0;
  std::optional<double> mse;  // absent for supervised variants
  std::optional<double> mae;
  double hit_rate = 0.0;
  std::vector<double> hit_positions;
  double ils = 0.0;
  double mean_return = 0.0;
  double f1_threshold = 0.0;
};

struct RunResult {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;
  EvalMetrics metrics;
  double wall_seconds = 0.0;  // never written to emitted files
};

struct ExperimentOutput {
  RunResult result;
  std::vector<double> step_losses;
};

// Splits user ids into disjoint train/validation/test sets, sized by the
// configured ratios (seeded shuffle).
struct UserSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};
UserSplit split_users(int num_users, const RunSettings& run, std::uint64_t seed);

// Trains one variant and evaluates it on the held-out users of the
// post-training world. Writes a checkpoint when checkpoint_path is nonempty.
ExperimentOutput run_experiment(const ExperimentConfig& config,
                                const VariantSpec& variant, std::uint64_t seed,
                                const std::string& checkpoint_path = "");

// Loads a checkpoint, rebuilds its variant in a fresh config-seeded world,
// and runs the evaluation protocol. Writes metrics (and the attention dump
// for fused variants) into out_dir when nonempty.
EvalMetrics evaluate_checkpoint(const std::string& checkpoint_path,
                                const std::string& out_dir);

// Runs variants x seeds (seed, seed+1, ...) and emits the result files.
std::vector<RunResult> run_variants(const ExperimentConfig& config,
                                    std::span<const VariantSpec> variants,
                                    std::size_t num_seeds,
                                    std::uint64_t base_seed,
                                    const std::string& out_dir);

// results.csv, train_loss.csv, relevance_diversity.csv, hit_positions.csv,
// and manifest.json. Deterministic byte-for-byte for identical inputs.
void emit_results(std::span<const RunResult> results,
                  const ExperimentConfig& config, const std::string& out_dir);

// Event-log generation only: one random-policy session per user.
void simulate_events(const ExperimentConfig& config, const std::string& out_path);

std::string format_double(double v);  // shortest exact round-trip (%.17g)

}  // namespace mtdqn
