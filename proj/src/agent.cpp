#include "mtdqn/agent.hpp"

#include <algorithm>

#include "mtdqn/metrics.hpp"

namespace mtdqn {

double compute_reward(const StepOutcome& outcome, const RewardWeights& w) {
  double immediate = 0.0;
  switch (outcome.behavior) {
    case ResponseKind::like: immediate = w.like; break;
    case ResponseKind::comment: immediate = w.comment; break;
    case ResponseKind::share: immediate = w.share; break;
    case ResponseKind::full_watch: immediate = w.full_watch; break;
    case ResponseKind::early_exit: immediate = w.early_exit; break;
    case ResponseKind::no_interaction: immediate = w.no_interaction; break;
  }
  const double retention = outcome.session_continued ? 1.0 : -1.0;
  const double interest = metrics::cosine_similarity(outcome.interest_before,
                                                     outcome.interest_after);
  return immediate + w.lambda_retention * retention + w.lambda_interest * interest;
}

int select_action(std::span<const double> q, double epsilon, Rng& rng) {
  if (q.empty()) throw ContractError("select_action: empty Q-vector");
  if (epsilon < 0.0 || epsilon > 1.0) {
    throw ContractError("select_action: epsilon must be in [0, 1]");
  }
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return static_cast<int>(rng.uniform_int(q.size()));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = i;
  }
  return static_cast<int>(best);
}

QNetwork::QNetwork(std::size_t input_dim, std::vector<std::size_t> hidden,
                   std::size_t output_dim, Rng& init_rng)
    : input_dim_(input_dim), output_dim_(output_dim) {
  if (input_dim_ == 0 || output_dim_ == 0) {
    throw ConfigError("QNetwork: zero input or output width");
  }
  std::size_t in = input_dim_;
  hidden.push_back(output_dim_);
  for (std::size_t width : hidden) {
    if (width == 0) throw ConfigError("QNetwork: zero hidden width");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weights_.push_back(
        Tensor::uniform(in, width, -bound, bound, init_rng).set_requires_grad(true));
    biases_.push_back(Tensor::zeros(1, width).set_requires_grad(true));
    in = width;
  }
}

Tensor QNetwork::forward(const Tensor& state, DropoutState* dropout_state) const {
  if (state.rows() != 1 || state.cols() != input_dim_) {
    throw DimensionError("QNetwork::forward: state " + state.shape_str() +
                         ", expected 1x" + std::to_string(input_dim_));
  }
  Tensor h = state;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add(matmul(h, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) {
      h = relu(h);
      if (dropout_state != nullptr && dropout_state->rate > 0.0) {
        h = dropout(h, dropout_state->rate, *dropout_state->rng);
      }
    }
  }
  return h;
}

std::vector<double> QNetwork::evaluate(std::span<const double> state) const {
  NoGradScope no_grad;
  Tensor out = forward(Tensor::row(std::vector<double>(state.begin(), state.end())));
  return std::vector<double>(out.values().begin(), out.values().end());
}

std::vector<NamedParam> QNetwork::parameters(const std::string& prefix) {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({prefix + "/w" + std::to_string(l), weights_[l]});
    out.push_back({prefix + "/b" + std::to_string(l), biases_[l]});
  }
  return out;
}

void QNetwork::copy_from(const QNetwork& other) {
  if (weights_.size() != other.weights_.size() ||
      input_dim_ != other.input_dim_ || output_dim_ != other.output_dim_) {
    throw DimensionError("QNetwork::copy_from: architecture mismatch");
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto src_w = other.weights_[l].values();
    auto dst_w = weights_[l].raw_values();
    std::copy(src_w.begin(), src_w.end(), dst_w.begin());
    auto src_b = other.biases_[l].values();
    auto dst_b = biases_[l].raw_values();
    std::copy(src_b.begin(), src_b.end(), dst_b.begin());
  }
}

DqnAgent::DqnAgent(DqnConfig config, Rng& init_rng)
    : config_(config),
      policy_(config.state_dim, config.hidden, config.actions, init_rng),
      target_(config.state_dim, config.hidden, config.actions, init_rng) {
  if (config_.gamma < 0.0 || config_.gamma > 1.0) {
    throw ConfigError("DqnAgent: gamma must be in [0, 1]");
  }
  target_.copy_from(policy_);
}

}  // namespace mtdqn
