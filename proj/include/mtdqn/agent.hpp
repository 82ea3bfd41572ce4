#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtdqn/environment.hpp"
#include "mtdqn/optim.hpp"
#include "mtdqn/tensor.hpp"

namespace mtdqn {

// Eq-15 weights and the immediate-reward table.
struct RewardWeights {
  double lambda_retention = 0.3;
  double lambda_interest = 0.2;
  double like = 1.0;
  double comment = 1.2;
  double share = 1.5;
  double full_watch = 0.5;
  double early_exit = -0.5;
  double no_interaction = -0.1;
};

// r = r_immediate + lambda1 * r_retention + lambda2 * r_interest, with
// retention +-1 by session continuation and interest the cosine between the
// interest vectors before and after the step.
double compute_reward(const StepOutcome& outcome, const RewardWeights& weights);

// Argmax with probability 1-epsilon (ties to the lowest index), uniform
// random action otherwise.
int select_action(std::span<const double> q, double epsilon, Rng& rng);

// ReLU MLP with a linear output head.
class QNetwork {
 public:
  QNetwork(std::size_t input_dim, std::vector<std::size_t> hidden,
           std::size_t output_dim, Rng& init_rng);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }

  Tensor forward(const Tensor& state,
                 DropoutState* dropout_state = nullptr) const;
  // Value-only convenience for acting/evaluation.
  std::vector<double> evaluate(std::span<const double> state) const;

  std::vector<NamedParam> parameters(const std::string& prefix);
  void copy_from(const QNetwork& other);

 private:
  std::size_t input_dim_;
  std::size_t output_dim_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

template <class State>
struct Transition {
  State state;
  int action = 0;
  double reward = 0.0;
  State next;
  bool done = false;
};

// FIFO ring buffer with uniform with-replacement sampling.
template <class State>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("ReplayBuffer: capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool ready(std::size_t batch_size) const { return size() >= batch_size; }

  void push(Transition<State> t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  // Oldest-first view of the stored transitions.
  const Transition<State>& at(std::size_t i) const {
    if (i >= items_.size()) throw ContractError("ReplayBuffer::at: out of range");
    return items_[(head_ + i) % items_.size()];
  }

  std::vector<const Transition<State>*> sample(std::size_t batch_size,
                                               Rng& rng) const {
    if (!ready(batch_size)) {
      throw StateError("ReplayBuffer::sample: buffer has " +
                       std::to_string(size()) + " < " +
                       std::to_string(batch_size) + " transitions");
    }
    std::vector<const Transition<State>*> out;
    out.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      out.push_back(&items_[rng.uniform_int(items_.size())]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition<State>> items_;
};

struct DqnConfig {
  std::size_t state_dim = 0;
  std::size_t actions = 0;
  std::vector<std::size_t> hidden = {32, 32, 16};
  double gamma = 0.95;
  std::uint64_t sync_interval = 1000;
};

// Policy network plus a hard-copy target network.
class DqnAgent {
 public:
  DqnAgent(DqnConfig config, Rng& init_rng);

  const DqnConfig& config() const { return config_; }
  QNetwork& policy() { return policy_; }
  const QNetwork& policy() const { return policy_; }
  const QNetwork& target() const { return target_; }
  void sync_target() { target_.copy_from(policy_); }

 private:
  DqnConfig config_;
  QNetwork policy_;
  QNetwork target_;
};

// Mean squared Bellman residual over the batch. policy_q(state) must return
// the 1xA policy Q-row under the active tape; target_max(state) the scalar
// max_a' Q(s', a'; theta-) and is always invoked with recording disabled, so
// the target is a constant.
template <class State, class PolicyQ, class TargetMax>
Tensor td_loss(std::span<const Transition<State>* const> batch, double gamma,
               PolicyQ&& policy_q, TargetMax&& target_max) {
  if (batch.empty()) throw ContractError("td_loss: empty batch");
  std::vector<Tensor> squared;
  squared.reserve(batch.size());
  for (const Transition<State>* t : batch) {
    double y = t->reward;
    if (!t->done) {
      NoGradScope no_grad;
      y += gamma * target_max(t->next);
    }
    Tensor q_row = policy_q(t->state);
    if (t->action < 0 || static_cast<std::size_t>(t->action) >= q_row.cols()) {
      throw ContractError("td_loss: action " + std::to_string(t->action) +
                          " outside " + q_row.shape_str());
    }
    Tensor q_sa = slice_cols(q_row, static_cast<std::size_t>(t->action),
                             static_cast<std::size_t>(t->action) + 1);
    Tensor err = sub(q_sa, Tensor::scalar(y));
    squared.push_back(mul(err, err));
  }
  return mean_all(concat(std::span<const Tensor>(squared), 1));
}

// Sample -> TD loss -> backward -> clip -> Adam with the scheduled rate;
// syncs the target every config().sync_interval steps. Returns the loss, or
// nothing when the buffer cannot fill a batch yet.
template <class State, class PolicyQ, class TargetMax>
std::optional<double> train_step(DqnAgent& agent, ReplayBuffer<State>& buffer,
                                 std::size_t batch_size,
                                 AdamOptimizer& optimizer,
                                 const CosineSchedule& schedule,
                                 double clip_norm, std::uint64_t step,
                                 Rng& sample_rng, PolicyQ&& policy_q,
                                 TargetMax&& target_max) {
  if (!buffer.ready(batch_size)) return std::nullopt;
  auto batch = buffer.sample(batch_size, sample_rng);
  optimizer.zero_grad();
  Tape tape;
  Tensor loss =
      td_loss<State>(batch, agent.config().gamma, policy_q, target_max);
  const double loss_value = loss.item();
  if (!std::isfinite(loss_value)) {
    throw StateError("train_step: non-finite loss at step " +
                     std::to_string(step));
  }
  tape.backward(loss);
  std::vector<Tensor> params(optimizer.params().begin(),
                             optimizer.params().end());
  clip_gradients(params, clip_norm);
  optimizer.step(schedule(step));
  if (agent.config().sync_interval > 0 &&
      step % agent.config().sync_interval == 0) {
    agent.sync_target();
  }
  return loss_value;
}

}  // namespace mtdqn
