#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mtdqn/tensor.hpp"

namespace mtdqn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Gradients are read from
// each tensor's grad slot; parameters with no accumulated gradient are left
// untouched by step().
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Tensor> params, AdamConfig config = {});

  void step(double lr);
  void zero_grad();

  std::uint64_t step_count() const { return step_count_; }
  std::span<const Tensor> params() const { return params_; }
  const AdamConfig& config() const { return config_; }

  // Checkpoint access to the raw moment buffers (aligned with params()).
  std::span<const std::vector<double>> first_moments() const { return m_; }
  std::span<const std::vector<double>> second_moments() const { return v_; }
  void restore(std::uint64_t step_count,
               std::vector<std::vector<double>> first,
               std::vector<std::vector<double>> second);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig config_;
  std::uint64_t step_count_ = 0;
};

// lr(step) = lr_min + (lr0 - lr_min) * (1 + cos(pi * step / total)) / 2,
// with step clamped to [0, total_steps].
struct CosineSchedule {
  double lr0 = 1e-3;
  double lr_min = 1e-5;
  std::uint64_t total_steps = 1;

  double operator()(std::uint64_t step) const;
};

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_gradients(std::span<Tensor> params, double max_norm);

// Linear decay from eps0 to eps_min over decay_steps, constant afterwards.
struct EpsilonSchedule {
  double eps0 = 1.0;
  double eps_min = 0.05;
  std::uint64_t decay_steps = 1;

  double operator()(std::uint64_t step) const;
};

}  // namespace mtdqn
