#include "mtdqn/optim.hpp"

#include <cmath>

#include "mtdqn/error.hpp"

namespace mtdqn {

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.defined()) throw ContractError("AdamOptimizer: undefined parameter");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  if (lr <= 0.0) throw ContractError("AdamOptimizer::step: lr must be > 0");
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (!params_[k].has_grad()) continue;
    auto g = params_[k].grad();
    auto p = params_[k].raw_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void AdamOptimizer::restore(std::uint64_t step_count,
                            std::vector<std::vector<double>> first,
                            std::vector<std::vector<double>> second) {
  if (first.size() != params_.size() || second.size() != params_.size()) {
    throw FormatError("AdamOptimizer::restore: moment count mismatch");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (first[k].size() != params_[k].size() ||
        second[k].size() != params_[k].size()) {
      throw FormatError("AdamOptimizer::restore: moment shape mismatch");
    }
  }
  step_count_ = step_count;
  m_ = std::move(first);
  v_ = std::move(second);
}

double CosineSchedule::operator()(std::uint64_t step) const {
  if (total_steps == 0) return lr_min;
  if (step > total_steps) step = total_steps;  // clamp out-of-range to endpoint
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  constexpr double kPi = 3.14159265358979323846;
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(kPi * frac));
}

double clip_gradients(std::span<Tensor> params, double max_norm) {
  if (max_norm <= 0.0) throw ContractError("clip_gradients: max_norm must be > 0");
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.raw_grad()) g *= factor;
    }
  }
  return norm;
}

double EpsilonSchedule::operator()(std::uint64_t step) const {
  if (decay_steps == 0 || step >= decay_steps) return eps_min;
  const double frac = static_cast<double>(step) / static_cast<double>(decay_steps);
  return eps0 + (eps_min - eps0) * frac;
}

}  // namespace mtdqn
