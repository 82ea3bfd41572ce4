#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <vector>

#include "mtdqn/temporal_graph.hpp"
#include "mtdqn/tensor.hpp"

namespace mtdqn {

// Post-extraction modality features for one video.
struct RawModalFeatures {
  std::vector<double> visual;
  std::vector<double> text;
  std::vector<double> audio;
};

struct FusionConfig {
  std::size_t visual_dim = 12;
  std::size_t text_dim = 12;
  std::size_t audio_dim = 12;
  std::size_t model_dim = 16;  // D
  std::size_t heads = 2;       // H
  std::size_t layers = 2;      // encoder blocks; 0 = gates on raw projections
};

// 3x3 attention weights over the (visual, text, audio) token sequence.
struct AttentionTraceEntry {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::array<std::array<double, 3>, 3> weights{};
};

using AttentionTrace = std::vector<AttentionTraceEntry>;

// Optional training-mode dropout; null pointer means evaluation mode.
struct DropoutState {
  Rng* rng = nullptr;
  double rate = 0.0;
};

// softmax(Q K^T / sqrt(d_k)) V. The attention matrix is written to
// attention_out when provided.
Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        Tensor* attention_out = nullptr);

// Modality projection, multi-head attention encoder with pre-norm residual
// blocks, and per-dimension softmax gating over the three modality tokens.
class FusionModel {
 public:
  FusionModel(FusionConfig config, Rng& init_rng);

  const FusionConfig& config() const { return config_; }

  // (v', t', a') as a 3 x D token matrix, rows in (visual, text, audio) order.
  Tensor project(const RawModalFeatures& raw) const;

  // One encoder block's attention over the 3xD tokens; trace rows appended
  // per head when trace != nullptr.
  Tensor multi_head(const Tensor& tokens, std::size_t layer,
                    AttentionTrace* trace = nullptr) const;

  // Per-dimension gate weights as a 3xD matrix; columns sum to 1.
  Tensor modality_gates(const Tensor& tokens) const;

  // f = sum of gates (*) tokens over the modality axis -> 1xD.
  Tensor gated_fuse(const Tensor& gates, const Tensor& tokens) const;

  Tensor forward(const RawModalFeatures& raw, AttentionTrace* trace = nullptr,
                 DropoutState* dropout_state = nullptr) const;

  // Fuses many inputs in one pass; row i equals forward(raw[i]). The batch
  // keeps the per-item 3-token attention structure but runs every matrix
  // product across the whole batch at once.
  Tensor forward_batch(std::span<const RawModalFeatures> raw,
                       DropoutState* dropout_state = nullptr) const;

  std::vector<NamedParam> parameters();

 private:
  Tensor encode(Tensor tokens, AttentionTrace* trace,
                DropoutState* dropout_state) const;

  FusionConfig config_;
  std::size_t head_dim_;
  Tensor proj_w_[3];  // modality m: input_dim(m) x D
  Tensor proj_b_[3];  // 1 x D
  // Per layer, per head: D x head_dim projections.
  std::vector<std::vector<Tensor>> wq_, wk_, wv_;
  std::vector<Tensor> wo_;       // per layer: D x D
  std::vector<Tensor> ln_gain_;  // per layer: 1 x D
  std::vector<Tensor> ln_bias_;
  Tensor final_gain_, final_bias_;
  Tensor gate_w_[3][3];  // gate_w_[m][s]: D x D, source token s -> gate m logits
  Tensor gate_b_[3];     // 1 x D
};

// Wide-format dump: one row per (layer, head, from-modality) holding the
// three attention weights; every row sums to 1.
void write_attention_csv(const AttentionTrace& trace, std::ostream& os);

}  // namespace mtdqn
