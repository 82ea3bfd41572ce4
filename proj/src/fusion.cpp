#include "mtdqn/fusion.hpp"

#include <cmath>
#include <ostream>

#include "mtdqn/error.hpp"

namespace mtdqn {

namespace {

constexpr const char* kModalityNames[3] = {"visual", "text", "audio"};

Tensor init_weight(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Tensor::uniform(in, out, -bound, bound, rng).set_requires_grad(true);
}

}  // namespace

Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        Tensor* attention_out) {
  if (q.cols() != k.cols() || k.cols() != v.cols() || k.rows() != v.rows()) {
    throw DimensionError("scaled_attention: Q " + q.shape_str() + ", K " +
                         k.shape_str() + ", V " + v.shape_str());
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  Tensor attention = rowwise_softmax(scores);
  if (attention_out != nullptr) *attention_out = attention;
  return matmul(attention, v);
}

FusionModel::FusionModel(FusionConfig config, Rng& init_rng)
    : config_(config) {
  if (config_.model_dim == 0 || config_.heads == 0) {
    throw ConfigError("FusionModel: model_dim and heads must be >= 1");
  }
  if (config_.model_dim % config_.heads != 0) {
    throw ConfigError("FusionModel: model_dim " +
                      std::to_string(config_.model_dim) +
                      " not divisible by heads " + std::to_string(config_.heads));
  }
  head_dim_ = config_.model_dim / config_.heads;
  const std::size_t dims[3] = {config_.visual_dim, config_.text_dim,
                               config_.audio_dim};
  for (int m = 0; m < 3; ++m) {
    if (dims[m] == 0) throw ConfigError("FusionModel: zero modality dim");
    proj_w_[m] = init_weight(dims[m], config_.model_dim, init_rng);
    proj_b_[m] = Tensor::zeros(1, config_.model_dim).set_requires_grad(true);
  }
  const std::size_t d = config_.model_dim;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::vector<Tensor> q, k, v;
    for (std::size_t h = 0; h < config_.heads; ++h) {
      q.push_back(init_weight(d, head_dim_, init_rng));
      k.push_back(init_weight(d, head_dim_, init_rng));
      v.push_back(init_weight(d, head_dim_, init_rng));
    }
    wq_.push_back(std::move(q));
    wk_.push_back(std::move(k));
    wv_.push_back(std::move(v));
    wo_.push_back(init_weight(d, d, init_rng));
    ln_gain_.push_back(Tensor::full(1, d, 1.0).set_requires_grad(true));
    ln_bias_.push_back(Tensor::zeros(1, d).set_requires_grad(true));
  }
  final_gain_ = Tensor::full(1, d, 1.0).set_requires_grad(true);
  final_bias_ = Tensor::zeros(1, d).set_requires_grad(true);
  for (int m = 0; m < 3; ++m) {
    for (int s = 0; s < 3; ++s) gate_w_[m][s] = init_weight(d, d, init_rng);
    gate_b_[m] = Tensor::zeros(1, d).set_requires_grad(true);
  }
}

Tensor FusionModel::project(const RawModalFeatures& raw) const {
  const std::vector<double>* inputs[3] = {&raw.visual, &raw.text, &raw.audio};
  const std::size_t dims[3] = {config_.visual_dim, config_.text_dim,
                               config_.audio_dim};
  std::vector<Tensor> rows;
  rows.reserve(3);
  for (int m = 0; m < 3; ++m) {
    if (inputs[m]->size() != dims[m]) {
      throw DimensionError(std::string("project: ") + kModalityNames[m] +
                           " feature length " +
                           std::to_string(inputs[m]->size()) + ", expected " +
                           std::to_string(dims[m]));
    }
    Tensor x = Tensor::row(*inputs[m]);
    rows.push_back(add(matmul(x, proj_w_[m]), proj_b_[m]));
  }
  return concat(std::span<const Tensor>(rows), 0);
}

Tensor FusionModel::multi_head(const Tensor& tokens, std::size_t layer,
                               AttentionTrace* trace) const {
  if (layer >= config_.layers) {
    throw ConfigError("multi_head: layer index out of range");
  }
  if (tokens.rows() != 3 || tokens.cols() != config_.model_dim) {
    throw DimensionError("multi_head: tokens " + tokens.shape_str() +
                         ", expected 3x" + std::to_string(config_.model_dim));
  }
  std::vector<Tensor> heads;
  heads.reserve(config_.heads);
  for (std::size_t h = 0; h < config_.heads; ++h) {
    Tensor q = matmul(tokens, wq_[layer][h]);
    Tensor k = matmul(tokens, wk_[layer][h]);
    Tensor v = matmul(tokens, wv_[layer][h]);
    Tensor attention;
    heads.push_back(scaled_attention(q, k, v, &attention));
    if (trace != nullptr) {
      AttentionTraceEntry entry;
      entry.layer = layer;
      entry.head = h;
      auto av = attention.values();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) entry.weights[i][j] = av[i * 3 + j];
      trace->push_back(entry);
    }
  }
  return matmul(concat(std::span<const Tensor>(heads), 1), wo_[layer]);
}

Tensor FusionModel::modality_gates(const Tensor& tokens) const {
  if (tokens.rows() != 3 || tokens.cols() != config_.model_dim) {
    throw DimensionError("modality_gates: tokens " + tokens.shape_str() +
                         ", expected 3x" + std::to_string(config_.model_dim));
  }
  Tensor rows[3];
  for (int s = 0; s < 3; ++s) rows[s] = slice_rows(tokens, s, s + 1);
  std::vector<Tensor> logits;
  logits.reserve(3);
  for (int m = 0; m < 3; ++m) {
    Tensor z = gate_b_[m];
    for (int s = 0; s < 3; ++s) z = add(z, matmul(rows[s], gate_w_[m][s]));
    logits.push_back(z);
  }
  // Softmax across the modality axis, one softmax per feature dimension.
  Tensor stacked = concat(std::span<const Tensor>(logits), 0);
  return transpose(rowwise_softmax(transpose(stacked)));
}

Tensor FusionModel::gated_fuse(const Tensor& gates, const Tensor& tokens) const {
  if (gates.rows() != 3 || tokens.rows() != 3 || gates.cols() != tokens.cols()) {
    throw DimensionError("gated_fuse: gates " + gates.shape_str() +
                         " vs tokens " + tokens.shape_str());
  }
  auto gv = gates.values();
  const std::size_t d = gates.cols();
  for (std::size_t j = 0; j < d; ++j) {
    const double sum = gv[j] + gv[d + j] + gv[2 * d + j];
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ContractError("gated_fuse: gates not normalized (dimension " +
                          std::to_string(j) + " sums to " +
                          std::to_string(sum) + ")");
    }
  }
  return reduce_sum(mul(gates, tokens), 0);
}

Tensor FusionModel::encode(Tensor tokens, AttentionTrace* trace,
                           DropoutState* dropout_state) const {
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Tensor normed = layer_norm(tokens, ln_gain_[l], ln_bias_[l]);
    Tensor attended = multi_head(normed, l, trace);
    if (dropout_state != nullptr && dropout_state->rate > 0.0) {
      attended = dropout(attended, dropout_state->rate, *dropout_state->rng);
    }
    tokens = add(tokens, attended);
  }
  if (config_.layers > 0) {
    tokens = layer_norm(tokens, final_gain_, final_bias_);
  }
  return tokens;
}

Tensor FusionModel::forward(const RawModalFeatures& raw, AttentionTrace* trace,
                            DropoutState* dropout_state) const {
  Tensor tokens = encode(project(raw), trace, dropout_state);
  return gated_fuse(modality_gates(tokens), tokens);
}

Tensor FusionModel::forward_batch(std::span<const RawModalFeatures> raw,
                                  DropoutState* dropout_state) const {
  if (raw.empty()) throw ContractError("forward_batch: no inputs");
  const std::size_t batch = raw.size();
  const std::size_t dims[3] = {config_.visual_dim, config_.text_dim,
                               config_.audio_dim};

  // One V x dim matrix per modality; token m of item i lives in row i of tok[m].
  Tensor tok[3];
  for (int m = 0; m < 3; ++m) {
    std::vector<double> data;
    data.reserve(batch * dims[m]);
    for (const RawModalFeatures& r : raw) {
      const std::vector<double>& x =
          m == 0 ? r.visual : (m == 1 ? r.text : r.audio);
      if (x.size() != dims[m]) {
        throw DimensionError(std::string("forward_batch: ") +
                             kModalityNames[m] + " feature length " +
                             std::to_string(x.size()) + ", expected " +
                             std::to_string(dims[m]));
      }
      data.insert(data.end(), x.begin(), x.end());
    }
    tok[m] = add_rowwise(matmul(Tensor::matrix(batch, dims[m], std::move(data)),
                                proj_w_[m]),
                         proj_b_[m]);
  }

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Tensor normed[3];
    for (int m = 0; m < 3; ++m) {
      normed[m] = layer_norm(tok[m], ln_gain_[l], ln_bias_[l]);
    }
    Tensor attended[3];
    for (int m1 = 0; m1 < 3; ++m1) {
      std::vector<Tensor> head_outputs;
      head_outputs.reserve(config_.heads);
      for (std::size_t h = 0; h < config_.heads; ++h) {
        Tensor q = matmul(normed[m1], wq_[l][h]);
        Tensor k[3], v[3];
        for (int m2 = 0; m2 < 3; ++m2) {
          k[m2] = matmul(normed[m2], wk_[l][h]);
          v[m2] = matmul(normed[m2], wv_[l][h]);
        }
        std::vector<Tensor> scores;
        scores.reserve(3);
        for (int m2 = 0; m2 < 3; ++m2) {
          scores.push_back(scale(rowwise_dot(q, k[m2]), inv_sqrt_dk));
        }
        Tensor alpha =
            rowwise_softmax(concat(std::span<const Tensor>(scores), 1));
        Tensor mixed;
        for (int m2 = 0; m2 < 3; ++m2) {
          Tensor weighted = scale_rows(
              v[m2], slice_cols(alpha, static_cast<std::size_t>(m2),
                                static_cast<std::size_t>(m2) + 1));
          mixed = m2 == 0 ? weighted : add(mixed, weighted);
        }
        head_outputs.push_back(mixed);
      }
      attended[m1] =
          matmul(concat(std::span<const Tensor>(head_outputs), 1), wo_[l]);
      if (dropout_state != nullptr && dropout_state->rate > 0.0) {
        attended[m1] =
            dropout(attended[m1], dropout_state->rate, *dropout_state->rng);
      }
    }
    for (int m = 0; m < 3; ++m) tok[m] = add(tok[m], attended[m]);
  }
  if (config_.layers > 0) {
    for (int m = 0; m < 3; ++m) {
      tok[m] = layer_norm(tok[m], final_gain_, final_bias_);
    }
  }

  // Per-dimension softmax over the three modality gate logits.
  Tensor logits[3];
  for (int m = 0; m < 3; ++m) {
    Tensor z = matmul(tok[0], gate_w_[m][0]);
    for (int s = 1; s < 3; ++s) z = add(z, matmul(tok[s], gate_w_[m][s]));
    logits[m] = add_rowwise(z, gate_b_[m]);
  }
  Tensor peak = maximum(maximum(logits[0], logits[1]), logits[2]);
  Tensor exps[3];
  for (int m = 0; m < 3; ++m) exps[m] = exp_elem(sub(logits[m], peak));
  Tensor denom = add(add(exps[0], exps[1]), exps[2]);
  Tensor fused;
  for (int m = 0; m < 3; ++m) {
    Tensor contribution = mul(div_elem(exps[m], denom), tok[m]);
    fused = m == 0 ? contribution : add(fused, contribution);
  }
  return fused;
}

std::vector<NamedParam> FusionModel::parameters() {
  std::vector<NamedParam> out;
  for (int m = 0; m < 3; ++m) {
    out.push_back({std::string("fusion/proj_w_") + kModalityNames[m], proj_w_[m]});
    out.push_back({std::string("fusion/proj_b_") + kModalityNames[m], proj_b_[m]});
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "fusion/l" + std::to_string(l) + "/";
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const std::string hp = p + "h" + std::to_string(h) + "/";
      out.push_back({hp + "wq", wq_[l][h]});
      out.push_back({hp + "wk", wk_[l][h]});
      out.push_back({hp + "wv", wv_[l][h]});
    }
    out.push_back({p + "wo", wo_[l]});
    out.push_back({p + "ln_gain", ln_gain_[l]});
    out.push_back({p + "ln_bias", ln_bias_[l]});
  }
  if (config_.layers > 0) {
    out.push_back({"fusion/final_gain", final_gain_});
    out.push_back({"fusion/final_bias", final_bias_});
  }
  for (int m = 0; m < 3; ++m) {
    for (int s = 0; s < 3; ++s) {
      out.push_back({std::string("fusion/gate_w_") + kModalityNames[m] + "_" +
                         kModalityNames[s],
                     gate_w_[m][s]});
    }
    out.push_back({std::string("fusion/gate_b_") + kModalityNames[m], gate_b_[m]});
  }
  return out;
}

void write_attention_csv(const AttentionTrace& trace, std::ostream& os) {
  if (trace.empty()) {
    throw StateError("write_attention_csv: no attention trace recorded");
  }
  os << "layer,head,from,w_visual,w_text,w_audio\n";
  char buf[32];
  for (const AttentionTraceEntry& e : trace) {
    for (int i = 0; i < 3; ++i) {
      os << e.layer << ',' << e.head << ',' << kModalityNames[i];
      for (int j = 0; j < 3; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.weights[i][j]);
        os << ',' << buf;
      }
      os << '\n';
    }
  }
}

}  // namespace mtdqn
