#include "mtdqn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mtdqn::metrics {

PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) {
    throw ValidationError("precision_recall_f1: negative count");
  }
  PrecisionRecallF1 out;
  if (c.tp + c.fp == 0) {
    out.degenerate = true;
  } else {
    out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    out.degenerate = true;
  } else {
    out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  if (out.precision + out.recall == 0.0) {
    out.degenerate = true;
  } else {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

namespace {

double dcg(std::span<const double> relevance, std::size_t k) {
  double acc = 0.0;
  const std::size_t n = std::min(k, relevance.size());
  for (std::size_t i = 0; i < n; ++i) {
    acc += (std::pow(2.0, relevance[i]) - 1.0) /
           std::log2(static_cast<double>(i) + 2.0);
  }
  return acc;
}

}  // namespace

double ndcg_at_k(const RankedList& ranked, std::size_t k) {
  if (k == 0) throw ContractError("ndcg_at_k: k must be >= 1");
  if (ranked.ids.size() != ranked.relevance.size()) {
    throw DimensionError("ndcg_at_k: ids/relevance length mismatch");
  }
  for (double r : ranked.relevance) {
    if (!std::isfinite(r) || r < 0.0) {
      throw ValidationError("ndcg_at_k: relevance must be finite and >= 0");
    }
  }
  std::vector<double> ideal(ranked.relevance.begin(), ranked.relevance.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<double>());
  const double idcg = dcg(ideal, k);
  if (idcg == 0.0) return 0.0;
  return dcg(ranked.relevance, k) / idcg;
}

double mse(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) {
    throw DimensionError("mse: length mismatch");
  }
  if (actual.empty()) throw DegenerateInputError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double d = actual[i] - predicted[i];
    acc += d * d;
  }
  return acc / static_cast<double>(actual.size());
}

double mae(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) {
    throw DimensionError("mae: length mismatch");
  }
  if (actual.empty()) throw DegenerateInputError("mae: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    acc += std::abs(actual[i] - predicted[i]);
  }
  return acc / static_cast<double>(actual.size());
}

HitRateResult hit_rate_at_k(std::span<const std::vector<int>> recommended,
                            std::span<const std::vector<int>> positives,
                            std::size_t k) {
  if (k == 0) throw ContractError("hit_rate_at_k: k must be >= 1");
  if (recommended.size() != positives.size()) {
    throw DimensionError("hit_rate_at_k: list/positive-set count mismatch");
  }
  HitRateResult out;
  out.position_rates.assign(k, 0.0);
  if (recommended.empty()) return out;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < recommended.size(); ++i) {
    std::unordered_set<int> pos(positives[i].begin(), positives[i].end());
    bool hit = false;
    const std::size_t depth = std::min(k, recommended[i].size());
    for (std::size_t j = 0; j < depth; ++j) {
      if (pos.count(recommended[i][j])) {
        hit = true;
        out.position_rates[j] += 1.0;
      }
    }
    if (hit) ++hits;
  }
  const double n = static_cast<double>(recommended.size());
  out.rate = static_cast<double>(hits) / n;
  for (double& r : out.position_rates) r /= n;
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: length mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double intra_list_similarity(std::span<const std::vector<double>> items) {
  if (items.size() < 2) {
    throw DegenerateInputError("intra_list_similarity: needs >= 2 items");
  }
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      acc += cosine_similarity(items[i], items[j]);
      ++pairs;
    }
  }
  return acc / static_cast<double>(pairs);
}

}  // namespace mtdqn::metrics
