#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtdqn/error.hpp"

namespace mtdqn::metrics {

struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;
  long long tn = 0;
};

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when any 0/0 ratio was coerced to 0.
  bool degenerate = false;
};

PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& counts);

// Items in recommended order with their relevance scores.
struct RankedList {
  std::vector<int> ids;
  std::vector<double> relevance;
};

// DCG_k = sum_i (2^r_i - 1)/log2(i+1), normalized by the ideal ordering.
// All-zero relevance yields 0.
double ndcg_at_k(const RankedList& ranked, std::size_t k);

double mse(std::span<const double> actual, std::span<const double> predicted);
double mae(std::span<const double> actual, std::span<const double> predicted);

struct HitRateResult {
  double rate = 0.0;                      // fraction of lists with a top-k hit
  std::vector<double> position_rates;     // per-position hit frequency, 1..k
};

// recommended: per impression, item ids in ranked order.
// positives: per impression, the realized-positive item ids.
HitRateResult hit_rate_at_k(std::span<const std::vector<int>> recommended,
                            std::span<const std::vector<int>> positives,
                            std::size_t k);

// Mean pairwise cosine similarity of the item feature vectors; diversity is
// reported elsewhere as 1 - ILS. Requires >= 2 items.
double intra_list_similarity(std::span<const std::vector<double>> items);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace mtdqn::metrics
