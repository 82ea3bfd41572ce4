#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mtdqn/metrics.hpp"
#include "mtdqn/rng.hpp"

using namespace mtdqn;
using namespace mtdqn::metrics;

namespace {

// Independent brute-force NDCG: explicit DCG loop plus a full sort for the
// ideal ordering.
double oracle_ndcg(const std::vector<double>& rel, std::size_t k) {
  auto dcg = [&](const std::vector<double>& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < std::min(k, r.size()); ++i) {
      acc += (std::pow(2.0, r[i]) - 1.0) / (std::log(static_cast<double>(i + 2)) / std::log(2.0));
    }
    return acc;
  };
  std::vector<double> ideal = rel;
  std::sort(ideal.rbegin(), ideal.rend());
  const double idcg = dcg(ideal);
  return idcg == 0.0 ? 0.0 : dcg(rel) / idcg;
}

}  // namespace

TEST_CASE("precision/recall/f1 worked cases") {
  auto perfect = precision_recall_f1({5, 0, 0, 3});
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK_FALSE(perfect.degenerate);

  auto mixed = precision_recall_f1({2, 1, 1, 0});
  CHECK(mixed.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(mixed.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(mixed.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  auto empty = precision_recall_f1({0, 0, 0, 4});
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
  CHECK(empty.degenerate);
}

TEST_CASE("f1 is symmetric under swapping FP and FN") {
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const long long tp = static_cast<long long>(rng.uniform_int(20));
    const long long fp = static_cast<long long>(rng.uniform_int(20));
    const long long fn = static_cast<long long>(rng.uniform_int(20));
    auto a = precision_recall_f1({tp, fp, fn, 0});
    auto b = precision_recall_f1({tp, fn, fp, 0});
    CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-15));
  }
}

TEST_CASE("ndcg worked cases") {
  // Ideal descending order -> 1.
  CHECK(ndcg_at_k({{1, 2, 3}, {3, 2, 1}}, 3) == doctest::Approx(1.0).epsilon(1e-15));
  // ranked [0, 3] at k = 2 -> (7/log2(3))/7 ~= 0.6309.
  const double got = ndcg_at_k({{1, 2}, {0, 3}}, 2);
  CHECK(got == doctest::Approx(0.63092975357145753).epsilon(1e-12));
  CHECK(ndcg_at_k({{1, 2}, {0, 0}}, 2) == 0.0);
  CHECK_THROWS_AS(ndcg_at_k({{1}, {1}}, 0), ContractError);
}

TEST_CASE("ndcg matches brute-force oracle on 1000 random instances") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(8);
    RankedList list;
    for (std::size_t i = 0; i < n; ++i) {
      list.ids.push_back(static_cast<int>(rng.uniform_int(1000)));
      list.relevance.push_back(static_cast<double>(rng.uniform_int(4)));
    }
    const std::size_t k = 1 + rng.uniform_int(n + 2);
    const double mine = ndcg_at_k(list, k);
    const double oracle = oracle_ndcg(list.relevance, k);
    CHECK(std::abs(mine - oracle) <= 1e-12);
  }
}

TEST_CASE("ndcg is invariant under item id relabeling, 1 iff descending") {
  Rng rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(6);
    RankedList list;
    for (std::size_t i = 0; i < n; ++i) {
      list.ids.push_back(static_cast<int>(i));
      list.relevance.push_back(static_cast<double>(rng.uniform_int(4)));
    }
    RankedList relabeled = list;
    for (int& id : relabeled.ids) id += 5000;
    CHECK(ndcg_at_k(list, n) == ndcg_at_k(relabeled, n));

    const bool descending =
        std::is_sorted(list.relevance.begin(), list.relevance.end(),
                       std::greater<double>());
    const bool all_zero =
        std::all_of(list.relevance.begin(), list.relevance.end(),
                    [](double r) { return r == 0.0; });
    if (all_zero) continue;
    if (descending) {
      CHECK(ndcg_at_k(list, n) == doctest::Approx(1.0).epsilon(1e-12));
    }
    if (std::abs(ndcg_at_k(list, n) - 1.0) < 1e-12) {
      // Equality can only happen when the order is relevance-descending
      // up to ties; verify by comparing multisets position by position.
      std::vector<double> sorted = list.relevance;
      std::sort(sorted.rbegin(), sorted.rend());
      CHECK(sorted == list.relevance);
    }
  }
}

TEST_CASE("mse and mae worked cases") {
  std::vector<double> a{1, 2, 3};
  CHECK(mse(a, a) == 0.0);
  CHECK(mae(a, a) == 0.0);
  std::vector<double> y{0, 2}, yhat{1, 1};
  CHECK(mse(y, yhat) == 1.0);
  CHECK(mae(y, yhat) == 1.0);
  std::vector<double> one_a{3}, one_b{1};
  CHECK(mse(one_a, one_b) == 4.0);
  CHECK_THROWS_AS(mse(a, y), DimensionError);
}

TEST_CASE("mae <= sqrt(mse) on random inputs") {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(10);
    std::vector<double> y(n), yhat(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(-5, 5);
      yhat[i] = rng.uniform(-5, 5);
    }
    CHECK(mae(y, yhat) <= std::sqrt(mse(y, yhat)) + 1e-12);
  }
}

TEST_CASE("mse/mae match direct loops on 1000 random instances") {
  Rng rng(43);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(12);
    std::vector<double> y(n), yhat(n);
    double sq = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(-3, 3);
      yhat[i] = rng.uniform(-3, 3);
      sq += (y[i] - yhat[i]) * (y[i] - yhat[i]);
      ab += std::abs(y[i] - yhat[i]);
    }
    CHECK(std::abs(mse(y, yhat) - sq / static_cast<double>(n)) <= 1e-12);
    CHECK(std::abs(mae(y, yhat) - ab / static_cast<double>(n)) <= 1e-12);
  }
}

TEST_CASE("hit rate worked cases") {
  std::vector<std::vector<int>> lists{{1, 2, 3}, {4, 5, 6}};
  std::vector<std::vector<int>> positives{{1}, {4}};
  auto r = hit_rate_at_k(lists, positives, 3);
  CHECK(r.rate == 1.0);
  CHECK(r.position_rates[0] == 1.0);
  CHECK(r.position_rates[1] == 0.0);

  std::vector<std::vector<int>> none{{}, {}};
  CHECK(hit_rate_at_k(lists, none, 3).rate == 0.0);
  CHECK_THROWS_AS(hit_rate_at_k(lists, positives, 0), ContractError);
}

TEST_CASE("hit rate matches brute-force set intersection on random corpora") {
  Rng rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<int>> lists, positives;
    for (int i = 0; i < 100; ++i) {
      std::vector<int> list;
      for (int j = 0; j < 6; ++j) list.push_back(static_cast<int>(rng.uniform_int(30)));
      std::vector<int> pos;
      for (int j = 0; j < 3; ++j) pos.push_back(static_cast<int>(rng.uniform_int(30)));
      lists.push_back(list);
      positives.push_back(pos);
    }
    const std::size_t k = 1 + rng.uniform_int(6);
    auto mine = hit_rate_at_k(lists, positives, k);
    int hits = 0;
    for (std::size_t i = 0; i < lists.size(); ++i) {
      std::set<int> top(lists[i].begin(),
                        lists[i].begin() + static_cast<std::ptrdiff_t>(
                                               std::min(k, lists[i].size())));
      std::set<int> pos(positives[i].begin(), positives[i].end());
      std::vector<int> overlap;
      std::set_intersection(top.begin(), top.end(), pos.begin(), pos.end(),
                            std::back_inserter(overlap));
      if (!overlap.empty()) ++hits;
    }
    CHECK(mine.rate == doctest::Approx(hits / 100.0).epsilon(1e-15));
  }
}

TEST_CASE("hit rate is monotone non-decreasing in k") {
  Rng rng(53);
  std::vector<std::vector<int>> lists, positives;
  for (int i = 0; i < 50; ++i) {
    std::vector<int> list;
    for (int j = 0; j < 8; ++j) list.push_back(static_cast<int>(rng.uniform_int(40)));
    positives.push_back({static_cast<int>(rng.uniform_int(40)),
                         static_cast<int>(rng.uniform_int(40))});
    lists.push_back(list);
  }
  double prev = 0.0;
  for (std::size_t k = 1; k <= 8; ++k) {
    const double rate = hit_rate_at_k(lists, positives, k).rate;
    CHECK(rate >= prev - 1e-15);
    prev = rate;
  }
}

TEST_CASE("intra-list similarity") {
  std::vector<std::vector<double>> identical{{1, 2}, {1, 2}, {1, 2}};
  CHECK(intra_list_similarity(identical) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<std::vector<double>> orthogonal{{1, 0}, {0, 1}};
  CHECK(intra_list_similarity(orthogonal) == 0.0);

  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  std::vector<std::vector<double>> pair{{1, 0}, {inv_sqrt2, inv_sqrt2}};
  CHECK(intra_list_similarity(pair) ==
        doctest::Approx(inv_sqrt2).epsilon(1e-12));

  CHECK_THROWS_AS(intra_list_similarity(std::vector<std::vector<double>>{{1.0}}),
                  DegenerateInputError);
}
