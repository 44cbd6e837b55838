#include "doctest.h"

#include "dconv/metrics.hpp"

#include <algorithm>
#include <cmath>

using namespace dconv;

namespace {

// ---------------------------------------------------------------------------
// Definition-level oracles, written independently of the library path: they
// sort (score, index) pairs with std::sort and walk the definitions directly.

std::vector<int> oracle_order(const RankedGroup& g) {
  std::vector<std::pair<double, int>> keyed;
  for (size_t i = 0; i < g.candidates.size(); ++i)
    keyed.emplace_back(-g.candidates[i].score, static_cast<int>(i));
  std::sort(keyed.begin(), keyed.end());
  std::vector<int> order;
  for (const auto& [key, idx] : keyed) order.push_back(idx);
  return order;
}

int oracle_positives(const RankedGroup& g) {
  int n = 0;
  for (const auto& c : g.candidates) n += c.label;
  return n;
}

double oracle_recall(const std::vector<RankedGroup>& groups, int k) {
  double total = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    const int pos = oracle_positives(g);
    if (pos == 0) continue;
    const auto order = oracle_order(g);
    int hits = 0;
    for (int r = 0; r < k; ++r) hits += g.candidates[order[r]].label;
    total += double(hits) / pos;
    ++used;
  }
  return total / used;
}

double oracle_mrr(const std::vector<RankedGroup>& groups) {
  double total = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    if (oracle_positives(g) == 0) continue;
    const auto order = oracle_order(g);
    for (size_t r = 0; r < order.size(); ++r)
      if (g.candidates[order[r]].label) {
        total += 1.0 / (r + 1);
        break;
      }
    ++used;
  }
  return total / used;
}

double oracle_map(const std::vector<RankedGroup>& groups) {
  double total = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    if (oracle_positives(g) == 0) continue;
    const auto order = oracle_order(g);
    double ap = 0.0;
    int hits = 0;
    for (size_t r = 0; r < order.size(); ++r)
      if (g.candidates[order[r]].label) {
        ++hits;
        ap += double(hits) / (r + 1);
      }
    total += ap / hits;
    ++used;
  }
  return total / used;
}

double oracle_p1(const std::vector<RankedGroup>& groups) {
  double total = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    if (oracle_positives(g) == 0) continue;
    total += g.candidates[oracle_order(g)[0]].label;
    ++used;
  }
  return total / used;
}

// Random groups with distinct scores so that stable and plain sorts agree.
std::vector<RankedGroup> random_groups(int count, int size, uint64_t seed) {
  Rng rng(seed);
  std::vector<RankedGroup> groups(count);
  for (int i = 0; i < count; ++i) {
    groups[i].group_id = i;
    std::vector<double> scores;
    for (int c = 0; c < size; ++c) {
      double s;
      do {
        s = rng.unit();
      } while (std::find(scores.begin(), scores.end(), s) != scores.end());
      scores.push_back(s);
    }
    const int n_pos = 1 + rng.below(2);  // 1 or 2 positives
    for (int c = 0; c < size; ++c)
      groups[i].candidates.push_back({scores[c], c < n_pos ? 1 : 0});
    rng.shuffle(groups[i].candidates);
  }
  return groups;
}

RankedGroup group_from(std::vector<double> scores, std::vector<int> labels) {
  RankedGroup g;
  for (size_t i = 0; i < scores.size(); ++i) g.candidates.push_back({scores[i], labels[i]});
  return g;
}

}  // namespace

TEST_CASE("rank_group sorts by descending score with stable ties") {
  const RankedGroup g = group_from({0.1, 0.9, 0.5}, {0, 1, 0});
  CHECK(rank_group(g) == std::vector<int>{1, 2, 0});

  const RankedGroup ties = group_from({0.3, 0.3, 0.3}, {0, 1, 0});
  CHECK(rank_group(ties) == std::vector<int>{0, 1, 2});

  for (int trial = 0; trial < 50; ++trial) {
    const auto groups = random_groups(1, 10, 100 + trial);
    CHECK(rank_group(groups[0]) == oracle_order(groups[0]));
  }
}

TEST_CASE("recall_at_k hand cases") {
  // positive ranked first
  std::vector<RankedGroup> g1 = {group_from({0.9, 0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1},
                                            {1, 0, 0, 0, 0, 0, 0, 0, 0, 0})};
  CHECK(recall_at_k(g1, 10, 1) == 1.0);

  // positive ranked second
  std::vector<RankedGroup> g2 = {group_from({0.5, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1},
                                            {1, 0, 0, 0, 0, 0, 0, 0, 0, 0})};
  CHECK(recall_at_k(g2, 10, 1) == 0.0);
  CHECK(recall_at_k(g2, 10, 2) == 1.0);

  CHECK_THROWS_WITH_AS(recall_at_k(g2, 8, 1), doctest::Contains("candidates"),
                       std::invalid_argument);
}

TEST_CASE("mrr and map hand cases") {
  // first positive at rank 3 -> MRR 1/3
  std::vector<RankedGroup> g = {group_from({0.9, 0.8, 0.7, 0.1}, {0, 0, 1, 0})};
  CHECK(mean_reciprocal_rank(g) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  // labels in rank order [1,0,1,0] -> AP = (1/1 + 2/3)/2
  std::vector<RankedGroup> g2 = {group_from({0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0})};
  CHECK(mean_average_precision(g2) == doctest::Approx(5.0 / 6).epsilon(1e-12));

  // single positive at rank 1
  std::vector<RankedGroup> g3 = {group_from({0.9, 0.8}, {1, 0})};
  CHECK(mean_average_precision(g3) == 1.0);
  CHECK(mean_reciprocal_rank(g3) == 1.0);
}

TEST_CASE("precision_at_1 hand cases") {
  std::vector<RankedGroup> groups;
  groups.push_back(group_from({0.9, 0.1}, {1, 0}));
  groups.push_back(group_from({0.9, 0.1}, {1, 0}));
  groups.push_back(group_from({0.9, 0.1}, {1, 0}));
  groups.push_back(group_from({0.1, 0.9}, {1, 0}));
  CHECK(precision_at_1(groups) == 0.75);

  std::vector<RankedGroup> none;
  none.push_back(group_from({0.1, 0.9}, {1, 0}));
  CHECK(precision_at_1(none) == 0.0);
}

TEST_CASE("all metrics match the oracles on 1,000 randomized groups") {
  const auto groups = random_groups(1000, 10, 2024);
  CHECK(std::abs(recall_at_k(groups, 10, 1) - oracle_recall(groups, 1)) <= 1e-12);
  CHECK(std::abs(recall_at_k(groups, 10, 2) - oracle_recall(groups, 2)) <= 1e-12);
  CHECK(std::abs(recall_at_k(groups, 10, 5) - oracle_recall(groups, 5)) <= 1e-12);
  CHECK(std::abs(mean_reciprocal_rank(groups) - oracle_mrr(groups)) <= 1e-12);
  CHECK(std::abs(mean_average_precision(groups) - oracle_map(groups)) <= 1e-12);
  CHECK(std::abs(precision_at_1(groups) - oracle_p1(groups)) <= 1e-12);
}

TEST_CASE("recall is monotone in k and all metrics stay in [0,1]") {
  const auto groups = random_groups(200, 10, 7);
  double prev = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const double r = recall_at_k(groups, 10, k);
    CHECK(r >= prev);
    CHECK(r <= 1.0);
    prev = r;
  }
  for (const char* name : {"MAP", "MRR", "P@1"}) {
    const double v = compute_metric(name, groups);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("metrics are invariant under strictly increasing score transforms") {
  const auto groups = random_groups(100, 10, 11);
  auto transform = [&](double (*f)(double)) {
    auto out = groups;
    for (auto& g : out)
      for (auto& c : g.candidates) c.score = f(c.score);
    return out;
  };

  for (auto f : {+[](double x) { return 3.0 * x + 2.0; },
                 +[](double x) { return std::exp(x); },
                 +[](double x) { return std::tanh(4.0 * x); }}) {
    const auto mapped = transform(f);
    for (const char* name : {"R10@1", "R10@2", "R10@5", "MAP", "MRR", "P@1"})
      CHECK(compute_metric(name, groups) == compute_metric(name, mapped));
  }
}

TEST_CASE("zero-positive groups are skipped and counted") {
  std::vector<RankedGroup> groups;
  groups.push_back(group_from({0.9, 0.1}, {1, 0}));
  groups.push_back(group_from({0.9, 0.1}, {0, 0}));  // no positive
  CHECK(count_zero_positive_groups(groups) == 1);
  CHECK(mean_average_precision(groups) == 1.0);
  CHECK(mean_reciprocal_rank(groups) == 1.0);
  CHECK(recall_at_k(groups, 2, 1) == 1.0);
}

TEST_CASE("a perfect scorer reaches 1.0 on every metric") {
  Rng rng(13);
  std::vector<RankedGroup> groups;
  for (int i = 0; i < 50; ++i) {
    RankedGroup g;
    g.group_id = i;
    for (int c = 0; c < 10; ++c) g.candidates.push_back({0.0, 0});
    g.candidates[rng.below(10)].label = 1;
    for (auto& c : g.candidates) c.score = c.label;  // score equals label
    groups.push_back(g);
  }
  for (const char* name : {"R10@1", "R10@2", "R10@5", "MAP", "MRR", "P@1"})
    CHECK(compute_metric(name, groups) == 1.0);
}

TEST_CASE("a constant scorer resolves by stable tie-break") {
  Rng rng(17);
  std::vector<RankedGroup> groups;
  int positive_at_front = 0;
  for (int i = 0; i < 400; ++i) {
    RankedGroup g;
    g.group_id = i;
    for (int c = 0; c < 10; ++c) g.candidates.push_back({0.5, 0});
    const int pos = rng.below(10);
    g.candidates[pos].label = 1;
    if (pos == 0) ++positive_at_front;
    groups.push_back(g);
  }
  CHECK(recall_at_k(groups, 10, 1) ==
        doctest::Approx(double(positive_at_front) / 400).epsilon(1e-15));
}

TEST_CASE("metric report formats") {
  MetricReport report;
  report.values = {{"R10@1", 0.5}, {"MRR", 0.75}};
  report.groups = 8;
  report.skipped_no_positive = 1;

  const std::string table = report.table("Norm");
  CHECK(table.find("R10@1") != std::string::npos);
  CHECK(table.find("Norm") != std::string::npos);

  const std::string kv = report.key_values("norm");
  CHECK(kv.find("norm.R10@1=0.5") != std::string::npos);
  CHECK(kv.find("norm.MRR=0.75") != std::string::npos);
  CHECK(kv.find("norm.groups=8") != std::string::npos);
  CHECK(report.get("MRR") == 0.75);
  CHECK_THROWS_AS(report.get("nope"), std::invalid_argument);
}
