#include "dconv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace dconv {

std::vector<int> rank_group(const RankedGroup& group) {
  std::vector<int> order(group.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return group.candidates[a].score > group.candidates[b].score;
  });
  return order;
}

static int positives_in(const RankedGroup& g) {
  int n = 0;
  for (const auto& c : g.candidates) n += c.label;
  return n;
}

int count_zero_positive_groups(std::span<const RankedGroup> groups) {
  int n = 0;
  for (const auto& g : groups)
    if (positives_in(g) == 0) ++n;
  return n;
}

double recall_at_k(std::span<const RankedGroup> groups, int n, int k) {
  double sum = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    if (static_cast<int>(g.candidates.size()) != n)
      throw std::invalid_argument("recall_at_k: group " + std::to_string(g.group_id) +
                                  " has " + std::to_string(g.candidates.size()) +
                                  " candidates, expected " + std::to_string(n));
    const int total = positives_in(g);
    if (total == 0) continue;
    const auto order = rank_group(g);
    int hits = 0;
    for (int r = 0; r < k && r < static_cast<int>(order.size()); ++r)
      hits += g.candidates[order[r]].label;
    sum += static_cast<double>(hits) / total;
    ++used;
  }
  return used ? sum / used : 0.0;
}

double mean_reciprocal_rank(std::span<const RankedGroup> groups) {
  double sum = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    if (positives_in(g) == 0) continue;
    const auto order = rank_group(g);
    for (size_t r = 0; r < order.size(); ++r) {
      if (g.candidates[order[r]].label == 1) {
        sum += 1.0 / static_cast<double>(r + 1);
        break;
      }
    }
    ++used;
  }
  return used ? sum / used : 0.0;
}

double mean_average_precision(std::span<const RankedGroup> groups) {
  double sum = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    if (positives_in(g) == 0) continue;
    const auto order = rank_group(g);
    double ap = 0.0;
    int hits = 0;
    for (size_t r = 0; r < order.size(); ++r) {
      if (g.candidates[order[r]].label == 1) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    sum += ap / hits;
    ++used;
  }
  return used ? sum / used : 0.0;
}

double precision_at_1(std::span<const RankedGroup> groups) {
  double sum = 0.0;
  int used = 0;
  for (const auto& g : groups) {
    if (positives_in(g) == 0) continue;
    const auto order = rank_group(g);
    sum += g.candidates[order[0]].label;
    ++used;
  }
  return used ? sum / used : 0.0;
}

double compute_metric(const std::string& name, std::span<const RankedGroup> groups) {
  if (name == "MAP") return mean_average_precision(groups);
  if (name == "MRR") return mean_reciprocal_rank(groups);
  if (name == "P@1") return precision_at_1(groups);
  if (name.size() > 1 && name[0] == 'R') {
    const size_t at = name.find('@');
    if (at != std::string::npos && at > 1) {
      const int n = std::stoi(name.substr(1, at - 1));
      const int k = std::stoi(name.substr(at + 1));
      return recall_at_k(groups, n, k);
    }
  }
  throw std::invalid_argument("unknown metric '" + name +
                              "' (expected R<n>@<k>, MAP, MRR or P@1)");
}

std::vector<std::string> default_metrics(int candidates_per_group) {
  const std::string n = std::to_string(candidates_per_group);
  if (candidates_per_group == 4)
    return {"R4@1", "R4@2", "MRR"};
  return {"R" + n + "@1", "R" + n + "@2", "R" + n + "@5", "MAP", "MRR", "P@1"};
}

double MetricReport::get(const std::string& name) const {
  for (const auto& [k, v] : values)
    if (k == name) return v;
  throw std::invalid_argument("metric '" + name + "' not in report");
}

std::string MetricReport::table(const std::string& row_label) const {
  std::ostringstream os;
  os << std::left << std::setw(8) << "";
  for (const auto& [k, v] : values) os << std::setw(10) << k;
  os << "\n" << std::setw(8) << row_label;
  os << std::fixed << std::setprecision(4);
  for (const auto& [k, v] : values) os << std::setw(10) << v;
  os << "\n";
  return os.str();
}

std::string MetricReport::key_values(const std::string& prefix) const {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& [k, v] : values) os << prefix << "." << k << "=" << v << "\n";
  os << prefix << ".groups=" << groups << "\n";
  os << prefix << ".skipped_no_positive=" << skipped_no_positive << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<RankedGroup> score_corpus(ModelParams& params, const Vocabulary& vocab,
                                      const Corpus& corpus, const EvalOptions& options) {
  const auto& instances = corpus.instances;
  std::vector<double> scores(instances.size(), 0.0);

  auto score_range = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      DialogueInstance inst = instances[i];
      if (options.perturb_seed)
        inst = perturb_shuffle(inst, *options.perturb_seed +
                                         static_cast<uint64_t>(inst.group_id));
      const Stacked s = stack_instance(inst, vocab, params.config);
      scores[i] = score_value(params, s.ids, s.mask);
    }
  };

  const int threads = std::max(1, options.threads);
  if (threads == 1 || instances.size() < 2) {
    score_range(0, instances.size());
  } else {
    // Parameters are read-only here; each worker forwards on its own tape.
    std::vector<std::thread> pool;
    const size_t chunk = (instances.size() + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
      const size_t begin = w * chunk;
      const size_t end = std::min(instances.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(score_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  std::vector<RankedGroup> groups;
  for (size_t i = 0; i < instances.size(); ++i) {
    if (groups.empty() || groups.back().group_id != instances[i].group_id) {
      groups.push_back(RankedGroup{instances[i].group_id, {}});
    }
    groups.back().candidates.push_back({scores[i], instances[i].label});
  }
  return groups;
}

MetricReport evaluate_run(ModelParams& params, const Vocabulary& vocab,
                          const Corpus& corpus, const EvalOptions& options) {
  const auto groups = score_corpus(params, vocab, corpus, options);

  std::vector<std::string> metric_names = options.metrics;
  if (metric_names.empty() && !groups.empty())
    metric_names = default_metrics(static_cast<int>(groups[0].candidates.size()));

  MetricReport report;
  report.groups = static_cast<int>(groups.size());
  report.skipped_no_positive = count_zero_positive_groups(groups);
  for (const auto& name : metric_names)
    report.values.emplace_back(name, compute_metric(name, groups));
  return report;
}

}  // namespace dconv
