// Grouped candidate ranking and the ranking metrics Rn@k, MAP, MRR and P@1.
// Groups without a positive candidate cannot contribute to any of the means;
// they are skipped and counted (multi-positive groups are fine).

#pragma once

#include "dconv/data.hpp"
#include "dconv/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dconv {

struct ScoredCandidate {
  double score = 0.0;
  int label = 0;
};

struct RankedGroup {
  int group_id = 0;
  std::vector<ScoredCandidate> candidates;
};

// Candidate indices sorted by descending score; ties keep original order.
std::vector<int> rank_group(const RankedGroup& group);

// Mean over groups of (#positives in top-k / #positives in group). Every
// group must have exactly n candidates.
double recall_at_k(std::span<const RankedGroup> groups, int n, int k);

double mean_reciprocal_rank(std::span<const RankedGroup> groups);
double mean_average_precision(std::span<const RankedGroup> groups);
double precision_at_1(std::span<const RankedGroup> groups);

int count_zero_positive_groups(std::span<const RankedGroup> groups);

// Metric names: "R<n>@<k>" (e.g. R10@1), "MAP", "MRR", "P@1".
double compute_metric(const std::string& name, std::span<const RankedGroup> groups);
std::vector<std::string> default_metrics(int candidates_per_group);

struct MetricReport {
  std::vector<std::pair<std::string, double>> values;
  int groups = 0;
  int skipped_no_positive = 0;

  double get(const std::string& name) const;
  std::string table(const std::string& row_label) const;   // human-readable
  std::string key_values(const std::string& prefix) const; // machine-readable
};

struct EvalOptions {
  std::vector<std::string> metrics;          // empty = pick by group size
  std::optional<uint64_t> perturb_seed;      // shuffle contexts before scoring
  int threads = 1;
};

// Scores every candidate with the model, assembles ranked groups, computes
// the requested metrics. Perturbation draws one permutation per group so all
// candidates of a context see the same shuffled order.
std::vector<RankedGroup> score_corpus(ModelParams& params, const Vocabulary& vocab,
                                      const Corpus& corpus, const EvalOptions& options);
MetricReport evaluate_run(ModelParams& params, const Vocabulary& vocab,
                          const Corpus& corpus, const EvalOptions& options);

}  // namespace dconv
