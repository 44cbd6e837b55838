// Corpus ingestion, vocabulary and embedding management, stacking dialogues
// into the fixed (turns, words) grid, structure perturbation, and synthetic
// corpus generation for desk-scale experiments.

#pragma once

#include "dconv/model.hpp"
#include "dconv/tensor.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace dconv {

struct DialogueInstance {
  std::vector<std::vector<std::string>> context;  // >= 1 utterances, oldest first
  std::vector<std::string> response;
  int label = 0;  // 1 = correct response
  int group_id = 0;  // joins the candidates of one context
};

struct Corpus {
  std::vector<DialogueInstance> instances;
  int num_groups = 0;
  int zero_positive_groups = 0;
};

// Lowercased whitespace split.
std::vector<std::string> tokenize(const std::string& text);

// TSV corpus: one candidate per line, "label TAB utt_1 TAB ... TAB response".
// Consecutive lines with identical context text share a group id.
Corpus load_tsv(const std::string& path);
void write_tsv(const Corpus& corpus, const std::string& path);

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> tokens;  // id = index + 2
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(tokens.size()) + 2; }
  int id_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? kUnk : it->second;
  }
  void add(const std::string& token);

  // Built from the training split only, min frequency 1, first-occurrence order.
  static Vocabulary build(const Corpus& train);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
};

// ---------------------------------------------------------------------------
// Stacking into the (turns, words) grid. The most recent turns-1 context
// utterances are kept (earlier slots pad out the front of the turn axis) and
// each utterance keeps its last `words` tokens, right-aligned; the response
// always occupies the final slot.

struct Stacked {
  IdGrid ids;
  Mask mask;
};

enum class StackView { kFull, kContextOnly, kResponseOnly };

Stacked stack_instance(const DialogueInstance& inst, const Vocabulary& vocab,
                       const ModelConfig& config, StackView view = StackView::kFull);

// Token strings aligned with the stacked grid (slot i -> kept tokens of that
// slot, in order); used for heatmap labeling.
std::vector<std::vector<std::string>> stack_tokens(const DialogueInstance& inst,
                                                   const ModelConfig& config);

// Uniformly random permutation of the context utterances; response and label
// untouched. The same seed always yields the same permutation.
DialogueInstance perturb_shuffle(const DialogueInstance& inst, uint64_t seed);

// Text embedding file: header "V d", then lines "token v1 ... vd". Rows for
// vocabulary tokens present in the file are overwritten; missing tokens keep
// their initialization; the pad row is forced to zeros.
// Returns the number of vocabulary rows loaded.
int load_embeddings(const std::string& path, const Vocabulary& vocab, Tensor& embedding);

// ---------------------------------------------------------------------------
// Synthetic corpora. The standard variant rewards lexical overlap between
// response and context (one positive per group, negatives drawn from other
// groups). The ordered variant makes the answer depend on utterance order:
// every candidate echoes one utterance of its context and the positive is the
// one echoing the final utterance, so shuffling the context destroys the
// signal while leaving bag-of-words content intact.

struct SynthOptions {
  int n_groups = 200;  // training groups; valid/test each get ~1/4 of this
  int candidates_per_group = 10;
  int vocab_size = 300;
  double overlap_rate = 0.4;
  uint64_t seed = 1;
};

struct SynthSplits {
  Corpus train, valid, test;
};

struct SynthCorpus {
  SynthSplits standard;
  SynthSplits ordered;
};

SynthCorpus synth_corpus(const SynthOptions& options);

}  // namespace dconv
