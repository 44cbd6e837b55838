#include "dconv/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>

namespace dconv {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

static std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

Corpus load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);

  Corpus corpus;
  std::string line;
  int line_no = 0;
  int group_id = -1;
  std::vector<std::string> prev_context;
  std::vector<char> group_has_positive;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const auto fields = split_tabs(line);
    if (fields.size() < 3)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected label, >=1 context utterance and a response");
    if (fields[0] != "0" && fields[0] != "1")
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": label '" +
                               fields[0] + "' is not 0 or 1");

    DialogueInstance inst;
    inst.label = fields[0][0] - '0';
    for (size_t i = 1; i + 1 < fields.size(); ++i)
      inst.context.push_back(tokenize(fields[i]));
    inst.response = tokenize(fields.back());

    std::vector<std::string> context_text(fields.begin() + 1, fields.end() - 1);
    if (group_id < 0 || context_text != prev_context) {
      ++group_id;
      prev_context = std::move(context_text);
      group_has_positive.push_back(0);
    }
    inst.group_id = group_id;
    if (inst.label == 1) group_has_positive[group_id] = 1;
    corpus.instances.push_back(std::move(inst));
  }

  corpus.num_groups = group_id + 1;
  for (char has : group_has_positive)
    if (!has) ++corpus.zero_positive_groups;
  if (corpus.zero_positive_groups > 0)
    std::cerr << "warning: " << path << ": " << corpus.zero_positive_groups << " of "
              << corpus.num_groups << " groups have no positive candidate\n";
  return corpus;
}

void write_tsv(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& inst : corpus.instances) {
    out << inst.label;
    auto write_tokens = [&out](const std::vector<std::string>& toks) {
      for (size_t i = 0; i < toks.size(); ++i) out << (i ? " " : "") << toks[i];
    };
    for (const auto& utt : inst.context) {
      out << '\t';
      write_tokens(utt);
    }
    out << '\t';
    write_tokens(inst.response);
    out << '\n';
  }
}

void Vocabulary::add(const std::string& token) {
  if (index.count(token)) return;
  index.emplace(token, static_cast<int>(tokens.size()) + 2);
  tokens.push_back(token);
}

Vocabulary Vocabulary::build(const Corpus& train) {
  Vocabulary v;
  for (const auto& inst : train.instances) {
    for (const auto& utt : inst.context)
      for (const auto& tok : utt) v.add(tok);
    for (const auto& tok : inst.response) v.add(tok);
  }
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const auto& tok : tokens) out << tok << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  return v;
}

// ---------------------------------------------------------------------------

// Keeps the last `words` tokens and writes them into row `slot` starting at
// column 0, so token j of the retained window sits at ids[slot, j].
static void fill_slot(Stacked& s, int slot, const std::vector<std::string>& tokens,
                      const Vocabulary& vocab, int words) {
  const int n = std::min<int>(words, static_cast<int>(tokens.size()));
  const int tok_start = static_cast<int>(tokens.size()) - n;
  for (int j = 0; j < n; ++j) {
    s.ids.at(slot, j) = vocab.id_of(tokens[tok_start + j]);
    s.mask.at(slot, j) = 1;
  }
}

Stacked stack_instance(const DialogueInstance& inst, const Vocabulary& vocab,
                       const ModelConfig& config, StackView view) {
  Stacked s;
  s.ids = IdGrid(config.turns, config.words);
  s.mask = Mask(Shape{config.turns, config.words}, 0);

  if (view != StackView::kResponseOnly) {
    const int ctx_slots = config.turns - 1;
    const int keep = std::min<int>(ctx_slots, static_cast<int>(inst.context.size()));
    const int first = static_cast<int>(inst.context.size()) - keep;
    for (int i = 0; i < keep; ++i)
      fill_slot(s, ctx_slots - keep + i, inst.context[first + i], vocab, config.words);
  }
  if (view != StackView::kContextOnly)
    fill_slot(s, config.turns - 1, inst.response, vocab, config.words);
  return s;
}

std::vector<std::vector<std::string>> stack_tokens(const DialogueInstance& inst,
                                                   const ModelConfig& config) {
  std::vector<std::vector<std::string>> slots(config.turns);
  auto kept = [&](const std::vector<std::string>& tokens) {
    const int n = std::min<int>(config.words, static_cast<int>(tokens.size()));
    return std::vector<std::string>(tokens.end() - n, tokens.end());
  };
  const int ctx_slots = config.turns - 1;
  const int keep = std::min<int>(ctx_slots, static_cast<int>(inst.context.size()));
  const int first = static_cast<int>(inst.context.size()) - keep;
  for (int i = 0; i < keep; ++i)
    slots[ctx_slots - keep + i] = kept(inst.context[first + i]);
  slots[config.turns - 1] = kept(inst.response);
  return slots;
}

DialogueInstance perturb_shuffle(const DialogueInstance& inst, uint64_t seed) {
  DialogueInstance out = inst;
  Rng rng(seed);
  rng.shuffle(out.context);
  return out;
}

int load_embeddings(const std::string& path, const Vocabulary& vocab, Tensor& embedding) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);
  const int dim = embedding.shape[1];

  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("embedding file is empty: " + path);
  std::istringstream hs(header);
  long long file_count = 0, file_dim = 0;
  if (!(hs >> file_count >> file_dim))
    throw std::runtime_error("embedding file header must be 'V d': " + path);
  if (file_dim != dim)
    throw std::runtime_error("embedding dimension " + std::to_string(file_dim) +
                             " does not match model dimension " + std::to_string(dim));

  int loaded = 0;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<float> row(dim);
    for (int c = 0; c < dim; ++c) {
      if (!(ls >> row[c]))
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected " + std::to_string(dim) + " values");
    }
    const auto it = vocab.index.find(token);
    if (it == vocab.index.end()) continue;
    std::copy(row.begin(), row.end(),
              embedding.data.begin() + static_cast<size_t>(it->second) * dim);
    ++loaded;
  }
  // pad row stays all-zero no matter what the file says
  std::fill_n(embedding.data.begin(), dim, 0.0f);
  return loaded;
}

// ---------------------------------------------------------------------------
// Synthetic corpora.

namespace {

std::string word(int i) { return "w" + std::to_string(i); }

std::vector<std::string> sample_tokens(Rng& rng, const std::vector<int>& pool, int n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i)
    out.push_back(word(pool[rng.below(static_cast<uint32_t>(pool.size()))]));
  return out;
}

struct GroupDraft {
  std::vector<std::vector<std::string>> context;
  std::vector<std::string> positive;
  std::vector<std::vector<std::string>> local_negatives;  // ordered variant only
};

// Standard variant: positive response shares overlap_rate of its tokens with
// the tokens actually present in the context; the rest come from outside.
GroupDraft draw_overlap_group(Rng& rng, const SynthOptions& opt) {
  GroupDraft g;
  const int n_keywords = 8 + static_cast<int>(rng.below(5));
  std::vector<int> keywords;
  while (static_cast<int>(keywords.size()) < n_keywords) {
    const int w = static_cast<int>(rng.below(static_cast<uint32_t>(opt.vocab_size)));
    if (std::find(keywords.begin(), keywords.end(), w) == keywords.end())
      keywords.push_back(w);
  }

  std::vector<int> in_context;
  const int n_utts = 2 + static_cast<int>(rng.below(2));
  for (int u = 0; u < n_utts; ++u) {
    std::vector<std::string> utt;
    const int len = 4 + static_cast<int>(rng.below(3));
    for (int j = 0; j < len; ++j) {
      const int w = keywords[rng.below(static_cast<uint32_t>(keywords.size()))];
      if (std::find(in_context.begin(), in_context.end(), w) == in_context.end())
        in_context.push_back(w);
      utt.push_back(word(w));
    }
    g.context.push_back(std::move(utt));
  }
  std::vector<int> others;
  for (int w = 0; w < opt.vocab_size; ++w)
    if (std::find(in_context.begin(), in_context.end(), w) == in_context.end())
      others.push_back(w);

  const int resp_len = 6 + static_cast<int>(rng.below(3));
  const int n_overlap = static_cast<int>(std::lround(opt.overlap_rate * resp_len));
  for (int j = 0; j < resp_len; ++j) {
    const bool from_context = j < n_overlap;
    g.positive.push_back(
        from_context ? word(in_context[rng.below(static_cast<uint32_t>(in_context.size()))])
                     : word(others[rng.below(static_cast<uint32_t>(others.size()))]));
  }
  rng.shuffle(g.positive);
  return g;
}

// Ordered variant: each candidate echoes one context utterance; the positive
// echoes the last one. Utterance order is the only discriminating signal.
GroupDraft draw_ordered_group(Rng& rng, const SynthOptions& opt) {
  GroupDraft g;
  const int n_utts = 3;
  std::vector<int> pool(opt.vocab_size);
  for (int w = 0; w < opt.vocab_size; ++w) pool[w] = w;

  for (int u = 0; u < n_utts; ++u)
    g.context.push_back(sample_tokens(rng, pool, 4));

  auto echo = [&](const std::vector<std::string>& utt) {
    std::vector<std::string> r = utt;
    r.push_back(word(static_cast<int>(rng.below(static_cast<uint32_t>(opt.vocab_size)))));
    rng.shuffle(r);
    return r;
  };
  g.positive = echo(g.context.back());
  for (int u = 0; u < n_utts - 1; ++u) g.local_negatives.push_back(echo(g.context[u]));
  return g;
}

Corpus assemble_split(Rng& rng, const SynthOptions& opt, int n_groups, bool ordered) {
  std::vector<GroupDraft> drafts;
  drafts.reserve(n_groups);
  for (int i = 0; i < n_groups; ++i)
    drafts.push_back(ordered ? draw_ordered_group(rng, opt) : draw_overlap_group(rng, opt));

  Corpus corpus;
  corpus.num_groups = n_groups;
  for (int i = 0; i < n_groups; ++i) {
    const GroupDraft& g = drafts[i];
    std::vector<std::pair<int, std::vector<std::string>>> candidates;  // (label, response)
    candidates.emplace_back(1, g.positive);
    for (const auto& neg : g.local_negatives)
      candidates.emplace_back(0, neg);
    while (static_cast<int>(candidates.size()) < opt.candidates_per_group) {
      int other = static_cast<int>(rng.below(static_cast<uint32_t>(n_groups)));
      if (other == i) continue;
      candidates.emplace_back(0, drafts[other].positive);
    }
    rng.shuffle(candidates);
    for (const auto& [label, response] : candidates) {
      DialogueInstance inst;
      inst.context = g.context;
      inst.response = response;
      inst.label = label;
      inst.group_id = i;
      corpus.instances.push_back(std::move(inst));
    }
  }
  return corpus;
}

SynthSplits make_splits(Rng& rng, const SynthOptions& opt, bool ordered) {
  const int held = std::max(8, opt.n_groups / 4);
  SynthSplits s;
  s.train = assemble_split(rng, opt, opt.n_groups, ordered);
  s.valid = assemble_split(rng, opt, held, ordered);
  s.test = assemble_split(rng, opt, held, ordered);
  return s;
}

}  // namespace

SynthCorpus synth_corpus(const SynthOptions& options) {
  if (options.candidates_per_group < 2)
    throw std::invalid_argument("synth corpus needs >= 2 candidates per group");
  if (options.n_groups < 2)
    throw std::invalid_argument("synth corpus needs >= 2 groups");
  if (options.vocab_size < 32)
    throw std::invalid_argument("synth corpus needs vocab_size >= 32");
  Rng rng(options.seed);
  SynthCorpus out;
  out.standard = make_splits(rng, options, false);
  out.ordered = make_splits(rng, options, true);
  return out;
}

}  // namespace dconv
