#include "doctest.h"

#include "dconv/data.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace dconv;

namespace {

std::atomic<int> temp_counter{0};

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("dconv_test_" + std::to_string(++temp_counter));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("tokenize lowers case and collapses whitespace") {
  CHECK(tokenize("Hello world") == std::vector<std::string>{"hello", "world"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("a  b") == std::vector<std::string>{"a", "b"});
  CHECK(tokenize("  lead trail\t") == std::vector<std::string>{"lead", "trail"});
}

TEST_CASE("load_tsv parses candidates and groups consecutive identical contexts") {
  TempDir dir;
  const auto path = dir.file("corpus.tsv");
  write_file(path,
             "1\thi there\thow are you\tfine thanks\n"
             "0\thi there\thow are you\tbuy cheap pills\n"
             "1\tdifferent context\tok\n");
  const Corpus corpus = load_tsv(path);
  REQUIRE(corpus.instances.size() == 3);
  CHECK(corpus.num_groups == 2);

  const auto& first = corpus.instances[0];
  CHECK(first.context.size() == 2);
  CHECK(first.context[0] == std::vector<std::string>{"hi", "there"});
  CHECK(first.response == std::vector<std::string>{"fine", "thanks"});
  CHECK(first.label == 1);
  CHECK(first.group_id == corpus.instances[1].group_id);
  CHECK(first.group_id != corpus.instances[2].group_id);
}

TEST_CASE("load_tsv rejects malformed lines with their line number") {
  TempDir dir;
  const auto bad_label = dir.file("bad_label.tsv");
  write_file(bad_label, "1\ta\tb\n2\ta\tb\n");
  CHECK_THROWS_WITH_AS(load_tsv(bad_label), doctest::Contains(":2"), std::runtime_error);

  const auto short_line = dir.file("short.tsv");
  write_file(short_line, "1\tonly-one-field\n");
  CHECK_THROWS_AS(load_tsv(short_line), std::runtime_error);
}

TEST_CASE("vocabulary is built from the corpus with reserved pad/unk ids") {
  Corpus c;
  DialogueInstance inst;
  inst.context = {{"hello", "world"}};
  inst.response = {"world", "again"};
  c.instances.push_back(inst);
  const Vocabulary v = Vocabulary::build(c);
  CHECK(v.size() == 5);  // pad, unk, hello, world, again
  CHECK(v.id_of("hello") == 2);
  CHECK(v.id_of("world") == 3);
  CHECK(v.id_of("again") == 4);
  CHECK(v.id_of("missing") == Vocabulary::kUnk);
}

TEST_CASE("stack_instance applies the recency window") {
  ModelConfig config;
  config.turns = 10;
  config.words = 50;
  Vocabulary vocab;

  SUBCASE("12 context utterances keep the most recent 9") {
    DialogueInstance inst;
    for (int u = 1; u <= 12; ++u) inst.context.push_back({"u" + std::to_string(u)});
    inst.response = {"resp"};
    for (const auto& utt : inst.context) vocab.add(utt[0]);
    vocab.add("resp");

    const Stacked s = stack_instance(inst, vocab, config);
    // slots 0..8 hold utterances 4..12; slot 9 the response
    for (int slot = 0; slot < 9; ++slot)
      CHECK(s.ids.at(slot, 0) == vocab.id_of("u" + std::to_string(slot + 4)));
    CHECK(s.ids.at(9, 0) == vocab.id_of("resp"));
  }
  SUBCASE("a 60-token utterance keeps its final 50 tokens") {
    DialogueInstance inst;
    std::vector<std::string> long_utt;
    for (int j = 0; j < 60; ++j) {
      long_utt.push_back("t" + std::to_string(j));
      vocab.add("t" + std::to_string(j));
    }
    inst.context.push_back(long_utt);
    inst.response = {"r"};
    vocab.add("r");

    const Stacked s = stack_instance(inst, vocab, config);
    for (int j = 0; j < 50; ++j)
      CHECK(s.ids.at(8, j) == vocab.id_of("t" + std::to_string(10 + j)));
  }
  SUBCASE("one context utterance front-pads the turn axis") {
    DialogueInstance inst;
    inst.context = {{"only"}};
    inst.response = {"resp"};
    vocab.add("only");
    vocab.add("resp");

    const Stacked s = stack_instance(inst, vocab, config);
    for (int slot = 0; slot < 8; ++slot)
      for (int j = 0; j < 50; ++j) {
        CHECK(s.ids.at(slot, j) == 0);
        CHECK(s.mask.at(slot, j) == 0);
      }
    CHECK(s.ids.at(8, 0) == vocab.id_of("only"));
    CHECK(s.ids.at(9, 0) == vocab.id_of("resp"));
  }
}

TEST_CASE("mask is set exactly at non-pad ids and unknowns map to unk") {
  ModelConfig config;
  config.turns = 4;
  config.words = 6;
  Vocabulary vocab;
  vocab.add("known");

  DialogueInstance inst;
  inst.context = {{"known", "unknown-token"}};
  inst.response = {"known"};
  const Stacked s = stack_instance(inst, vocab, config);
  CHECK(s.ids.at(2, 0) == 2);
  CHECK(s.ids.at(2, 1) == Vocabulary::kUnk);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK((s.mask.at(i, j) == 1) == (s.ids.at(i, j) != Vocabulary::kPad));
}

TEST_CASE("context-only and response-only stacking views") {
  ModelConfig config;
  config.turns = 4;
  config.words = 3;
  Vocabulary vocab;
  vocab.add("c");
  vocab.add("r");
  DialogueInstance inst;
  inst.context = {{"c"}};
  inst.response = {"r"};

  const Stacked ctx = stack_instance(inst, vocab, config, StackView::kContextOnly);
  CHECK(ctx.ids.at(2, 0) == vocab.id_of("c"));
  for (int j = 0; j < 3; ++j) CHECK(ctx.mask.at(3, j) == 0);

  const Stacked resp = stack_instance(inst, vocab, config, StackView::kResponseOnly);
  CHECK(resp.ids.at(3, 0) == vocab.id_of("r"));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(resp.mask.at(i, j) == 0);
}

TEST_CASE("perturb_shuffle is seeded, uniform, and multiset-preserving") {
  DialogueInstance inst;
  inst.context = {{"a"}, {"b"}, {"c"}};
  inst.response = {"r"};
  inst.label = 1;

  SUBCASE("single-utterance contexts are unchanged") {
    DialogueInstance one;
    one.context = {{"a"}};
    one.response = {"r"};
    const auto out = perturb_shuffle(one, 99);
    CHECK(out.context == one.context);
  }
  SUBCASE("the same seed yields the same permutation") {
    const auto a = perturb_shuffle(inst, 1234);
    const auto b = perturb_shuffle(inst, 1234);
    CHECK(a.context == b.context);
    CHECK(a.response == inst.response);
    CHECK(a.label == inst.label);
  }
  SUBCASE("10,000 shuffles hit each of the 6 orders with frequency 1/6 +- 0.02") {
    std::map<std::string, int> counts;
    for (int s = 0; s < 10000; ++s) {
      const auto out = perturb_shuffle(inst, 777 + s);
      std::string key;
      for (const auto& utt : out.context) key += utt[0];
      ++counts[key];
      // permutation preserves the multiset of utterances
      std::multiset<std::string> orig{"a", "b", "c"}, got;
      for (const auto& utt : out.context) got.insert(utt[0]);
      REQUIRE(got == orig);
    }
    CHECK(counts.size() == 6);
    for (const auto& [key, n] : counts) {
      CHECK(n >= 10000 * (1.0 / 6 - 0.02));
      CHECK(n <= 10000 * (1.0 / 6 + 0.02));
    }
  }
}

TEST_CASE("load_embeddings fills known rows, forces the pad row to zero") {
  TempDir dir;
  const auto path = dir.file("emb.txt");
  write_file(path,
             "2 4\n"
             "alpha 1 2 3 4\n"
             "beta 0.5 -0.5 0.25 -0.25\n");

  Vocabulary vocab;
  vocab.add("alpha");
  vocab.add("gamma");  // absent from the file

  Tensor table(Shape{4, 4}, 9.0f);  // sentinel init everywhere
  const int loaded = load_embeddings(path, vocab, table);
  CHECK(loaded == 1);

  for (int c = 0; c < 4; ++c) CHECK(table.at(Vocabulary::kPad, c) == 0.0f);
  CHECK(table.at(2, 0) == 1.0f);
  CHECK(table.at(2, 3) == 4.0f);
  for (int c = 0; c < 4; ++c) CHECK(table.at(3, c) == 9.0f);  // kept its init

  Tensor wrong_dim(Shape{4, 5});
  CHECK_THROWS_WITH_AS(load_embeddings(path, vocab, wrong_dim),
                       doctest::Contains("dimension"), std::runtime_error);
}

TEST_CASE("synthetic corpus construction") {
  SynthOptions opt;
  opt.n_groups = 20;
  opt.candidates_per_group = 10;
  opt.vocab_size = 100;
  opt.seed = 5;

  SUBCASE("full overlap makes the positive a subset of the context") {
    opt.overlap_rate = 1.0;
    const auto synth = synth_corpus(opt);
    for (const auto& inst : synth.standard.train.instances) {
      if (inst.label != 1) continue;
      std::set<std::string> ctx_tokens;
      for (const auto& utt : inst.context) ctx_tokens.insert(utt.begin(), utt.end());
      for (const auto& tok : inst.response) CHECK(ctx_tokens.count(tok) == 1);
    }
  }
  SUBCASE("every group has exactly one positive and the right size") {
    const auto synth = synth_corpus(opt);
    for (const Corpus* c : {&synth.standard.train, &synth.standard.valid,
                            &synth.ordered.train, &synth.ordered.test}) {
      std::map<int, int> positives, sizes;
      for (const auto& inst : c->instances) {
        positives[inst.group_id] += inst.label;
        sizes[inst.group_id] += 1;
      }
      for (const auto& [gid, n] : positives) CHECK(n == 1);
      for (const auto& [gid, n] : sizes) CHECK(n == 10);
    }
    CHECK(synth.standard.train.num_groups == 20);
    CHECK(synth.standard.valid.num_groups == 8);
  }
  SUBCASE("the same seed yields byte-identical corpus files") {
    TempDir dir;
    const auto a = synth_corpus(opt);
    const auto b = synth_corpus(opt);
    write_tsv(a.standard.train, dir.file("a.tsv"));
    write_tsv(b.standard.train, dir.file("b.tsv"));
    CHECK(read_file(dir.file("a.tsv")) == read_file(dir.file("b.tsv")));
    CHECK(!read_file(dir.file("a.tsv")).empty());
  }
  SUBCASE("ordered variant candidates echo context utterances") {
    const auto synth = synth_corpus(opt);
    const auto& train = synth.ordered.train;
    for (const auto& inst : train.instances) {
      if (inst.label != 1) continue;
      // positive echoes the final utterance: all its tokens are present
      std::multiset<std::string> resp(inst.response.begin(), inst.response.end());
      for (const auto& tok : inst.context.back()) CHECK(resp.count(tok) >= 1);
    }
  }
}

TEST_CASE("tsv round trip preserves instances and grouping") {
  SynthOptions opt;
  opt.n_groups = 6;
  opt.candidates_per_group = 4;
  opt.vocab_size = 50;
  opt.seed = 9;
  const auto synth = synth_corpus(opt);

  TempDir dir;
  const auto path = dir.file("round.tsv");
  write_tsv(synth.standard.train, path);
  const Corpus loaded = load_tsv(path);

  REQUIRE(loaded.instances.size() == synth.standard.train.instances.size());
  CHECK(loaded.num_groups == synth.standard.train.num_groups);
  for (size_t i = 0; i < loaded.instances.size(); ++i) {
    CHECK(loaded.instances[i].context == synth.standard.train.instances[i].context);
    CHECK(loaded.instances[i].response == synth.standard.train.instances[i].response);
    CHECK(loaded.instances[i].label == synth.standard.train.instances[i].label);
  }
}

TEST_CASE("vocabulary save/load round trip") {
  TempDir dir;
  Vocabulary v;
  v.add("one");
  v.add("two");
  v.save(dir.file("vocab.txt"));
  const Vocabulary w = Vocabulary::load(dir.file("vocab.txt"));
  CHECK(w.size() == v.size());
  CHECK(w.id_of("one") == v.id_of("one"));
  CHECK(w.id_of("two") == v.id_of("two"));
}
