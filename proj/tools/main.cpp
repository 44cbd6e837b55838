// Command-line front end: synthetic corpus generation, contrastive
// pretraining, fine-tuning, evaluation (with optional structure
// perturbation), ablation sweeps, heatmap export, and a parameter/latency
// benchmark. Every run echoes its fully resolved configuration into the
// output directory; fixed seeds give bit-identical outputs.

#include "CLI11.hpp"

#include "dconv/bench.hpp"
#include "dconv/checkpoint.hpp"
#include "dconv/data.hpp"
#include "dconv/metrics.hpp"
#include "dconv/model.hpp"
#include "dconv/train.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace dconv;

namespace {

struct ModelFlags {
  int turns = 10, words = 50, dim = 200;
  int k1 = 1, s1 = 3, s2 = 3, w1 = 1, w2 = 5, w3 = 3, w4 = 1;
  std::string ablate = "none";

  ModelConfig to_config() const {
    ModelConfig c;
    c.turns = turns;
    c.words = words;
    c.dim = dim;
    c.k1 = k1;
    c.s1 = s1;
    c.s2 = s2;
    c.w1 = w1;
    c.w2 = w2;
    c.w3 = w3;
    c.w4 = w4;
    if (ablate == "LocM") c.ablate_local = true;
    else if (ablate == "ConM") c.ablate_context = true;
    else if (ablate == "DisM") c.ablate_discourse = true;
    else if (ablate == "Agg") c.ablate_aggregate = true;
    else if (ablate != "none")
      throw CLI::ValidationError("--ablate must be one of none, LocM, ConM, DisM, Agg");
    c.validate();
    return c;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
  cmd->add_option("--turns", m.turns, "Utterance slots including the response");
  cmd->add_option("--words", m.words, "Token positions per utterance");
  cmd->add_option("--dim", m.dim, "Embedding dimension");
  cmd->add_option("--k1", m.k1, "Local word-view kernel height");
  cmd->add_option("--s1", m.s1, "Local word-view kernel width");
  cmd->add_option("--s2", m.s2, "Discourse orthogonal kernel size");
  cmd->add_option("--w1", m.w1, "Context embedding-view kernel size");
  cmd->add_option("--w2", m.w2, "Context word-view kernel size");
  cmd->add_option("--w3", m.w3, "Aggregation embedding-axis kernel size");
  cmd->add_option("--w4", m.w4, "Aggregation turn-axis kernel size");
  cmd->add_option("--ablate", m.ablate, "Disable a stage: none, LocM, ConM, DisM or Agg");
}

struct TrainFlags {
  double tau = 0.007;
  double pretrain_lr = 0.001;
  int pretrain_batch = 128;
  std::vector<double> lr_ladder = {1e-3, 5e-4, 1e-4, 5e-5, 1e-5};
  std::vector<int> milestones = {2, 4, 6, 8};
  int batch_size = 64;
  int epochs = 20;
  int patience = 3;
  double grad_clip = 5.0;
  uint64_t seed = 1;

  TrainConfig to_config() const {
    TrainConfig c;
    c.tau = tau;
    c.pretrain_lr = pretrain_lr;
    c.pretrain_batch = pretrain_batch;
    c.lr_ladder = lr_ladder;
    c.milestones = milestones;
    c.batch_size = batch_size;
    c.epochs = epochs;
    c.patience = patience;
    c.grad_clip = grad_clip;
    c.seed = seed;
    c.validate();
    return c;
  }
};

void add_train_flags(CLI::App* cmd, TrainFlags& t, bool pretrain) {
  cmd->add_option("--seed", t.seed, "Run seed");
  cmd->add_option("--epochs", t.epochs, "Epoch cap");
  cmd->add_option("--patience", t.patience, "Early-stop patience in epochs");
  cmd->add_option("--clip", t.grad_clip, "Global gradient-norm clip");
  if (pretrain) {
    cmd->add_option("--tau", t.tau, "Contrastive temperature");
    cmd->add_option("--lr", t.pretrain_lr, "Pretraining learning rate (SGD)");
    cmd->add_option("--batch", t.pretrain_batch, "Pretraining batch size in groups");
  } else {
    cmd->add_option("--lr-ladder", t.lr_ladder, "Multi-step learning rates")->delimiter(',');
    cmd->add_option("--milestones", t.milestones, "Epoch boundaries of the ladder")
        ->delimiter(',');
    cmd->add_option("--batch", t.batch_size, "Fine-tuning batch size");
  }
}

void add_config_file(CLI::App* cmd) {
  cmd->set_config("--config", "", "key=value file; flags override its entries");
  cmd->allow_config_extras(false);
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

// Resolved-config echo next to the run outputs.
void write_config_echo(CLI::App* cmd, const fs::path& dir) {
  std::ofstream f(dir / "config.txt");
  f << cmd->config_to_str(true, false);
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path);
  f << content;
}

std::string default_vocab_path(const std::string& checkpoint) {
  return (fs::path(checkpoint).parent_path() / "vocab.txt").string();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

int thread_count(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out, const SynthOptions& opt, CLI::App* cmd) {
  const auto dir = prepare_out_dir(out);
  const auto synth = synth_corpus(opt);
  fs::create_directories(dir / "ordered");
  write_tsv(synth.standard.train, (dir / "train.tsv").string());
  write_tsv(synth.standard.valid, (dir / "valid.tsv").string());
  write_tsv(synth.standard.test, (dir / "test.tsv").string());
  write_tsv(synth.ordered.train, (dir / "ordered" / "train.tsv").string());
  write_tsv(synth.ordered.valid, (dir / "ordered" / "valid.tsv").string());
  write_tsv(synth.ordered.test, (dir / "ordered" / "test.tsv").string());
  write_config_echo(cmd, dir);
  std::cout << "wrote " << synth.standard.train.instances.size() << " train / "
            << synth.standard.valid.instances.size() << " valid / "
            << synth.standard.test.instances.size()
            << " test candidates (and the ordered variant) to " << dir << "\n";
  return 0;
}

int cmd_pretrain(const std::string& train_path, const std::string& out,
                 const std::string& embeddings, const ModelFlags& mf, const TrainFlags& tf,
                 CLI::App* cmd) {
  const auto dir = prepare_out_dir(out);
  const ModelConfig config = mf.to_config();
  const TrainConfig train_config = tf.to_config();

  const Corpus train = load_tsv(train_path);
  const Vocabulary vocab = Vocabulary::build(train);
  vocab.save((dir / "vocab.txt").string());

  auto params = ModelParams::init(config, vocab.size(), train_config.seed);
  if (!embeddings.empty()) {
    const int rows = load_embeddings(embeddings, vocab, params.embedding);
    std::cout << "loaded " << rows << " embedding rows\n";
  }

  std::ofstream log_file(dir / "train_log.txt");
  const auto result =
      run_pretrain(params, train, vocab, train_config, [&](const std::string& line) {
        log_file << line << "\n";
        std::cout << line << "\n";
      });
  save_model((dir / "pretrain.dcv").string(), params);
  write_config_echo(cmd, dir);
  std::cout << "pretrained " << result.epochs_run << " epochs; checkpoint at "
            << (dir / "pretrain.dcv") << "\n";
  return 0;
}

int cmd_finetune(const std::string& train_path, const std::string& valid_path,
                 const std::string& out, const std::string& init_ckpt,
                 const std::string& vocab_path, const std::string& embeddings,
                 const std::string& metric, int threads, const ModelFlags& mf,
                 const TrainFlags& tf, CLI::App* cmd) {
  const auto dir = prepare_out_dir(out);
  const ModelConfig config = mf.to_config();
  const TrainConfig train_config = tf.to_config();

  const Corpus train = load_tsv(train_path);
  const Corpus valid = load_tsv(valid_path);

  // A warm start must reuse the vocabulary the checkpoint was trained with.
  Vocabulary vocab;
  if (!vocab_path.empty()) vocab = Vocabulary::load(vocab_path);
  else if (!init_ckpt.empty()) vocab = Vocabulary::load(default_vocab_path(init_ckpt));
  else vocab = Vocabulary::build(train);
  vocab.save((dir / "vocab.txt").string());

  auto params = ModelParams::init(config, vocab.size(), train_config.seed);
  if (!init_ckpt.empty()) load_model(init_ckpt, params);
  if (!embeddings.empty()) load_embeddings(embeddings, vocab, params.embedding);

  std::ofstream log_file(dir / "train_log.txt");
  auto result = run_finetune(params, train, valid, vocab, train_config, metric,
                             thread_count(threads), [&](const std::string& line) {
                               log_file << line << "\n";
                               std::cout << line << "\n";
                             });
  save_model((dir / "best.dcv").string(), result.best_params);
  write_config_echo(cmd, dir);
  std::cout << "best " << result.metric_name << "=" << result.best_metric << " (epoch "
            << result.best_epoch << "); checkpoint at " << (dir / "best.dcv") << "\n";
  return 0;
}

int cmd_eval(const std::string& data_path, const std::string& checkpoint,
             const std::string& vocab_path, const std::vector<std::string>& metrics,
             bool perturb, uint64_t perturb_seed, int threads, const std::string& out,
             const ModelFlags& mf, CLI::App* cmd) {
  const ModelConfig config = mf.to_config();
  const Vocabulary vocab =
      Vocabulary::load(vocab_path.empty() ? default_vocab_path(checkpoint) : vocab_path);
  auto params = ModelParams::init(config, vocab.size(), 1);
  load_model(checkpoint, params);

  const Corpus corpus = load_tsv(data_path);
  EvalOptions options;
  options.metrics = metrics;
  options.threads = thread_count(threads);

  const MetricReport norm = evaluate_run(params, vocab, corpus, options);
  std::ostringstream table, kv;
  table << std::left << std::setw(8) << "";
  for (const auto& [k, v] : norm.values) table << std::setw(10) << k;
  table << "\n" << std::fixed << std::setprecision(4);
  auto add_row = [&table](const std::string& label, const MetricReport& r) {
    table << std::left << std::setw(8) << label;
    for (const auto& [k, v] : r.values) table << std::setw(10) << v;
    table << "\n";
  };
  add_row("Norm", norm);
  kv << norm.key_values("norm");

  if (perturb) {
    EvalOptions rand_options = options;
    rand_options.perturb_seed = perturb_seed;
    const MetricReport rand = evaluate_run(params, vocab, corpus, rand_options);
    add_row("Rand", rand);
    kv << rand.key_values("rand");
  }

  std::cout << table.str();
  if (norm.skipped_no_positive > 0)
    std::cout << "(skipped " << norm.skipped_no_positive << " groups with no positive)\n";
  if (!out.empty()) {
    const auto dir = prepare_out_dir(out);
    write_text(dir / "report.txt", table.str());
    write_text(dir / "report_kv.txt", kv.str());
    write_config_echo(cmd, dir);
  }
  return 0;
}

int cmd_bench(const std::string& checkpoint, const std::string& vocab_path,
              const std::vector<int>& batch_sizes, int warmup, int iters, int threads,
              uint64_t seed, const std::string& out, const ModelFlags& mf, CLI::App* cmd) {
  const ModelConfig config = mf.to_config();
  ModelParams params = [&] {
    if (checkpoint.empty()) return ModelParams::init(config, 50000, seed);
    const Vocabulary vocab =
        Vocabulary::load(vocab_path.empty() ? default_vocab_path(checkpoint) : vocab_path);
    auto p = ModelParams::init(config, vocab.size(), seed);
    load_model(checkpoint, p);
    return p;
  }();

  std::ostringstream report;
  const auto pc = param_count(config, params.vocab_size);
  report << "parameters.total=" << pc.total << "\n";
  for (const auto& [name, n] : pc.per_tensor)
    report << "parameters." << name << "=" << n << "\n";

  const int n_threads = thread_count(threads);
  report << "bench.threads_available=" << n_threads << "\n";
  report << "bench.warmup=" << warmup << "\n";
  report << "bench.iters=" << iters << "\n";
  report << "bench.config=" << config.turns << "x" << config.words << "x" << config.dim << "\n";

  Rng rng(seed);
  auto make_instance = [&] {
    IdGrid ids(config.turns, config.words);
    for (auto& v : ids.data)
      v = 1 + static_cast<int>(rng.below(static_cast<uint32_t>(params.vocab_size - 1)));
    return ids;
  };
  const Mask full_mask(Shape{config.turns, config.words}, 1);

  for (int batch : batch_sizes) {
    std::vector<IdGrid> instances;
    for (int i = 0; i < batch; ++i) instances.push_back(make_instance());
    volatile double sink = 0.0;

    auto run_single = [&] {
      for (const auto& ids : instances) sink = score_value(params, ids, full_mask);
    };
    auto run_parallel = [&] {
      std::vector<std::thread> pool;
      const int chunk = (batch + n_threads - 1) / n_threads;
      for (int w = 0; w < n_threads; ++w) {
        const int begin = w * chunk, end = std::min(batch, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] {
          for (int i = begin; i < end; ++i)
            sink = score_value(params, instances[i], full_mask);
        });
      }
      for (auto& t : pool) t.join();
    };

    const LatencyStats single = measure_latency(run_single, warmup, iters);
    report << "latency.batch" << batch << ".single_thread.median_ms=" << single.median_ms
           << "\n";
    report << "latency.batch" << batch << ".single_thread.p95_ms=" << single.p95_ms << "\n";
    report << "latency.batch" << batch
           << ".single_thread.per_instance_ms=" << single.median_ms / batch << "\n";
    if (batch > 1) {
      const LatencyStats par = measure_latency(run_parallel, warmup, iters);
      report << "latency.batch" << batch << ".all_threads.median_ms=" << par.median_ms << "\n";
      report << "latency.batch" << batch << ".all_threads.p95_ms=" << par.p95_ms << "\n";
      report << "latency.batch" << batch << ".all_threads.threads=" << n_threads << "\n";
    }
  }

  std::cout << report.str();
  if (!out.empty()) {
    const auto dir = prepare_out_dir(out);
    write_text(dir / "bench_report.txt", report.str());
    write_config_echo(cmd, dir);
  }
  return 0;
}

int cmd_heatmap(const std::string& data_path, int index, const std::string& checkpoint,
                const std::string& vocab_path, const std::string& layer,
                const std::string& out, const ModelFlags& mf, CLI::App* cmd) {
  const ModelConfig config = mf.to_config();
  const Vocabulary vocab =
      Vocabulary::load(vocab_path.empty() ? default_vocab_path(checkpoint) : vocab_path);
  auto params = ModelParams::init(config, vocab.size(), 1);
  load_model(checkpoint, params);

  const Corpus corpus = load_tsv(data_path);
  if (index < 0 || index >= static_cast<int>(corpus.instances.size()))
    throw std::runtime_error("--index " + std::to_string(index) + " out of range (corpus has " +
                             std::to_string(corpus.instances.size()) + " instances)");
  const DialogueInstance& inst = corpus.instances[index];
  const Stacked stacked = stack_instance(inst, vocab, config);
  const auto slot_tokens = stack_tokens(inst, config);

  Tape tape;
  Activations acts;
  score_instance(tape, params, stacked.ids, stacked.mask, &acts);

  std::vector<std::string> tags;
  if (layer == "all") {
    tags.push_back("embedding");
    for (const auto& [tag, t] : acts)
      if (tag.rfind("conv@", 0) == 0) tags.push_back(tag);
  } else {
    tags.push_back(layer);
  }

  const auto dir = prepare_out_dir(out);
  for (const auto& tag : tags) {
    const Heatmap hmap = heatmap(acts, tag, slot_tokens, config);
    std::string fname = tag;
    std::replace(fname.begin(), fname.end(), '@', '_');
    std::ofstream csv(dir / (fname + ".csv"));
    csv << std::setprecision(6) << std::fixed;
    csv << "response\\context";
    for (const auto& col : hmap.col_labels) csv << "," << csv_escape(col);
    csv << "\n";
    for (size_t r = 0; r < hmap.sims.size(); ++r) {
      csv << csv_escape(hmap.row_labels[r]);
      for (double v : hmap.sims[r]) csv << "," << v;
      csv << "\n";
    }
  }
  write_config_echo(cmd, dir);
  std::cout << "wrote " << tags.size() << " heatmap file(s) to " << dir << "\n";
  return 0;
}

int cmd_ablate(const std::string& train_path, const std::string& valid_path,
               const std::string& out, int seeds, int threads, const ModelFlags& mf,
               const TrainFlags& tf, CLI::App* cmd) {
  const auto dir = prepare_out_dir(out);
  const Corpus train = load_tsv(train_path);
  const Corpus valid = load_tsv(valid_path);
  const Vocabulary vocab = Vocabulary::build(train);
  vocab.save((dir / "vocab.txt").string());

  std::ostringstream table;
  table << std::left << std::setw(8) << "Setting" << std::setw(12) << "Params"
        << "Valid metric (mean over " << seeds << " seed(s))\n";

  std::string metric_name;
  for (const std::string variant : {"full", "-LocM", "-ConM", "-DisM", "-Agg"}) {
    ModelFlags vf = mf;
    vf.ablate = variant == "full" ? "none" : variant.substr(1);
    const ModelConfig config = vf.to_config();

    double metric_sum = 0.0;
    for (int s = 0; s < seeds; ++s) {
      TrainFlags seeded = tf;
      seeded.seed = tf.seed + s;
      auto params = ModelParams::init(config, vocab.size(), seeded.seed);
      auto result = run_finetune(params, train, valid, vocab, seeded.to_config(), metric_name,
                                 thread_count(threads));
      metric_name = result.metric_name;
      metric_sum += result.best_metric;
    }
    const auto pc = param_count(config, vocab.size());
    table << std::left << std::setw(8) << variant << std::setw(12) << pc.total << std::fixed
          << std::setprecision(4) << metric_sum / seeds << "\n";
  }

  std::cout << "metric: " << metric_name << "\n" << table.str();
  write_text(dir / "ablation.txt", table.str());
  write_config_echo(cmd, dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view fully convolutional response selection"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic desk-scale corpus");
  std::string synth_out = "synth_out";
  SynthOptions synth_opt;
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--groups", synth_opt.n_groups, "Training groups");
  synth->add_option("--candidates", synth_opt.candidates_per_group, "Candidates per group");
  synth->add_option("--vocab-size", synth_opt.vocab_size, "Token vocabulary size");
  synth->add_option("--overlap", synth_opt.overlap_rate, "Positive/context keyword overlap");
  synth->add_option("--seed", synth_opt.seed, "Generator seed");
  add_config_file(synth);

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining on a TSV corpus");
  std::string pre_train_path, pre_out = "pretrain_out", pre_embeddings;
  ModelFlags pre_mf;
  TrainFlags pre_tf;
  pretrain->add_option("--train", pre_train_path, "Training TSV")->required();
  pretrain->add_option("--out", pre_out, "Output directory");
  pretrain->add_option("--embeddings", pre_embeddings, "Pretrained embedding text file");
  add_model_flags(pretrain, pre_mf);
  add_train_flags(pretrain, pre_tf, true);
  add_config_file(pretrain);

  // finetune
  auto* finetune = app.add_subcommand("finetune", "Fine-tune with BCE + Adam");
  std::string ft_train, ft_valid, ft_out = "finetune_out", ft_init, ft_vocab, ft_embeddings,
              ft_metric;
  int ft_threads = 0;
  ModelFlags ft_mf;
  TrainFlags ft_tf;
  finetune->add_option("--train", ft_train, "Training TSV")->required();
  finetune->add_option("--valid", ft_valid, "Validation TSV")->required();
  finetune->add_option("--out", ft_out, "Output directory");
  finetune->add_option("--init", ft_init, "Warm-start checkpoint (e.g. from pretrain)");
  finetune->add_option("--vocab", ft_vocab, "Vocabulary file (defaults to the checkpoint's)");
  finetune->add_option("--embeddings", ft_embeddings, "Pretrained embedding text file");
  finetune->add_option("--metric", ft_metric, "Validation metric (default R<n>@1)");
  finetune->add_option("--threads", ft_threads, "Evaluation threads (0 = all)");
  add_model_flags(finetune, ft_mf);
  add_train_flags(finetune, ft_tf, false);
  add_config_file(finetune);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a TSV corpus");
  std::string ev_data, ev_ckpt, ev_vocab, ev_out;
  std::vector<std::string> ev_metrics;
  bool ev_perturb = false;
  uint64_t ev_perturb_seed = 7;
  int ev_threads = 0;
  ModelFlags ev_mf;
  eval->add_option("--data", ev_data, "Evaluation TSV")->required();
  eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  eval->add_option("--vocab", ev_vocab, "Vocabulary file (defaults to the checkpoint's)");
  eval->add_option("--metrics", ev_metrics, "Metrics, e.g. R10@1,MAP,MRR")->delimiter(',');
  eval->add_flag("--perturb", ev_perturb, "Also evaluate with shuffled contexts (Rand row)");
  eval->add_option("--perturb-seed", ev_perturb_seed, "Perturbation seed");
  eval->add_option("--threads", ev_threads, "Scoring threads (0 = all)");
  eval->add_option("--out", ev_out, "Optional report directory");
  add_model_flags(eval, ev_mf);
  add_config_file(eval);

  // bench
  auto* bench = app.add_subcommand("bench", "Parameter and CPU latency benchmark");
  std::string bn_ckpt, bn_vocab, bn_out;
  std::vector<int> bn_batches = {1};
  int bn_warmup = 5, bn_iters = 30, bn_threads = 0;
  uint64_t bn_seed = 1;
  ModelFlags bn_mf;
  bench->add_option("--checkpoint", bn_ckpt, "Optional checkpoint (default: fresh model)");
  bench->add_option("--vocab", bn_vocab, "Vocabulary file (defaults to the checkpoint's)");
  bench->add_option("--batch-sizes", bn_batches, "Batch sizes to time")->delimiter(',');
  bench->add_option("--warmup", bn_warmup, "Warmup runs per batch size");
  bench->add_option("--iters", bn_iters, "Timed runs per batch size");
  bench->add_option("--threads", bn_threads, "Threads for the all-threads mode (0 = all)");
  bench->add_option("--seed", bn_seed, "Seed for the fresh model / probe batches");
  bench->add_option("--out", bn_out, "Optional report directory");
  add_model_flags(bench, bn_mf);
  add_config_file(bench);

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "Export response/context similarity CSVs");
  std::string hm_data, hm_ckpt, hm_vocab, hm_layer = "all", hm_out = "heatmap_out";
  int hm_index = 0;
  ModelFlags hm_mf;
  hm->add_option("--data", hm_data, "TSV corpus")->required();
  hm->add_option("--index", hm_index, "Instance index in the corpus");
  hm->add_option("--checkpoint", hm_ckpt, "Model checkpoint")->required();
  hm->add_option("--vocab", hm_vocab, "Vocabulary file (defaults to the checkpoint's)");
  hm->add_option("--layer", hm_layer, "Layer tag (embedding, conv@1..conv@11) or 'all'");
  hm->add_option("--out", hm_out, "Output directory");
  add_model_flags(hm, hm_mf);
  add_config_file(hm);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and compare the ablation variants");
  std::string ab_train, ab_valid, ab_out = "ablate_out";
  int ab_seeds = 1, ab_threads = 0;
  ModelFlags ab_mf;
  TrainFlags ab_tf;
  ablate->add_option("--train", ab_train, "Training TSV")->required();
  ablate->add_option("--valid", ab_valid, "Validation TSV")->required();
  ablate->add_option("--out", ab_out, "Output directory");
  ablate->add_option("--seeds", ab_seeds, "Seeds per variant");
  ablate->add_option("--threads", ab_threads, "Evaluation threads (0 = all)");
  add_model_flags(ablate, ab_mf);
  add_train_flags(ablate, ab_tf, false);
  add_config_file(ablate);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_out, synth_opt, synth);
    if (pretrain->parsed())
      return cmd_pretrain(pre_train_path, pre_out, pre_embeddings, pre_mf, pre_tf, pretrain);
    if (finetune->parsed())
      return cmd_finetune(ft_train, ft_valid, ft_out, ft_init, ft_vocab, ft_embeddings,
                          ft_metric, ft_threads, ft_mf, ft_tf, finetune);
    if (eval->parsed())
      return cmd_eval(ev_data, ev_ckpt, ev_vocab, ev_metrics, ev_perturb, ev_perturb_seed,
                      ev_threads, ev_out, ev_mf, eval);
    if (bench->parsed())
      return cmd_bench(bn_ckpt, bn_vocab, bn_batches, bn_warmup, bn_iters, bn_threads, bn_seed,
                       bn_out, bn_mf, bench);
    if (hm->parsed())
      return cmd_heatmap(hm_data, hm_index, hm_ckpt, hm_vocab, hm_layer, hm_out, hm_mf, hm);
    if (ablate->parsed())
      return cmd_ablate(ab_train, ab_valid, ab_out, ab_seeds, ab_threads, ab_mf, ab_tf, ablate);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
