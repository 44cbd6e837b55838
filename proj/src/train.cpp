#include "dconv/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dconv {

double lr_schedule(int epoch, const std::vector<double>& ladder,
                   const std::vector<int>& milestones) {
  if (ladder.empty()) throw std::invalid_argument("lr_schedule: empty ladder");
  if (milestones.size() + 1 != ladder.size())
    throw std::invalid_argument("lr_schedule: need ladder-size - 1 milestones");
  for (size_t i = 0; i < milestones.size(); ++i)
    if (epoch < milestones[i]) return ladder[i];
  return ladder.back();
}

double bce_loss_value(const std::vector<float>& scores, const std::vector<float>& labels) {
  Tape tape;
  Var s = tape.constant(Tensor(Shape{static_cast<int>(scores.size())}, scores));
  return tape.value(tape.bce_loss(s, labels)).data[0];
}

// ---------------------------------------------------------------------------

double global_grad_norm(const std::vector<Tensor*>& params) {
  double sq = 0.0;
  for (const Tensor* p : params)
    for (float g : p->grad) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

static void check_gradients_finite(const std::vector<Tensor*>& params) {
  for (const Tensor* p : params)
    for (float g : p->grad)
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient encountered; aborting update");
}

void clip_gradients(const std::vector<Tensor*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (Tensor* p : params)
    for (float& g : p->grad) g *= scale;
}

void zero_gradients(const std::vector<Tensor*>& params) {
  for (Tensor* p : params) p->zero_grad();
}

void sgd_step(const std::vector<Tensor*>& params, double lr) {
  check_gradients_finite(params);
  for (Tensor* p : params) {
    if (p->grad.empty()) continue;
    const float flr = static_cast<float>(lr);
    for (size_t i = 0; i < p->data.size(); ++i) p->data[i] -= flr * p->grad[i];
  }
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  check_gradients_finite(params);
  if (state.slots.size() != params.size()) {
    state.slots.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      state.slots[i].m.assign(params[i]->data.size(), 0.0f);
      state.slots[i].v.assign(params[i]->data.size(), 0.0f);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i];
    if (p->grad.empty()) continue;
    auto& m = state.slots[i].m;
    auto& v = state.slots[i].v;
    for (size_t j = 0; j < p->data.size(); ++j) {
      const double g = p->grad[j];
      m[j] = static_cast<float>(beta1 * m[j] + (1.0 - beta1) * g);
      v[j] = static_cast<float>(beta2 * v[j] + (1.0 - beta2) * g * g);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p->data[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Pretraining.

namespace {

struct GroupIndex {
  int positive = -1;           // first positive instance
  std::vector<int> negatives;  // label-0 instances of the group
};

std::vector<GroupIndex> index_groups(const Corpus& corpus) {
  std::vector<GroupIndex> groups(static_cast<size_t>(corpus.num_groups));
  for (size_t i = 0; i < corpus.instances.size(); ++i) {
    const auto& inst = corpus.instances[i];
    auto& g = groups[inst.group_id];
    if (inst.label == 1) {
      if (g.positive < 0) g.positive = static_cast<int>(i);
    } else {
      g.negatives.push_back(static_cast<int>(i));
    }
  }
  return groups;
}

std::vector<Tensor*> param_list(ModelParams& params) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params.named_tensors()) out.push_back(t);
  return out;
}

}  // namespace

double pretrain_epoch(ModelParams& params, const Corpus& corpus, const Vocabulary& vocab,
                      const TrainConfig& config, Rng& rng) {
  config.validate();
  const auto groups = index_groups(corpus);
  std::vector<int> usable;
  for (size_t g = 0; g < groups.size(); ++g)
    if (groups[g].positive >= 0) usable.push_back(static_cast<int>(g));
  if (usable.empty()) throw std::runtime_error("pretrain: no groups with a positive response");
  rng.shuffle(usable);

  params.set_requires_grad(true);
  const auto plist = param_list(params);
  const float tau = static_cast<float>(config.tau);

  double loss_sum = 0.0;
  int loss_count = 0;

  for (size_t start = 0; start < usable.size(); start += config.pretrain_batch) {
    const size_t end = std::min(usable.size(), start + config.pretrain_batch);
    Tape tape;

    std::vector<Var> ctx_out, pos_out;
    std::vector<std::vector<Var>> own_negs;
    for (size_t b = start; b < end; ++b) {
      const GroupIndex& g = groups[usable[b]];
      const auto& pos_inst = corpus.instances[g.positive];
      const Stacked ctx = stack_instance(pos_inst, vocab, params.config, StackView::kContextOnly);
      const Stacked pos = stack_instance(pos_inst, vocab, params.config, StackView::kResponseOnly);
      ctx_out.push_back(encode(tape, params, ctx.ids, ctx.mask));
      pos_out.push_back(encode(tape, params, pos.ids, pos.mask));
      std::vector<Var> negs;
      for (int ni : g.negatives) {
        const Stacked neg =
            stack_instance(corpus.instances[ni], vocab, params.config, StackView::kResponseOnly);
        negs.push_back(encode(tape, params, neg.ids, neg.mask));
      }
      own_negs.push_back(std::move(negs));
    }

    std::vector<Var> losses;
    for (size_t i = 0; i < ctx_out.size(); ++i) {
      std::vector<Var> negs = own_negs[i];
      for (size_t j = 0; j < pos_out.size(); ++j)  // in-batch negatives
        if (j != i) negs.push_back(pos_out[j]);
      losses.push_back(contrastive_loss(tape, ctx_out[i], pos_out[i], negs, tau));
    }
    Var batch_loss = tape.mean_all(tape.stack_scalars(losses));
    loss_sum += tape.value(batch_loss).data[0] * static_cast<double>(losses.size());
    loss_count += static_cast<int>(losses.size());

    tape.backward(batch_loss);
    clip_gradients(plist, config.grad_clip);
    sgd_step(plist, config.pretrain_lr);
    zero_gradients(plist);
  }
  return loss_sum / loss_count;
}

// ---------------------------------------------------------------------------
// Fine-tuning.

double finetune_epoch(ModelParams& params, const Corpus& corpus, const Vocabulary& vocab,
                      const TrainConfig& config, int epoch, AdamState& adam, Rng& rng) {
  config.validate();
  std::vector<int> order(corpus.instances.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  params.set_requires_grad(true);
  const auto plist = param_list(params);
  const double lr = lr_schedule(epoch, config.lr_ladder, config.milestones);

  double loss_sum = 0.0;
  for (size_t start = 0; start < order.size(); start += config.batch_size) {
    const size_t end = std::min(order.size(), start + config.batch_size);
    const float inv_batch = 1.0f / static_cast<float>(end - start);

    // One tape per instance keeps peak memory at a single forward graph;
    // scaling each loss by 1/B makes the accumulated gradients equal the
    // batch-mean gradient.
    for (size_t b = start; b < end; ++b) {
      const auto& inst = corpus.instances[order[b]];
      const Stacked s = stack_instance(inst, vocab, params.config);
      Tape tape;
      Var score = score_instance(tape, params, s.ids, s.mask);
      Var loss = tape.bce_loss(score, {static_cast<float>(inst.label)});
      loss_sum += tape.value(loss).data[0];
      tape.backward(tape.scale(loss, inv_batch));
    }
    clip_gradients(plist, config.grad_clip);
    adam_step(plist, adam, lr);
    zero_gradients(plist);
  }
  return loss_sum / static_cast<double>(corpus.instances.size());
}

// ---------------------------------------------------------------------------
// Multi-epoch drivers.

PretrainResult run_pretrain(ModelParams& params, const Corpus& train, const Vocabulary& vocab,
                            const TrainConfig& config, const LogSink& log) {
  PretrainResult result;
  Rng rng(config.seed);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double loss = pretrain_epoch(params, train, vocab, config, rng);
    result.epoch_losses.push_back(loss);
    ++result.epochs_run;
    if (log) {
      std::ostringstream os;
      os << "epoch=" << epoch << " split=pretrain loss=" << loss;
      log(os.str());
    }
    if (loss < best - 1e-9) {
      best = loss;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

FinetuneResult run_finetune(ModelParams& params, const Corpus& train, const Corpus& valid,
                            const Vocabulary& vocab, const TrainConfig& config,
                            std::string metric_name, int eval_threads, const LogSink& log) {
  FinetuneResult result;
  if (metric_name.empty()) {
    const int group_size = valid.instances.empty()
                               ? 2
                               : static_cast<int>(valid.instances.size()) /
                                     std::max(1, valid.num_groups);
    metric_name = "R" + std::to_string(group_size) + "@1";
  }
  result.metric_name = metric_name;
  result.best_params = params;

  Rng rng(config.seed);
  AdamState adam;
  EvalOptions eval_options;
  eval_options.metrics = {metric_name};
  eval_options.threads = eval_threads;

  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double loss = finetune_epoch(params, train, vocab, config, epoch, adam, rng);
    result.epoch_losses.push_back(loss);
    const MetricReport report = evaluate_run(params, vocab, valid, eval_options);
    const double metric = report.get(metric_name);
    if (log) {
      std::ostringstream os;
      os << "epoch=" << epoch << " split=valid loss=" << loss << " " << metric_name << "="
         << metric;
      log(os.str());
    }
    if (result.best_epoch < 0 || metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best_params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace dconv
