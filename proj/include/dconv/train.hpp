// Losses, optimizers, the learning-rate ladder, and the pretraining /
// fine-tuning drivers.
//
// Pretraining is contrastive: a context and its correct response are encoded
// separately through the shared encoder and pulled together against the
// group's own negative responses plus the positives of the other pairs in
// the batch. Fine-tuning is binary cross-entropy on the matching score with
// Adam and a multi-step learning-rate schedule.

#pragma once

#include "dconv/data.hpp"
#include "dconv/metrics.hpp"
#include "dconv/model.hpp"
#include "dconv/tape.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dconv {

struct TrainConfig {
  double tau = 0.007;  // contrastive temperature

  double pretrain_lr = 0.001;
  int pretrain_batch = 128;

  std::vector<double> lr_ladder = {1e-3, 5e-4, 1e-4, 5e-5, 1e-5};
  std::vector<int> milestones = {2, 4, 6, 8};
  int batch_size = 64;

  int epochs = 20;
  int patience = 3;  // early-stop patience, in epochs
  double grad_clip = 5.0;
  uint64_t seed = 1;

  void validate() const {
    if (tau <= 0) throw std::invalid_argument("temperature must be > 0");
    for (size_t i = 1; i < lr_ladder.size(); ++i)
      if (lr_ladder[i] >= lr_ladder[i - 1])
        throw std::invalid_argument("learning-rate ladder must be strictly decreasing");
    if (milestones.size() + 1 != lr_ladder.size())
      throw std::invalid_argument("need exactly ladder-size - 1 milestones");
    for (size_t i = 1; i < milestones.size(); ++i)
      if (milestones[i] <= milestones[i - 1])
        throw std::invalid_argument("milestones must be strictly increasing");
  }
};

// Piecewise-constant schedule: ladder[i] while epoch < milestones[i], the
// last ladder value afterwards.
double lr_schedule(int epoch, const std::vector<double>& ladder,
                   const std::vector<int>& milestones);

// ---------------------------------------------------------------------------
// Losses.

// Mean binary cross-entropy over a score vector (see Tape::bce_loss).
double bce_loss_value(const std::vector<float>& scores, const std::vector<float>& labels);

// Contrastive objective for one (context, positive, negatives) triple with
// cosine similarity at temperature tau, as a tape subgraph. Returns the
// negative log-likelihood of the positive among {positive} + negatives, so 0
// with no negatives and ln(1+N) when all similarities tie.
template <class S>
inline Var contrastive_loss(TapeT<S>& tape, Var ctx, Var pos, const std::vector<Var>& negs,
                            S tau) {
  if (tau <= S(0)) throw std::invalid_argument("temperature must be > 0");
  const S inv_tau = S(1) / tau;
  Var pos_sim = tape.scale(tape.cosine_sim(ctx, pos), inv_tau);
  // Centering every entry on the positive before the logsumexp keeps the
  // arithmetic near zero: equal similarities give exactly ln(1+N) and the
  // no-negative case is exactly 0, even at small tau.
  std::vector<Var> entries = {tape.sub(pos_sim, pos_sim)};
  for (Var n : negs)
    entries.push_back(
        tape.sub(tape.scale(tape.cosine_sim(ctx, n), inv_tau), pos_sim));
  return tape.logsumexp(tape.stack_scalars(entries));
}

// ---------------------------------------------------------------------------
// Optimizers. Both abort on non-finite gradients.

void sgd_step(const std::vector<Tensor*>& params, double lr);

struct AdamState {
  struct Moments {
    std::vector<float> m, v;
  };
  std::vector<Moments> slots;  // parallel to the parameter list
  int64_t step = 0;
};

void adam_step(const std::vector<Tensor*>& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

double global_grad_norm(const std::vector<Tensor*>& params);
void clip_gradients(const std::vector<Tensor*>& params, double max_norm);
void zero_gradients(const std::vector<Tensor*>& params);

// ---------------------------------------------------------------------------
// Epoch drivers. Both shuffle with the provided RNG, so running epochs in
// sequence from one seeded RNG is fully deterministic.

// One pass of contrastive pretraining (SGD); returns the epoch mean loss.
double pretrain_epoch(ModelParams& params, const Corpus& corpus, const Vocabulary& vocab,
                      const TrainConfig& config, Rng& rng);

// One pass of BCE fine-tuning (Adam at the scheduled rate for `epoch`);
// returns the epoch mean loss.
double finetune_epoch(ModelParams& params, const Corpus& corpus, const Vocabulary& vocab,
                      const TrainConfig& config, int epoch, AdamState& adam, Rng& rng);

// ---------------------------------------------------------------------------
// Multi-epoch drivers with early stopping. `log` receives one line per epoch
// in key=value form.

using LogSink = std::function<void(const std::string&)>;

struct PretrainResult {
  std::vector<double> epoch_losses;
  int epochs_run = 0;
};

PretrainResult run_pretrain(ModelParams& params, const Corpus& train, const Vocabulary& vocab,
                            const TrainConfig& config, const LogSink& log = nullptr);

struct FinetuneResult {
  ModelParams best_params;
  double best_metric = 0.0;
  int best_epoch = -1;
  std::string metric_name;
  std::vector<double> epoch_losses;
};

// Early-stops on the validation metric (R<n>@1 chosen from the validation
// group size unless `metric_name` is given).
FinetuneResult run_finetune(ModelParams& params, const Corpus& train, const Corpus& valid,
                            const Vocabulary& vocab, const TrainConfig& config,
                            std::string metric_name = "", int eval_threads = 1,
                            const LogSink& log = nullptr);

}  // namespace dconv
