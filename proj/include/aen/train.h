#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aen/augment.h"
#include "aen/dataset.h"
#include "aen/model.h"
#include "aen/rng.h"
#include "aen/tensor.h"

namespace aen {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int max_epochs = 100;
  double scheduler_factor = 0.5;
  int scheduler_patience = 5;
  int early_stop_patience = 15;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// make_batches input: features already extracted (and augmented, if this is
// a training epoch).
struct FeatureExample {
  LogMelSpectrogram features;
  int label = -1;
};

struct Batch {
  Tensor features;           // [B, 1, n_mels, T_max], zero-padded rows
  std::vector<int> lengths;  // original frame counts
  std::vector<int> labels;
};

// Optionally shuffles (Fisher-Yates on `rng`), then chunks into batches of
// batch_size (last one may be short).  Each batch is zero-padded on the time
// axis to its own longest member.  Throws ValueError on an empty input or
// batch_size < 1, ShapeError on mixed mel band counts.
std::vector<Batch> make_batches(const std::vector<FeatureExample>& samples,
                                int batch_size, bool shuffle, Rng& rng);

// Adam with bias correction; weight decay is the coupled L2 form, folded
// into the gradient (g <- g + wd * theta) before the moment updates.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const TrainConfig& cfg);

  // Applies one update from the parameters' current gradients (a parameter
  // with no gradient buffer counts as zero gradient).
  void step();

  double lr() const { return lr_; }
  void set_lr(double lr);
  long long steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
  double lr_;
  double weight_decay_, beta1_, beta2_, eps_;
};

// Halves (by `factor`) the learning rate when the observed validation loss
// has not improved by more than 1e-4 for `patience` consecutive epochs;
// floored at 1e-7.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience,
                   double min_lr = 1e-7, double threshold = 1e-4);

  // Feeds one epoch's validation loss; returns the (possibly reduced) lr.
  double observe(double val_loss);

  double lr() const { return lr_; }

 private:
  double lr_, factor_, min_lr_, threshold_;
  int patience_, bad_epochs_ = 0;
  double best_;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;  // rate in effect during this epoch's updates
};

using History = std::vector<EpochStats>;

// One JSON object per line: epoch, train_loss, val_loss, val_acc, lr.
void write_history_jsonl(const History& history, const std::string& path);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

// Eval-mode forward over unshuffled batches; no augmentation, no dropout,
// batchnorm running statistics.  Deterministic for fixed inputs.
EvalResult evaluate(ArabEmoNet& model, const std::vector<Sample>& samples,
                    int batch_size);

// Full training loop.  Per epoch: augment the training set (when enabled;
// AWGN needs waveforms and re-extracts features via `mel`), batch, forward
// in training mode, cross-entropy, backward, Adam step; then validation in
// eval mode drives the plateau scheduler, best-epoch checkpointing, and
// early stopping.  On return the model holds the weights of the epoch with
// the lowest validation loss.  Augmentation draws are derived from
// (seed, epoch, sample index), so results do not depend on worker count.
// Throws NumericError naming (epoch, batch) if the loss goes non-finite.
History train(ArabEmoNet& model, const std::vector<Sample>& train_set,
              const std::vector<Sample>& val_set, const AugmentConfig& aug,
              const MelConfig& mel, const TrainConfig& cfg);

}  // namespace aen
