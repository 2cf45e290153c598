#include "aen/train.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "aen/error.h"
#include "aen/ops.h"

namespace aen {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) {
    throw ConfigError("train.lr must be > 0");
  }
  if (weight_decay < 0.0) {
    throw ConfigError("train.weight_decay must be >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) {
    throw ConfigError("train.adam_eps must be > 0");
  }
  if (batch_size < 1) {
    throw ConfigError("train.batch_size must be >= 1");
  }
  if (max_epochs < 1) {
    throw ConfigError("train.max_epochs must be >= 1");
  }
  if (!(scheduler_factor > 0.0 && scheduler_factor < 1.0)) {
    throw ConfigError("train.scheduler_factor must lie in (0, 1)");
  }
  if (scheduler_patience < 1) {
    throw ConfigError("train.scheduler_patience must be >= 1");
  }
  if (early_stop_patience < 1) {
    throw ConfigError("train.early_stop_patience must be >= 1");
  }
}

std::vector<Batch> make_batches(const std::vector<FeatureExample>& samples,
                                int batch_size, bool shuffle, Rng& rng) {
  if (samples.empty()) {
    throw ValueError("make_batches: empty sample list");
  }
  if (batch_size < 1) {
    throw ValueError("make_batches: batch_size must be >= 1");
  }
  const int n_mels = samples.front().features.n_mels;
  for (const auto& s : samples) {
    if (s.features.n_mels != n_mels) {
      throw ShapeError("make_batches: mixed mel band counts (" +
                       std::to_string(s.features.n_mels) + " vs " +
                       std::to_string(n_mels) + ")");
    }
    if (s.features.frames < 1) {
      throw ValueError("make_batches: sample with zero frames");
    }
    if (s.label < 0) {
      throw ValueError("make_batches: negative label");
    }
  }

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  if (shuffle) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(order[i], order[j]);
    }
  }

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    const int b = static_cast<int>(end - start);
    int t_max = 0;
    for (std::size_t i = start; i < end; ++i) {
      t_max = std::max(t_max, samples[order[i]].features.frames);
    }
    Batch batch;
    batch.features = Tensor::zeros({b, 1, n_mels, t_max});
    auto& v = batch.features.mutable_values();
    for (std::size_t i = start; i < end; ++i) {
      const FeatureExample& s = samples[order[i]];
      const auto row = static_cast<std::size_t>(i - start);
      const auto frames = static_cast<std::size_t>(s.features.frames);
      for (std::size_t m = 0; m < static_cast<std::size_t>(n_mels); ++m) {
        double* dst = v.data() + ((row * static_cast<std::size_t>(n_mels)) + m) *
                                     static_cast<std::size_t>(t_max);
        const double* src =
            s.features.values.data() + m * frames;
        std::copy(src, src + frames, dst);
      }
      batch.lengths.push_back(s.features.frames);
      batch.labels.push_back(s.label);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

Adam::Adam(std::vector<Tensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      lr_(cfg.lr),
      weight_decay_(cfg.weight_decay),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps) {
  cfg.validate();
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.defined()) {
      throw ValueError("Adam: undefined parameter tensor");
    }
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void Adam::set_lr(double lr) {
  if (!(lr > 0.0)) {
    throw ValueError("Adam: lr must be > 0");
  }
  lr_ = lr;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    auto& theta = p.mutable_values();
    const std::vector<double>* grad = p.has_grad() ? &p.grad() : nullptr;
    if (grad != nullptr && grad->size() != theta.size()) {
      throw ShapeError("Adam: gradient / parameter size mismatch");
    }
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (grad ? (*grad)[i] : 0.0) + weight_decay_ * theta[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience,
                                   double min_lr, double threshold)
    : lr_(lr),
      factor_(factor),
      min_lr_(min_lr),
      threshold_(threshold),
      patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(lr > 0.0) || !(factor > 0.0 && factor < 1.0) || patience < 1) {
    throw ConfigError("plateau scheduler: need lr > 0, 0 < factor < 1, "
                      "patience >= 1");
  }
}

double PlateauScheduler::observe(double val_loss) {
  if (val_loss < best_ - threshold_) {
    best_ = val_loss;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
    if (bad_epochs_ >= patience_) {
      lr_ = std::max(lr_ * factor_, min_lr_);
      bad_epochs_ = 0;
    }
  }
  return lr_;
}

void write_history_jsonl(const History& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write history file: " + path);
  }
  for (const EpochStats& e : history) {
    nlohmann::ordered_json row;
    row["epoch"] = e.epoch;
    row["train_loss"] = e.train_loss;
    row["val_loss"] = e.val_loss;
    row["val_acc"] = e.val_acc;
    row["lr"] = e.lr;
    out << row.dump() << "\n";
  }
  out.flush();
  if (!out) {
    throw IoError("failed writing history file: " + path);
  }
}

namespace {

std::vector<FeatureExample> plain_features(const std::vector<Sample>& set) {
  std::vector<FeatureExample> out;
  out.reserve(set.size());
  for (const Sample& s : set) {
    out.push_back({s.features, s.label});
  }
  return out;
}

}  // namespace

EvalResult evaluate(ArabEmoNet& model, const std::vector<Sample>& samples,
                    int batch_size) {
  Rng unused(0);
  const std::vector<Batch> batches =
      make_batches(plain_features(samples), batch_size, /*shuffle=*/false,
                   unused);
  EvalResult res;
  double loss_sum = 0.0;
  long long correct = 0, total = 0;
  for (const Batch& batch : batches) {
    ForwardResult out = model.forward(batch.features, /*training=*/false);
    const Tensor loss = cross_entropy(out.logits, batch.labels);
    const auto b = static_cast<long long>(batch.labels.size());
    loss_sum += loss.item() * static_cast<double>(b);
    const int c = out.logits.dim(1);
    for (int r = 0; r < static_cast<int>(batch.labels.size()); ++r) {
      int arg = 0;
      double best = out.logits.at({r, 0});
      for (int j = 1; j < c; ++j) {
        const double lj = out.logits.at({r, j});
        if (lj > best) {
          best = lj;
          arg = j;
        }
      }
      res.predictions.push_back(arg);
      correct += (arg == batch.labels[static_cast<std::size_t>(r)]) ? 1 : 0;
    }
    total += b;
  }
  res.loss = loss_sum / static_cast<double>(total);
  res.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return res;
}

History train(ArabEmoNet& model, const std::vector<Sample>& train_set,
              const std::vector<Sample>& val_set, const AugmentConfig& aug,
              const MelConfig& mel, const TrainConfig& cfg) {
  cfg.validate();
  aug.validate();
  if (train_set.empty() || val_set.empty()) {
    throw ValueError("train: training and validation sets must be non-empty");
  }
  const int num_classes = model.config().num_classes;
  for (const auto* set : {&train_set, &val_set}) {
    for (const Sample& s : *set) {
      if (s.label < 0 || s.label >= num_classes) {
        throw DataError("train: label " + std::to_string(s.label) +
                        " outside [0, " + std::to_string(num_classes) + ")");
      }
      if (s.features.n_mels != model.config().n_mels) {
        throw ShapeError("train: sample has " +
                         std::to_string(s.features.n_mels) +
                         " mel bands, model expects " +
                         std::to_string(model.config().n_mels));
      }
    }
  }

  Adam adam(model.parameters(), cfg);
  PlateauScheduler sched(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_state = model.state_snapshot();
  int epochs_since_best = 0;
  History history;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // Per-sample augmentation, re-derived each epoch from (seed, epoch, i).
    std::vector<FeatureExample> feats;
    feats.reserve(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      const Sample& s = train_set[i];
      if (!aug.enabled) {
        feats.push_back({s.features, s.label});
        continue;
      }
      Rng srng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(i)));
      if (srng.uniform() >= aug.apply_probability) {
        feats.push_back({s.features, s.label});
        continue;
      }
      LogMelSpectrogram f;
      if (aug.awgn_enabled && !s.waveform.samples.empty()) {
        const double snr = srng.uniform(aug.snr_db_min, aug.snr_db_max);
        const Waveform noisy = awgn(s.waveform, snr, srng);
        f = melspectrogram(noisy, mel);
      } else {
        f = s.features;
      }
      feats.push_back({spec_augment(f, aug, srng), s.label});
    }

    Rng shuffle_rng(
        Rng::derive(cfg.seed, 0xBA7C4E5ull, static_cast<std::uint64_t>(epoch)));
    const std::vector<Batch> batches =
        make_batches(feats, cfg.batch_size, /*shuffle=*/true, shuffle_rng);

    const double epoch_lr = adam.lr();
    double loss_sum = 0.0;
    long long seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Rng fwd_rng(Rng::derive(cfg.seed,
                              0xD20D0000ull + static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(b)));
      Tape tape;
      TapeScope scope(tape);
      Tensor loss;
      try {
        ForwardResult out = model.forward(batches[b].features,
                                          /*training=*/true, &fwd_rng);
        loss = cross_entropy(out.logits, batches[b].labels);
      } catch (const NumericError& e) {
        throw NumericError("non-finite values at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": " + e.what());
      }
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      }
      backward(loss);
      adam.step();
      model.zero_grad();
      loss_sum += lv * static_cast<double>(batches[b].labels.size());
      seen += static_cast<long long>(batches[b].labels.size());
    }

    const EvalResult val = evaluate(model, val_set, cfg.batch_size);
    if (!std::isfinite(val.loss)) {
      throw NumericError("non-finite validation loss at epoch " +
                         std::to_string(epoch));
    }

    history.push_back({epoch, loss_sum / static_cast<double>(seen), val.loss,
                       val.accuracy, epoch_lr});

    adam.set_lr(sched.observe(val.loss));

    if (val.loss < best_val) {
      best_val = val.loss;
      best_state = model.state_snapshot();
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }
    if (epochs_since_best >= cfg.early_stop_patience) {
      break;
    }
  }

  model.load_state(best_state);
  return history;
}

}  // namespace aen
