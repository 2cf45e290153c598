#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aen/augment.h"
#include "aen/dataset.h"
#include "aen/model.h"
#include "aen/train.h"

namespace aen {

struct FoldAssignment {
  std::vector<int> fold;  // fold index per sample, 0..k-1
  int k = 0;
  std::uint64_t seed = 0;
};

// Within each class (classes visited in ascending label order), shuffles the
// sample indices by a seed-derived rng and deals them round-robin to folds,
// so per-class fold counts never differ by more than 1.  Requires k >= 2 and
// at least 2 members per class; throws ValueError / DataError otherwise.
FoldAssignment stratified_kfold(const std::vector<int>& labels, int k,
                                std::uint64_t seed);

// conf[true][pred] counts; equal-length inputs with values in [0, C).
std::vector<std::vector<long long>> confusion_matrix(
    const std::vector<int>& preds, const std::vector<int>& labels, int c);

struct Metrics {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
};

// accuracy = trace/total; per-class F1 with the 0/0 -> 0 convention; macro
// is the unweighted mean over all C classes; micro is computed from
// aggregate TP/FP/FN counts, which for single-label classification makes it
// equal to accuracy exactly.  Throws ValueError on an all-zero matrix.
Metrics metrics(const std::vector<std::vector<long long>>& conf);

struct FoldMetrics {
  int fold = 0;
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<long long>> confusion;
};

struct FoldReport {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> label_names;
  std::vector<FoldMetrics> folds;
  // Population mean/std over folds.
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_micro_f1 = 0.0, std_micro_f1 = 0.0;
  double mean_macro_f1 = 0.0, std_macro_f1 = 0.0;
};

struct CrossValResult {
  FoldReport report;
  std::vector<History> histories;       // one per fold
  std::vector<ArabEmoNet> fold_models;  // best-epoch weights per fold
};

// k-fold cross-validation: per fold, trains a fresh seed-derived model on
// the other folds (with a stratified ~10% of that training portion carved
// off as the validation set for scheduling/early stopping — never the test
// fold) and evaluates the held-out fold in eval mode.  Folds may run in
// parallel (jobs > 1); results are bitwise independent of the worker count
// because every random stream derives from (seed, fold).
CrossValResult cross_validate(const std::vector<Sample>& dataset,
                              const ModelConfig& model_cfg,
                              const TrainConfig& train_cfg,
                              const AugmentConfig& aug_cfg,
                              const MelConfig& mel_cfg,
                              const std::vector<std::string>& label_names,
                              int k, std::uint64_t seed, int jobs = 1);

// Deterministic serializations used by the CLI (and the byte-identity
// acceptance check): JSON for the report, CSV for a confusion matrix.
std::string fold_report_json(const FoldReport& report, bool synthetic_data);
std::string confusion_csv(const std::vector<std::vector<long long>>& conf,
                          const std::vector<std::string>& label_names);

}  // namespace aen
