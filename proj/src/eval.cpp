#include "aen/eval.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "aen/error.h"

namespace aen {

FoldAssignment stratified_kfold(const std::vector<int>& labels, int k,
                                std::uint64_t seed) {
  if (k < 2) {
    throw ValueError("stratified_kfold: k must be >= 2, got " +
                     std::to_string(k));
  }
  if (labels.empty()) {
    throw ValueError("stratified_kfold: empty label list");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) {
      throw ValueError("stratified_kfold: negative label at index " +
                       std::to_string(i));
    }
    by_class[labels[i]].push_back(i);
  }
  for (const auto& [cls, idx] : by_class) {
    if (idx.size() < 2) {
      throw DataError("stratified_kfold: class " + std::to_string(cls) +
                      " has " + std::to_string(idx.size()) +
                      " sample(s); need at least 2 per class");
    }
  }

  FoldAssignment out;
  out.fold.assign(labels.size(), -1);
  out.k = k;
  out.seed = seed;
  for (auto& [cls, idx] : by_class) {
    Rng rng(Rng::derive(seed, 0x5F01Dull, static_cast<std::uint64_t>(cls)));
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(idx[i], idx[j]);
    }
    for (std::size_t pos = 0; pos < idx.size(); ++pos) {
      out.fold[idx[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    }
  }
  return out;
}

std::vector<std::vector<long long>> confusion_matrix(
    const std::vector<int>& preds, const std::vector<int>& labels, int c) {
  if (c < 1) {
    throw ValueError("confusion_matrix: need at least one class");
  }
  if (preds.size() != labels.size()) {
    throw ValueError("confusion_matrix: " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(labels.size()) +
                     " labels");
  }
  std::vector<std::vector<long long>> conf(
      static_cast<std::size_t>(c),
      std::vector<long long>(static_cast<std::size_t>(c), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= c || preds[i] < 0 || preds[i] >= c) {
      throw ValueError("confusion_matrix: value outside [0, " +
                       std::to_string(c) + ") at index " + std::to_string(i));
    }
    ++conf[static_cast<std::size_t>(labels[i])]
          [static_cast<std::size_t>(preds[i])];
  }
  return conf;
}

Metrics metrics(const std::vector<std::vector<long long>>& conf) {
  const std::size_t c = conf.size();
  if (c == 0) {
    throw ValueError("metrics: empty confusion matrix");
  }
  long long total = 0, trace = 0;
  for (std::size_t r = 0; r < c; ++r) {
    if (conf[r].size() != c) {
      throw ShapeError("metrics: confusion matrix must be square");
    }
    for (std::size_t j = 0; j < c; ++j) {
      if (conf[r][j] < 0) {
        throw ValueError("metrics: negative confusion count");
      }
      total += conf[r][j];
    }
    trace += conf[r][r];
  }
  if (total == 0) {
    throw ValueError("metrics: all-zero confusion matrix");
  }

  Metrics m;
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);

  double macro_sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    const long long tp = conf[i][i];
    long long row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += conf[i][j];
      col += conf[j][i];
    }
    const long long fn = row - tp;
    const long long fp = col - tp;
    const long long denom = 2 * tp + fp + fn;
    macro_sum += (denom == 0)
                     ? 0.0
                     : static_cast<double>(2 * tp) / static_cast<double>(denom);
  }
  m.macro_f1 = macro_sum / static_cast<double>(c);

  // Aggregate micro counts: FP and FN both equal total - trace, so the
  // quotient is the same real number as accuracy and IEEE division rounds
  // them to the same double.
  const long long micro_tp = trace;
  const long long micro_fp = total - trace;
  const long long micro_fn = total - trace;
  m.micro_f1 = static_cast<double>(2 * micro_tp) /
               static_cast<double>(2 * micro_tp + micro_fp + micro_fn);
  return m;
}

namespace {

struct FoldWork {
  FoldMetrics metrics;
  History history;
  std::optional<ArabEmoNet> model;
};

FoldWork run_fold(const std::vector<Sample>& dataset,
                  const FoldAssignment& assignment, int fold,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const AugmentConfig& aug_cfg, const MelConfig& mel_cfg,
                  std::uint64_t seed) {
  const int c = model_cfg.num_classes;

  std::vector<Sample> test;
  std::vector<Sample> pool;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (assignment.fold[i] == fold) {
      test.push_back(dataset[i]);
    } else {
      pool.push_back(dataset[i]);
    }
  }

  // Stratified ~10% of the training portion becomes the validation set
  // (never the test fold).  Classes with a single pooled sample keep it for
  // training.
  std::vector<std::size_t> val_picks;
  {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      by_class[pool[i].label].push_back(i);
    }
    for (auto& [cls, idx] : by_class) {
      if (idx.size() < 2) {
        continue;
      }
      Rng rng(Rng::derive(seed, 0x7A11DA7Eull + static_cast<std::uint64_t>(fold),
                          static_cast<std::uint64_t>(cls)));
      for (std::size_t i = idx.size() - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(idx[i], idx[j]);
      }
      const auto want = std::max<std::size_t>(
          1, static_cast<std::size_t>(0.1 * static_cast<double>(idx.size())));
      for (std::size_t n = 0; n < want; ++n) {
        val_picks.push_back(idx[n]);
      }
    }
    if (val_picks.empty() && !pool.empty()) {
      val_picks.push_back(0);  // minimal fallback on very small datasets
    }
  }
  std::vector<bool> in_val(pool.size(), false);
  for (std::size_t i : val_picks) {
    in_val[i] = true;
  }
  std::vector<Sample> train_split, val_split;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (in_val[i] ? val_split : train_split).push_back(std::move(pool[i]));
  }

  Rng model_rng(Rng::derive(seed, 0xF01Dull, static_cast<std::uint64_t>(fold)));
  ArabEmoNet model(model_cfg, model_rng);
  TrainConfig tc = train_cfg;
  tc.seed = Rng::derive(seed, 0x7124A11ull, static_cast<std::uint64_t>(fold));

  FoldWork work;
  work.history = train(model, train_split, val_split, aug_cfg, mel_cfg, tc);

  const EvalResult ev = evaluate(model, test, tc.batch_size);
  std::vector<int> test_labels;
  test_labels.reserve(test.size());
  for (const Sample& s : test) {
    test_labels.push_back(s.label);
  }
  work.metrics.fold = fold;
  work.metrics.confusion = confusion_matrix(ev.predictions, test_labels, c);
  const Metrics m = metrics(work.metrics.confusion);
  work.metrics.accuracy = m.accuracy;
  work.metrics.micro_f1 = m.micro_f1;
  work.metrics.macro_f1 = m.macro_f1;
  work.model.emplace(std::move(model));
  return work;
}

void mean_std(const std::vector<double>& xs, double* mean, double* sd) {
  double mu = 0.0;
  for (double x : xs) mu += x;
  mu /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mu) * (x - mu);
  var /= static_cast<double>(xs.size());
  *mean = mu;
  *sd = std::sqrt(var);
}

}  // namespace

CrossValResult cross_validate(const std::vector<Sample>& dataset,
                              const ModelConfig& model_cfg,
                              const TrainConfig& train_cfg,
                              const AugmentConfig& aug_cfg,
                              const MelConfig& mel_cfg,
                              const std::vector<std::string>& label_names,
                              int k, std::uint64_t seed, int jobs) {
  model_cfg.validate();
  train_cfg.validate();
  aug_cfg.validate();
  if (jobs < 1) {
    throw ValueError("cross_validate: jobs must be >= 1");
  }
  if (static_cast<int>(label_names.size()) != model_cfg.num_classes) {
    throw ConfigError("cross_validate: " +
                      std::to_string(label_names.size()) +
                      " label names but model.num_classes = " +
                      std::to_string(model_cfg.num_classes));
  }
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const Sample& s : dataset) {
    if (s.label < 0 || s.label >= model_cfg.num_classes) {
      throw DataError("cross_validate: label " + std::to_string(s.label) +
                      " outside [0, " +
                      std::to_string(model_cfg.num_classes) + ")");
    }
    labels.push_back(s.label);
  }

  const FoldAssignment assignment = stratified_kfold(labels, k, seed);

  std::vector<std::optional<FoldWork>> work(static_cast<std::size_t>(k));
  auto run = [&](int fold) {
    work[static_cast<std::size_t>(fold)] =
        run_fold(dataset, assignment, fold, model_cfg, train_cfg, aug_cfg,
                 mel_cfg, seed);
  };

  if (jobs == 1) {
    for (int f = 0; f < k; ++f) {
      run(f);
    }
  } else {
    std::mutex err_mutex;
    std::exception_ptr first_error;
    const int workers = std::min(jobs, k);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int f = w; f < k; f += workers) {
          try {
            run(f);
          } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!first_error) {
              first_error = std::current_exception();
            }
          }
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
    if (first_error) {
      std::rethrow_exception(first_error);
    }
  }

  CrossValResult result;
  result.report.k = k;
  result.report.seed = seed;
  result.report.label_names = label_names;
  std::vector<double> accs, micros, macros;
  for (int f = 0; f < k; ++f) {
    FoldWork& fw = *work[static_cast<std::size_t>(f)];
    accs.push_back(fw.metrics.accuracy);
    micros.push_back(fw.metrics.micro_f1);
    macros.push_back(fw.metrics.macro_f1);
    result.report.folds.push_back(std::move(fw.metrics));
    result.histories.push_back(std::move(fw.history));
    result.fold_models.push_back(std::move(*fw.model));
  }
  mean_std(accs, &result.report.mean_accuracy, &result.report.std_accuracy);
  mean_std(micros, &result.report.mean_micro_f1, &result.report.std_micro_f1);
  mean_std(macros, &result.report.mean_macro_f1, &result.report.std_macro_f1);
  return result;
}

std::string fold_report_json(const FoldReport& report, bool synthetic_data) {
  nlohmann::ordered_json j;
  j["k"] = report.k;
  j["seed"] = report.seed;
  j["data"] = synthetic_data ? "synthetic" : "manifest";
  j["labels"] = report.label_names;
  j["folds"] = nlohmann::ordered_json::array();
  for (const FoldMetrics& f : report.folds) {
    nlohmann::ordered_json row;
    row["fold"] = f.fold;
    row["accuracy"] = f.accuracy;
    row["micro_f1"] = f.micro_f1;
    row["macro_f1"] = f.macro_f1;
    row["confusion"] = f.confusion;
    j["folds"].push_back(row);
  }
  j["mean"] = {{"accuracy", report.mean_accuracy},
               {"micro_f1", report.mean_micro_f1},
               {"macro_f1", report.mean_macro_f1}};
  j["std"] = {{"accuracy", report.std_accuracy},
              {"micro_f1", report.std_micro_f1},
              {"macro_f1", report.std_macro_f1}};
  return j.dump(2) + "\n";
}

std::string confusion_csv(const std::vector<std::vector<long long>>& conf,
                          const std::vector<std::string>& label_names) {
  if (label_names.size() != conf.size()) {
    throw ValueError("confusion_csv: label/matrix size mismatch");
  }
  std::ostringstream out;
  out << "true\\pred";
  for (const auto& name : label_names) {
    out << "," << name;
  }
  out << "\n";
  for (std::size_t r = 0; r < conf.size(); ++r) {
    out << label_names[r];
    for (long long v : conf[r]) {
      out << "," << v;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace aen
