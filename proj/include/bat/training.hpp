#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bat/checkpoint.hpp"
#include "bat/episode.hpp"
#include "bat/model.hpp"
#include "bat/objectives.hpp"
#include "bat/preprocess.hpp"
#include "bat/sampler.hpp"
#include "bat/splits.hpp"

namespace bat::train {

enum class Mode { kPretrain, kFinetuneFull, kFinetuneHead, kScratch };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

enum class Architecture { kBat, kTransformer };

Architecture parse_architecture(const std::string& name);
std::string to_string(Architecture arch);

/// How fine-tuning obtains standardization statistics: fitted again on the
/// fine-tuning training split, or taken from the pretrained checkpoint.
enum class Standardization { kRefit, kInherit };

Standardization parse_standardization(const std::string& name);
std::string to_string(Standardization s);

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::size_t patience = 10;
  double min_delta = 5e-3;
  double learning_rate = 7.781e-4;
  double weight_decay = 1e-6;
  double lr_gamma = 0.95;
  std::uint64_t seed = 0;
  Mode mode = Mode::kPretrain;
  /// Positive-class weight n_neg / n_pos of the training split when set.
  bool weighted_loss = true;
  /// Caps optimizer steps per epoch (the rest of the shuffled epoch is
  /// dropped). Unbounded when empty.
  std::optional<std::size_t> max_batches_per_epoch;

  void validate() const;
};

// ---------------------------------------------------------------- optimizer

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * wd * p
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// Parameters without a gradient buffer are treated as having zero
/// gradient. Any non-finite gradient raises NumericError naming the
/// parameter, before any parameter is touched.
void optimizer_step(const std::vector<ad::Tensor>& params, OptimizerState& state, double lr,
                    double weight_decay, const AdamWConfig& adam = {});

/// lr0 * gamma^epoch. Requires 0 < gamma <= 1.
double lr_at_epoch(double lr0, double gamma, std::size_t epoch);

enum class StopDecision { kContinue, kStop };

/// An epoch improves when its loss is strictly below best - min_delta,
/// where best is the lowest loss of all earlier epochs. Stop once the last
/// `patience` epochs hold no improvement.
StopDecision early_stop_check(const std::vector<double>& history, std::size_t patience,
                              double min_delta);

// ---------------------------------------------------------------- runs

struct EpochRecord {
  std::size_t epoch = 0;
  std::optional<double> train_loss;  // empty for epoch 0 (before training)
  double validation_loss = 0.0;
  double lr = 0.0;
  std::size_t batches = 0;
  std::size_t skipped_batches = 0;
};

struct RunResult {
  ad::Checkpoint best_checkpoint;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_validation = 0.0;
  std::size_t stopped_epoch = 0;
  std::string stop_reason;
  std::optional<metrics::MetricReport> test_report;
  std::vector<std::string> test_ids;
  std::vector<std::string> log;

  std::vector<double> validation_curve() const;
};

/// Writes the run log lines plus a per-epoch CSV block.
void write_run_log(const std::filesystem::path& path, const RunResult& run);

/// Model hyperparameters as checkpoint metadata and back.
std::map<std::string, std::string> describe(const model::BatConfig& cfg);
model::BatConfig bat_config_from(const std::map<std::string, std::string>& meta);

// ---------------------------------------------------------------- pretraining

/// Self-supervised forecasting on preprocessed episodes. Validation windows
/// are drawn once (stream "validation_windows") and reused every epoch; the
/// entry for epoch 0 is the validation loss before any update.
RunResult pretrain_run(const std::vector<data::EpisodeRecord>& train,
                       const std::vector<data::EpisodeRecord>& validation,
                       const model::BatConfig& model_cfg, const TrainConfig& train_cfg,
                       const data::SamplerConfig& sampler_cfg);

struct PretrainResult {
  data::SplitPlan plan;
  std::vector<RunResult> folds;
  std::size_t selected_fold = 0;
  /// Best parameters of the selected fold plus its preprocessing statistics.
  ad::Checkpoint selected_checkpoint;
};

/// Five-fold pretraining on a raw pooled dataset. Each fold fits its own
/// preprocessing on its training part. The fold with the lowest best
/// validation masked loss is selected. Labels are ignored except for
/// stratifying the split.
PretrainResult pretrain(const data::Dataset& pooled, const model::BatConfig& model_cfg,
                        const TrainConfig& train_cfg, const data::SamplerConfig& sampler_cfg,
                        std::size_t folds = data::kFolds);

// ---------------------------------------------------------------- fine-tuning

struct FinetuneSplits {
  std::vector<data::EpisodeRecord> train;
  std::vector<data::EpisodeRecord> validation;
  std::vector<data::EpisodeRecord> test;
};

struct FinetuneRequest {
  Architecture architecture = Architecture::kBat;
  const ad::Checkpoint* pretrained = nullptr;
  model::BatConfig model;
  TrainConfig train;
  Standardization standardization = Standardization::kRefit;
};

/// Supervised training on raw (unpreprocessed) labeled splits. Minimizes
/// weighted BCE, early-stops on validation loss, restores the best epoch
/// and scores the test split.
RunResult finetune(const FinetuneRequest& request, const FinetuneSplits& splits);

/// Class probabilities for preprocessed episodes in eval mode.
std::vector<double> predict(const model::Classifier& model,
                            const std::vector<data::EpisodeRecord>& episodes,
                            std::size_t batch_size);

/// Rebuilds a model from a checkpoint written by pretrain or finetune.
std::unique_ptr<model::Classifier> load_classifier(const ad::Checkpoint& ckpt);

// ---------------------------------------------------------------- grid

enum class Variant { kFinetuneFull, kFinetuneHead, kScratchBat, kScratchTransformer };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
const std::vector<Variant>& all_variants();

struct GridConfig {
  std::vector<std::size_t> sizes = {100, 500, 1000};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<Variant> variants = all_variants();
  std::uint64_t split_seed = 0;
  double validation_fraction = 0.2;
  model::BatConfig model;
  TrainConfig train;
  double lr_finetune_full = 9e-5;
  double lr_finetune_head = 1e-2;
  double lr_scratch = 7.781e-4;
  Standardization standardization = Standardization::kRefit;
  std::size_t jobs = 1;
  bool keep_checkpoints = false;
};

struct AggregateRow {
  std::string dataset;
  std::size_t size = 0;
  Variant variant = Variant::kScratchBat;
  std::size_t runs = 0;
  double auc_roc_mean = 0.0;
  double auc_roc_sd = 0.0;
  double auc_pr_mean = 0.0;
  double auc_pr_sd = 0.0;
  bool best = false;    // highest mean AUC-PR at this size
  bool second = false;  // runner-up
};

struct GridResult {
  std::vector<metrics::MetricRow> rows;
  std::vector<AggregateRow> aggregate;
  std::vector<std::string> test_ids;
  std::vector<std::vector<std::string>> cell_test_ids;  // parallel to rows
  std::vector<ad::Checkpoint> checkpoints;              // parallel to rows when kept
  std::vector<std::string> skipped;
};

/// Mean and population standard deviation.
std::pair<double, double> mean_and_sd(const std::vector<double>& values);

std::vector<AggregateRow> aggregate_rows(const std::vector<metrics::MetricRow>& rows);

std::string aggregate_csv_header();
std::string to_csv(const AggregateRow& row);

/// Fixed test split from `cfg.split_seed`; for every (size, seed) a
/// prevalence-preserving subsample of the remaining pool is split into
/// train and validation and every variant is trained and scored on the
/// test split. Infeasible cells are skipped with a warning.
GridResult run_experiment_grid(const data::Dataset& target, const ad::Checkpoint* pretrained,
                               const GridConfig& cfg);

}  // namespace bat::train
