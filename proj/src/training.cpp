#include "bat/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "bat/batch.hpp"
#include "bat/errors.hpp"
#include "bat/log.hpp"
#include "bat/random.hpp"

namespace bat::train {

using ad::Tensor;
using data::EpisodeRecord;

// ---------------------------------------------------------------- names

Mode parse_mode(const std::string& name) {
  if (name == "pretrain") return Mode::kPretrain;
  if (name == "finetune_full") return Mode::kFinetuneFull;
  if (name == "finetune_head") return Mode::kFinetuneHead;
  if (name == "scratch") return Mode::kScratch;
  throw ConfigError("unknown training mode '" + name + "'");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kPretrain: return "pretrain";
    case Mode::kFinetuneFull: return "finetune_full";
    case Mode::kFinetuneHead: return "finetune_head";
    case Mode::kScratch: return "scratch";
  }
  return "?";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "bat") return Architecture::kBat;
  if (name == "transformer") return Architecture::kTransformer;
  throw ConfigError("unknown architecture '" + name + "'");
}

std::string to_string(Architecture arch) { return arch == Architecture::kBat ? "bat" : "transformer"; }

Standardization parse_standardization(const std::string& name) {
  if (name == "refit") return Standardization::kRefit;
  if (name == "inherit") return Standardization::kInherit;
  throw ConfigError("unknown standardization '" + name + "' (expected refit or inherit)");
}

std::string to_string(Standardization s) { return s == Standardization::kRefit ? "refit" : "inherit"; }

Variant parse_variant(const std::string& name) {
  if (name == "finetune_full") return Variant::kFinetuneFull;
  if (name == "finetune_head") return Variant::kFinetuneHead;
  if (name == "scratch_bat") return Variant::kScratchBat;
  if (name == "scratch_transformer") return Variant::kScratchTransformer;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFinetuneFull: return "finetune_full";
    case Variant::kFinetuneHead: return "finetune_head";
    case Variant::kScratchBat: return "scratch_bat";
    case Variant::kScratchTransformer: return "scratch_transformer";
  }
  return "?";
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::kFinetuneFull, Variant::kFinetuneHead,
                                         Variant::kScratchBat, Variant::kScratchTransformer};
  return v;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ConfigError("lr_gamma must lie in (0, 1]");
  if (min_delta < 0.0) throw ConfigError("min_delta must be non-negative");
  if (max_batches_per_epoch && *max_batches_per_epoch == 0) {
    throw ConfigError("max_batches_per_epoch must be positive when set");
  }
}

// ---------------------------------------------------------------- optimizer

void optimizer_step(const std::vector<Tensor>& params, OptimizerState& state, double lr,
                    double weight_decay, const AdamWConfig& adam) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("optimizer state holds " + std::to_string(state.first_moment.size()) +
                     " parameters, step received " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].size()) {
      throw ShapeError("optimizer state size differs for parameter '" + params[i].name() + "'");
    }
    if (!params[i].has_grad()) continue;
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + params[i].name() + "' at optimizer step " +
                           std::to_string(state.step + 1));
      }
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto w = p.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const bool has = p.has_grad();
    const std::span<const double> g = has ? p.grad() : std::span<const double>{};
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      w[k] -= lr * weight_decay * w[k];
      m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * gk;
      v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * gk * gk;
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + adam.eps);
    }
  }
}

double lr_at_epoch(double lr0, double gamma, std::size_t epoch) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("lr_at_epoch: gamma must lie in (0, 1]");
  return lr0 * std::pow(gamma, static_cast<double>(epoch));
}

StopDecision early_stop_check(const std::vector<double>& history, std::size_t patience,
                              double min_delta) {
  if (history.empty()) throw ContractError("early_stop_check: empty history");
  double best = std::numeric_limits<double>::infinity();
  std::size_t last_improvement = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i] < best - min_delta) last_improvement = i;
    best = std::min(best, history[i]);
  }
  const std::size_t since = history.size() - 1 - last_improvement;
  return since >= patience ? StopDecision::kStop : StopDecision::kContinue;
}

// ---------------------------------------------------------------- results

std::vector<double> RunResult::validation_curve() const {
  std::vector<double> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.validation_loss);
  return out;
}

void write_run_log(const std::filesystem::path& path, const RunResult& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write run log " + path.string());
  for (const auto& line : run.log) out << line << '\n';
  out << "epoch,train_loss,validation_loss,lr,batches,skipped_batches\n";
  for (const auto& e : run.epochs) {
    out << e.epoch << ',' << (e.train_loss ? metrics::format_fixed(*e.train_loss, 8) : std::string())
        << ',' << metrics::format_fixed(e.validation_loss, 8) << ',' << metrics::format_fixed(e.lr, 12)
        << ',' << e.batches << ',' << e.skipped_batches << '\n';
  }
  if (!out) throw IoError("failed writing run log " + path.string());
}

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const std::string& meta_at(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw SchemaError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

std::map<std::string, std::string> describe(const model::BatConfig& cfg) {
  return {
      {"model.sensors_count", std::to_string(cfg.sensors_count)},
      {"model.value_embed_size", std::to_string(cfg.value_embed_size)},
      {"model.layers", std::to_string(cfg.layers)},
      {"model.heads", std::to_string(cfg.heads)},
      {"model.dropout", exact(cfg.dropout)},
      {"model.attn_dropout", exact(cfg.attn_dropout)},
      {"model.pooling", model::to_string(cfg.pooling)},
      {"model.static_count", std::to_string(cfg.static_count)},
      {"model.forecast_horizon", std::to_string(cfg.forecast_horizon)},
      {"model.use_mask", cfg.use_mask ? "true" : "false"},
      {"model.ffn_multiplier", std::to_string(cfg.ffn_multiplier)},
  };
}

model::BatConfig bat_config_from(const std::map<std::string, std::string>& meta) {
  model::BatConfig cfg;
  auto count = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(meta_at(meta, key))); };
  cfg.sensors_count = count("model.sensors_count");
  cfg.value_embed_size = count("model.value_embed_size");
  cfg.layers = count("model.layers");
  cfg.heads = count("model.heads");
  cfg.dropout = std::stod(meta_at(meta, "model.dropout"));
  cfg.attn_dropout = std::stod(meta_at(meta, "model.attn_dropout"));
  cfg.pooling = model::parse_pooling(meta_at(meta, "model.pooling"));
  cfg.static_count = count("model.static_count");
  cfg.forecast_horizon = count("model.forecast_horizon");
  cfg.use_mask = meta_at(meta, "model.use_mask") == "true";
  cfg.ffn_multiplier = count("model.ffn_multiplier");
  cfg.validate();
  return cfg;
}

std::unique_ptr<model::Classifier> load_classifier(const ad::Checkpoint& ckpt) {
  const auto cfg = bat_config_from(ckpt.meta);
  const auto kind = ckpt.meta.count("kind") ? ckpt.meta.at("kind") : std::string("bat");
  std::unique_ptr<model::Classifier> m;
  if (kind == "bat") {
    m = std::make_unique<model::BatModel>(cfg, 0);
  } else if (kind == "transformer") {
    m = std::make_unique<model::TransformerBaseline>(model::TransformerConfig::matching(cfg), 0);
  } else {
    throw SchemaError("checkpoint has unknown model kind '" + kind + "'");
  }
  m->load_parameters(ckpt);
  return m;
}

// ---------------------------------------------------------------- shared loop

namespace {

void require_preprocessed(const std::vector<EpisodeRecord>& eps, const char* what) {
  for (const auto& ep : eps) {
    if (!ep.preprocessed) {
      throw ContractError(std::string(what) + ": episode '" + ep.patient_id + "' is not preprocessed");
    }
  }
}

std::vector<Tensor> parameters_except(const model::Module& m, const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& p : m.parameters()) {
    if (p.name().rfind(prefix, 0) != 0) out.push_back(p);
  }
  return out;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch)));
  }
  return out;
}

struct Loop {
  // Runs one training epoch at the given lr and returns the mean training
  // loss; fills batch counters in the record.
  std::function<double(double lr, EpochRecord& rec)> train_epoch;
  std::function<double()> validate;
  std::function<ad::Checkpoint(std::size_t epoch)> snapshot;
};

RunResult run_loop(const TrainConfig& cfg, const Loop& loop, const std::string& label) {
  RunResult r;
  const double v0 = loop.validate();
  if (!std::isfinite(v0)) throw NumericError(label + ": non-finite validation loss before training");
  r.epochs.push_back({0, std::nullopt, v0, lr_at_epoch(cfg.learning_rate, cfg.lr_gamma, 0), 0, 0});
  r.best_epoch = 0;
  r.best_validation = v0;
  r.best_checkpoint = loop.snapshot(0);
  r.log.push_back(label + " epoch 0 validation_loss=" + metrics::format_fixed(v0, 8));
  std::vector<double> history{v0};

  r.stop_reason = "epoch limit reached";
  r.stopped_epoch = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at_epoch(cfg.learning_rate, cfg.lr_gamma, epoch - 1);
    rec.train_loss = loop.train_epoch(rec.lr, rec);
    rec.validation_loss = loop.validate();
    if (!std::isfinite(rec.validation_loss)) {
      throw NumericError(label + ": non-finite validation loss at epoch " + std::to_string(epoch));
    }
    r.epochs.push_back(rec);
    r.stopped_epoch = epoch;
    r.log.push_back(label + " epoch " + std::to_string(epoch) + " train_loss=" +
                    metrics::format_fixed(rec.train_loss.value_or(0.0), 8) +
                    " validation_loss=" + metrics::format_fixed(rec.validation_loss, 8) +
                    " lr=" + metrics::format_fixed(rec.lr, 12) +
                    " skipped=" + std::to_string(rec.skipped_batches));
    if (rec.validation_loss < r.best_validation) {
      r.best_validation = rec.validation_loss;
      r.best_epoch = epoch;
      r.best_checkpoint = loop.snapshot(epoch);
    }
    history.push_back(rec.validation_loss);
    if (early_stop_check(history, cfg.patience, cfg.min_delta) == StopDecision::kStop) {
      r.stop_reason = "early stopping: no validation improvement above min_delta in " +
                      std::to_string(cfg.patience) + " epochs";
      break;
    }
  }
  r.log.push_back(label + " stopped at epoch " + std::to_string(r.stopped_epoch) + " (" + r.stop_reason +
                  "); best epoch " + std::to_string(r.best_epoch) +
                  " validation_loss=" + metrics::format_fixed(r.best_validation, 8));
  return r;
}

std::vector<int> labels_of(const std::vector<EpisodeRecord>& eps, const char* what) {
  std::vector<int> y;
  y.reserve(eps.size());
  for (const auto& ep : eps) {
    if (!ep.label) throw ContractError(std::string(what) + ": episode '" + ep.patient_id + "' has no label");
    y.push_back(*ep.label);
  }
  return y;
}

std::vector<const EpisodeRecord*> gather(const std::vector<EpisodeRecord>& eps,
                                         const std::vector<std::size_t>& idx) {
  std::vector<const EpisodeRecord*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&eps[i]);
  return out;
}

data::GridBatch classifier_batch(const model::Classifier& m, const std::vector<const EpisodeRecord*>& eps) {
  auto batch = data::make_grid_batch(eps);
  return m.kind() == "transformer" ? data::mean_imputed(std::move(batch)) : batch;
}

}  // namespace

// ---------------------------------------------------------------- pretraining

RunResult pretrain_run(const std::vector<EpisodeRecord>& train, const std::vector<EpisodeRecord>& validation,
                       const model::BatConfig& model_cfg, const TrainConfig& cfg,
                       const data::SamplerConfig& sampler_cfg) {
  cfg.validate();
  sampler_cfg.validate();
  model_cfg.validate();
  if (model_cfg.forecast_horizon != sampler_cfg.forecast_horizon) {
    throw ConfigError("model forecast_horizon differs from sampler forecast_horizon");
  }
  if (train.empty() || validation.empty()) throw ContractError("pretrain: empty train or validation split");
  require_preprocessed(train, "pretrain");
  require_preprocessed(validation, "pretrain");

  model::BatModel net(model_cfg, cfg.seed);
  const auto params = parameters_except(net, "classifier.");
  OptimizerState opt;
  Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
  Rng sampler_rng = make_rng(cfg.seed, "sampler");
  Rng dropout_rng = make_rng(cfg.seed, "dropout");

  std::vector<data::WindowSplit> val_windows;
  {
    Rng vrng = make_rng(cfg.seed, "validation_windows");
    std::vector<std::size_t> idx(validation.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < idx.size(); i += cfg.batch_size) {
      std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(i),
                                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + cfg.batch_size)));
      try {
        val_windows.push_back(data::sample_window(gather(validation, chunk), sampler_cfg, vrng));
      } catch (const SamplerError& e) {
        log::warn(std::string("pretrain: skipping validation batch: ") + e.what());
      }
    }
  }
  if (val_windows.empty()) throw SamplerError("pretrain: no validation window could be drawn");

  auto meta = describe(model_cfg);
  meta["kind"] = "bat";
  meta["mode"] = "pretrain";
  meta["seed"] = std::to_string(cfg.seed);

  Loop loop;
  loop.validate = [&] {
    double total = 0.0;
    for (const auto& w : val_windows) {
      total += metrics::masked_forecast_loss(net.forecast(w.obs, {}), w.forecast_values, w.forecast_mask).item();
    }
    return total / static_cast<double>(val_windows.size());
  };
  loop.snapshot = [&](std::size_t epoch) {
    auto m = meta;
    m["epoch"] = std::to_string(epoch);
    return net.to_checkpoint(m);
  };
  loop.train_epoch = [&](double lr, EpochRecord& rec) {
    auto batches = shuffled_batches(train.size(), cfg.batch_size, shuffle_rng);
    if (cfg.max_batches_per_epoch && batches.size() > *cfg.max_batches_per_epoch) {
      batches.resize(*cfg.max_batches_per_epoch);
    }
    double total = 0.0;
    for (const auto& b : batches) {
      data::WindowSplit w;
      try {
        w = data::sample_window(gather(train, b), sampler_cfg, sampler_rng);
      } catch (const SamplerError& e) {
        ++rec.skipped_batches;
        log::warn(std::string("pretrain: skipping batch: ") + e.what());
        if (2 * rec.skipped_batches > batches.size()) {
          log::warn("pretrain: more than half of the batches were skipped; aborting epoch " +
                    std::to_string(rec.epoch));
          break;
        }
        continue;
      }
      ad::Tape tape;
      net.zero_grad();
      model::ForwardContext ctx{true, &dropout_rng};
      auto loss = metrics::masked_forecast_loss(net.forecast(w.obs, ctx), w.forecast_values, w.forecast_mask);
      tape.backward(loss);
      optimizer_step(params, opt, lr, cfg.weight_decay);
      total += loss.item();
      ++rec.batches;
    }
    return rec.batches ? total / static_cast<double>(rec.batches) : std::nan("");
  };
  return run_loop(cfg, loop, "pretrain");
}

PretrainResult pretrain(const data::Dataset& pooled, const model::BatConfig& model_cfg,
                        const TrainConfig& cfg, const data::SamplerConfig& sampler_cfg, std::size_t folds) {
  if (folds == 0 || folds > data::kFolds) throw ConfigError("pretrain: folds must lie in [1, 5]");
  if (pooled.sensors.size() != model_cfg.sensors_count) {
    throw ConfigError("pretrain: dataset has " + std::to_string(pooled.sensors.size()) +
                      " sensors, model expects " + std::to_string(model_cfg.sensors_count));
  }
  PretrainResult out;
  out.plan = data::make_splits(pooled, cfg.seed);
  std::vector<data::PreprocessorState> states;
  for (std::size_t f = 0; f < folds; ++f) {
    const auto& fold = out.plan.folds[f];
    const auto train_raw = pooled.select(fold.train);
    const auto val_raw = pooled.select(fold.validation);
    auto pp = data::fit_preprocessor(train_raw.episodes, "pretrain fold " + std::to_string(f));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, "fold" + std::to_string(f));
    auto run = pretrain_run(data::transform_all(train_raw.episodes, pp), data::transform_all(val_raw.episodes, pp),
                            model_cfg, fold_cfg, sampler_cfg);
    run.log.insert(run.log.begin(), "fold " + std::to_string(f) + ": " + std::to_string(fold.train.size()) +
                                        " training and " + std::to_string(fold.validation.size()) +
                                        " validation episodes");
    log::info("pretrain fold " + std::to_string(f) + " best validation masked loss " +
              metrics::format_fixed(run.best_validation, 8) + " at epoch " + std::to_string(run.best_epoch));
    out.folds.push_back(std::move(run));
    states.push_back(std::move(pp));
  }
  for (std::size_t f = 1; f < out.folds.size(); ++f) {
    if (out.folds[f].best_validation < out.folds[out.selected_fold].best_validation) out.selected_fold = f;
  }
  out.selected_checkpoint = out.folds[out.selected_fold].best_checkpoint;
  out.selected_checkpoint.meta["fold"] = std::to_string(out.selected_fold);
  out.selected_checkpoint.meta["sensors"] = [&] {
    std::string s;
    for (const auto& name : pooled.sensors) s += (s.empty() ? "" : ";") + name;
    return s;
  }();
  states[out.selected_fold].append_to(out.selected_checkpoint);
  return out;
}

// ---------------------------------------------------------------- fine-tuning

std::vector<double> predict(const model::Classifier& m, const std::vector<EpisodeRecord>& episodes,
                            std::size_t batch_size) {
  require_preprocessed(episodes, "predict");
  std::vector<double> out;
  out.reserve(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); i += batch_size) {
    std::vector<const EpisodeRecord*> ptrs;
    for (std::size_t j = i; j < std::min(episodes.size(), i + batch_size); ++j) ptrs.push_back(&episodes[j]);
    const auto probs = m.predict_proba(classifier_batch(m, ptrs), {});
    out.insert(out.end(), probs.data().begin(), probs.data().end());
  }
  return out;
}

namespace {

double bce_value(const std::vector<double>& probs, const std::vector<int>& labels, double pos_weight) {
  return metrics::weighted_bce(Tensor::from({probs.size()}, probs), labels, pos_weight).item();
}

// Eval-mode pooled features [n, F] of a frozen trunk, row-major.
std::vector<double> frozen_features(const model::Classifier& m, const std::vector<EpisodeRecord>& eps,
                                    std::size_t batch_size, std::size_t& width) {
  std::vector<double> out;
  for (std::size_t i = 0; i < eps.size(); i += batch_size) {
    std::vector<const EpisodeRecord*> ptrs;
    for (std::size_t j = i; j < std::min(eps.size(), i + batch_size); ++j) ptrs.push_back(&eps[j]);
    const auto f = m.features(classifier_batch(m, ptrs), {});
    width = f.dim(1);
    out.insert(out.end(), f.data().begin(), f.data().end());
  }
  return out;
}

Tensor feature_rows(const std::vector<double>& feats, std::size_t width, const std::vector<std::size_t>& idx) {
  std::vector<double> rows;
  rows.reserve(idx.size() * width);
  for (auto i : idx) rows.insert(rows.end(), feats.begin() + static_cast<std::ptrdiff_t>(i * width),
                                 feats.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  return Tensor::from({idx.size(), width}, std::move(rows));
}

std::vector<double> head_probs(const model::Classifier& m, const std::vector<double>& feats, std::size_t width) {
  const std::size_t n = width ? feats.size() / width : 0;
  if (n == 0) return {};
  const auto p = ad::sigmoid(m.logits_from_features(Tensor::from({n, width}, feats)));
  return {p.data().begin(), p.data().end()};
}

}  // namespace

RunResult finetune(const FinetuneRequest& req, const FinetuneSplits& splits) {
  const TrainConfig& cfg = req.train;
  cfg.validate();
  req.model.validate();
  const Mode mode = cfg.mode;
  if (mode == Mode::kPretrain) throw ConfigError("finetune: mode 'pretrain' is not a supervised mode");
  if ((mode == Mode::kFinetuneFull || mode == Mode::kFinetuneHead) && !req.pretrained) {
    throw ConfigError("finetune: mode '" + to_string(mode) + "' requires a pretrained checkpoint");
  }
  if (mode == Mode::kScratch && req.pretrained) {
    throw ConfigError("finetune: mode 'scratch' must not be given a pretrained checkpoint");
  }
  if (req.architecture == Architecture::kTransformer && mode != Mode::kScratch) {
    throw ConfigError("finetune: the transformer baseline only trains from scratch");
  }
  if (splits.train.empty() || splits.validation.empty()) {
    throw ContractError("finetune: empty train or validation split");
  }
  const auto y_train = labels_of(splits.train, "finetune train");
  const auto y_val = labels_of(splits.validation, "finetune validation");
  const auto y_test = labels_of(splits.test, "finetune test");

  data::PreprocessorState pp;
  if (req.standardization == Standardization::kInherit && req.pretrained) {
    pp = data::PreprocessorState::from_checkpoint(*req.pretrained);
  } else {
    pp = data::fit_preprocessor(splits.train, "finetune train");
  }
  const auto train = data::transform_all(splits.train, pp);
  const auto val = data::transform_all(splits.validation, pp);
  const auto test = data::transform_all(splits.test, pp);

  std::unique_ptr<model::Classifier> net;
  if (req.architecture == Architecture::kBat) {
    net = std::make_unique<model::BatModel>(req.model, cfg.seed);
    if (req.pretrained) net->load_parameters(*req.pretrained);
  } else {
    net = std::make_unique<model::TransformerBaseline>(model::TransformerConfig::matching(req.model), cfg.seed);
  }
  const double pos_weight = cfg.weighted_loss ? metrics::balanced_pos_weight(y_train) : 1.0;

  auto meta = describe(req.model);
  meta["kind"] = net->kind();
  meta["mode"] = to_string(mode);
  meta["seed"] = std::to_string(cfg.seed);
  meta["standardization"] = to_string(req.standardization);

  Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
  Rng dropout_rng = make_rng(cfg.seed, "dropout");
  OptimizerState opt;
  Loop loop;
  loop.snapshot = [&](std::size_t epoch) {
    auto m = meta;
    m["epoch"] = std::to_string(epoch);
    return net->to_checkpoint(m);
  };
  const std::string label = to_string(req.architecture) + " " + to_string(mode);
  RunResult r;

  if (mode == Mode::kFinetuneHead) {
    const auto head_names = net->head_parameter_names();
    std::vector<Tensor> head;
    for (const auto& n : head_names) head.push_back(net->parameter(n));
    const auto before = net->to_checkpoint();

    std::size_t width = 0;
    const auto f_train = frozen_features(*net, train, cfg.batch_size, width);
    const auto f_val = frozen_features(*net, val, cfg.batch_size, width);
    const auto f_test = frozen_features(*net, test, cfg.batch_size, width);

    loop.validate = [&] { return bce_value(head_probs(*net, f_val, width), y_val, pos_weight); };
    loop.train_epoch = [&](double lr, EpochRecord& rec) {
      auto batches = shuffled_batches(train.size(), cfg.batch_size, shuffle_rng);
      if (cfg.max_batches_per_epoch && batches.size() > *cfg.max_batches_per_epoch) {
        batches.resize(*cfg.max_batches_per_epoch);
      }
      double total = 0.0;
      for (const auto& b : batches) {
        std::vector<int> y;
        for (auto i : b) y.push_back(y_train[i]);
        ad::Tape tape;
        net->zero_grad();
        auto loss = metrics::weighted_bce(ad::sigmoid(net->logits_from_features(feature_rows(f_train, width, b))), y,
                                          pos_weight);
        tape.backward(loss);
        optimizer_step(head, opt, lr, cfg.weight_decay);
        total += loss.item();
        ++rec.batches;
      }
      return total / static_cast<double>(rec.batches);
    };
    r = run_loop(cfg, loop, label);
    net->load_parameters(r.best_checkpoint);

    const std::set<std::string> head_set(head_names.begin(), head_names.end());
    for (const auto& t : before.tensors) {
      if (head_set.count(t.name)) continue;
      const auto now = net->parameter(t.name).data();
      if (!std::equal(now.begin(), now.end(), t.values.begin())) {
        throw ContractError("freeze contract violated: parameter '" + t.name + "' changed during head-only fine-tuning");
      }
    }
    if (!test.empty()) r.test_report = metrics::evaluate_scores(head_probs(*net, f_test, width), y_test);
  } else {
    const auto params = parameters_except(*net, "forecast.");
    loop.validate = [&] { return bce_value(predict(*net, val, cfg.batch_size), y_val, pos_weight); };
    loop.train_epoch = [&](double lr, EpochRecord& rec) {
      auto batches = shuffled_batches(train.size(), cfg.batch_size, shuffle_rng);
      if (cfg.max_batches_per_epoch && batches.size() > *cfg.max_batches_per_epoch) {
        batches.resize(*cfg.max_batches_per_epoch);
      }
      double total = 0.0;
      for (const auto& b : batches) {
        std::vector<int> y;
        for (auto i : b) y.push_back(y_train[i]);
        const auto batch = classifier_batch(*net, gather(train, b));
        ad::Tape tape;
        net->zero_grad();
        model::ForwardContext ctx{true, &dropout_rng};
        auto loss = metrics::weighted_bce(net->predict_proba(batch, ctx), y, pos_weight);
        tape.backward(loss);
        optimizer_step(params, opt, lr, cfg.weight_decay);
        total += loss.item();
        ++rec.batches;
      }
      return total / static_cast<double>(rec.batches);
    };
    r = run_loop(cfg, loop, label);
    net->load_parameters(r.best_checkpoint);
    if (!test.empty()) r.test_report = metrics::evaluate_scores(predict(*net, test, cfg.batch_size), y_test);
  }

  pp.append_to(r.best_checkpoint);
  for (const auto& ep : splits.test) r.test_ids.push_back(ep.patient_id);
  if (r.test_report) {
    r.log.push_back(label + " test auc_roc=" + metrics::format_fixed(r.test_report->auc_roc, 6) +
                    " auc_pr=" + metrics::format_fixed(r.test_report->auc_pr, 6));
  }
  return r;
}

// ---------------------------------------------------------------- grid

std::pair<double, double> mean_and_sd(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("mean_and_sd: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

namespace {

std::pair<std::string, std::string> model_and_mode(Variant v) {
  switch (v) {
    case Variant::kFinetuneFull: return {"bat", "finetune_full"};
    case Variant::kFinetuneHead: return {"bat", "finetune_head"};
    case Variant::kScratchBat: return {"bat", "scratch"};
    case Variant::kScratchTransformer: return {"transformer", "scratch"};
  }
  return {};
}

Variant variant_of(const std::string& model, const std::string& mode) {
  for (auto v : all_variants()) {
    if (model_and_mode(v) == std::pair{model, mode}) return v;
  }
  throw ContractError("no variant for model '" + model + "' and mode '" + mode + "'");
}

}  // namespace

std::vector<AggregateRow> aggregate_rows(const std::vector<metrics::MetricRow>& rows) {
  struct Key {
    std::string dataset;
    std::size_t size;
    Variant variant;
    bool operator==(const Key&) const = default;
  };
  std::vector<Key> keys;
  std::vector<std::vector<const metrics::MetricRow*>> groups;
  for (const auto& r : rows) {
    const Key k{r.dataset, r.size, variant_of(r.model, r.mode)};
    auto it = std::find(keys.begin(), keys.end(), k);
    if (it == keys.end()) {
      keys.push_back(k);
      groups.emplace_back();
      it = keys.end() - 1;
    }
    groups[static_cast<std::size_t>(it - keys.begin())].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (std::size_t g = 0; g < keys.size(); ++g) {
    std::vector<double> roc, pr;
    for (const auto* r : groups[g]) {
      roc.push_back(r->auc_roc);
      pr.push_back(r->auc_pr);
    }
    AggregateRow a;
    a.dataset = keys[g].dataset;
    a.size = keys[g].size;
    a.variant = keys[g].variant;
    a.runs = groups[g].size();
    std::tie(a.auc_roc_mean, a.auc_roc_sd) = mean_and_sd(roc);
    std::tie(a.auc_pr_mean, a.auc_pr_sd) = mean_and_sd(pr);
    out.push_back(a);
  }
  // Rank variants within each (dataset, size) by mean AUC-PR.
  for (auto& a : out) {
    std::size_t above = 0;
    for (const auto& b : out) {
      if (b.dataset == a.dataset && b.size == a.size && b.auc_pr_mean > a.auc_pr_mean) ++above;
    }
    a.best = above == 0;
    a.second = above == 1;
  }
  return out;
}

std::string aggregate_csv_header() {
  return "dataset,size,model,mode,runs,auc_roc_mean,auc_roc_sd,auc_pr_mean,auc_pr_sd,best,second";
}

std::string to_csv(const AggregateRow& a) {
  const auto [model, mode] = model_and_mode(a.variant);
  std::ostringstream os;
  os << a.dataset << ',' << a.size << ',' << model << ',' << mode << ',' << a.runs << ','
     << metrics::format_fixed(100.0 * a.auc_roc_mean, 4) << ',' << metrics::format_fixed(100.0 * a.auc_roc_sd, 4)
     << ',' << metrics::format_fixed(100.0 * a.auc_pr_mean, 4) << ','
     << metrics::format_fixed(100.0 * a.auc_pr_sd, 4) << ',' << (a.best ? 1 : 0) << ',' << (a.second ? 1 : 0);
  return os.str();
}

namespace {

// Label-stratified split of a subsample into (train, validation).
std::pair<std::vector<EpisodeRecord>, std::vector<EpisodeRecord>> split_train_validation(
    const data::Dataset& ds, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds.episodes[i].label.value_or(0) ? pos : neg).push_back(i);
  Rng rng = make_rng(seed, "finetune_split");
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  auto n_val = [&](std::size_t n) {
    return std::min(n, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  };
  const std::size_t vp = n_val(pos.size());
  const std::size_t vn = n_val(neg.size());
  std::vector<std::size_t> val(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(vp));
  val.insert(val.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(vn));
  std::vector<std::size_t> tr(pos.begin() + static_cast<std::ptrdiff_t>(vp), pos.end());
  tr.insert(tr.end(), neg.begin() + static_cast<std::ptrdiff_t>(vn), neg.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  std::pair<std::vector<EpisodeRecord>, std::vector<EpisodeRecord>> out;
  for (auto i : tr) out.first.push_back(ds.episodes[i]);
  for (auto i : val) out.second.push_back(ds.episodes[i]);
  return out;
}

}  // namespace

GridResult run_experiment_grid(const data::Dataset& target, const ad::Checkpoint* pretrained,
                               const GridConfig& cfg) {
  cfg.train.validate();
  cfg.model.validate();
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
  if (cfg.jobs == 0) throw ConfigError("jobs must be positive");
  for (auto v : cfg.variants) {
    if ((v == Variant::kFinetuneFull || v == Variant::kFinetuneHead) && !pretrained) {
      throw ConfigError("variant '" + to_string(v) + "' requires a pretrained checkpoint");
    }
  }

  GridResult out;
  const auto plan = data::make_splits(target, cfg.split_seed);
  out.test_ids = plan.test;
  const std::set<std::string> test_set(plan.test.begin(), plan.test.end());
  std::vector<std::string> pool_ids;
  for (const auto& id : target.ids()) {
    if (!test_set.count(id)) pool_ids.push_back(id);
  }
  const auto pool = target.select(pool_ids);
  const auto test = target.select(plan.test).episodes;
  const int fold = pretrained && pretrained->meta.count("fold") ? std::stoi(pretrained->meta.at("fold")) : 0;

  struct Task {
    std::size_t size;
    std::uint64_t seed;
    Variant variant;
    std::size_t subsample;  // index into `subsamples`
  };
  std::vector<FinetuneSplits> subsamples;
  std::vector<Task> tasks;
  for (auto size : cfg.sizes) {
    for (auto seed : cfg.seeds) {
      data::Dataset sub;
      try {
        sub = data::subsample_preserving_prevalence(pool, size, seed);
      } catch (const ContractError& e) {
        const std::string msg = "skipping cell size=" + std::to_string(size) + " seed=" + std::to_string(seed) +
                                ": " + e.what();
        log::warn(msg);
        out.skipped.push_back(msg);
        continue;
      }
      auto [tr, va] = split_train_validation(sub, cfg.validation_fraction, seed);
      subsamples.push_back({std::move(tr), std::move(va), test});
      for (auto v : cfg.variants) tasks.push_back({size, seed, v, subsamples.size() - 1});
    }
  }

  std::vector<std::optional<RunResult>> results(tasks.size());
  std::vector<std::string> failures(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr config_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const auto& t = tasks[i];
      FinetuneRequest req;
      req.model = cfg.model;
      req.train = cfg.train;
      req.train.seed = t.seed;
      req.standardization = cfg.standardization;
      switch (t.variant) {
        case Variant::kFinetuneFull:
          req.train.mode = Mode::kFinetuneFull;
          req.train.learning_rate = cfg.lr_finetune_full;
          req.pretrained = pretrained;
          break;
        case Variant::kFinetuneHead:
          req.train.mode = Mode::kFinetuneHead;
          req.train.learning_rate = cfg.lr_finetune_head;
          req.pretrained = pretrained;
          break;
        case Variant::kScratchBat:
          req.train.mode = Mode::kScratch;
          req.train.learning_rate = cfg.lr_scratch;
          break;
        case Variant::kScratchTransformer:
          req.train.mode = Mode::kScratch;
          req.train.learning_rate = cfg.lr_scratch;
          req.architecture = Architecture::kTransformer;
          break;
      }
      try {
        results[i] = finetune(req, subsamples[t.subsample]);
      } catch (const ConfigError&) {
        std::lock_guard lock(error_mutex);
        if (!config_error) config_error = std::current_exception();
      } catch (const std::runtime_error& e) {
        failures[i] = e.what();
      } catch (const std::logic_error& e) {
        failures[i] = e.what();
      }
    }
  };
  if (cfg.jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (std::size_t j = 0; j < std::min(cfg.jobs, tasks.size()); ++j) pool_threads.emplace_back(worker);
    for (auto& th : pool_threads) th.join();
  }
  if (config_error) std::rethrow_exception(config_error);

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (!results[i] || !results[i]->test_report) {
      const std::string msg = "skipping cell size=" + std::to_string(t.size) + " seed=" + std::to_string(t.seed) +
                              " variant=" + to_string(t.variant) + ": " +
                              (failures[i].empty() ? std::string("no test report") : failures[i]);
      log::warn(msg);
      out.skipped.push_back(msg);
      continue;
    }
    const auto [model, mode] = model_and_mode(t.variant);
    out.rows.push_back({target.name, model, mode, t.size, t.seed, fold, results[i]->test_report->auc_roc,
                        results[i]->test_report->auc_pr});
    out.cell_test_ids.push_back(results[i]->test_ids);
    if (cfg.keep_checkpoints) out.checkpoints.push_back(std::move(results[i]->best_checkpoint));
  }
  out.aggregate = aggregate_rows(out.rows);
  return out;
}

}  // namespace bat::train
