#include "cli_app.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bat/checkpoint.hpp"
#include "bat/cohort.hpp"
#include "bat/dataset_io.hpp"
#include "bat/errors.hpp"
#include "bat/log.hpp"
#include "bat/objectives.hpp"
#include "bat/preprocess.hpp"
#include "bat/random.hpp"
#include "bat/splits.hpp"
#include "bat/synthetic.hpp"
#include "bat/training.hpp"

namespace bat::cli {
namespace {

namespace fs = std::filesystem;

// Every setting any subcommand reads. Defaults follow the reference setup.
struct Options {
  std::uint64_t seed = 0;
  std::string out = "out";

  // generate
  std::size_t n = 1000;
  double prevalence = 0.119;
  double mean_stay = 48.0;
  double min_stay = 6.0;
  double sparsity = 0.5;
  std::optional<std::uint64_t> availability_seed;
  std::size_t sensors = data::kReferenceSensorCount;
  std::string name = "synthetic";
  std::string id_prefix = "p";

  // inputs
  std::vector<std::string> data;
  std::vector<std::string> checkpoints;

  // model
  std::size_t embed = 128;
  std::size_t layers = 2;
  std::size_t heads = 1;
  double dropout = 0.364;
  double attn_dropout = 0.207;
  std::string pooling = "max";
  bool use_mask = false;
  std::size_t ffn_multiplier = 4;

  // sampler
  std::size_t min_obs_len = 12;
  std::size_t horizon = 2;
  std::size_t max_obs = 0;  // 0 = unbounded

  // train
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::size_t patience = 10;
  double min_delta = 5e-3;
  double lr = 7.781e-4;
  double weight_decay = 1e-6;
  double lr_gamma = 0.95;
  bool weighted_loss = true;
  std::size_t max_batches = 0;  // 0 = whole epoch
  std::size_t folds = data::kFolds;

  // grid
  std::vector<std::size_t> sizes = {100, 500, 1000};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::string> variants = {"finetune_full", "finetune_head", "scratch_bat",
                                       "scratch_transformer"};
  double lr_full = 9e-5;
  double lr_head = 1e-2;
  double lr_scratch = 7.781e-4;
  double validation_fraction = 0.2;
  std::string standardization = "refit";
  std::size_t jobs = 1;
  bool save_checkpoints = false;
};

struct ModelFlags {
  CLI::Option* embed = nullptr;
  CLI::Option* layers = nullptr;
  CLI::Option* heads = nullptr;
  CLI::Option* pooling = nullptr;
  CLI::Option* use_mask = nullptr;
  CLI::Option* ffn = nullptr;
  CLI::Option* horizon = nullptr;
};

void add_seed_and_out(CLI::App* sub, Options& o) {
  sub->add_option("--seed", o.seed, "Top-level seed")->capture_default_str();
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
}

ModelFlags add_model_options(CLI::App* sub, Options& o) {
  ModelFlags f;
  f.embed = sub->add_option("--embed", o.embed, "Value embedding size E")->capture_default_str();
  f.layers = sub->add_option("--layers", o.layers, "Transformer layers")->capture_default_str();
  f.heads = sub->add_option("--heads", o.heads, "Attention heads")->capture_default_str();
  sub->add_option("--dropout", o.dropout)->capture_default_str();
  sub->add_option("--attn-dropout", o.attn_dropout)->capture_default_str();
  f.pooling = sub->add_option("--pooling", o.pooling)
                  ->check(CLI::IsMember({"max", "mean"}))
                  ->capture_default_str();
  f.use_mask = sub->add_option("--use-mask", o.use_mask, "Feed the missingness mask")
                   ->capture_default_str();
  f.ffn = sub->add_option("--ffn-multiplier", o.ffn_multiplier)->capture_default_str();
  sub->add_option("--min-obs-len", o.min_obs_len, "Shortest observation window L")
      ->capture_default_str();
  f.horizon = sub->add_option("--horizon", o.horizon, "Forecast horizon H")->capture_default_str();
  sub->add_option("--max-obs", o.max_obs, "Longest observation window (0 = unbounded)")
      ->capture_default_str();
  return f;
}

void add_train_options(CLI::App* sub, Options& o) {
  sub->add_option("--batch-size", o.batch_size)->capture_default_str();
  sub->add_option("--epochs", o.epochs)->capture_default_str();
  sub->add_option("--patience", o.patience)->capture_default_str();
  sub->add_option("--min-delta", o.min_delta)->capture_default_str();
  sub->add_option("--weight-decay", o.weight_decay)->capture_default_str();
  sub->add_option("--lr-gamma", o.lr_gamma)->capture_default_str();
  sub->add_option("--max-batches", o.max_batches, "Batches per epoch (0 = all)")
      ->capture_default_str();
}

// ------------------------------------------------------------------ helpers

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : std::string(1, sep)) + p;
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) parts.push_back(cur);
  return parts;
}

std::string dataset_name(const fs::path& dir) {
  auto p = dir.lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

data::DatasetFiles existing_files(const fs::path& dir) {
  auto files = data::dataset_files(dir);
  for (const auto& p : {files.measurements, files.statics})
    if (!fs::exists(p)) throw IoError("missing dataset file: " + p.string());
  if (!fs::exists(files.labels)) files.labels.clear();
  return files;
}

data::Dataset load_dir(const fs::path& dir, const std::vector<std::string>& sensors) {
  const auto files = existing_files(dir);
  for (const auto& s : data::sensors_in_file(files.measurements))
    if (std::find(sensors.begin(), sensors.end(), s) == sensors.end())
      throw SchemaError("dataset " + dir.string() + " records sensor '" + s +
                        "' which the model was not built for");
  return data::load_dataset(files.measurements, files.statics, files.labels, sensors,
                            dataset_name(dir));
}

ad::Checkpoint load_ckpt(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return ad::load_checkpoint(path);
}

std::vector<std::string> checkpoint_sensors(const ad::Checkpoint& ckpt, const fs::path& path) {
  auto it = ckpt.meta.find("sensors");
  if (it == ckpt.meta.end())
    throw SchemaError("checkpoint " + path.string() + " does not list its sensors");
  return split(it->second, ';');
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void prepare_out(const Options& o, const std::string& echoed) {
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create output directory " + o.out + ": " + ec.message());
  write_text(fs::path(o.out) / "config.ini", echoed);
}

model::BatConfig model_config(const Options& o, std::size_t sensors) {
  model::BatConfig m;
  m.sensors_count = sensors;
  m.value_embed_size = o.embed;
  m.layers = o.layers;
  m.heads = o.heads;
  m.dropout = o.dropout;
  m.attn_dropout = o.attn_dropout;
  m.pooling = model::parse_pooling(o.pooling);
  m.use_mask = o.use_mask;
  m.ffn_multiplier = o.ffn_multiplier;
  m.forecast_horizon = o.horizon;
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid model settings: ") + e.what());
  }
  return m;
}

data::SamplerConfig sampler_config(const Options& o) {
  data::SamplerConfig s;
  s.min_obs_len = o.min_obs_len;
  s.forecast_horizon = o.horizon;
  if (o.max_obs > 0) s.max_obs = o.max_obs;
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid sampler settings: ") + e.what());
  }
  return s;
}

train::TrainConfig train_config(const Options& o, train::Mode mode) {
  train::TrainConfig t;
  t.batch_size = o.batch_size;
  t.epochs = o.epochs;
  t.patience = o.patience;
  t.min_delta = o.min_delta;
  t.learning_rate = o.lr;
  t.weight_decay = o.weight_decay;
  t.lr_gamma = o.lr_gamma;
  t.seed = o.seed;
  t.mode = mode;
  t.weighted_loss = o.weighted_loss;
  if (o.max_batches > 0) t.max_batches_per_epoch = o.max_batches;
  try {
    t.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid training settings: ") + e.what());
  }
  return t;
}

// ------------------------------------------------------------------ commands

void cmd_generate(const Options& o, std::ostream& out) {
  if (!(o.prevalence > 0.0 && o.prevalence < 1.0))
    throw ConfigError("--prevalence must lie strictly between 0 and 1");
  if (o.n == 0) throw ConfigError("--n must be positive");
  if (o.sensors == 0 || o.sensors > data::kReferenceSensorCount)
    throw ConfigError("--sensors must be in [1, 48]");

  data::SyntheticConfig cfg;
  cfg.n = o.n;
  cfg.prevalence = o.prevalence;
  cfg.mean_stay_hours = o.mean_stay;
  cfg.min_stay_hours = o.min_stay;
  cfg.sparsity = o.sparsity;
  cfg.seed = o.seed;
  cfg.availability_seed = o.availability_seed;
  cfg.sensors = data::default_sensor_subset(o.sensors);
  cfg.name = o.name;
  cfg.id_prefix = o.id_prefix;
  data::Dataset ds;
  try {
    ds = data::generate_synthetic(cfg);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid generator settings: ") + e.what());
  }
  data::write_dataset(ds, o.out);

  const std::string header = "dataset,n,prevalence,mean_stay_hours";
  std::ostringstream row;
  row << ds.name << ',' << ds.size() << ',' << metrics::format_fixed(ds.compute_prevalence(), 4) << ','
      << metrics::format_fixed(ds.mean_stay_hours(), 2);
  write_text(fs::path(o.out) / "summary.csv", header + '\n' + row.str() + '\n');
  out << std::left << std::setw(12) << "dataset" << std::setw(8) << "n" << std::setw(12)
      << "prevalence" << "mean stay (h)\n"
      << std::setw(12) << ds.name << std::setw(8) << ds.size() << std::setw(12)
      << metrics::format_fixed(100.0 * ds.compute_prevalence(), 1) + "%"
      << metrics::format_fixed(ds.mean_stay_hours(), 1) << '\n';
}

void cmd_pretrain(const Options& o, std::ostream& out) {
  if (o.data.empty()) throw ConfigError("pretrain needs at least one --data directory");
  // Schema check on every input before any episode is loaded or trained on.
  std::vector<std::string> sensors;
  for (const auto& dir : o.data) {
    const auto found = data::sensors_in_file(existing_files(dir).measurements);
    if (sensors.empty()) {
      sensors = found;
    } else if (found != sensors) {
      throw SchemaError("schema mismatch: " + dir + " records [" + join(found, ';') + "] but " +
                        o.data.front() + " records [" + join(sensors, ';') + "]");
    }
  }
  if (sensors.empty()) throw SchemaError("no sensors recorded in " + o.data.front());

  const auto mcfg = model_config(o, sensors.size());
  const auto scfg = sampler_config(o);
  auto tcfg = train_config(o, train::Mode::kPretrain);
  if (o.folds < 2) throw ConfigError("--folds must be at least 2");

  std::vector<data::Dataset> parts;
  for (const auto& dir : o.data) parts.push_back(load_dir(dir, sensors));
  auto pooled = data::apply_exclusions(data::pool_datasets(parts, true, "pooled"),
                                       data::Task::kPretrain);
  out << "pretraining on " << pooled.size() << " episodes pooled from " << parts.size()
      << " dataset(s)\n";

  const auto result = train::pretrain(pooled, mcfg, tcfg, scfg, o.folds);
  const fs::path dir(o.out);
  std::ostringstream folds_csv, log;
  folds_csv << "fold,best_epoch,best_validation_loss,stopped_epoch,stop_reason,selected\n";
  log << "datasets: ";
  for (std::size_t i = 0; i < parts.size(); ++i) log << (i ? ";" : "") << parts[i].name;
  log << "\nepisodes after exclusions: " << pooled.size() << '\n';
  for (std::size_t k = 0; k < result.folds.size(); ++k) {
    const auto& run = result.folds[k];
    train::write_run_log(dir / ("fold" + std::to_string(k) + ".log"), run);
    const bool chosen = k == result.selected_fold;
    folds_csv << k << ',' << run.best_epoch << ',' << metrics::format_fixed(run.best_validation, 8)
              << ',' << run.stopped_epoch << ',' << run.stop_reason << ',' << (chosen ? 1 : 0) << '\n';
    log << "fold " << k << ": best masked mean squared error " << metrics::format_fixed(run.best_validation, 8)
        << " at epoch " << run.best_epoch << '\n';
  }
  log << "selected fold " << result.selected_fold
      << " with the lowest masked mean squared error loss ("
      << metrics::format_fixed(result.folds[result.selected_fold].best_validation, 8) << ")\n";
  write_text(dir / "folds.csv", folds_csv.str());
  write_text(dir / "pretrain.log", log.str());
  ad::save_checkpoint(dir / "best.ckpt", result.selected_checkpoint);
  out << log.str();
}

// Architecture options fixed by a pretrained checkpoint may be omitted; if
// given they must agree with it.
model::BatConfig reconcile(const Options& o, const ModelFlags& flags, const ad::Checkpoint& ckpt) {
  auto m = train::bat_config_from(ckpt.meta);
  auto check = [](CLI::Option* opt, const std::string& given, const std::string& stored) {
    if (opt->count() > 0 && given != stored)
      throw ConfigError(opt->get_name() + "=" + given + " conflicts with the checkpoint (" + stored + ")");
  };
  check(flags.embed, std::to_string(o.embed), std::to_string(m.value_embed_size));
  check(flags.layers, std::to_string(o.layers), std::to_string(m.layers));
  check(flags.heads, std::to_string(o.heads), std::to_string(m.heads));
  check(flags.pooling, o.pooling, model::to_string(m.pooling));
  check(flags.use_mask, o.use_mask ? "true" : "false", m.use_mask ? "true" : "false");
  check(flags.ffn, std::to_string(o.ffn_multiplier), std::to_string(m.ffn_multiplier));
  check(flags.horizon, std::to_string(o.horizon), std::to_string(m.forecast_horizon));
  m.dropout = o.dropout;
  m.attn_dropout = o.attn_dropout;
  return m;
}

void cmd_finetune(const Options& o, const ModelFlags& flags, std::ostream& out) {
  if (o.data.empty()) throw ConfigError("finetune needs at least one --data directory");
  if (o.checkpoints.size() > 1) throw ConfigError("finetune takes at most one --checkpoint");
  if (o.sizes.empty() || o.seeds.empty() || o.variants.empty())
    throw ConfigError("--sizes, --seeds and --variants must be non-empty");

  train::GridConfig g;
  g.variants.clear();
  for (const auto& v : o.variants) {
    try {
      g.variants.push_back(train::parse_variant(v));
    } catch (const std::exception&) {
      throw ConfigError("unknown variant '" + v + "'");
    }
  }
  const bool needs_ckpt = std::any_of(g.variants.begin(), g.variants.end(), [](auto v) {
    return v == train::Variant::kFinetuneFull || v == train::Variant::kFinetuneHead;
  });
  if (needs_ckpt && o.checkpoints.empty())
    throw ConfigError("fine-tuning variants need a pretrained --checkpoint");

  std::optional<ad::Checkpoint> ckpt;
  if (!o.checkpoints.empty()) ckpt = load_ckpt(o.checkpoints.front());

  g.sizes = o.sizes;
  g.seeds = o.seeds;
  g.split_seed = derive_seed(o.seed, "data");
  g.validation_fraction = o.validation_fraction;
  g.train = train_config(o, train::Mode::kFinetuneFull);
  g.lr_finetune_full = o.lr_full;
  g.lr_finetune_head = o.lr_head;
  g.lr_scratch = o.lr_scratch;
  g.standardization = train::parse_standardization(o.standardization);
  g.jobs = std::max<std::size_t>(1, o.jobs);
  g.keep_checkpoints = o.save_checkpoints;
  sampler_config(o);

  std::ostringstream results, aggregate, ids;
  results << metrics::metric_csv_header() << '\n';
  aggregate << train::aggregate_csv_header() << '\n';
  const fs::path dir(o.out);
  for (const auto& data_dir : o.data) {
    std::vector<std::string> sensors;
    if (ckpt) {
      sensors = checkpoint_sensors(*ckpt, o.checkpoints.front());
      g.model = reconcile(o, flags, *ckpt);
    } else {
      sensors = data::sensors_in_file(existing_files(data_dir).measurements);
      g.model = model_config(o, sensors.size());
    }
    const auto target =
        data::apply_exclusions(load_dir(data_dir, sensors), data::Task::kMortality);
    out << "fine-tuning on " << target.name << " (" << target.size() << " episodes)\n";

    const auto res = train::run_experiment_grid(target, ckpt ? &*ckpt : nullptr, g);
    for (const auto& row : res.rows) results << metrics::to_csv(row) << '\n';
    for (const auto& row : res.aggregate) {
      aggregate << train::to_csv(row) << '\n';
      out << "  n=" << std::setw(5) << row.size << "  " << std::left << std::setw(20)
          << train::to_string(row.variant) << std::right << " AUC-ROC "
          << metrics::format_fixed(100 * row.auc_roc_mean, 1) << " ± "
          << metrics::format_fixed(100 * row.auc_roc_sd, 1) << "  AUC-PR "
          << metrics::format_fixed(100 * row.auc_pr_mean, 1) << " ± "
          << metrics::format_fixed(100 * row.auc_pr_sd, 1) << (row.best ? "  (best)" : "")
          << (row.second ? "  (second)" : "") << '\n';
    }
    for (const auto& id : res.test_ids) ids << target.name << ',' << id << '\n';
    if (o.save_checkpoints) {
      fs::create_directories(dir / "checkpoints");
      for (std::size_t i = 0; i < res.rows.size(); ++i) {
        const auto& r = res.rows[i];
        auto c = res.checkpoints.at(i);
        c.meta["sensors"] = join(sensors, ';');
        c.meta["dataset"] = target.name;
        ad::save_checkpoint(dir / "checkpoints" /
                                (target.name + "_" + r.model + "_" + r.mode + "_n" +
                                 std::to_string(r.size) + "_s" + std::to_string(r.seed) + ".ckpt"),
                            c);
      }
    }
  }
  write_text(dir / "results.csv", results.str());
  write_text(dir / "aggregate.csv", aggregate.str());
  write_text(dir / "test_ids.txt", ids.str());
}

void cmd_evaluate(const Options& o, std::ostream& out) {
  if (o.checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
  if (o.data.empty()) throw ConfigError("evaluate needs at least one --data directory");
  for (const auto& d : o.data) existing_files(d);

  std::ostringstream csv;
  csv << "checkpoint,dataset,n_test,positives,auc_roc,auc_pr\n";
  std::vector<std::vector<double>> matrix;
  std::vector<std::string> row_names, col_names;
  for (const auto& d : o.data) col_names.push_back(dataset_name(d));

  for (const auto& path : o.checkpoints) {
    const auto ckpt = load_ckpt(path);
    const auto sensors = checkpoint_sensors(ckpt, path);
    const auto model = train::load_classifier(ckpt);
    const auto pp = data::PreprocessorState::from_checkpoint(ckpt);
    const std::string label = fs::path(path).stem().string();
    row_names.push_back(label);
    auto& cells = matrix.emplace_back();
    for (const auto& d : o.data) {
      const auto ds = data::apply_exclusions(load_dir(d, sensors), data::Task::kMortality);
      const auto plan = data::make_splits(ds, derive_seed(o.seed, "data"));
      const auto test = ds.select(plan.test);
      std::vector<int> labels;
      for (const auto& ep : test.episodes) {
        if (!ep.label) throw SchemaError("dataset " + d + " has unlabeled episodes");
        labels.push_back(*ep.label);
      }
      const auto scores = train::predict(*model, data::transform_all(test.episodes, pp), o.batch_size);
      const auto report = metrics::evaluate_scores(scores, labels);
      csv << label << ',' << test.name << ',' << test.size() << ',' << report.n_pos << ','
          << metrics::format_fixed(100.0 * report.auc_roc, 4) << ','
          << metrics::format_fixed(100.0 * report.auc_pr, 4) << '\n';
      cells.push_back(report.auc_pr);
    }
  }
  write_text(fs::path(o.out) / "evaluation.csv", csv.str());

  out << "AUC-PR (%) by checkpoint (rows) and dataset (columns)\n" << std::setw(24) << "";
  for (const auto& c : col_names) out << std::setw(12) << c;
  out << '\n';
  for (std::size_t r = 0; r < matrix.size(); ++r) {
    out << std::left << std::setw(24) << row_names[r] << std::right;
    for (double v : matrix[r]) out << std::setw(12) << metrics::format_fixed(100.0 * v, 2);
    out << '\n';
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Training and evaluation of sparse ICU time-series models", "batctl"};
  app.set_config("--config", "", "INI/TOML file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a synthetic ICU dataset");
  gen->configurable();
  add_seed_and_out(gen, o);
  gen->add_option("--n", o.n, "Number of patients")->capture_default_str();
  gen->add_option("--prevalence", o.prevalence, "Target positive fraction")->capture_default_str();
  gen->add_option("--mean-stay", o.mean_stay, "Mean stay in hours")->capture_default_str();
  gen->add_option("--min-stay", o.min_stay, "Shortest stay in hours")->capture_default_str();
  gen->add_option("--sparsity", o.sparsity)->capture_default_str();
  gen->add_option("--availability-seed", o.availability_seed,
                  "Seed of the per-site sensor availability (default: --seed)");
  gen->add_option("--sensors", o.sensors, "Number of sensors (schema prefix)")->capture_default_str();
  gen->add_option("--name", o.name)->capture_default_str();
  gen->add_option("--id-prefix", o.id_prefix)->capture_default_str();

  auto* pre = app.add_subcommand("pretrain", "Self-supervised forecasting over pooled datasets");
  pre->configurable();
  add_seed_and_out(pre, o);
  pre->add_option("--data", o.data, "Dataset directory (repeatable)")->delimiter(',');
  add_model_options(pre, o);
  add_train_options(pre, o);
  pre->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  pre->add_option("--folds", o.folds)->capture_default_str();

  auto* fin = app.add_subcommand("finetune", "Mortality prediction grid over sizes, seeds and variants");
  fin->configurable();
  add_seed_and_out(fin, o);
  fin->add_option("--data", o.data, "Target dataset directory (repeatable)")->delimiter(',');
  fin->add_option("--checkpoint", o.checkpoints, "Pretrained checkpoint");
  const auto fin_flags = add_model_options(fin, o);
  add_train_options(fin, o);
  fin->add_option("--weighted-loss", o.weighted_loss)->capture_default_str();
  fin->add_option("--sizes", o.sizes)->delimiter(',')->capture_default_str();
  fin->add_option("--seeds", o.seeds)->delimiter(',')->capture_default_str();
  fin->add_option("--variants", o.variants)->delimiter(',')->capture_default_str();
  fin->add_option("--lr-full", o.lr_full)->capture_default_str();
  fin->add_option("--lr-head", o.lr_head)->capture_default_str();
  fin->add_option("--lr-scratch", o.lr_scratch)->capture_default_str();
  fin->add_option("--validation-fraction", o.validation_fraction)->capture_default_str();
  fin->add_option("--standardization", o.standardization)
      ->check(CLI::IsMember({"refit", "inherit"}))
      ->capture_default_str();
  fin->add_option("--jobs", o.jobs, "Concurrent grid cells")->capture_default_str();
  fin->add_option("--save-checkpoints", o.save_checkpoints)->capture_default_str();

  auto* ev = app.add_subcommand("evaluate", "Score checkpoints on the test split of datasets");
  ev->configurable();
  add_seed_and_out(ev, o);
  ev->add_option("--checkpoint", o.checkpoints, "Classifier checkpoint (repeatable)")->delimiter(',');
  ev->add_option("--data", o.data, "Dataset directory (repeatable)")->delimiter(',');
  ev->add_option("--batch-size", o.batch_size)->capture_default_str();

  std::mutex log_mutex;
  auto previous = log::set_sink([&](log::Level level, const std::string& msg) {
    std::lock_guard lock(log_mutex);
    (level == log::Level::kWarn ? err : out) << (level == log::Level::kWarn ? "warning: " : "")
                                              << msg << '\n';
  });
  struct Restore {
    log::Sink sink;
    ~Restore() { log::set_sink(std::move(sink)); }
  } restore{std::move(previous)};

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    CLI::App* active = app.get_subcommands().front();
    // Unset optional values are left out so the echo parses back unchanged.
    std::string echoed = "[" + active->get_name() + "]\n";
    std::istringstream lines(active->config_to_str(true, false));
    for (std::string line; std::getline(lines, line);)
      if (line.size() < 3 || line.compare(line.size() - 3, 3, "=\"\"") != 0) echoed += line + '\n';
    prepare_out(o, echoed);
    if (gen->parsed()) cmd_generate(o, out);
    else if (pre->parsed()) cmd_pretrain(o, out);
    else if (fin->parsed()) cmd_finetune(o, fin_flags, out);
    else cmd_evaluate(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ContractError& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ShapeError& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace bat::cli
