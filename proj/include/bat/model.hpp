#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bat/batch.hpp"
#include "bat/checkpoint.hpp"
#include "bat/random.hpp"
#include "bat/tensor.hpp"

namespace bat::model {

using ad::Tensor;

enum class Pooling { kMax, kMean };

Pooling parse_pooling(const std::string& name);
std::string to_string(Pooling p);

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // dropout stream; required when training with dropout > 0
};

/// Ordered, named parameter store shared by BAT and the baseline.
class Module {
 public:
  virtual ~Module() = default;

  const std::vector<Tensor>& parameters() const { return params_; }
  const Tensor& parameter(const std::string& name) const;
  bool has_parameter(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t parameter_scalars() const;

  /// Every parameter as a checkpoint tensor, plus caller metadata.
  ad::Checkpoint to_checkpoint(std::map<std::string, std::string> meta = {}) const;
  /// Overwrites parameter values from `ckpt`; names and shapes must match.
  /// Checkpoint tensors not belonging to this module are ignored.
  void load_parameters(const ad::Checkpoint& ckpt);
  void copy_parameters_from(const Module& other);

  void zero_grad();

 protected:
  Tensor& add_parameter(const std::string& name, ad::Shape shape, std::vector<double> values);
  Tensor& add_linear_weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Tensor& add_constant(const std::string& name, ad::Shape shape, double value);
  Tensor& add_normal(const std::string& name, ad::Shape shape, double sd, Rng& rng);

 private:
  std::vector<Tensor> params_;
  std::map<std::string, std::size_t> index_;
};

/// A binary classifier over hourly grids. `features` is everything up to
/// (and including) the static fusion; `logits_from_features` applies the
/// classification head alone.
class Classifier : public Module {
 public:
  virtual Tensor features(const data::GridBatch& batch, const ForwardContext& ctx) const = 0;
  virtual Tensor logits_from_features(const Tensor& features) const = 0;
  Tensor logits(const data::GridBatch& batch, const ForwardContext& ctx) const {
    return logits_from_features(features(batch, ctx));
  }
  Tensor predict_proba(const data::GridBatch& batch, const ForwardContext& ctx) const {
    return ad::sigmoid(logits(batch, ctx));
  }
  /// Parameter names of the classification head.
  virtual std::vector<std::string> head_parameter_names() const = 0;
  virtual std::string kind() const = 0;
};

struct BatConfig {
  std::size_t sensors_count = 48;     // D
  std::size_t value_embed_size = 128; // E
  std::size_t layers = 2;
  std::size_t heads = 1;
  double dropout = 0.364;
  double attn_dropout = 0.207;
  Pooling pooling = Pooling::kMax;
  std::size_t static_count = 4;       // S
  std::size_t forecast_horizon = 2;   // H
  bool use_mask = false;
  std::size_t ffn_multiplier = 4;

  void validate() const;
};

/// Exact number of trainable scalars of a BatModel built from `cfg`.
std::size_t param_count(const BatConfig& cfg);

/// Sinusoidal encoding of a raw hour value: E/2 pairs (sin, cos) with
/// geometrically spaced frequencies 1 / 10000^(2k/E).
std::vector<double> time_encoding(double hour, std::size_t embed);

class BatModel final : public Classifier {
 public:
  BatModel(BatConfig cfg, std::uint64_t seed);

  const BatConfig& config() const { return cfg_; }

  /// [B, D, T, E] cell embeddings.
  Tensor embed(const data::GridBatch& batch) const;
  Tensor biaxial_layer(const Tensor& x, std::size_t layer, const data::GridBatch& batch,
                       const ForwardContext& ctx) const;
  /// Embedding followed by every bi-axial layer.
  Tensor trunk(const data::GridBatch& batch, const ForwardContext& ctx) const;
  /// Global pooling over D and T, concatenated with statics: [B, E + S].
  Tensor pool_and_fuse(const Tensor& trunk_out, const data::GridBatch& batch) const;
  /// Standardized-scale forecast [B, D, H].
  Tensor forecast(const data::GridBatch& batch, const ForwardContext& ctx) const;
  Tensor forecast_from_trunk(const Tensor& trunk_out, const data::GridBatch& batch) const;

  Tensor features(const data::GridBatch& batch, const ForwardContext& ctx) const override;
  Tensor logits_from_features(const Tensor& features) const override;
  std::vector<std::string> head_parameter_names() const override {
    return {"classifier.weight", "classifier.bias"};
  }
  std::string kind() const override { return "bat"; }

 private:
  Tensor attention(const Tensor& x, const std::string& prefix, const Tensor* key_bias,
                   const ForwardContext& ctx) const;
  Tensor padding_bias(const data::GridBatch& batch) const;

  BatConfig cfg_;
};

struct TransformerConfig {
  std::size_t sensors_count = 48;
  std::size_t embed_size = 128;
  std::size_t layers = 2;
  std::size_t heads = 1;
  double dropout = 0.364;
  double attn_dropout = 0.207;
  Pooling pooling = Pooling::kMax;
  std::size_t static_count = 4;
  bool use_mask = false;
  std::size_t ffn_multiplier = 4;

  void validate() const;
  static TransformerConfig matching(const BatConfig& bat);
};

/// Temporal transformer over the value grid alone. Feed it batches passed
/// through data::mean_imputed; the mask is never read.
class TransformerBaseline final : public Classifier {
 public:
  TransformerBaseline(TransformerConfig cfg, std::uint64_t seed);

  const TransformerConfig& config() const { return cfg_; }

  Tensor features(const data::GridBatch& batch, const ForwardContext& ctx) const override;
  Tensor logits_from_features(const Tensor& features) const override;
  std::vector<std::string> head_parameter_names() const override {
    return {"classifier.weight", "classifier.bias"};
  }
  std::string kind() const override { return "transformer"; }

 private:
  TransformerConfig cfg_;
};

}  // namespace bat::model
