#include "bat/model.hpp"

#include <cmath>

#include "bat/errors.hpp"

namespace bat::model {

using ad::Shape;

Pooling parse_pooling(const std::string& name) {
  if (name == "max") return Pooling::kMax;
  if (name == "mean") return Pooling::kMean;
  throw ConfigError("unknown pooling '" + name + "' (expected max or mean)");
}

std::string to_string(Pooling p) { return p == Pooling::kMax ? "max" : "mean"; }

// ---------------------------------------------------------------- Module

const Tensor& Module::parameter(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + name + "'");
  return params_[it->second];
}

std::size_t Module::parameter_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

ad::Checkpoint Module::to_checkpoint(std::map<std::string, std::string> meta) const {
  ad::Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  for (const auto& p : params_) {
    auto data = p.data();
    ckpt.tensors.push_back({p.name(), p.shape(), std::vector<double>(data.begin(), data.end())});
  }
  return ckpt;
}

void Module::load_parameters(const ad::Checkpoint& ckpt) {
  for (auto& p : params_) {
    const auto* t = ckpt.find(p.name());
    if (!t) throw SchemaError("checkpoint lacks parameter '" + p.name() + "'");
    if (t->shape != p.shape()) {
      throw ShapeError("checkpoint parameter '" + p.name() + "' has shape " + ad::to_string(t->shape) +
                       ", model expects " + ad::to_string(p.shape()));
    }
    std::copy(t->values.begin(), t->values.end(), p.mutable_data().begin());
  }
}

void Module::copy_parameters_from(const Module& other) { load_parameters(other.to_checkpoint()); }

void Module::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Tensor& Module::add_parameter(const std::string& name, Shape shape, std::vector<double> values) {
  if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_[name] = params_.size();
  params_.push_back(Tensor::parameter(std::move(shape), std::move(values), name));
  return params_.back();
}

Tensor& Module::add_linear_weight(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(in * out);
  for (auto& x : v) x = u(rng);
  return add_parameter(name, {in, out}, std::move(v));
}

Tensor& Module::add_constant(const std::string& name, Shape shape, double value) {
  const std::size_t n = ad::numel(shape);
  return add_parameter(name, std::move(shape), std::vector<double>(n, value));
}

Tensor& Module::add_normal(const std::string& name, Shape shape, double sd, Rng& rng) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = g(rng);
  return add_parameter(name, std::move(shape), std::move(v));
}

// ---------------------------------------------------------------- shared blocks

namespace {

Tensor linear(const Module& m, const Tensor& x, const std::string& prefix) {
  return ad::add(ad::matmul(x, m.parameter(prefix + ".weight")), m.parameter(prefix + ".bias"));
}

Tensor norm(const Module& m, const Tensor& x, const std::string& prefix) {
  return ad::layer_norm(x, m.parameter(prefix + ".gain"), m.parameter(prefix + ".bias"), x.rank() - 1);
}

Tensor drop(const Tensor& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (!ctx.rng) throw ContractError("training forward with dropout needs an rng");
  return ad::dropout(x, p, true, *ctx.rng);
}

// Self-attention over the middle axis of x [N, L, E]. key_bias, when
// given, has shape [N, 1, L] and is added to the scores before softmax.
Tensor self_attention(const Module& m, const Tensor& x, const std::string& prefix, std::size_t heads,
                      double attn_dropout, const Tensor* key_bias, const ForwardContext& ctx) {
  const std::size_t N = x.dim(0);
  const std::size_t L = x.dim(1);
  const std::size_t E = x.dim(2);
  const std::size_t dh = E / heads;
  Tensor q = linear(m, x, prefix + ".q");
  Tensor k = linear(m, x, prefix + ".k");
  Tensor v = linear(m, x, prefix + ".v");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor context;
  if (heads == 1) {
    Tensor scores = ad::scale(ad::matmul(q, ad::transpose(k, 1, 2)), inv_sqrt);
    if (key_bias) scores = ad::add(scores, *key_bias);
    Tensor attn = drop(ad::softmax(scores, 2), attn_dropout, ctx);
    context = ad::matmul(attn, v);
  } else {
    const auto split = [&](const Tensor& t) {
      return ad::permute(ad::reshape(t, {N, L, heads, dh}), {0, 2, 1, 3});
    };
    Tensor qh = split(q);
    Tensor kh = split(k);
    Tensor vh = split(v);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh, 2, 3)), inv_sqrt);
    if (key_bias) scores = ad::add(scores, ad::reshape(*key_bias, {N, 1, 1, L}));
    Tensor attn = drop(ad::softmax(scores, 3), attn_dropout, ctx);
    context = ad::reshape(ad::permute(ad::matmul(attn, vh), {0, 2, 1, 3}), {N, L, E});
  }
  return linear(m, context, prefix + ".o");
}

Tensor feed_forward(const Module& m, const Tensor& x, const std::string& prefix) {
  return linear(m, ad::gelu(linear(m, x, prefix + ".w1")), prefix + ".w2");
}

void add_attention_params(Module& m, const std::string& prefix, std::size_t E, Rng& rng,
                          Tensor& (Module::*weight)(const std::string&, std::size_t, std::size_t, Rng&),
                          Tensor& (Module::*constant)(const std::string&, Shape, double)) {
  for (const char* part : {".q", ".k", ".v", ".o"}) {
    (m.*weight)(prefix + part + ".weight", E, E, rng);
    (m.*constant)(prefix + part + ".bias", {E}, 0.0);
  }
}

Tensor statics_tensor(const data::GridBatch& batch, std::size_t static_count) {
  if (batch.statics.size() != batch.batch * static_count) {
    throw ShapeError("batch carries " + std::to_string(batch.statics.size()) + " static values, expected " +
                     std::to_string(batch.batch * static_count));
  }
  return Tensor::from({batch.batch, static_count}, batch.statics);
}

// [B, 1, T, E] sinusoidal encodings of each element's hours.
Tensor time_encoding_tensor(const data::GridBatch& batch, std::size_t E) {
  std::vector<double> v(batch.batch * batch.steps * E);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t < batch.steps; ++t) {
      const auto enc = time_encoding(batch.hours[b * batch.steps + t], E);
      std::copy(enc.begin(), enc.end(), v.begin() + static_cast<std::ptrdiff_t>((b * batch.steps + t) * E));
    }
  }
  return Tensor::from({batch.batch, 1, batch.steps, E}, std::move(v));
}

Tensor pool(const Tensor& x, std::size_t first, std::size_t last, Pooling mode) {
  return mode == Pooling::kMax ? ad::max(x, first, last) : ad::mean(x, first, last);
}

constexpr double kMaskedScore = -1e9;

}  // namespace

std::vector<double> time_encoding(double hour, std::size_t embed) {
  std::vector<double> out(embed);
  for (std::size_t k = 0; 2 * k < embed; ++k) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(embed));
    out[2 * k] = std::sin(hour * freq);
    if (2 * k + 1 < embed) out[2 * k + 1] = std::cos(hour * freq);
  }
  return out;
}

// ---------------------------------------------------------------- BAT

void BatConfig::validate() const {
  if (sensors_count == 0) throw ConfigError("sensors_count must be positive");
  if (value_embed_size == 0 || value_embed_size % 2 != 0) {
    throw ConfigError("value_embed_size must be a positive even number");
  }
  if (heads == 0 || value_embed_size % heads != 0) {
    throw ConfigError("value_embed_size (" + std::to_string(value_embed_size) +
                      ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0)) throw ConfigError("attn_dropout must lie in [0, 1)");
  if (forecast_horizon == 0) throw ConfigError("forecast_horizon must be positive");
  if (ffn_multiplier == 0) throw ConfigError("ffn_multiplier must be positive");
}

std::size_t param_count(const BatConfig& cfg) {
  const std::size_t D = cfg.sensors_count;
  const std::size_t E = cfg.value_embed_size;
  const std::size_t F = cfg.ffn_multiplier * E;
  const std::size_t S = cfg.static_count;
  const std::size_t H = cfg.forecast_horizon;
  const std::size_t embedding = 2 * E + 2 * D * E;
  const std::size_t attention = 4 * (E * E + E);
  const std::size_t layer = 2 * E + 2 * attention + 2 * E + (E * F + F) + (F * E + E);
  const std::size_t forecast_head = (S * E + E) + (E * H + H);
  const std::size_t classifier = (E + S) + 1;
  return embedding + cfg.layers * layer + forecast_head + classifier;
}

BatModel::BatModel(BatConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = make_rng(seed, "init");
  const std::size_t D = cfg_.sensors_count;
  const std::size_t E = cfg_.value_embed_size;
  const std::size_t F = cfg_.ffn_multiplier * E;
  add_normal("embed.value_weight", {E}, 1.0, rng);
  add_constant("embed.value_bias", {E}, 0.0);
  add_normal("embed.missing_token", {D, E}, 0.5, rng);
  add_normal("embed.sensor_identity", {D, E}, 0.5, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    add_constant(p + ".norm1.gain", {E}, 1.0);
    add_constant(p + ".norm1.bias", {E}, 0.0);
    add_attention_params(*this, p + ".time_attn", E, rng, &BatModel::add_linear_weight, &BatModel::add_constant);
    add_attention_params(*this, p + ".feat_attn", E, rng, &BatModel::add_linear_weight, &BatModel::add_constant);
    add_constant(p + ".norm2.gain", {E}, 1.0);
    add_constant(p + ".norm2.bias", {E}, 0.0);
    add_linear_weight(p + ".ffn.w1.weight", E, F, rng);
    add_constant(p + ".ffn.w1.bias", {F}, 0.0);
    add_linear_weight(p + ".ffn.w2.weight", F, E, rng);
    add_constant(p + ".ffn.w2.bias", {E}, 0.0);
  }
  add_linear_weight("forecast.static_weight", cfg_.static_count, E, rng);
  add_constant("forecast.static_bias", {E}, 0.0);
  add_linear_weight("forecast.weight", E, cfg_.forecast_horizon, rng);
  add_constant("forecast.bias", {cfg_.forecast_horizon}, 0.0);
  add_linear_weight("classifier.weight", E + cfg_.static_count, 1, rng);
  add_constant("classifier.bias", {1}, 0.0);
}

Tensor BatModel::embed(const data::GridBatch& batch) const {
  const std::size_t B = batch.batch;
  const std::size_t D = cfg_.sensors_count;
  const std::size_t T = batch.steps;
  const std::size_t E = cfg_.value_embed_size;
  if (T == 0) throw ContractError("embed_input: no time steps");
  if (batch.sensors != D) {
    throw ShapeError("embed_input: batch has " + std::to_string(batch.sensors) + " sensors, model expects " +
                     std::to_string(D));
  }
  std::vector<double> gated(B * D * T);
  std::vector<double> observed(B * D * T);
  std::vector<double> missing(B * D * T);
  for (std::size_t i = 0; i < gated.size(); ++i) {
    const bool m = batch.mask[i] != 0;
    gated[i] = m ? batch.values[i] : 0.0;
    observed[i] = m ? 1.0 : 0.0;
    missing[i] = m ? 0.0 : 1.0;
  }
  const Shape cell{B, D, T, 1};
  Tensor value_lift = ad::add(ad::mul(Tensor::from(cell, std::move(gated)), parameter("embed.value_weight")),
                              ad::mul(Tensor::from(cell, std::move(observed)), parameter("embed.value_bias")));
  Tensor missing_part = ad::mul(Tensor::from(cell, std::move(missing)),
                                ad::reshape(parameter("embed.missing_token"), {D, 1, E}));
  Tensor x = ad::add(value_lift, missing_part);
  x = ad::add(x, ad::reshape(parameter("embed.sensor_identity"), {D, 1, E}));
  return ad::add(x, time_encoding_tensor(batch, E));
}

Tensor BatModel::padding_bias(const data::GridBatch& batch) const {
  const std::size_t D = cfg_.sensors_count;
  std::vector<double> bias(batch.batch * D * batch.steps, 0.0);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t t = 0; t < batch.steps; ++t) {
        if (!batch.time_valid[b * batch.steps + t]) bias[(b * D + d) * batch.steps + t] = kMaskedScore;
      }
    }
  }
  return Tensor::from({batch.batch * D, 1, batch.steps}, std::move(bias));
}

Tensor BatModel::attention(const Tensor& x, const std::string& prefix, const Tensor* key_bias,
                           const ForwardContext& ctx) const {
  return self_attention(*this, x, prefix, cfg_.heads, cfg_.attn_dropout, key_bias, ctx);
}

Tensor BatModel::biaxial_layer(const Tensor& x, std::size_t layer, const data::GridBatch& batch,
                               const ForwardContext& ctx) const {
  const std::size_t B = x.dim(0);
  const std::size_t D = x.dim(1);
  const std::size_t T = x.dim(2);
  const std::size_t E = x.dim(3);
  const std::string p = "layers." + std::to_string(layer);

  Tensor n = norm(*this, x, p + ".norm1");
  std::optional<Tensor> bias;
  if (cfg_.use_mask) bias = padding_bias(batch);
  Tensor along_time = ad::reshape(
      attention(ad::reshape(n, {B * D, T, E}), p + ".time_attn", bias ? &*bias : nullptr, ctx), {B, D, T, E});
  Tensor by_time = ad::reshape(ad::permute(n, {0, 2, 1, 3}), {B * T, D, E});
  Tensor along_features =
      ad::permute(ad::reshape(attention(by_time, p + ".feat_attn", nullptr, ctx), {B, T, D, E}), {0, 2, 1, 3});

  Tensor out = ad::add(x, ad::add(drop(along_time, cfg_.dropout, ctx), drop(along_features, cfg_.dropout, ctx)));
  Tensor ff = feed_forward(*this, norm(*this, out, p + ".norm2"), p + ".ffn");
  return ad::add(out, drop(ff, cfg_.dropout, ctx));
}

Tensor BatModel::trunk(const data::GridBatch& batch, const ForwardContext& ctx) const {
  Tensor x = embed(batch);
  for (std::size_t l = 0; l < cfg_.layers; ++l) x = biaxial_layer(x, l, batch, ctx);
  return x;
}

Tensor BatModel::pool_and_fuse(const Tensor& trunk_out, const data::GridBatch& batch) const {
  Tensor pooled = pool(trunk_out, 1, 2, cfg_.pooling);
  return ad::concat({pooled, statics_tensor(batch, cfg_.static_count)}, 1);
}

Tensor BatModel::forecast_from_trunk(const Tensor& trunk_out, const data::GridBatch& batch) const {
  const std::size_t B = trunk_out.dim(0);
  const std::size_t E = cfg_.value_embed_size;
  Tensor per_sensor = pool(trunk_out, 2, 2, cfg_.pooling);  // [B, D, E]
  Tensor fused_statics = ad::add(ad::matmul(statics_tensor(batch, cfg_.static_count),
                                            parameter("forecast.static_weight")),
                                 parameter("forecast.static_bias"));
  Tensor h = ad::add(per_sensor, ad::reshape(fused_statics, {B, 1, E}));
  return linear(*this, h, "forecast");
}

Tensor BatModel::forecast(const data::GridBatch& batch, const ForwardContext& ctx) const {
  return forecast_from_trunk(trunk(batch, ctx), batch);
}

Tensor BatModel::features(const data::GridBatch& batch, const ForwardContext& ctx) const {
  return pool_and_fuse(trunk(batch, ctx), batch);
}

Tensor BatModel::logits_from_features(const Tensor& features) const {
  return ad::reshape(linear(*this, features, "classifier"), {features.dim(0)});
}

// ---------------------------------------------------------------- baseline

void TransformerConfig::validate() const {
  if (sensors_count == 0) throw ConfigError("sensors_count must be positive");
  if (embed_size == 0 || embed_size % 2 != 0) throw ConfigError("embed size must be a positive even number");
  if (heads == 0 || embed_size % heads != 0) throw ConfigError("embed size must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0)) throw ConfigError("attn_dropout must lie in [0, 1)");
}

TransformerConfig TransformerConfig::matching(const BatConfig& bat) {
  TransformerConfig t;
  t.sensors_count = bat.sensors_count;
  t.embed_size = bat.value_embed_size;
  t.layers = bat.layers;
  t.heads = bat.heads;
  t.dropout = bat.dropout;
  t.attn_dropout = bat.attn_dropout;
  t.pooling = bat.pooling;
  t.static_count = bat.static_count;
  t.use_mask = bat.use_mask;
  t.ffn_multiplier = bat.ffn_multiplier;
  return t;
}

TransformerBaseline::TransformerBaseline(TransformerConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = make_rng(seed, "init");
  const std::size_t E = cfg_.embed_size;
  const std::size_t F = cfg_.ffn_multiplier * E;
  add_linear_weight("embed.weight", cfg_.sensors_count, E, rng);
  add_constant("embed.bias", {E}, 0.0);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    add_constant(p + ".norm1.gain", {E}, 1.0);
    add_constant(p + ".norm1.bias", {E}, 0.0);
    add_attention_params(*this, p + ".attn", E, rng, &TransformerBaseline::add_linear_weight,
                         &TransformerBaseline::add_constant);
    add_constant(p + ".norm2.gain", {E}, 1.0);
    add_constant(p + ".norm2.bias", {E}, 0.0);
    add_linear_weight(p + ".ffn.w1.weight", E, F, rng);
    add_constant(p + ".ffn.w1.bias", {F}, 0.0);
    add_linear_weight(p + ".ffn.w2.weight", F, E, rng);
    add_constant(p + ".ffn.w2.bias", {E}, 0.0);
  }
  add_linear_weight("classifier.weight", E + cfg_.static_count, 1, rng);
  add_constant("classifier.bias", {1}, 0.0);
}

Tensor TransformerBaseline::features(const data::GridBatch& batch, const ForwardContext& ctx) const {
  const std::size_t B = batch.batch;
  const std::size_t D = cfg_.sensors_count;
  const std::size_t T = batch.steps;
  const std::size_t E = cfg_.embed_size;
  if (T == 0) throw ContractError("transformer: no time steps");
  if (batch.sensors != D) throw ShapeError("transformer: sensor count mismatch");
  std::vector<double> imputed(B * T * D);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t i = batch.index(b, d, t);
        imputed[(b * T + t) * D + d] = batch.values[i];
      }
    }
  }
  Tensor x = linear(*this, Tensor::from({B, T, D}, std::move(imputed)), "embed");
  x = ad::add(x, ad::reshape(time_encoding_tensor(batch, E), {B, T, E}));

  std::optional<Tensor> bias;
  if (cfg_.use_mask) {
    std::vector<double> v(B * T, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = batch.time_valid[i] ? 0.0 : kMaskedScore;
    bias = Tensor::from({B, 1, T}, std::move(v));
  }
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    Tensor a = self_attention(*this, norm(*this, x, p + ".norm1"), p + ".attn", cfg_.heads, cfg_.attn_dropout,
                              bias ? &*bias : nullptr, ctx);
    x = ad::add(x, drop(a, cfg_.dropout, ctx));
    Tensor ff = feed_forward(*this, norm(*this, x, p + ".norm2"), p + ".ffn");
    x = ad::add(x, drop(ff, cfg_.dropout, ctx));
  }
  return ad::concat({pool(x, 1, 1, cfg_.pooling), statics_tensor(batch, cfg_.static_count)}, 1);
}

Tensor TransformerBaseline::logits_from_features(const Tensor& features) const {
  return ad::reshape(linear(*this, features, "classifier"), {features.dim(0)});
}

}  // namespace bat::model
