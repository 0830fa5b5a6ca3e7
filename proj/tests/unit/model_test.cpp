#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bat/errors.hpp"
#include "bat/grad_check.hpp"
#include "bat/model.hpp"
#include "bat/objectives.hpp"

using namespace bat;
using namespace bat::model;
using data::GridBatch;

namespace {

GridBatch random_batch(std::size_t B, std::size_t D, std::size_t T, std::uint64_t seed, double p_obs = 0.6) {
  Rng rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  GridBatch batch;
  batch.batch = B;
  batch.sensors = D;
  batch.steps = T;
  batch.values.resize(B * D * T);
  batch.mask.resize(B * D * T);
  for (std::size_t i = 0; i < batch.values.size(); ++i) {
    batch.values[i] = g(rng);
    batch.mask[i] = u(rng) < p_obs ? 1 : 0;
  }
  batch.time_valid.assign(B * T, 1);
  batch.hours.resize(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) batch.hours[b * T + t] = static_cast<double>(t);
  }
  batch.statics.resize(B * 4);
  for (auto& s : batch.statics) s = g(rng);
  return batch;
}

BatConfig small_config(std::size_t D, std::size_t E = 8, std::size_t layers = 2, std::size_t heads = 1) {
  BatConfig c;
  c.sensors_count = D;
  c.value_embed_size = E;
  c.layers = layers;
  c.heads = heads;
  c.forecast_horizon = 2;
  return c;
}

std::vector<double> values_of(const ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

void set_param(const Module& m, const std::string& name, double v) {
  auto p = m.parameter(name);
  for (auto& x : p.mutable_data()) x = v;
}

// Permutes the sensor axis of every per-sensor piece of a batch.
GridBatch permute_sensors(const GridBatch& in, const std::vector<std::size_t>& perm) {
  GridBatch out = in;
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t d = 0; d < in.sensors; ++d) {
      for (std::size_t t = 0; t < in.steps; ++t) {
        out.values[out.index(b, d, t)] = in.values[in.index(b, perm[d], t)];
        out.mask[out.index(b, d, t)] = in.mask[in.index(b, perm[d], t)];
      }
    }
  }
  return out;
}

void permute_rows(const Module& m, const std::string& name, const std::vector<std::size_t>& perm) {
  auto p = m.parameter(name);
  const std::size_t E = p.dim(1);
  std::vector<double> orig(p.data().begin(), p.data().end());
  auto dst = p.mutable_data();
  for (std::size_t d = 0; d < perm.size(); ++d) {
    for (std::size_t e = 0; e < E; ++e) dst[d * E + e] = orig[perm[d] * E + e];
  }
}

}  // namespace

TEST(BatModel, GradientsMatchFiniteDifferencesForecastLoss) {
  for (std::size_t heads : {1, 2}) {
    auto cfg = small_config(3, 4, 2, heads);
    cfg.use_mask = heads == 2;
    BatModel m(cfg, 7);
    auto batch = random_batch(2, 3, 8, 11);
    if (heads == 2) batch.time_valid[1 * 8 + 7] = 0;
    Rng rng(5);
    std::normal_distribution<double> g(0, 1);
    std::vector<double> target(2 * 3 * 2);
    std::vector<std::uint8_t> fmask(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
      target[i] = g(rng);
      fmask[i] = i % 3 != 0;
    }
    auto loss = [&] { return metrics::masked_forecast_loss(m.forecast(batch, {}), target, fmask); };
    std::vector<ad::Tensor> params;
    for (const auto& p : m.parameters()) {
      if (p.name().rfind("classifier.", 0) != 0) params.push_back(p);
    }
    const auto report = ad::grad_check(loss, params, 1e-5, 1e-3);
    EXPECT_TRUE(report.passed) << "heads=" << heads << " worst " << report.worst();
    for (const auto& pc : report.params) EXPECT_LE(pc.max_rel_error, 1e-3) << pc.name;
  }
}

TEST(BatModel, GradientsMatchFiniteDifferencesClassificationLoss) {
  BatModel m(small_config(3, 4, 1), 3);
  const auto batch = random_batch(4, 3, 6, 2);
  const std::vector<int> labels = {1, 0, 0, 1};
  auto loss = [&] { return metrics::weighted_bce(m.predict_proba(batch, {}), labels, 3.0); };
  std::vector<ad::Tensor> params;
  for (const auto& p : m.parameters()) {
    if (p.name().rfind("forecast.", 0) != 0) params.push_back(p);
  }
  const auto report = ad::grad_check(loss, params, 1e-5, 1e-3);
  EXPECT_TRUE(report.passed) << report.worst();
}

TEST(BatModel, ParamCountMatchesRegisteredParameters) {
  for (std::size_t layers : {0, 1, 3}) {
    for (std::size_t E : {4, 8, 16}) {
      auto cfg = small_config(5, E, layers);
      EXPECT_EQ(BatModel(cfg, 1).parameter_scalars(), param_count(cfg));
    }
  }
}

TEST(BatModel, ParamCountStructure) {
  auto cfg = small_config(12, 16, 0);
  const std::size_t E = 16, D = 12, S = 4, H = 2;
  const std::size_t embeddings = 2 * E + 2 * D * E;
  const std::size_t heads = (S * E + E) + (E * H + H) + (E + S + 1);
  EXPECT_EQ(param_count(cfg), embeddings + heads);

  cfg.layers = 2;
  const std::size_t trunk2 = param_count(cfg) - embeddings - heads;
  cfg.layers = 4;
  const std::size_t trunk4 = param_count(cfg) - embeddings - heads;
  EXPECT_EQ(trunk4, 2 * trunk2);

  auto a = small_config(48, 64, 6);
  auto b = small_config(48, 128, 6);
  EXPECT_LT(param_count(a), param_count(b));
}

TEST(BatModel, SensorPermutationEquivariance) {
  const std::size_t D = 5;
  BatModel m(small_config(D, 8, 2, 2), 4);
  const auto batch = random_batch(2, D, 7, 8);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  const auto base = values_of(m.trunk(batch, {}));

  BatModel q(small_config(D, 8, 2, 2), 4);
  permute_rows(q, "embed.sensor_identity", perm);
  permute_rows(q, "embed.missing_token", perm);
  const auto moved = values_of(q.trunk(permute_sensors(batch, perm), {}));
  const std::size_t T = 7, E = 8;
  double worst = 0;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t i = 0; i < T * E; ++i) {
        const double x = moved[(b * D + d) * T * E + i];
        const double y = base[(b * D + perm[d]) * T * E + i];
        worst = std::max(worst, std::abs(x - y));
      }
    }
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(BatModel, TimePermutationEquivariance) {
  const std::size_t D = 3, T = 6, E = 8;
  BatModel m(small_config(D, E), 9);
  const auto batch = random_batch(1, D, T, 4);
  const std::vector<std::size_t> perm = {5, 2, 0, 4, 1, 3};
  GridBatch moved = batch;
  for (std::size_t t = 0; t < T; ++t) {
    moved.hours[t] = batch.hours[perm[t]];
    for (std::size_t d = 0; d < D; ++d) {
      moved.values[moved.index(0, d, t)] = batch.values[batch.index(0, d, perm[t])];
      moved.mask[moved.index(0, d, t)] = batch.mask[batch.index(0, d, perm[t])];
    }
  }
  const auto x = values_of(m.trunk(batch, {}));
  const auto y = values_of(m.trunk(moved, {}));
  double worst = 0;
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t e = 0; e < E; ++e) {
        worst = std::max(worst, std::abs(y[(d * T + t) * E + e] - x[(d * T + perm[t]) * E + e]));
      }
    }
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(BatModel, UnobservedValuesNeverReachOutputs) {
  for (bool use_mask : {false, true}) {
    auto cfg = small_config(4, 8);
    cfg.use_mask = use_mask;
    BatModel m(cfg, 2);
    auto batch = random_batch(3, 4, 9, 6, 0.4);
    const auto p0 = values_of(m.predict_proba(batch, {}));
    const auto f0 = values_of(m.forecast(batch, {}));
    for (std::size_t i = 0; i < batch.values.size(); ++i) {
      if (!batch.mask[i]) batch.values[i] = 1e6 * static_cast<double>(i % 7 + 1);
    }
    EXPECT_EQ(values_of(m.predict_proba(batch, {})), p0);
    EXPECT_EQ(values_of(m.forecast(batch, {})), f0);
  }
}

TEST(BatModel, AllMissingEmbeddingIgnoresValues) {
  const std::size_t D = 2, T = 3, E = 4;
  BatModel m(small_config(D, E), 1);
  auto batch = random_batch(1, D, T, 3);
  std::fill(batch.mask.begin(), batch.mask.end(), 0);
  const auto emb = values_of(m.embed(batch));
  const auto missing = values_of(m.parameter("embed.missing_token"));
  const auto identity = values_of(m.parameter("embed.sensor_identity"));
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto te = time_encoding(static_cast<double>(t), E);
      for (std::size_t e = 0; e < E; ++e) {
        EXPECT_NEAR(emb[(d * T + t) * E + e], missing[d * E + e] + identity[d * E + e] + te[e], 1e-12);
      }
    }
  }
}

TEST(BatModel, IdentityEmbeddingSeparatesSensors) {
  BatModel m(small_config(2, 4), 1);
  auto batch = random_batch(1, 2, 2, 3);
  for (std::size_t t = 0; t < 2; ++t) {
    batch.values[batch.index(0, 1, t)] = batch.values[batch.index(0, 0, t)];
    batch.mask[batch.index(0, 1, t)] = batch.mask[batch.index(0, 0, t)];
  }
  set_param(m, "embed.missing_token", 0.25);
  auto emb = values_of(m.embed(batch));
  EXPECT_NE(std::vector<double>(emb.begin(), emb.begin() + 8), std::vector<double>(emb.begin() + 8, emb.end()));
  set_param(m, "embed.sensor_identity", 0.5);
  emb = values_of(m.embed(batch));
  EXPECT_EQ(std::vector<double>(emb.begin(), emb.begin() + 8), std::vector<double>(emb.begin() + 8, emb.end()));
}

TEST(TimeEncoding, HourZeroFirstPair) {
  const auto enc = time_encoding(0.0, 8);
  EXPECT_EQ(enc[0], 0.0);
  EXPECT_EQ(enc[1], 1.0);
  const auto one = time_encoding(1.0, 8);
  EXPECT_NEAR(one[0], std::sin(1.0), 1e-15);
}

TEST(BatModel, PoolingModes) {
  auto cfg = small_config(2, 4, 0);
  BatModel m(cfg, 1);
  auto batch = random_batch(1, 2, 3, 1);
  const auto c = ad::Tensor::full({1, 2, 3, 4}, 1.5);
  auto fused = values_of(m.pool_and_fuse(c, batch));
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(fused[e], 1.5);
  EXPECT_EQ(fused[4], batch.statics[0]);

  std::vector<double> v(24);
  Rng rng(4);
  std::normal_distribution<double> g(0, 1);
  for (auto& x : v) x = g(rng);
  v[5] = 100.0;  // (d=0, t=1, e=1)
  const auto x = ad::Tensor::from({1, 2, 3, 4}, v);
  fused = values_of(m.pool_and_fuse(x, batch));
  EXPECT_EQ(fused[1], 100.0);

  cfg.pooling = Pooling::kMean;
  BatModel mm(cfg, 1);
  fused = values_of(mm.pool_and_fuse(x, batch));
  for (std::size_t e = 0; e < 4; ++e) {
    double total = 0;
    for (std::size_t k = 0; k < 6; ++k) total += v[k * 4 + e];
    EXPECT_NEAR(fused[e], total / 6.0, 1e-12);
  }
  fused = values_of(mm.pool_and_fuse(c, batch));
  for (std::size_t e = 0; e < 4; ++e) EXPECT_NEAR(fused[e], 1.5, 1e-15);
}

TEST(BatModel, ClassifierHead) {
  BatModel m(small_config(2, 4, 1), 1);
  const auto batch = random_batch(3, 2, 4, 1);
  set_param(m, "classifier.weight", 0.0);
  set_param(m, "classifier.bias", 0.0);
  for (double p : values_of(m.predict_proba(batch, {}))) EXPECT_EQ(p, 0.5);
  set_param(m, "classifier.bias", 0.8473);
  for (double p : values_of(m.predict_proba(batch, {}))) EXPECT_NEAR(p, 0.7, 1e-4);
  const auto before = values_of(m.predict_proba(batch, {}));
  set_param(m, "classifier.bias", 0.9);
  const auto after = values_of(m.predict_proba(batch, {}));
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_GT(after[i], before[i]);
}

TEST(BatModel, OutputsInRangeAndFinite) {
  BatModel m(small_config(4, 8, 2), 12);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto batch = random_batch(4, 4, 10, s);
    for (double p : values_of(m.predict_proba(batch, {}))) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
    for (double f : values_of(m.forecast(batch, {}))) EXPECT_TRUE(std::isfinite(f));
  }
}

TEST(BatModel, ZeroForecastHeadGivesZeros) {
  BatModel m(small_config(3, 4), 1);
  set_param(m, "forecast.weight", 0.0);
  set_param(m, "forecast.bias", 0.0);
  for (double f : values_of(m.forecast(random_batch(2, 3, 5, 1), {}))) EXPECT_EQ(f, 0.0);
}

TEST(BatModel, ReferenceForecastShape) {
  BatConfig cfg;  // D = 48, E = 128, H = 2
  BatModel m(cfg, 1);
  const auto out = m.forecast(random_batch(1, 48, 3, 1), {});
  EXPECT_EQ(out.shape(), (ad::Shape{1, 48, 2}));
}

TEST(BatModel, DeterministicEvalAndSeededTraining) {
  BatModel m(small_config(3, 8), 5);
  const auto batch = random_batch(2, 3, 6, 2);
  EXPECT_EQ(values_of(m.predict_proba(batch, {})), values_of(m.predict_proba(batch, {})));
  Rng r1(4);
  Rng r2(4);
  const auto a = values_of(m.predict_proba(batch, {true, &r1}));
  const auto b = values_of(m.predict_proba(batch, {true, &r2}));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, values_of(m.predict_proba(batch, {})));
}

TEST(BatModel, NoDeadParameters) {
  BatModel m(small_config(4, 8, 2, 2), 3);
  const auto batch = random_batch(4, 4, 8, 21, 0.5);
  std::vector<double> target(4 * 4 * 2, 0.3);
  std::vector<std::uint8_t> fmask(target.size(), 1);
  ad::Tape tape;
  auto loss = ad::add(metrics::masked_forecast_loss(m.forecast(batch, {}), target, fmask),
                      metrics::weighted_bce(m.predict_proba(batch, {}), {1, 0, 0, 1}));
  tape.backward(loss);
  for (const auto& p : m.parameters()) {
    ASSERT_TRUE(p.has_grad()) << p.name();
    double norm = 0;
    for (double g : p.grad()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << p.name();
  }
}

TEST(BatModel, CheckpointRoundTrip) {
  BatModel a(small_config(3, 4), 1);
  BatModel b(small_config(3, 4), 2);
  b.load_parameters(ad::parse_checkpoint(ad::serialize_checkpoint(a.to_checkpoint())));
  const auto batch = random_batch(2, 3, 5, 1);
  EXPECT_EQ(values_of(a.forecast(batch, {})), values_of(b.forecast(batch, {})));
  BatModel c(small_config(3, 8), 1);
  EXPECT_THROW(c.load_parameters(a.to_checkpoint()), ShapeError);
}

TEST(BatConfig, Validation) {
  auto cfg = small_config(3, 6, 1, 4);
  EXPECT_THROW(BatModel(cfg, 1), ConfigError);
  EXPECT_THROW(parse_pooling("median"), ConfigError);
}

TEST(Transformer, OutputRangeAndMaskBlindness) {
  TransformerConfig cfg;
  cfg.sensors_count = 4;
  cfg.embed_size = 8;
  TransformerBaseline m(cfg, 3);
  auto batch = data::mean_imputed(random_batch(3, 4, 6, 7));
  const auto p = values_of(m.predict_proba(batch, {}));
  for (double x : p) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  for (auto& mk : batch.mask) mk = 1 - mk;
  EXPECT_EQ(values_of(m.predict_proba(batch, {})), p);
}

TEST(Transformer, GradientsMatchFiniteDifferences) {
  TransformerConfig cfg;
  cfg.sensors_count = 3;
  cfg.embed_size = 4;
  cfg.heads = 2;
  TransformerBaseline m(cfg, 3);
  const auto batch = data::mean_imputed(random_batch(4, 3, 6, 3));
  const std::vector<int> labels = {0, 1, 1, 0};
  auto loss = [&] { return metrics::weighted_bce(m.predict_proba(batch, {}), labels); };
  const auto report = ad::grad_check(loss, m.parameters(), 1e-5, 1e-3);
  EXPECT_TRUE(report.passed) << report.worst();
}
