#include <gtest/gtest.h>

#include <map>
#include <set>

#include "bat/errors.hpp"
#include "bat/sampler.hpp"

using namespace bat;
using namespace bat::data;

namespace {

// Independent enumeration of the three window constraints.
std::set<std::size_t> brute_force(const std::vector<std::uint8_t>& tm, const SamplerConfig& cfg) {
  std::optional<std::size_t> last;
  for (std::size_t t = 0; t < tm.size(); ++t) {
    if (tm[t] && t >= cfg.min_obs_len) last = t;
  }
  std::set<std::size_t> out;
  if (!last) return out;
  for (std::size_t t = 0; t < tm.size(); ++t) {
    if (!tm[t] || t < cfg.min_obs_len) continue;
    if (static_cast<long>(t) > static_cast<long>(*last) - static_cast<long>(cfg.forecast_horizon)) continue;
    const std::size_t t0 = cfg.max_obs ? (t > *cfg.max_obs ? t - *cfg.max_obs : 0) : 0;
    bool any = false;
    for (std::size_t k = t0; k < t; ++k) any = any || tm[k];
    if (any) out.insert(t);
  }
  return out;
}

EpisodeRecord from_time_mask(const std::string& id, const std::vector<std::uint8_t>& tm) {
  EpisodeRecord ep(id, 2, tm.size());
  for (std::size_t t = 0; t < tm.size(); ++t) {
    if (tm[t]) ep.set(t % 2, t, static_cast<double>(t));
  }
  return ep;
}

}  // namespace

TEST(ValidIndices, FullyObservedTwentyFour) {
  const auto got = valid_indices(std::vector<std::uint8_t>(24, 1), {});
  std::vector<std::size_t> expect;
  for (std::size_t t = 12; t <= 21; ++t) expect.push_back(t);
  EXPECT_EQ(got, expect);
}

TEST(ValidIndices, TooShortIsEmpty) {
  EXPECT_TRUE(valid_indices(std::vector<std::uint8_t>(10, 1), {}).empty());
}

TEST(ValidIndices, SparseFixture) {
  std::vector<std::uint8_t> tm(24, 0);
  for (auto t : {0, 5, 13, 20}) tm[t] = 1;
  EXPECT_EQ(valid_indices(tm, {}), (std::vector<std::size_t>{13}));
}

TEST(ValidIndices, MatchesBruteForceOnRandomMasks) {
  Rng rng(17);
  std::uniform_int_distribution<std::size_t> len(1, 48);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 2000; ++trial) {
    SamplerConfig cfg;
    if (trial % 3 == 1) cfg.max_obs = 1 + trial % 7;
    std::vector<std::uint8_t> tm(len(rng));
    const double p = u(rng);
    for (auto& m : tm) m = u(rng) < p ? 1 : 0;
    const auto got = valid_indices(tm, cfg);
    EXPECT_EQ(std::set<std::size_t>(got.begin(), got.end()), brute_force(tm, cfg));
  }
}

TEST(SampleWindow, SlicesFullyObservedEpisode) {
  const auto ep = from_time_mask("a", std::vector<std::uint8_t>(24, 1));
  Rng rng(3);
  SamplerConfig cfg;
  cfg.max_obs = 6;
  for (int i = 0; i < 50; ++i) {
    const auto w = sample_window({&ep}, cfg, rng);
    EXPECT_GE(w.t1, 12u);
    EXPECT_LE(w.t1, 21u);
    EXPECT_EQ(w.t0, w.t1 - 6);
    EXPECT_EQ(w.t2, w.t1 + 2);
    EXPECT_EQ(w.obs.steps, 6u);
    EXPECT_EQ(w.obs.hours.front(), static_cast<double>(w.t0));
    EXPECT_EQ(w.forecast_values.size(), 2u * 2u);
    EXPECT_TRUE(sparsity_check(w));
  }
}

TEST(SampleWindow, ShortEpisodesExhaustTries) {
  const auto a = from_time_mask("a", std::vector<std::uint8_t>(8, 1));
  const auto b = from_time_mask("b", std::vector<std::uint8_t>(8, 1));
  Rng rng(1);
  try {
    sample_window({&a, &b}, {}, rng);
    FAIL();
  } catch (const SamplerError& e) {
    EXPECT_NE(std::string(e.what()).find("no valid index found in batch"), std::string::npos);
  }
}

TEST(SampleWindow, DeterministicPerSeed) {
  const auto a = from_time_mask("a", std::vector<std::uint8_t>(30, 1));
  const auto b = from_time_mask("b", std::vector<std::uint8_t>(20, 1));
  Rng r1(9);
  Rng r2(9);
  for (int i = 0; i < 20; ++i) {
    const auto x = sample_window({&a, &b}, {}, r1);
    const auto y = sample_window({&a, &b}, {}, r2);
    EXPECT_EQ(x.t1, y.t1);
    EXPECT_EQ(x.anchor, y.anchor);
    EXPECT_EQ(x.obs.values, y.obs.values);
  }
}

TEST(SampleWindow, UniformOverValidIndices) {
  const auto ep = from_time_mask("a", std::vector<std::uint8_t>(24, 1));
  Rng rng(2024);
  std::map<std::size_t, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[sample_window({&ep}, {}, rng).t1];
  ASSERT_EQ(counts.size(), 10u);
  for (auto [t, c] : counts) EXPECT_NEAR(c / static_cast<double>(draws), 0.1, 0.02) << t;
}

TEST(SampleWindow, PaddingForShorterBatchMembers) {
  const auto longer = from_time_mask("long", std::vector<std::uint8_t>(30, 1));
  const auto shorter = from_time_mask("short", std::vector<std::uint8_t>(14, 1));
  const auto w = slice_window({&longer, &shorter}, 0, 20, {});
  EXPECT_EQ(w.obs.time_valid[1 * w.obs.steps + 13], 1);
  EXPECT_EQ(w.obs.time_valid[1 * w.obs.steps + 14], 0);
  EXPECT_EQ(w.forecast_mask[(1 * 2 + 0) * 2 + 0], 0);
}

TEST(SparsityCheck, Basics) {
  WindowSplit w;
  w.obs.batch = 1;
  w.obs.sensors = 1;
  w.obs.steps = 3;
  w.obs.mask = {0, 0, 0};
  EXPECT_FALSE(sparsity_check(w));
  w.obs.mask = {0, 1, 0};
  EXPECT_TRUE(sparsity_check(w));
}

TEST(SampleWindow, EmittedSplitsSatisfyConstraints) {
  Rng fixture_rng(77);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<std::size_t> len(10, 48);
  Rng rng(5);
  int emitted = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<EpisodeRecord> eps;
    for (int b = 0; b < 3; ++b) {
      std::vector<std::uint8_t> tm(len(fixture_rng));
      for (auto& m : tm) m = u(fixture_rng) < 0.3 ? 1 : 0;
      eps.push_back(from_time_mask("e" + std::to_string(b), tm));
    }
    try {
      const auto w = sample_window(pointers(eps), {}, rng);
      ++emitted;
      const auto& anchor = eps[w.anchor];
      std::size_t last = 0;
      const auto tm = anchor.time_mask();
      for (std::size_t t = 0; t < tm.size(); ++t) last = tm[t] ? t : last;
      EXPECT_GE(w.t1, 12u);
      EXPECT_LE(w.t1 + 2, last);
      EXPECT_EQ(w.horizon(), 2u);
      EXPECT_TRUE(sparsity_check(w));
    } catch (const SamplerError&) {
    }
  }
  EXPECT_GT(emitted, 5000);
}

TEST(SamplerConfig, Validation) {
  SamplerConfig cfg;
  cfg.min_obs_len = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
