#include "bat/sampler.hpp"

#include <algorithm>

#include "bat/errors.hpp"

namespace bat::data {

void SamplerConfig::validate() const {
  if (min_obs_len < 1) throw ConfigError("sampler: min_obs_len must be >= 1");
  if (forecast_horizon < 1) throw ConfigError("sampler: forecast_horizon must be >= 1");
  if (max_obs && *max_obs < 1) throw ConfigError("sampler: max_obs must be >= 1");
  if (max_tries && *max_tries < 1) throw ConfigError("sampler: max_tries must be >= 1");
}

std::vector<std::size_t> valid_indices(const std::vector<std::uint8_t>& time_mask,
                                       const SamplerConfig& cfg) {
  std::vector<std::size_t> candidates;
  for (std::size_t t = cfg.min_obs_len; t < time_mask.size(); ++t) {
    if (time_mask[t]) candidates.push_back(t);
  }
  if (candidates.empty()) return {};
  const std::size_t max_index = candidates.back();
  if (max_index < cfg.forecast_horizon) return {};
  const std::size_t upper = max_index - cfg.forecast_horizon;

  // prefix[t] = number of observed hours in [0, t)
  std::vector<std::size_t> prefix(time_mask.size() + 1, 0);
  for (std::size_t t = 0; t < time_mask.size(); ++t) prefix[t + 1] = prefix[t] + (time_mask[t] ? 1 : 0);

  std::vector<std::size_t> out;
  for (std::size_t t : candidates) {
    if (t > upper) break;
    if (prefix[t] - prefix[cfg.window_start(t)] > 0) out.push_back(t);
  }
  return out;
}

WindowSplit slice_window(const std::vector<const EpisodeRecord*>& batch, std::size_t anchor,
                         std::size_t t1, const SamplerConfig& cfg) {
  if (anchor >= batch.size()) throw ContractError("slice_window: anchor outside batch");
  WindowSplit w;
  w.anchor = anchor;
  w.episode_id = batch[anchor]->patient_id;
  w.t0 = cfg.window_start(t1);
  w.t1 = t1;
  w.t2 = t1 + cfg.forecast_horizon;
  w.obs = make_grid_batch(batch, w.t0, w.t1);
  const std::size_t D = w.obs.sensors;
  const std::size_t H = cfg.forecast_horizon;
  w.forecast_values.assign(batch.size() * D * H, 0.0);
  w.forecast_mask.assign(batch.size() * D * H, 0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const EpisodeRecord& ep = *batch[b];
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t t = t1 + h;
        if (t >= ep.steps) continue;
        const std::size_t src = d * ep.steps + t;
        const std::size_t dst = (b * D + d) * H + h;
        w.forecast_mask[dst] = ep.mask[src];
        w.forecast_values[dst] = (ep.preprocessed || ep.mask[src]) ? ep.values[src] : 0.0;
      }
    }
  }
  return w;
}

WindowSplit sample_window(const std::vector<const EpisodeRecord*>& batch,
                          const SamplerConfig& cfg, Rng& rng) {
  if (batch.empty()) throw ContractError("sample_window: empty batch");
  const std::size_t max_tries = cfg.max_tries.value_or(batch.size());
  std::uniform_int_distribution<std::size_t> pick_element(0, batch.size() - 1);
  for (std::size_t tries = 0; tries < max_tries; ++tries) {
    const std::size_t i = pick_element(rng);
    const auto valid = valid_indices(batch[i]->time_mask(), cfg);
    if (valid.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick_index(0, valid.size() - 1);
    return slice_window(batch, i, valid[pick_index(rng)], cfg);
  }
  throw SamplerError("no valid index found in batch");
}

bool sparsity_check(const WindowSplit& split) {
  const auto& g = split.obs;
  if (split.anchor >= g.batch) return false;
  for (std::size_t d = 0; d < g.sensors; ++d) {
    for (std::size_t t = 0; t < g.steps; ++t) {
      if (g.mask[g.index(split.anchor, d, t)]) return true;
    }
  }
  return false;
}

}  // namespace bat::data
