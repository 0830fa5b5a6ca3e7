#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bat/batch.hpp"
#include "bat/episode.hpp"
#include "bat/random.hpp"

namespace bat::data {

struct SamplerConfig {
  std::size_t min_obs_len = 12;       // L
  std::size_t forecast_horizon = 2;   // H
  std::optional<std::size_t> max_obs; // unbounded when empty
  std::optional<std::size_t> max_tries; // batch size when empty

  void validate() const;
  std::size_t window_start(std::size_t t1) const {
    return max_obs && t1 > *max_obs ? t1 - *max_obs : 0;
  }
};

/// An observation/forecast window pair cut from a whole batch at one split
/// index t1. `anchor` is the batch element whose mask produced t1.
struct WindowSplit {
  std::string episode_id;
  std::size_t anchor = 0;
  std::size_t t0 = 0;
  std::size_t t1 = 0;
  std::size_t t2 = 0;
  GridBatch obs;                           // hours [t0, t1)
  std::vector<double> forecast_values;     // B x D x H, hours [t1, t2)
  std::vector<std::uint8_t> forecast_mask; // B x D x H

  std::size_t horizon() const { return t2 - t1; }
};

/// Split indices allowed for one episode: observed hours t with t >= L and
/// t <= max_index - H (max_index being the last observed hour >= L), whose
/// observation window [t0, t) holds at least one observed hour.
std::vector<std::size_t> valid_indices(const std::vector<std::uint8_t>& time_mask,
                                       const SamplerConfig& cfg);

/// Slices every batch element at a given split index.
WindowSplit slice_window(const std::vector<const EpisodeRecord*>& batch, std::size_t anchor,
                         std::size_t t1, const SamplerConfig& cfg);

/// Draws an element uniformly, retries on elements without a valid index,
/// and picks t1 uniformly among that element's valid indices. Throws
/// SamplerError("no valid index found in batch") after max_tries misses.
WindowSplit sample_window(const std::vector<const EpisodeRecord*>& batch,
                          const SamplerConfig& cfg, Rng& rng);

/// True iff the anchor element has at least one observed cell in the
/// observation window.
bool sparsity_check(const WindowSplit& split);

}  // namespace bat::data
