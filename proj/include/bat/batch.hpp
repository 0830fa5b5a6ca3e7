#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bat/episode.hpp"

namespace bat::data {

/// Episodes stacked on a shared hour range [t_begin, t_end). Cells past an
/// episode's own length are padding: value 0, mask 0, time_valid 0.
struct GridBatch {
  std::size_t batch = 0;
  std::size_t sensors = 0;
  std::size_t steps = 0;
  std::vector<double> values;           // B x D x T
  std::vector<std::uint8_t> mask;       // B x D x T
  std::vector<std::uint8_t> time_valid; // B x T
  std::vector<double> hours;            // B x T
  std::vector<double> statics;          // B x S

  std::size_t index(std::size_t b, std::size_t d, std::size_t t) const {
    return (b * sensors + d) * steps + t;
  }
};

GridBatch make_grid_batch(const std::vector<const EpisodeRecord*>& episodes, std::size_t t_begin,
                          std::size_t t_end);

/// Full-length batch: the hour range covers the longest episode.
GridBatch make_grid_batch(const std::vector<const EpisodeRecord*>& episodes);

/// Copy whose unobserved cells hold 0, the training mean on the
/// standardized scale.
GridBatch mean_imputed(GridBatch batch);

std::vector<const EpisodeRecord*> pointers(const std::vector<EpisodeRecord>& episodes);

}  // namespace bat::data
