#include "bat/batch.hpp"

#include <algorithm>

#include "bat/errors.hpp"

namespace bat::data {

GridBatch make_grid_batch(const std::vector<const EpisodeRecord*>& episodes, std::size_t t_begin,
                          std::size_t t_end) {
  if (episodes.empty()) throw ContractError("make_grid_batch: empty batch");
  if (t_end <= t_begin) throw ContractError("make_grid_batch: empty hour range");
  GridBatch g;
  g.batch = episodes.size();
  g.sensors = episodes.front()->sensors;
  g.steps = t_end - t_begin;
  g.values.assign(g.batch * g.sensors * g.steps, 0.0);
  g.mask.assign(g.values.size(), 0);
  g.time_valid.assign(g.batch * g.steps, 0);
  g.hours.resize(g.batch * g.steps);
  g.statics.assign(g.batch * kStaticCount, 0.0);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const EpisodeRecord& ep = *episodes[b];
    if (ep.sensors != g.sensors) throw ShapeError("make_grid_batch: sensor count differs within batch");
    for (std::size_t s = 0; s < kStaticCount; ++s) g.statics[b * kStaticCount + s] = ep.statics[s];
    for (std::size_t k = 0; k < g.steps; ++k) {
      const std::size_t t = t_begin + k;
      const bool inside = t < ep.steps;
      g.time_valid[b * g.steps + k] = inside ? 1 : 0;
      g.hours[b * g.steps + k] = inside ? ep.hours[t] : static_cast<double>(t);
      if (!inside) continue;
      for (std::size_t d = 0; d < g.sensors; ++d) {
        const std::size_t src = d * ep.steps + t;
        const std::size_t dst = g.index(b, d, k);
        g.mask[dst] = ep.mask[src];
        // Raw (unpreprocessed) episodes hold NaN at unobserved cells.
        g.values[dst] = (ep.preprocessed || ep.mask[src]) ? ep.values[src] : 0.0;
      }
    }
  }
  return g;
}

GridBatch make_grid_batch(const std::vector<const EpisodeRecord*>& episodes) {
  std::size_t longest = 0;
  for (const auto* ep : episodes) longest = std::max(longest, ep->steps);
  return make_grid_batch(episodes, 0, longest);
}

GridBatch mean_imputed(GridBatch batch) {
  for (std::size_t i = 0; i < batch.values.size(); ++i) {
    if (!batch.mask[i]) batch.values[i] = 0.0;
  }
  return batch;
}

std::vector<const EpisodeRecord*> pointers(const std::vector<EpisodeRecord>& episodes) {
  std::vector<const EpisodeRecord*> out;
  out.reserve(episodes.size());
  for (const auto& ep : episodes) out.push_back(&ep);
  return out;
}

}  // namespace bat::data
