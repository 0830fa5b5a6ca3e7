#include "bat/cohort.hpp"

#include <cmath>

#include "bat/errors.hpp"

namespace bat::data {

Task parse_task(const std::string& name) {
  if (name == "pretrain") return Task::kPretrain;
  if (name == "mortality") return Task::kMortality;
  throw ConfigError("unknown task '" + name + "' (expected pretrain or mortality)");
}

double max_measurement_gap(const EpisodeRecord& ep) {
  const auto tm = ep.time_mask();
  double gap = 0.0;
  bool have_prev = false;
  double prev = 0.0;
  for (std::size_t t = 0; t < tm.size(); ++t) {
    if (!tm[t]) continue;
    if (have_prev) gap = std::max(gap, ep.hours[t] - prev);
    prev = ep.hours[t];
    have_prev = true;
  }
  return gap;
}

namespace {

bool passes_window_criteria(const EpisodeRecord& ep, const ExclusionRules& rules) {
  return ep.valid_time_points() >= rules.min_valid_time_points &&
         max_measurement_gap(ep) <= rules.max_gap_hours;
}

}  // namespace

bool passes_base_criteria(const EpisodeRecord& ep, const ExclusionRules& rules) {
  if (!(ep.stay_hours >= 0.0)) return false;  // invalid timing, NaN included
  if (ep.stay_hours < rules.min_stay_hours) return false;
  if (!passes_window_criteria(ep, rules)) return false;
  if (!(ep.age() >= rules.min_age_years)) return false;
  return true;
}

Dataset apply_exclusions(const Dataset& ds, Task task, const ExclusionRules& rules) {
  Dataset out;
  out.name = ds.name;
  out.sensors = ds.sensors;
  for (const auto& ep : ds.episodes) {
    if (!passes_base_criteria(ep, rules)) continue;
    if (task == Task::kPretrain) {
      out.episodes.push_back(ep);
      continue;
    }
    if (ep.stay_hours < rules.mortality_min_stay_hours) continue;
    EpisodeRecord window = ep.truncated(rules.mortality_input_hours);
    if (!passes_window_criteria(window, rules)) continue;
    out.episodes.push_back(std::move(window));
  }
  out.refresh_prevalence();
  return out;
}

}  // namespace bat::data
