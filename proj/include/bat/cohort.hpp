#pragma once

#include <string>

#include "bat/episode.hpp"

namespace bat::data {

enum class Task { kPretrain, kMortality };

Task parse_task(const std::string& name);

struct ExclusionRules {
  double min_stay_hours = 6.0;
  std::size_t min_valid_time_points = 4;
  double max_gap_hours = 12.0;
  double min_age_years = 18.0;
  // mortality cohort
  double mortality_min_stay_hours = 30.0;
  std::size_t mortality_input_hours = 24;
};

/// Largest distance in hours between consecutive observed time points.
double max_measurement_gap(const EpisodeRecord& ep);

/// True when the episode passes the five task-independent criteria.
bool passes_base_criteria(const EpisodeRecord& ep, const ExclusionRules& rules = {});

/// Cohort filter. `kPretrain` applies the base criteria only. `kMortality`
/// additionally drops stays shorter than 30 h, truncates inputs to the first
/// 24 h, and re-checks the time-point and gap criteria on that window so the
/// filter is idempotent.
Dataset apply_exclusions(const Dataset& ds, Task task, const ExclusionRules& rules = {});

}  // namespace bat::data
