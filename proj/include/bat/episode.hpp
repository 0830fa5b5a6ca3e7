#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bat::data {

inline constexpr std::size_t kStaticCount = 4;
inline constexpr std::size_t kReferenceSensorCount = 48;

/// The 48 time-varying features in reference order (lowercase, spaces as
/// underscores).
const std::vector<std::string>& sensor_schema();
/// age, female, height_cm, weight_kg
const std::vector<std::string>& static_schema();

/// Position of `name` in the reference schema; accepts spaces in place of
/// underscores and any letter case. Returns nullopt for unknown names.
std::optional<std::size_t> schema_index(std::string_view name);

/// A `count`-sized subset of the schema, vital signs first, returned in
/// schema order. count == 48 gives the full schema.
std::vector<std::string> default_sensor_subset(std::size_t count);

/// One ICU stay on an hourly grid.
struct EpisodeRecord {
  std::string patient_id;
  std::size_t sensors = 0;  // D
  std::size_t steps = 0;    // T
  std::vector<double> values;        // D x T, row-major by sensor; NaN when unobserved
  std::vector<std::uint8_t> mask;    // D x T, 1 = observed
  std::vector<double> hours;         // T hours since admission
  std::vector<double> statics;       // kStaticCount
  double stay_hours = 0.0;
  std::optional<int> label;
  bool preprocessed = false;

  EpisodeRecord() = default;
  EpisodeRecord(std::string id, std::size_t d, std::size_t t);

  double value(std::size_t d, std::size_t t) const { return values[d * steps + t]; }
  bool observed(std::size_t d, std::size_t t) const { return mask[d * steps + t] != 0; }
  void set(std::size_t d, std::size_t t, double v) {
    values[d * steps + t] = v;
    mask[d * steps + t] = 1;
  }

  /// OR over sensors: true at hours where any sensor was observed.
  std::vector<std::uint8_t> time_mask() const;
  std::size_t valid_time_points() const;
  double age() const { return statics.at(0); }

  /// Keeps the first `t` hours.
  EpisodeRecord truncated(std::size_t t) const;
};

struct Dataset {
  std::string name;
  std::vector<std::string> sensors;
  std::vector<EpisodeRecord> episodes;
  double prevalence = 0.0;

  std::size_t size() const { return episodes.size(); }
  std::size_t positives() const;
  std::size_t labeled() const;
  void refresh_prevalence();
  /// Positive fraction among labeled episodes; 0 when none is labeled.
  double compute_prevalence() const;

  const EpisodeRecord* find(const std::string& patient_id) const;
  std::vector<std::string> ids() const;
  /// Episodes whose ids are listed, in the order given.
  Dataset select(const std::vector<std::string>& patient_ids) const;
  double mean_stay_hours() const;
};

}  // namespace bat::data
