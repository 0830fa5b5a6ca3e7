#include "bat/episode.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <unordered_map>

#include "bat/errors.hpp"

namespace bat::data {

const std::vector<std::string>& sensor_schema() {
  static const std::vector<std::string> names = {
      "albumin",
      "alkaline_phosphatase",
      "alanine_aminotransferase",
      "aspartate_aminotransferase",
      "band_form_neutrophils",
      "base_excess",
      "bicarbonate",
      "bilirubin_(direct)",
      "bilirubin_(total)",
      "blood_pressure_(diastolic)",
      "blood_pressure_(systolic)",
      "blood_urea_nitrogen",
      "calcium",
      "calcium_ionized",
      "chloride",
      "co2_partial_pressure",
      "c-reactive_protein",
      "creatinine",
      "creatine_kinase",
      "creatine_kinase_mb",
      "fibrinogen",
      "fraction_of_inspired_oxygen",
      "glucose",
      "haemoglobin",
      "heart_rate",
      "international_normalised_ratio_(inr)",
      "lactate",
      "lymphocytes",
      "magnesium",
      "mean_arterial_pressure",
      "mean_cell_haemoglobin",
      "mean_corpuscular_haemoglobin_concentration",
      "mean_corpuscular_volume",
      "methaemoglobin",
      "neutrophils",
      "o2_partial_pressure",
      "oxygen_saturation",
      "partial_thromboplastin_time",
      "ph_of_blood",
      "phosphate",
      "platelets",
      "potassium",
      "respiratory_rate",
      "sodium",
      "temperature",
      "troponin_t",
      "urine_output",
      "white_blood_cells",
  };
  return names;
}

const std::vector<std::string>& static_schema() {
  static const std::vector<std::string> names = {"age", "female", "height_cm", "weight_kg"};
  return names;
}

std::optional<std::size_t> schema_index(std::string_view name) {
  static const auto index = [] {
    std::unordered_map<std::string, std::size_t> m;
    const auto& names = sensor_schema();
    for (std::size_t i = 0; i < names.size(); ++i) m.emplace(names[i], i);
    return m;
  }();
  std::string key(name);
  for (auto& c : key) {
    c = c == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  auto it = index.find(key);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> default_sensor_subset(std::size_t count) {
  const auto& names = sensor_schema();
  if (count == 0 || count > names.size()) {
    throw ContractError("sensor subset size must be in [1, 48], got " + std::to_string(count));
  }
  static const std::vector<std::string> priority = {
      "heart_rate",
      "respiratory_rate",
      "oxygen_saturation",
      "blood_pressure_(systolic)",
      "blood_pressure_(diastolic)",
      "mean_arterial_pressure",
      "temperature",
      "glucose",
      "urine_output",
      "potassium",
      "sodium",
      "creatinine",
      "haemoglobin",
      "lactate",
      "white_blood_cells",
      "platelets",
  };
  std::vector<std::size_t> picked;
  for (const auto& p : priority) {
    if (picked.size() == count) break;
    picked.push_back(*schema_index(p));
  }
  for (std::size_t i = 0; i < names.size() && picked.size() < count; ++i) {
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
  }
  std::sort(picked.begin(), picked.end());
  std::vector<std::string> out;
  for (auto i : picked) out.push_back(names[i]);
  return out;
}

EpisodeRecord::EpisodeRecord(std::string id, std::size_t d, std::size_t t)
    : patient_id(std::move(id)),
      sensors(d),
      steps(t),
      values(d * t, std::numeric_limits<double>::quiet_NaN()),
      mask(d * t, 0),
      hours(t),
      statics(kStaticCount, std::numeric_limits<double>::quiet_NaN()) {
  for (std::size_t i = 0; i < t; ++i) hours[i] = static_cast<double>(i);
}

std::vector<std::uint8_t> EpisodeRecord::time_mask() const {
  std::vector<std::uint8_t> out(steps, 0);
  for (std::size_t d = 0; d < sensors; ++d) {
    for (std::size_t t = 0; t < steps; ++t) out[t] |= mask[d * steps + t];
  }
  return out;
}

std::size_t EpisodeRecord::valid_time_points() const {
  const auto tm = time_mask();
  return static_cast<std::size_t>(std::count(tm.begin(), tm.end(), 1));
}

EpisodeRecord EpisodeRecord::truncated(std::size_t t) const {
  if (t >= steps) return *this;
  EpisodeRecord out = *this;
  out.steps = t;
  out.values.assign(sensors * t, 0.0);
  out.mask.assign(sensors * t, 0);
  for (std::size_t d = 0; d < sensors; ++d) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(d * steps), t,
                out.values.begin() + static_cast<std::ptrdiff_t>(d * t));
    std::copy_n(mask.begin() + static_cast<std::ptrdiff_t>(d * steps), t,
                out.mask.begin() + static_cast<std::ptrdiff_t>(d * t));
  }
  out.hours.resize(t);
  return out;
}

std::size_t Dataset::positives() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += (e.label && *e.label == 1) ? 1 : 0;
  return n;
}

std::size_t Dataset::labeled() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.label ? 1 : 0;
  return n;
}

double Dataset::compute_prevalence() const {
  const std::size_t n = labeled();
  return n == 0 ? 0.0 : static_cast<double>(positives()) / static_cast<double>(n);
}

void Dataset::refresh_prevalence() { prevalence = compute_prevalence(); }

const EpisodeRecord* Dataset::find(const std::string& patient_id) const {
  for (const auto& e : episodes) {
    if (e.patient_id == patient_id) return &e;
  }
  return nullptr;
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(episodes.size());
  for (const auto& e : episodes) out.push_back(e.patient_id);
  return out;
}

Dataset Dataset::select(const std::vector<std::string>& patient_ids) const {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < episodes.size(); ++i) index.emplace(episodes[i].patient_id, i);
  Dataset out;
  out.name = name;
  out.sensors = sensors;
  out.episodes.reserve(patient_ids.size());
  for (const auto& id : patient_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ContractError("dataset " + name + " has no patient '" + id + "'");
    out.episodes.push_back(episodes[it->second]);
  }
  out.refresh_prevalence();
  return out;
}

double Dataset::mean_stay_hours() const {
  if (episodes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : episodes) total += e.stay_hours;
  return total / static_cast<double>(episodes.size());
}

}  // namespace bat::data
