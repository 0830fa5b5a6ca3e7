#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bat/episode.hpp"

namespace bat::data {

/// Long-format CSV ingestion.
///
///   measurements.csv  patient_id,hour,sensor,value
///   statics.csv       patient_id,age,female,height_cm,weight_kg,stay_hours
///   labels.csv        patient_id,mortality           (optional: empty path)
///
/// One episode per patient appearing in the measurements, ordered by
/// patient id. Repeated (patient, sensor, hour) cells keep the last value
/// and log a warning. `sensors` fixes the feature set and its order; it
/// must be drawn from the reference schema.
Dataset load_dataset(const std::filesystem::path& measurements,
                     const std::filesystem::path& statics,
                     const std::filesystem::path& labels,
                     const std::vector<std::string>& sensors = sensor_schema(),
                     std::string name = "dataset");

struct DatasetFiles {
  std::filesystem::path measurements;
  std::filesystem::path statics;
  std::filesystem::path labels;
};

DatasetFiles dataset_files(const std::filesystem::path& dir);

/// Writes the three CSVs into `dir` (created if needed). Values use the
/// shortest round-trip decimal form, so writing is deterministic.
DatasetFiles write_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Sensor names listed in a measurements file, in schema order.
std::vector<std::string> sensors_in_file(const std::filesystem::path& measurements);

}  // namespace bat::data
