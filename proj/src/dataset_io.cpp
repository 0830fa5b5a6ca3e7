#include "bat/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "bat/errors.hpp"
#include "bat/log.hpp"

namespace bat::data {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

double parse_double(const std::string& s, std::size_t line, const char* what) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ParseError(std::string("invalid ") + what + " '" + s + "'", line);
  }
  return v;
}

std::size_t parse_hour(const std::string& s, std::size_t line) {
  std::size_t v = 0;
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end) {
    throw ParseError("hour must be a nonnegative integer, got '" + s + "'", line);
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

// Reads a CSV with the expected header; calls row(fields, line_number).
template <class F>
void read_csv(const std::filesystem::path& path, const std::vector<std::string>& header, F&& row) {
  auto is = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  bool seen_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (!seen_header) {
      if (fields != header) {
        throw ParseError(path.filename().string() + ": unexpected header '" + line + "'", lineno);
      }
      seen_header = true;
      continue;
    }
    if (fields.size() != header.size()) {
      throw ParseError(path.filename().string() + ": expected " + std::to_string(header.size()) +
                           " fields",
                       lineno);
    }
    row(fields, lineno);
  }
}

struct Observation {
  std::size_t hour;
  std::size_t sensor;
  double value;
};

}  // namespace

Dataset load_dataset(const std::filesystem::path& measurements,
                     const std::filesystem::path& statics, const std::filesystem::path& labels,
                     const std::vector<std::string>& sensors, std::string name) {
  std::unordered_map<std::size_t, std::size_t> column;  // schema index -> dataset row
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    auto idx = schema_index(sensors[i]);
    if (!idx) throw SchemaError("unknown sensor '" + sensors[i] + "' in feature set");
    column.emplace(*idx, i);
  }

  std::map<std::string, std::vector<Observation>> per_patient;
  read_csv(measurements, {"patient_id", "hour", "sensor", "value"},
           [&](const std::vector<std::string>& f, std::size_t line) {
             auto idx = schema_index(f[2]);
             if (!idx) {
               throw SchemaError("unknown sensor '" + f[2] + "' (" +
                                 measurements.filename().string() + " line " +
                                 std::to_string(line) + ")");
             }
             auto col = column.find(*idx);
             if (col == column.end()) {
               throw SchemaError("sensor '" + f[2] + "' is not in the dataset feature set (line " +
                                 std::to_string(line) + ")");
             }
             if (f[0].empty()) throw ParseError("empty patient_id", line);
             per_patient[f[0]].push_back(
                 {parse_hour(f[1], line), col->second, parse_double(f[3], line, "value")});
           });

  struct StaticRow {
    std::vector<double> values;
    double stay = 0.0;
  };
  std::unordered_map<std::string, StaticRow> static_rows;
  read_csv(statics, {"patient_id", "age", "female", "height_cm", "weight_kg", "stay_hours"},
           [&](const std::vector<std::string>& f, std::size_t line) {
             StaticRow row;
             for (std::size_t i = 1; i <= 4; ++i) {
               row.values.push_back(f[i].empty() ? std::nan("")
                                                 : parse_double(f[i], line, "static value"));
             }
             row.stay = parse_double(f[5], line, "stay_hours");
             static_rows[f[0]] = std::move(row);
           });

  std::unordered_map<std::string, int> label_rows;
  if (!labels.empty()) {
    read_csv(labels, {"patient_id", "mortality"},
             [&](const std::vector<std::string>& f, std::size_t line) {
               if (f[1] != "0" && f[1] != "1") {
                 throw ParseError("mortality must be 0 or 1, got '" + f[1] + "'", line);
               }
               label_rows[f[0]] = f[1] == "1" ? 1 : 0;
             });
  }

  Dataset ds;
  ds.name = std::move(name);
  ds.sensors = sensors;
  for (auto& [pid, obs] : per_patient) {
    auto srow = static_rows.find(pid);
    if (srow == static_rows.end()) {
      throw SchemaError("patient '" + pid + "' has measurements but no statics row");
    }
    std::size_t max_hour = 0;
    for (const auto& o : obs) max_hour = std::max(max_hour, o.hour);
    const double stay = srow->second.stay;
    const std::size_t steps =
        std::max(max_hour + 1, stay > 0 ? static_cast<std::size_t>(std::ceil(stay)) : 0);

    EpisodeRecord ep(pid, sensors.size(), steps);
    ep.statics = srow->second.values;
    ep.stay_hours = stay;
    std::size_t duplicates = 0;
    for (const auto& o : obs) {
      if (ep.observed(o.sensor, o.hour)) ++duplicates;
      ep.set(o.sensor, o.hour, o.value);
    }
    if (duplicates > 0) {
      log::warn("patient '" + pid + "': " + std::to_string(duplicates) +
                " repeated (sensor, hour) cells resolved by last write");
    }
    auto lab = label_rows.find(pid);
    if (lab != label_rows.end()) ep.label = lab->second;
    ds.episodes.push_back(std::move(ep));
  }
  ds.refresh_prevalence();
  return ds;
}

DatasetFiles dataset_files(const std::filesystem::path& dir) {
  return {dir / "measurements.csv", dir / "statics.csv", dir / "labels.csv"};
}

DatasetFiles write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const DatasetFiles files = dataset_files(dir);

  auto open_output = [](const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + p.string());
    return os;
  };

  {
    auto os = open_output(files.measurements);
    os << "patient_id,hour,sensor,value\n";
    for (const auto& ep : ds.episodes) {
      for (std::size_t t = 0; t < ep.steps; ++t) {
        for (std::size_t d = 0; d < ep.sensors; ++d) {
          if (!ep.observed(d, t)) continue;
          os << ep.patient_id << ',' << t << ',' << ds.sensors[d] << ','
             << format_double(ep.value(d, t)) << '\n';
        }
      }
    }
    if (!os) throw IoError("failed writing " + files.measurements.string());
  }
  {
    auto os = open_output(files.statics);
    os << "patient_id,age,female,height_cm,weight_kg,stay_hours\n";
    for (const auto& ep : ds.episodes) {
      os << ep.patient_id;
      for (double v : ep.statics) os << ',' << (std::isnan(v) ? std::string() : format_double(v));
      os << ',' << format_double(ep.stay_hours) << '\n';
    }
    if (!os) throw IoError("failed writing " + files.statics.string());
  }
  {
    auto os = open_output(files.labels);
    os << "patient_id,mortality\n";
    for (const auto& ep : ds.episodes) {
      if (ep.label) os << ep.patient_id << ',' << *ep.label << '\n';
    }
    if (!os) throw IoError("failed writing " + files.labels.string());
  }
  return files;
}

std::vector<std::string> sensors_in_file(const std::filesystem::path& measurements) {
  std::set<std::size_t> seen;
  read_csv(measurements, {"patient_id", "hour", "sensor", "value"},
           [&](const std::vector<std::string>& f, std::size_t line) {
             auto idx = schema_index(f[2]);
             if (!idx) {
               throw SchemaError("unknown sensor '" + f[2] + "' (line " + std::to_string(line) +
                                 ")");
             }
             seen.insert(*idx);
           });
  std::vector<std::string> out;
  for (auto i : seen) out.push_back(sensor_schema()[i]);
  return out;
}

}  // namespace bat::data
