#include "bat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "bat/errors.hpp"
#include "bat/random.hpp"

namespace bat::data {
namespace {

constexpr std::uint64_t kWorldSeed = 0x5eed'b1a5'0000'0001ULL;
constexpr double kLabelWindowHours = 6.0;
constexpr double kSeverityMissingness = 0.6;

bool is_vital(const std::string& name) {
  static const std::set<std::string> vitals = {
      "heart_rate",  "respiratory_rate",           "oxygen_saturation",
      "temperature", "blood_pressure_(systolic)", "blood_pressure_(diastolic)",
      "mean_arterial_pressure", "urine_output"};
  return vitals.count(name) > 0;
}

struct SensorModel {
  double mean;
  double sd;
  double loading;        // response to severity
  double trend_loading;  // response to the patient's drift
  double rate;           // observation-rate exponent before availability
  double availability;
};

SensorModel sensor_model(const std::string& name, std::uint64_t availability_seed) {
  Rng world = make_rng(kWorldSeed, "sensor:" + name);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SensorModel m{};
  m.mean = 10.0 + 140.0 * u(world);
  m.sd = m.mean * (0.08 + 0.2 * u(world));
  const double sign = u(world) < 0.5 ? -1.0 : 1.0;
  m.loading = sign * (0.4 + 1.0 * u(world));
  m.trend_loading = (u(world) - 0.5) * 4.0;
  m.rate = is_vital(name) ? 0.15 + 0.25 * u(world) : 1.0 + 3.0 * u(world);

  Rng avail = make_rng(availability_seed, "availability:" + name);
  std::lognormal_distribution<double> spread(0.0, 0.6);
  m.availability = spread(avail);
  return m;
}

double round_milli(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (!(cfg.prevalence > 0.0 && cfg.prevalence < 1.0)) {
    throw ContractError("generate_synthetic: prevalence must lie in (0, 1)");
  }
  if (!(cfg.sparsity >= 0.0 && cfg.sparsity < 1.0)) {
    throw ContractError("generate_synthetic: sparsity must lie in [0, 1)");
  }
  if (cfg.n == 0) throw ContractError("generate_synthetic: n must be positive");
  if (!(cfg.mean_stay_hours > cfg.min_stay_hours) || cfg.min_stay_hours < 0.0) {
    throw ContractError("generate_synthetic: mean_stay_hours must exceed min_stay_hours");
  }
  if (cfg.sensors.empty()) throw ContractError("generate_synthetic: empty sensor list");
  for (const auto& s : cfg.sensors) {
    if (!schema_index(s)) throw SchemaError("generate_synthetic: unknown sensor '" + s + "'");
  }

  const std::uint64_t avail_seed = cfg.availability_seed.value_or(cfg.seed);
  std::vector<SensorModel> models;
  for (const auto& s : cfg.sensors) models.push_back(sensor_model(s, avail_seed));
  const std::size_t D = cfg.sensors.size();

  Rng rng = make_rng(cfg.seed, "data");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::gamma_distribution<double> stay_extra(2.0, (cfg.mean_stay_hours - cfg.min_stay_hours) / 2.0);

  const double keep = 1.0 - cfg.sparsity;
  Dataset ds;
  ds.name = cfg.name;
  ds.sensors = cfg.sensors;
  ds.episodes.reserve(cfg.n);
  std::vector<double> scores;
  scores.reserve(cfg.n);

  for (std::size_t i = 0; i < cfg.n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%06zu", cfg.id_prefix.c_str(), i);

    const double age = 18.0 + 77.0 * unif(rng);
    const bool female = unif(rng) < 0.45;
    const double height = std::clamp(normal(rng) * 8.0 + (female ? 162.0 : 176.0), 140.0, 210.0);
    const double weight = std::clamp(normal(rng) * 15.0 + (female ? 70.0 : 84.0), 35.0, 200.0);
    const double stay = round_milli(cfg.min_stay_hours + stay_extra(rng));
    const auto steps = static_cast<std::size_t>(std::ceil(stay));

    EpisodeRecord ep(id, D, steps);
    ep.statics = {round_milli(age), female ? 1.0 : 0.0, round_milli(height), round_milli(weight)};
    ep.stay_hours = stay;

    const double drift = 0.06 * normal(rng) + 0.01 * (age - 55.0) / 20.0;
    double severity = 0.5 * (age - 55.0) / 20.0 + 0.7 * normal(rng);
    std::vector<double> offsets(D);
    for (auto& o : offsets) o = 0.3 * normal(rng);

    std::vector<double> path(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      if (t > 0) severity += drift + 0.15 * normal(rng);
      path[t] = severity;
      const double intensity = std::exp(-kSeverityMissingness * severity);
      for (std::size_t d = 0; d < D; ++d) {
        const auto& m = models[d];
        const double noise = 0.3 * normal(rng);
        const double draw = unif(rng);
        const double p_obs = std::pow(keep, m.rate * m.availability * intensity);
        if (draw < p_obs) {
          const double z = m.loading * severity + m.trend_loading * drift + offsets[d] + noise;
          ep.set(d, t, round_milli(m.mean + m.sd * z));
        }
      }
    }
    const std::size_t window = std::min<std::size_t>(steps, static_cast<std::size_t>(kLabelWindowHours));
    double tail = 0.0;
    for (std::size_t t = steps - window; t < steps; ++t) tail += path[t];
    scores.push_back(tail / static_cast<double>(window));
    ds.episodes.push_back(std::move(ep));
  }

  auto rate_above = [&](double threshold) {
    std::size_t k = 0;
    for (double s : scores) k += s > threshold ? 1 : 0;
    return static_cast<double>(k) / static_cast<double>(scores.size());
  };
  double lo = *std::min_element(scores.begin(), scores.end()) - 1.0;
  double hi = *std::max_element(scores.begin(), scores.end()) + 1.0;
  double threshold = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    threshold = 0.5 * (lo + hi);
    const double r = rate_above(threshold);
    if (std::abs(r - cfg.prevalence) <= 0.5 / static_cast<double>(scores.size())) break;
    (r > cfg.prevalence ? lo : hi) = threshold;
  }
  const double achieved = rate_above(threshold);
  if (std::abs(achieved - cfg.prevalence) > cfg.prevalence_tolerance) {
    throw NumericError("generate_synthetic: could not calibrate prevalence " +
                       std::to_string(cfg.prevalence) + " (closest " + std::to_string(achieved) +
                       " with n=" + std::to_string(cfg.n) + ")");
  }
  for (std::size_t i = 0; i < cfg.n; ++i) ds.episodes[i].label = scores[i] > threshold ? 1 : 0;
  ds.refresh_prevalence();
  return ds;
}

Dataset generate_synthetic(std::size_t n, double prevalence, double mean_stay_hours,
                           double sparsity, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.n = n;
  cfg.prevalence = prevalence;
  cfg.mean_stay_hours = mean_stay_hours;
  cfg.sparsity = sparsity;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

}  // namespace bat::data
