#include "bat/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "bat/errors.hpp"
#include "bat/log.hpp"

namespace bat::data {
namespace {

struct Moments {
  double sum = 0.0;
  double sum_sq_dev = 0.0;
  std::size_t count = 0;
};

// Two-pass mean / population std over the values accepted by `visit`.
template <class Visit>
std::pair<double, double> moments(Visit&& visit) {
  Moments m;
  visit([&](double v) {
    m.sum += v;
    ++m.count;
  });
  if (m.count == 0) return {std::nan(""), std::nan("")};
  const double mean = m.sum / static_cast<double>(m.count);
  visit([&](double v) { m.sum_sq_dev += (v - mean) * (v - mean); });
  const double sd = std::sqrt(m.sum_sq_dev / static_cast<double>(m.count));
  return {mean, sd};
}

}  // namespace

PreprocessorState fit_preprocessor(const std::vector<EpisodeRecord>& train,
                                   std::string fitted_on) {
  if (train.empty()) throw ContractError("fit_preprocessor: empty training set");
  const std::size_t sensors = train.front().sensors;
  PreprocessorState pp;
  pp.fitted_on = std::move(fitted_on);
  for (std::size_t d = 0; d < sensors; ++d) {
    auto [mean, sd] = moments([&](auto&& f) {
      for (const auto& ep : train) {
        for (std::size_t t = 0; t < ep.steps; ++t) {
          if (ep.observed(d, t)) f(ep.value(d, t));
        }
      }
    });
    if (std::isnan(mean)) {
      log::warn("fit_preprocessor: sensor " + std::to_string(d) +
                " never observed in training split; using mean 0, std 1");
      mean = 0.0;
      sd = 1.0;
    }
    pp.sensor_mean.push_back(mean);
    pp.sensor_std.push_back(std::max(sd, kStdFloor));
  }
  for (std::size_t s = 0; s < kStaticCount; ++s) {
    auto [mean, sd] = moments([&](auto&& f) {
      for (const auto& ep : train) {
        if (!std::isnan(ep.statics[s])) f(ep.statics[s]);
      }
    });
    if (std::isnan(mean)) {
      log::warn("fit_preprocessor: static feature " + static_schema()[s] +
                " missing in training split; using mean 0, std 1");
      mean = 0.0;
      sd = 1.0;
    }
    pp.static_mean.push_back(mean);
    pp.static_std.push_back(std::max(sd, kStdFloor));
  }
  return pp;
}

EpisodeRecord transform(const EpisodeRecord& ep, const PreprocessorState& pp) {
  if (!pp.fitted()) throw ContractError("transform: preprocessor not fitted");
  if (pp.sensor_mean.size() != ep.sensors) {
    throw ShapeError("transform: preprocessor fitted on " + std::to_string(pp.sensor_mean.size()) +
                     " sensors, episode has " + std::to_string(ep.sensors));
  }
  EpisodeRecord out = ep;
  out.preprocessed = true;
  for (std::size_t d = 0; d < ep.sensors; ++d) {
    const double mean = pp.sensor_mean[d];
    const double sd = pp.sensor_std[d];
    double carried = mean;
    for (std::size_t t = 0; t < ep.steps; ++t) {
      const std::size_t i = d * ep.steps + t;
      if (ep.mask[i]) carried = ep.values[i];
      out.values[i] = (carried - mean) / sd;
    }
  }
  for (std::size_t s = 0; s < kStaticCount; ++s) {
    const double v = std::isnan(ep.statics[s]) ? pp.static_mean[s] : ep.statics[s];
    out.statics[s] = (v - pp.static_mean[s]) / pp.static_std[s];
  }
  return out;
}

std::vector<EpisodeRecord> transform_all(const std::vector<EpisodeRecord>& eps,
                                         const PreprocessorState& pp) {
  std::vector<EpisodeRecord> out;
  out.reserve(eps.size());
  for (const auto& ep : eps) out.push_back(transform(ep, pp));
  return out;
}

void PreprocessorState::append_to(ad::Checkpoint& ckpt) const {
  const auto add = [&](const char* name, const std::vector<double>& v) {
    ckpt.tensors.push_back({std::string("preprocessor.") + name, {v.size()}, v});
  };
  add("sensor_mean", sensor_mean);
  add("sensor_std", sensor_std);
  add("static_mean", static_mean);
  add("static_std", static_std);
  ckpt.meta["preprocessor.fitted_on"] = fitted_on;
}

PreprocessorState PreprocessorState::from_checkpoint(const ad::Checkpoint& ckpt) {
  PreprocessorState pp;
  pp.sensor_mean = ckpt.at("preprocessor.sensor_mean").values;
  pp.sensor_std = ckpt.at("preprocessor.sensor_std").values;
  pp.static_mean = ckpt.at("preprocessor.static_mean").values;
  pp.static_std = ckpt.at("preprocessor.static_std").values;
  auto it = ckpt.meta.find("preprocessor.fitted_on");
  if (it != ckpt.meta.end()) pp.fitted_on = it->second;
  return pp;
}

}  // namespace bat::data
