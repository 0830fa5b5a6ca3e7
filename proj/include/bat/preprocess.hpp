#pragma once

#include <string>
#include <vector>

#include "bat/checkpoint.hpp"
#include "bat/episode.hpp"

namespace bat::data {

inline constexpr double kStdFloor = 1e-6;

/// Training-split statistics used for imputation and standardization.
struct PreprocessorState {
  std::vector<double> sensor_mean;
  std::vector<double> sensor_std;
  std::vector<double> static_mean;
  std::vector<double> static_std;
  std::string fitted_on;

  bool fitted() const { return !sensor_mean.empty(); }

  void append_to(ad::Checkpoint& ckpt) const;
  static PreprocessorState from_checkpoint(const ad::Checkpoint& ckpt);
};

/// Per-feature mean and population standard deviation over observed cells.
PreprocessorState fit_preprocessor(const std::vector<EpisodeRecord>& train,
                                   std::string fitted_on = "train");

/// Forward-fills each sensor within the stay, fills leading gaps with the
/// training mean, and standardizes. The mask is kept as the missingness
/// indicator; unobserved raw cells are never read.
EpisodeRecord transform(const EpisodeRecord& ep, const PreprocessorState& pp);

std::vector<EpisodeRecord> transform_all(const std::vector<EpisodeRecord>& eps,
                                         const PreprocessorState& pp);

}  // namespace bat::data
