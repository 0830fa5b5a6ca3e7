#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bat/episode.hpp"

namespace bat::data {

inline constexpr std::size_t kFolds = 5;

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

/// 80/20 test split plus five rotating (train, validation) folds over the
/// remaining pool.
struct SplitPlan {
  std::vector<std::string> test;
  std::vector<Fold> folds;
  bool stratified = false;
};

/// Concatenates datasets with an identical feature schema. With
/// `prefix_ids`, ids become "<source>:<id>".
Dataset pool_datasets(const std::vector<Dataset>& parts, bool prefix_ids = true,
                      std::string name = {});

/// Draws `size` episodes keeping the class balance: round(size * prevalence)
/// positives (at least one), the rest negatives.
Dataset subsample_preserving_prevalence(const Dataset& ds, std::size_t size, std::uint64_t seed);

/// Stratified by label when each class can fill every fold; otherwise
/// unstratified (with a warning for labeled data).
SplitPlan make_splits(const Dataset& ds, std::uint64_t seed);

}  // namespace bat::data
