#include "bat/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "bat/errors.hpp"
#include "bat/log.hpp"
#include "bat/random.hpp"

namespace bat::data {

Dataset pool_datasets(const std::vector<Dataset>& parts, bool prefix_ids, std::string name) {
  if (parts.empty()) throw ContractError("pool_datasets: nothing to pool");
  Dataset out;
  out.sensors = parts.front().sensors;
  if (name.empty()) {
    for (std::size_t i = 0; i < parts.size(); ++i) name += (i ? "+" : "") + parts[i].name;
  }
  out.name = std::move(name);
  std::unordered_set<std::string> seen;
  for (const auto& part : parts) {
    if (part.sensors != out.sensors) {
      throw SchemaError("pool_datasets: feature schema of '" + part.name + "' differs from '" +
                        parts.front().name + "'");
    }
    for (const auto& ep : part.episodes) {
      EpisodeRecord copy = ep;
      if (prefix_ids) copy.patient_id = part.name + ":" + ep.patient_id;
      if (!seen.insert(copy.patient_id).second) {
        throw SchemaError("pool_datasets: patient id '" + copy.patient_id +
                          "' appears in more than one source");
      }
      out.episodes.push_back(std::move(copy));
    }
  }
  out.refresh_prevalence();
  return out;
}

Dataset subsample_preserving_prevalence(const Dataset& ds, std::size_t size, std::uint64_t seed) {
  if (size < 2) throw ContractError("subsample: size must be at least 2");
  if (size > ds.size()) {
    throw ContractError("subsample: size " + std::to_string(size) + " exceeds dataset size " +
                        std::to_string(ds.size()));
  }
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& label = ds.episodes[i].label;
    if (!label) throw ContractError("subsample: episode '" + ds.episodes[i].patient_id + "' is unlabeled");
    (*label == 1 ? pos : neg).push_back(i);
  }
  const double prevalence = static_cast<double>(pos.size()) / static_cast<double>(ds.size());
  const std::size_t want_pos =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(size * prevalence)));
  const std::size_t want_neg = size - std::min(size, want_pos);
  if (want_pos > pos.size()) {
    throw ContractError("subsample: positive class exhausted (need " + std::to_string(want_pos) +
                        ", have " + std::to_string(pos.size()) + ")");
  }
  if (want_neg > neg.size()) {
    throw ContractError("subsample: negative class exhausted (need " + std::to_string(want_neg) +
                        ", have " + std::to_string(neg.size()) + ")");
  }
  Rng rng = make_rng(seed, "subsample");
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::size_t> picked(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(want_pos));
  picked.insert(picked.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(want_neg));
  std::sort(picked.begin(), picked.end());

  Dataset out;
  out.name = ds.name;
  out.sensors = ds.sensors;
  out.episodes.reserve(picked.size());
  for (auto i : picked) out.episodes.push_back(ds.episodes[i]);
  out.refresh_prevalence();
  return out;
}

SplitPlan make_splits(const Dataset& ds, std::uint64_t seed) {
  if (ds.size() < 10) throw ContractError("make_splits: need at least 10 episodes");
  Rng rng = make_rng(seed, "splits");

  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const bool labeled = ds.labeled() == ds.size();
  if (labeled) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      (*ds.episodes[i].label == 1 ? pos : neg).push_back(i);
    }
  }
  // Each class must be able to place a member in the test split and in
  // every validation fold.
  const std::size_t need = kFolds + 1;
  const bool stratify = labeled && pos.size() >= need && neg.size() >= need;
  if (labeled && !stratify) {
    log::warn("make_splits: too few examples of one class to stratify; using an unstratified split");
  }

  const std::size_t n_test = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(ds.size())));
  std::vector<std::size_t> test;
  std::vector<std::size_t> pool;  // ordered so round-robin fold assignment stratifies
  if (stratify) {
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    const auto test_pos = static_cast<std::size_t>(std::llround(
        static_cast<double>(n_test) * static_cast<double>(pos.size()) / static_cast<double>(ds.size())));
    const std::size_t test_neg = n_test - test_pos;
    test.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(test_pos));
    test.insert(test.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(test_neg));
    pool.assign(pos.begin() + static_cast<std::ptrdiff_t>(test_pos), pos.end());
    pool.insert(pool.end(), neg.begin() + static_cast<std::ptrdiff_t>(test_neg), neg.end());
  } else {
    std::shuffle(all.begin(), all.end(), rng);
    test.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_test));
    pool.assign(all.begin() + static_cast<std::ptrdiff_t>(n_test), all.end());
  }

  std::vector<std::vector<std::size_t>> fold_members(kFolds);
  for (std::size_t i = 0; i < pool.size(); ++i) fold_members[i % kFolds].push_back(i);

  auto ids_of = [&](std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.episodes[i].patient_id);
    return out;
  };

  SplitPlan plan;
  plan.stratified = stratify;
  plan.test = ids_of(test);
  for (std::size_t f = 0; f < kFolds; ++f) {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    for (std::size_t g = 0; g < kFolds; ++g) {
      for (auto i : fold_members[g]) (g == f ? val : train).push_back(pool[i]);
    }
    plan.folds.push_back({ids_of(train), ids_of(val)});
  }
  return plan;
}

}  // namespace bat::data
