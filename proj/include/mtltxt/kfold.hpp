#pragma once

#include <cstdint>
#include <vector>

#include "mtltxt/dataset.hpp"

namespace mtltxt {

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<int> fold_of;  // per example index

  std::vector<std::size_t> test_indices(std::size_t fold) const;
  std::vector<std::size_t> train_indices(std::size_t fold) const;
};

// Per-class seeded shuffle followed by round-robin assignment; every fold's
// class counts sit within one example of proportional.
FoldPlan stratified_kfold(const Dataset& dataset, std::size_t k, std::uint64_t seed);

}  // namespace mtltxt
