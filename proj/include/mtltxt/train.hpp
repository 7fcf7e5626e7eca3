#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtltxt/adam.hpp"
#include "mtltxt/embeddings.hpp"
#include "mtltxt/model_zoo.hpp"

namespace mtltxt {

struct TrainConfig {
  std::size_t batch_size = 30;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;  // epochs without validation improvement
  std::uint64_t seed = 1;
  AdamConfig adam;
  std::vector<double> task_weights;  // alpha per task; empty means all ones

  void validate() const;
  double task_weight(std::size_t task) const {
    return task < task_weights.size() ? task_weights[task] : 1.0;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;  // mean per sample
  double accuracy = 0.0;
};

struct History {
  std::vector<EpochRecord> records;
};

struct TrainResult {
  History history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t epochs_run = 0;
};

// Eq-style weighted sum of per-task losses.
double multitask_loss(const std::vector<double>& task_losses,
                      const std::vector<double>& weights);

// Per-task slice of a batch: floor share plus a rotating remainder.
std::vector<std::size_t> equal_shares(std::size_t batch_size, std::size_t tasks,
                                      std::size_t rotation);

// Mini-batch training with seeded shuffling and early stopping on
// validation loss; the returned weights are the best-validation snapshot.
TrainResult train_stl(BuiltModel& model, const std::vector<EncodedExample>& train,
                      const std::vector<EncodedExample>& val, const TrainConfig& config);

// FS-MTL step 1: equal samples from every task per batch, summed
// cross-entropy over the merged softmax.
TrainResult train_shared_network(SharedNetwork& sn,
                                 const std::vector<std::vector<EncodedExample>>& task_train,
                                 const std::vector<std::vector<EncodedExample>>& task_val,
                                 const TrainConfig& config);

// Phase 1 pre-trains each subnet without sharing; phase 2 interleaves one
// batch per task per step through the sharing graphs.
TrainResult train_soft_shared(SoftSharedNetwork& ssn,
                              const std::vector<std::vector<EncodedExample>>& task_train,
                              const std::vector<std::vector<EncodedExample>>& task_val,
                              const TrainConfig& config);

struct SearchSpace {
  std::vector<double> learning_rates = {1e-2, 1e-3, 1e-4};
  std::vector<std::size_t> filter_counts = {64, 100, 128};
  std::vector<std::size_t> window_pool = {2, 3, 4, 5};
};

struct SearchDraw {
  double lr = 1e-3;
  std::size_t filters = 100;
  std::vector<std::size_t> windows;
};

struct SearchTrial {
  SearchDraw draw;
  double score = 0.0;
};

struct SearchResult {
  SearchDraw best;
  double best_score = 0.0;
  std::size_t best_index = 0;
  std::vector<SearchTrial> trials;
};

// Seeded draws from the declared space, scored by the objective (higher is
// better); ties keep the earlier draw.
SearchResult random_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                           const std::function<double(const SearchDraw&)>& objective);

}  // namespace mtltxt
