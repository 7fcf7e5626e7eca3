#include "mtltxt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtltxt/error.hpp"
#include "mtltxt/rng.hpp"

namespace mtltxt {

namespace {

std::size_t argmax(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

struct SampleStats {
  double loss = 0.0;
  bool correct = false;
};

SampleStats run_sample(BuiltModel& model, const EncodedExample& ex, std::size_t truth_slot,
                       bool with_backward, double loss_weight) {
  model.bind(ex);
  model.bind_truth(truth_slot);
  model.graph.forward();
  SampleStats stats;
  stats.loss = model.graph.value(model.loss).at(0);
  stats.correct = argmax(model.graph.value(model.output).values()) == truth_slot;
  if (with_backward) model.graph.backward(model.loss, loss_weight);
  return stats;
}

struct SplitStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

SplitStats eval_split(BuiltModel& model, const std::vector<EncodedExample>& split,
                      std::size_t slot_offset) {
  SplitStats stats;
  stats.count = split.size();
  if (split.empty()) return stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const EncodedExample& ex : split) {
    const SampleStats s =
        run_sample(model, ex, slot_offset + static_cast<std::size_t>(ex.label),
                   /*with_backward=*/false, 1.0);
    loss_sum += s.loss;
    if (s.correct) ++correct;
  }
  stats.mean_loss = loss_sum / static_cast<double>(split.size());
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  return stats;
}

// Endless seeded stream over a task's examples; reshuffles when exhausted.
class ExampleStream {
 public:
  ExampleStream(const std::vector<EncodedExample>& examples, std::uint64_t seed)
      : examples_(examples), rng_(seed), order_(examples.size()) {
    std::iota(order_.begin(), order_.end(), 0);
    rng_.shuffle(order_);
  }

  const EncodedExample& next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return examples_[order_[pos_++]];
  }

 private:
  const std::vector<EncodedExample>& examples_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void step_with_context(Adam& adam, std::size_t epoch, std::size_t batch) {
  try {
    adam.step();
  } catch (const Error& e) {
    fail_numeric(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                 std::to_string(batch) + ")");
  }
}

void check_finite_loss(double loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    fail_numeric("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                 std::to_string(batch));
  }
}

// Numerical failures inside the graph surface with their epoch and batch.
SampleStats run_training_sample(BuiltModel& model, const EncodedExample& ex,
                                std::size_t truth_slot, double loss_weight,
                                std::size_t epoch, std::size_t batch) {
  try {
    SampleStats stats = run_sample(model, ex, truth_slot, true, loss_weight);
    check_finite_loss(stats.loss, epoch, batch);
    return stats;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Numeric &&
        std::string(e.what()).find("epoch") == std::string::npos) {
      fail_numeric(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                   std::to_string(batch) + ")");
    }
    throw;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) fail_config("batch size must be at least 1");
  if (max_epochs < 1) fail_config("max epochs must be at least 1");
  if (patience >= max_epochs) fail_config("patience must be smaller than max epochs");
}

double multitask_loss(const std::vector<double>& task_losses,
                      const std::vector<double>& weights) {
  if (task_losses.empty()) fail_data("multitask_loss needs at least one task");
  if (task_losses.size() != weights.size()) {
    fail_data("multitask_loss: " + std::to_string(task_losses.size()) + " losses but " +
              std::to_string(weights.size()) + " weights");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < task_losses.size(); ++k) sum += weights[k] * task_losses[k];
  return sum;
}

std::vector<std::size_t> equal_shares(std::size_t batch_size, std::size_t tasks,
                                      std::size_t rotation) {
  if (tasks == 0) fail_config("equal_shares: no tasks");
  std::vector<std::size_t> shares(tasks, batch_size / tasks);
  const std::size_t remainder = batch_size % tasks;
  for (std::size_t j = 0; j < remainder; ++j) {
    shares[(rotation + j) % tasks] += 1;
  }
  return shares;
}

TrainResult train_stl(BuiltModel& model, const std::vector<EncodedExample>& train,
                      const std::vector<EncodedExample>& val, const TrainConfig& config) {
  config.validate();
  if (train.empty()) fail_data("training split is empty");
  Adam adam(model.store, config.adam);
  Rng shuffle_rng(derive_seed(config.seed, "stl.shuffle"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<double> best_snapshot = model.store->snapshot_trainable();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      ++batch_index;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      model.store->zero_grads();
      for (std::size_t i = start; i < end; ++i) {
        const EncodedExample& ex = train[order[i]];
        const SampleStats s = run_training_sample(
            model, ex, static_cast<std::size_t>(ex.label), 1.0, epoch, batch_index);
        loss_sum += s.loss;
        if (s.correct) ++correct;
      }
      step_with_context(adam, epoch, batch_index);
    }
    result.history.records.push_back(
        {epoch, "train", loss_sum / static_cast<double>(train.size()),
         static_cast<double>(correct) / static_cast<double>(train.size())});
    result.epochs_run = epoch;

    if (val.empty()) {
      result.best_epoch = epoch;
      continue;
    }
    const SplitStats vs = eval_split(model, val, 0);
    result.history.records.push_back({epoch, "val", vs.mean_loss, vs.accuracy});
    if (vs.mean_loss < best_val) {
      best_val = vs.mean_loss;
      result.best_epoch = epoch;
      result.best_val_loss = best_val;
      best_snapshot = model.store->snapshot_trainable();
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }
  if (!val.empty()) model.store->restore_trainable(best_snapshot);
  return result;
}

TrainResult train_shared_network(SharedNetwork& sn,
                                 const std::vector<std::vector<EncodedExample>>& task_train,
                                 const std::vector<std::vector<EncodedExample>>& task_val,
                                 const TrainConfig& config) {
  config.validate();
  const std::size_t n_tasks = sn.spec.tasks.size();
  if (task_train.size() != n_tasks || task_val.size() != n_tasks) {
    fail_config("shared network expects one train and val split per task");
  }
  std::vector<double> weights(n_tasks);
  std::size_t largest = 0;
  for (std::size_t k = 0; k < n_tasks; ++k) {
    if (task_train[k].empty()) {
      fail_data("task '" + sn.spec.tasks[k].name + "' has no training examples");
    }
    weights[k] = config.task_weight(k);
    largest = std::max(largest, task_train[k].size());
  }

  Adam adam(sn.net.store, config.adam);
  std::vector<ExampleStream> streams;
  streams.reserve(n_tasks);
  for (std::size_t k = 0; k < n_tasks; ++k) {
    streams.emplace_back(task_train[k],
                         derive_seed(config.seed, "sn.shuffle." + std::to_string(k)));
  }
  const std::size_t batches_per_epoch =
      std::max<std::size_t>(1, (largest * n_tasks + config.batch_size - 1) / config.batch_size);

  TrainResult result;
  std::vector<double> best_snapshot = sn.net.store->snapshot_trainable();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;
  std::size_t rotation = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b, ++rotation) {
      const std::vector<std::size_t> shares =
          equal_shares(config.batch_size, n_tasks, rotation);
      sn.net.store->zero_grads();
      std::vector<double> task_losses(n_tasks, 0.0);
      for (std::size_t k = 0; k < n_tasks; ++k) {
        for (std::size_t s = 0; s < shares[k]; ++s) {
          const EncodedExample& ex = streams[k].next();
          const SampleStats stats = run_training_sample(
              sn.net, ex, sn.merged_slot(k, static_cast<std::size_t>(ex.label)), weights[k],
              epoch, b + 1);
          task_losses[k] += stats.loss;
          ++seen;
          if (stats.correct) ++correct;
        }
      }
      loss_sum += multitask_loss(task_losses, weights);
      step_with_context(adam, epoch, b + 1);
    }
    result.history.records.push_back({epoch, "train",
                                      loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1)),
                                      static_cast<double>(correct) /
                                          static_cast<double>(std::max<std::size_t>(seen, 1))});
    result.epochs_run = epoch;

    double val_loss = 0.0;
    double val_correct = 0.0;
    std::size_t val_count = 0;
    for (std::size_t k = 0; k < n_tasks; ++k) {
      if (task_val[k].empty()) continue;
      const SplitStats vs = eval_split(sn.net, task_val[k], sn.class_offsets[k]);
      val_loss += weights[k] * vs.mean_loss;
      val_correct += vs.accuracy * static_cast<double>(vs.count);
      val_count += vs.count;
    }
    if (val_count == 0) {
      result.best_epoch = epoch;
      continue;
    }
    result.history.records.push_back(
        {epoch, "val", val_loss, val_correct / static_cast<double>(val_count)});
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best_epoch = epoch;
      result.best_val_loss = best_val;
      best_snapshot = sn.net.store->snapshot_trainable();
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }
  if (best_val < std::numeric_limits<double>::infinity()) {
    sn.net.store->restore_trainable(best_snapshot);
  }
  return result;
}

TrainResult train_soft_shared(SoftSharedNetwork& ssn,
                              const std::vector<std::vector<EncodedExample>>& task_train,
                              const std::vector<std::vector<EncodedExample>>& task_val,
                              const TrainConfig& config) {
  config.validate();
  const std::size_t n_tasks = ssn.spec.tasks.size();
  if (task_train.size() != n_tasks || task_val.size() != n_tasks) {
    fail_config("soft sharing expects one train and val split per task");
  }
  for (std::size_t k = 0; k < n_tasks; ++k) {
    if (task_train[k].empty()) {
      fail_data("task '" + ssn.spec.tasks[k].name + "' has no training examples");
    }
  }

  // phase 1: independent pre-training through the transform-free graphs
  for (std::size_t k = 0; k < n_tasks; ++k) {
    TrainConfig phase1 = config;
    phase1.seed = derive_seed(config.seed, "soft.phase1." + std::to_string(k));
    train_stl(ssn.stl[k], task_train[k], task_val[k], phase1);
  }

  // phase 2: joint training, one batch per task per step. Each task keeps
  // its own optimizer state so a zeroed transform leaves the other subnets
  // exactly as single-task training would.
  std::vector<Adam> optimizers;
  std::vector<ExampleStream> streams;
  std::size_t largest = 0;
  for (std::size_t k = 0; k < n_tasks; ++k) {
    optimizers.emplace_back(ssn.store, config.adam);
    streams.emplace_back(task_train[k],
                         derive_seed(config.seed, "soft.phase2." + std::to_string(k)));
    largest = std::max(largest, task_train[k].size());
  }
  const std::size_t rounds_per_epoch =
      std::max<std::size_t>(1, (largest + config.batch_size - 1) / config.batch_size);

  TrainResult result;
  std::vector<double> best_snapshot = ssn.store->snapshot_trainable();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t correct = 0;
    for (std::size_t round = 0; round < rounds_per_epoch; ++round) {
      for (std::size_t k = 0; k < n_tasks; ++k) {
        ssn.store->zero_grads();
        for (std::size_t s = 0; s < config.batch_size; ++s) {
          const EncodedExample& ex = streams[k].next();
          const SampleStats stats =
              run_training_sample(ssn.share[k], ex, static_cast<std::size_t>(ex.label),
                                  config.task_weight(k), epoch, round + 1);
          loss_sum += config.task_weight(k) * stats.loss;
          ++seen;
          if (stats.correct) ++correct;
        }
        step_with_context(optimizers[k], epoch, round + 1);
      }
    }
    result.history.records.push_back({epoch, "train",
                                      loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1)),
                                      static_cast<double>(correct) /
                                          static_cast<double>(std::max<std::size_t>(seen, 1))});
    result.epochs_run = epoch;

    double val_loss = 0.0;
    double val_correct = 0.0;
    std::size_t val_count = 0;
    for (std::size_t k = 0; k < n_tasks; ++k) {
      if (task_val[k].empty()) continue;
      const SplitStats vs = eval_split(ssn.share[k], task_val[k], 0);
      val_loss += config.task_weight(k) * vs.mean_loss;
      val_correct += vs.accuracy * static_cast<double>(vs.count);
      val_count += vs.count;
    }
    if (val_count == 0) {
      result.best_epoch = epoch;
      continue;
    }
    result.history.records.push_back(
        {epoch, "val", val_loss, val_correct / static_cast<double>(val_count)});
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best_epoch = epoch;
      result.best_val_loss = best_val;
      best_snapshot = ssn.store->snapshot_trainable();
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }
  if (best_val < std::numeric_limits<double>::infinity()) {
    ssn.store->restore_trainable(best_snapshot);
  }
  return result;
}

SearchResult random_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                           const std::function<double(const SearchDraw&)>& objective) {
  if (budget < 1) fail_config("random search needs a positive budget");
  if (space.learning_rates.empty() || space.filter_counts.empty() ||
      space.window_pool.empty()) {
    fail_config("random search space must not be empty");
  }
  Rng rng(derive_seed(seed, "random_search"));
  SearchResult result;
  result.best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < budget; ++t) {
    SearchDraw draw;
    draw.lr = space.learning_rates[rng.below(space.learning_rates.size())];
    draw.filters = space.filter_counts[rng.below(space.filter_counts.size())];
    const std::size_t subsets = (1u << space.window_pool.size()) - 1;
    const std::size_t mask = 1 + rng.below(subsets);
    for (std::size_t i = 0; i < space.window_pool.size(); ++i) {
      if (mask & (1u << i)) draw.windows.push_back(space.window_pool[i]);
    }
    const double score = objective(draw);
    result.trials.push_back({draw, score});
    if (score > result.best_score) {
      result.best_score = score;
      result.best = draw;
      result.best_index = t;
    }
  }
  return result;
}

}  // namespace mtltxt
