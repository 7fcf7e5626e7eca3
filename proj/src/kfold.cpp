#include "mtltxt/kfold.hpp"

#include <algorithm>
#include <queue>

#include "mtltxt/error.hpp"
#include "mtltxt/rng.hpp"

namespace mtltxt {

namespace {

// Integer fold-by-class allocation with exact row sums (class sizes) and
// column sums (fold sizes), every cell at floor or ceil of its proportional
// quota F_f * s_c / N. The floors leave per-row and per-column deficits that
// a unit-capacity bipartite flow distributes over cells with a fractional
// quota; a solution always exists for a quota matrix with integer margins.
std::vector<std::vector<std::int64_t>> quota_allocation(
    const std::vector<std::int64_t>& class_sizes, const std::vector<std::int64_t>& fold_sizes,
    std::int64_t total) {
  const std::size_t n_classes = class_sizes.size();
  const std::size_t n_folds = fold_sizes.size();
  std::vector<std::vector<std::int64_t>> cells(n_classes,
                                               std::vector<std::int64_t>(n_folds, 0));
  std::vector<std::int64_t> row_need(class_sizes);
  std::vector<std::int64_t> col_need(fold_sizes);
  std::vector<std::vector<bool>> can_round_up(n_classes, std::vector<bool>(n_folds, false));
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t f = 0; f < n_folds; ++f) {
      const std::int64_t num = fold_sizes[f] * class_sizes[c];
      cells[c][f] = num / total;
      can_round_up[c][f] = num % total != 0;
      row_need[c] -= cells[c][f];
      col_need[f] -= cells[c][f];
    }
  }

  // unit-capacity flow: source -> class (row deficit) -> fold -> sink
  const std::size_t source = n_classes + n_folds;
  const std::size_t sink = source + 1;
  std::vector<std::vector<std::int64_t>> cap(sink + 1, std::vector<std::int64_t>(sink + 1, 0));
  for (std::size_t c = 0; c < n_classes; ++c) {
    cap[source][c] = row_need[c];
    for (std::size_t f = 0; f < n_folds; ++f) {
      if (can_round_up[c][f]) cap[c][n_classes + f] = 1;
    }
  }
  std::int64_t demand = 0;
  for (std::size_t f = 0; f < n_folds; ++f) {
    cap[n_classes + f][sink] = col_need[f];
    demand += col_need[f];
  }
  std::int64_t shipped = 0;
  while (shipped < demand) {
    std::vector<int> parent(sink + 1, -1);
    parent[source] = static_cast<int>(source);
    std::queue<std::size_t> frontier;
    frontier.push(source);
    while (!frontier.empty() && parent[sink] < 0) {
      const std::size_t u = frontier.front();
      frontier.pop();
      for (std::size_t v = 0; v <= sink; ++v) {
        if (parent[v] < 0 && cap[u][v] > 0) {
          parent[v] = static_cast<int>(u);
          frontier.push(v);
        }
      }
    }
    if (parent[sink] < 0) fail_data("stratified_kfold: infeasible fold allocation");
    std::int64_t push = demand - shipped;
    for (std::size_t v = sink; v != source; v = parent[v]) {
      push = std::min(push, cap[parent[v]][v]);
    }
    for (std::size_t v = sink; v != source; v = parent[v]) {
      cap[parent[v]][v] -= push;
      cap[v][parent[v]] += push;
    }
    shipped += push;
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t f = 0; f < n_folds; ++f) {
      cells[c][f] += cap[n_classes + f][c];  // residual on the back edge
    }
  }
  return cells;
}

}  // namespace

std::vector<std::size_t> FoldPlan::test_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == static_cast<int>(fold)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != static_cast<int>(fold)) out.push_back(i);
  }
  return out;
}

FoldPlan stratified_kfold(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k < 2) fail_config("stratified_kfold: k must be at least 2");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.fold_of.assign(dataset.size(), -1);

  std::vector<std::vector<std::size_t>> by_class(dataset.class_count());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[dataset.examples[i].label].push_back(i);
  }
  std::vector<std::int64_t> class_sizes;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < k) {
      fail_data("class '" + dataset.label_space[c] + "' has " +
                std::to_string(by_class[c].size()) + " examples, fewer than k=" +
                std::to_string(k));
    }
    class_sizes.push_back(static_cast<std::int64_t>(by_class[c].size()));
  }
  const std::int64_t total = static_cast<std::int64_t>(dataset.size());
  std::vector<std::int64_t> fold_sizes(k, total / static_cast<std::int64_t>(k));
  for (std::size_t f = 0; f < static_cast<std::size_t>(total % k); ++f) ++fold_sizes[f];

  const auto cells = quota_allocation(class_sizes, fold_sizes, total);

  Rng rng(derive_seed(seed, "kfold"));
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    rng.shuffle(by_class[c]);
    std::size_t next = 0;
    for (std::size_t f = 0; f < k; ++f) {
      for (std::int64_t i = 0; i < cells[c][f]; ++i) {
        plan.fold_of[by_class[c][next++]] = static_cast<int>(f);
      }
    }
  }
  return plan;
}

}  // namespace mtltxt
