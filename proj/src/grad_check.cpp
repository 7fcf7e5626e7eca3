#include "mtltxt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "mtltxt/error.hpp"

namespace mtltxt {

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double central_difference(Graph& graph, NodeId loss, ParamId param, std::size_t index,
                          double step) {
  Tensor& p = graph.params().param(param);
  const double saved = p.values()[index];
  p.values()[index] = saved + step;
  graph.forward_to(loss);
  const double hi = graph.value(loss).at(0);
  p.values()[index] = saved - step;
  graph.forward_to(loss);
  const double lo = graph.value(loss).at(0);
  p.values()[index] = saved;
  return (hi - lo) / (2.0 * step);
}

GradCheckResult grad_check(Graph& graph, NodeId loss,
                           const std::function<void(Rng&)>& bind_inputs,
                           const GradCheckOptions& options) {
  std::vector<ParamId> trainable;
  std::size_t coord_count = 0;
  for (std::size_t i = 0; i < graph.params().size(); ++i) {
    const Tensor& p = graph.params().param(static_cast<ParamId>(i));
    if (p.trainable() && p.numel() > 0) {
      trainable.push_back(static_cast<ParamId>(i));
      coord_count += p.numel();
    }
  }
  if (trainable.empty()) fail_data("grad_check: graph has no trainable parameters");

  Rng rng(options.seed);
  GradCheckResult result;
  while (result.probes_run < options.probes) {
    bind_inputs(rng);
    graph.forward_to(loss);
    if (graph.smoothness_margin() < options.min_margin) {
      if (++result.rejected_samples > options.max_rejections) {
        fail_numeric("grad_check: could not sample a smooth probe point after " +
                     std::to_string(options.max_rejections) + " rejections");
      }
      continue;
    }
    graph.zero_param_grads();
    graph.backward(loss);
    for (int c = 0; c < options.coords_per_sample && result.probes_run < options.probes; ++c) {
      std::size_t flat = rng.below(coord_count);
      ParamId pid = trainable.front();
      for (ParamId id : trainable) {
        const std::size_t n = graph.params().param(id).numel();
        if (flat < n) {
          pid = id;
          break;
        }
        flat -= n;
      }
      const Tensor& p = graph.params().param(pid);
      const double analytic = p.has_grad() ? p.grad()[flat] : 0.0;
      const double numeric = central_difference(graph, loss, pid, flat, options.step);
      const double rel = grad_rel_error(analytic, numeric);
      ++result.probes_run;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = {graph.params().name(pid), flat, analytic, numeric, rel};
      }
    }
  }
  return result;
}

}  // namespace mtltxt
