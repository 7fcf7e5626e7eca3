#pragma once

#include <functional>
#include <string>

#include "mtltxt/graph.hpp"
#include "mtltxt/rng.hpp"

namespace mtltxt {

struct GradCheckOptions {
  double step = 1e-5;       // central-difference half step
  double min_margin = 1e-3; // reject probes this close to a relu/maxpool kink
  int probes = 100;         // parameter coordinates to test in total
  int coords_per_sample = 10;
  int max_rejections = 1000;
  std::uint64_t seed = 1;
};

struct ProbePoint {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  ProbePoint worst;
  int probes_run = 0;
  int rejected_samples = 0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double grad_rel_error(double analytic, double numeric);

// Two-sided difference of the scalar at `loss` w.r.t. one parameter
// coordinate; restores the parameter afterwards.
double central_difference(Graph& graph, NodeId loss, ParamId param, std::size_t index,
                          double step);

// Compares analytic gradients against central differences at random smooth
// probe points. `bind_inputs` must bind every graph input (including the
// truth vector) from the given rng; it is re-invoked until the forward pass
// is far enough from every kink.
GradCheckResult grad_check(Graph& graph, NodeId loss,
                           const std::function<void(Rng&)>& bind_inputs,
                           const GradCheckOptions& options = {});

}  // namespace mtltxt
