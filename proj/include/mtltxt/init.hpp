#pragma once

#include <cmath>

#include "mtltxt/rng.hpp"
#include "mtltxt/tensor.hpp"

namespace mtltxt {

// Uniform init in +-sqrt(6 / (fan_in + fan_out)); biases stay zero.
inline void xavier_uniform(Tensor& tensor, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : tensor.values()) v = rng.uniform(-bound, bound);
}

}  // namespace mtltxt
