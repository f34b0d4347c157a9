#pragma once

#include <span>

#include "klg/tensor.hpp"

namespace klg {

// Plain SGD: p -= lr * grad, then clears the gradients.
inline void sgd_step(std::span<const Tensor> params, double lr) {
  for (Tensor p : params) {
    if (p.grad().empty()) continue;
    for (size_t i = 0; i < p.size(); ++i) {
      p.data()[i] -= lr * p.grad()[i];
    }
    p.zero_grad();
  }
}

}  // namespace klg
