#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "klg/errors.hpp"

namespace klg {

class Graph;

namespace detail {
struct TensorData {
  std::vector<size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  bool node_output = false;  // produced by a Graph op (intermediate)
};
}  // namespace detail

// Dense 64-bit real tensor of rank 1 or 2. Copying a Tensor copies the
// handle; the storage (values and gradient buffer) is shared. Parameters
// keep their storage across graphs, so gradients accumulate until
// zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor from(std::vector<size_t> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<size_t>& shape() const { return d_->shape; }
  size_t rank() const { return d_->shape.size(); }
  size_t size() const { return d_->value.size(); }
  size_t rows() const;  // rank-2 only
  size_t cols() const;  // rank-2 only

  std::vector<double>& data() { return d_->value; }
  const std::vector<double>& data() const { return d_->value; }
  double at(size_t i) const { return d_->value[i]; }
  double at(size_t r, size_t c) const;
  double scalar_value() const;

  bool requires_grad() const { return d_->requires_grad; }
  bool is_node_output() const { return d_->node_output; }

  // Gradient buffer; empty until backward touches this tensor.
  const std::vector<double>& grad() const { return d_->grad; }
  // Allocates the buffer (zeros) on first use. For optimizers and custom ops.
  std::vector<double>& mutable_grad();
  void zero_grad();

  // Deep copy with fresh storage (gradient buffer not copied).
  Tensor clone() const;

  std::string shape_str() const;

 private:
  friend class Graph;
  std::vector<double>& grad_buffer() { return mutable_grad(); }
  void mark_node_output() { d_->node_output = true; }

  std::shared_ptr<detail::TensorData> d_;
};

// Records the operations of one forward pass in topological order and
// replays them in reverse for backpropagation. Single-writer: build,
// forward and backward on one thread. Distinct graphs over distinct
// parameter copies are independent.
class Graph {
 public:
  // --- structural ---
  Tensor matmul(Tensor a, Tensor b);
  Tensor transpose(Tensor x);
  Tensor concat(Tensor a, Tensor b);  // last axis
  Tensor stack_rows(std::span<const Tensor> rows);  // rank-1 [d] each -> [m x d]
  Tensor slice_cols(Tensor x, size_t c0, size_t c1);
  Tensor slice_vec(Tensor x, size_t i0, size_t i1);
  Tensor row(Tensor x, size_t r);          // [m x n] -> [n]
  Tensor as_row(Tensor x);                 // [n] -> [1 x n]
  Tensor as_col(Tensor x);                 // [n] -> [n x 1]
  Tensor flatten(Tensor x);                // [1 x n] -> [n]
  Tensor gather_rows(Tensor x, std::vector<size_t> ids);
  Tensor select_entries(Tensor x,
                        std::vector<std::pair<size_t, size_t>> entries);

  // --- arithmetic ---
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor add_n(std::span<const Tensor> xs);
  Tensor add_row_bias(Tensor m, Tensor bias);
  Tensor scale(Tensor x, double c);
  Tensor dot(Tensor a, Tensor b);  // rank-1 x rank-1 -> scalar
  Tensor sum_all(Tensor x);
  Tensor max_rows(Tensor x);  // column-wise max over rows, [m x n] -> [n]

  // --- nonlinearities / losses ---
  Tensor leaky_relu(Tensor x, double slope);
  Tensor tanh_act(Tensor x);
  Tensor sigmoid_act(Tensor x);
  Tensor softmax_row(Tensor x);
  Tensor logsumexp(Tensor x);  // rank-1 -> scalar
  Tensor cross_entropy(Tensor logits, size_t target);  // rank-1 logits
  Tensor l2_normalize(Tensor x);  // rank-1

  // affine(x[m x k], W[k x n], b[n]) -> [m x n]; rank-1 x gives rank-1 out
  Tensor affine(Tensor x, Tensor w, Tensor b);

  // Escape hatch for custom differentiable ops (also used by tests to
  // exercise grad_check against a corrupted backward rule).
  Tensor custom(const std::string& kind, std::vector<Tensor> inputs,
                Tensor output, std::function<void()> backward);

  // Populates grad for every requires_grad tensor reachable from loss.
  // Repeated calls accumulate into leaf gradients.
  void backward(Tensor loss);

  size_t node_count() const { return nodes_.size(); }
  const std::string& node_kind(size_t i) const { return nodes_[i].kind; }

 private:
  struct Node {
    std::string kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Tensor make_output(std::vector<size_t> shape, std::vector<double> value,
                     bool requires_grad);
  void push(std::string kind, std::vector<Tensor> inputs, Tensor output,
            std::function<void()> backward);
  Tensor reshape_view(Tensor x, std::vector<size_t> shape,
                      const char* kind);
  static bool any_requires_grad(std::span<const Tensor> xs);

  std::vector<Node> nodes_;
};

// Central-difference gradient verification. f must rebuild the same scalar
// loss from the current values of params on every call. Returns true iff
// |analytic - numeric| / max(1, |analytic|, |numeric|) <= tol for every
// parameter entry. If report is non-null, the worst relative error seen is
// written there.
bool grad_check(const std::function<Tensor(Graph&)>& f,
                std::span<const Tensor> params, double step, double tol,
                double* worst_rel_err = nullptr);

}  // namespace klg
