#include "klg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace klg {

namespace {

size_t shape_product(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

std::string format_shape(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void require_finite(Tensor x, const char* op) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite input entry");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  return from(std::move(shape), {}, requires_grad);
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> data,
                    bool requires_grad) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got shape " +
                         format_shape(shape));
  }
  const size_t n = shape_product(shape);
  if (data.empty()) data.assign(n, 0.0);
  if (data.size() != n) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + format_shape(shape));
  }
  Tensor t;
  t.d_ = std::make_shared<detail::TensorData>();
  t.d_->shape = std::move(shape);
  t.d_->value = std::move(data);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows(): tensor is not rank-2");
  return d_->shape[0];
}

size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols(): tensor is not rank-2");
  return d_->shape[1];
}

double Tensor::at(size_t r, size_t c) const { return d_->value[r * cols() + c]; }

double Tensor::scalar_value() const {
  if (size() != 1) {
    throw ContractError("scalar_value(): tensor has " + std::to_string(size()) +
                        " entries");
  }
  return d_->value[0];
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.d_ = std::make_shared<detail::TensorData>();
  t.d_->shape = d_->shape;
  t.d_->value = d_->value;
  t.d_->requires_grad = d_->requires_grad;
  return t;
}

std::string Tensor::shape_str() const { return format_shape(d_->shape); }

std::vector<double>& Tensor::mutable_grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  return d_->grad;
}

// ---------------------------------------------------------------------------
// Graph plumbing

Tensor Graph::make_output(std::vector<size_t> shape, std::vector<double> value,
                          bool requires_grad) {
  Tensor t = Tensor::from(std::move(shape), std::move(value), requires_grad);
  t.mark_node_output();
  return t;
}

void Graph::push(std::string kind, std::vector<Tensor> inputs, Tensor output,
                 std::function<void()> backward) {
  nodes_.push_back(Node{std::move(kind), std::move(inputs), std::move(output),
                        std::move(backward)});
}

bool Graph::any_requires_grad(std::span<const Tensor> xs) {
  return std::any_of(xs.begin(), xs.end(),
                     [](Tensor t) { return t.requires_grad(); });
}

void Graph::backward(Tensor loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  // Intermediates get a fresh gradient pass; leaves keep accumulating.
  for (Node& node : nodes_) {
    Tensor out = node.output;
    out.grad_buffer();
    out.zero_grad();
  }
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.requires_grad() && it->backward) it->backward();
  }
}

Tensor Graph::custom(const std::string& kind, std::vector<Tensor> inputs,
                     Tensor output, std::function<void()> backward) {
  output.mark_node_output();
  if (!output.requires_grad() &&
      any_requires_grad(std::span<const Tensor>(inputs))) {
    output.d_->requires_grad = true;
  }
  Tensor out = output;
  push(kind, std::move(inputs), std::move(output), std::move(backward));
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops

Tensor Graph::matmul(Tensor a, Tensor b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() +
                         " and " + b.shape_str());
  }
  const size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    for (size_t l = 0; l < k; ++l) {
      const double av = a.at(i, l);
      if (av == 0.0) continue;
      for (size_t j = 0; j < n; ++j) out[i * n + j] += av * b.at(l, j);
    }
  }
  Tensor c = make_output({m, n}, std::move(out),
                         a.requires_grad() || b.requires_grad());
  push("matmul", {a, b}, c, [a, b, c, m, k, n]() mutable {
    const std::vector<double>& gc = c.grad();
    if (a.requires_grad()) {
      std::vector<double>& ga = a.grad_buffer();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < k; ++j) {
          double s = 0.0;
          for (size_t l = 0; l < n; ++l) s += gc[i * n + l] * b.at(j, l);
          ga[i * k + j] += s;
        }
    }
    if (b.requires_grad()) {
      std::vector<double>& gb = b.grad_buffer();
      for (size_t j = 0; j < k; ++j)
        for (size_t l = 0; l < n; ++l) {
          double s = 0.0;
          for (size_t i = 0; i < m; ++i) s += a.at(i, j) * gc[i * n + l];
          gb[j * n + l] += s;
        }
    }
  });
  return c;
}

Tensor Graph::transpose(Tensor x) {
  if (x.rank() != 2) {
    throw DimensionError("transpose: expected rank-2, got " + x.shape_str());
  }
  const size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j * m + i] = x.at(i, j);
  Tensor y = make_output({n, m}, std::move(out), x.requires_grad());
  push("transpose", {x}, y, [x, y, m, n]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) gx[i * n + j] += gy[j * m + i];
  });
  return y;
}

Tensor Graph::concat(Tensor a, Tensor b) {
  if (a.rank() != b.rank()) {
    throw DimensionError("concat: rank mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  if (a.rank() == 2 && a.rows() != b.rows()) {
    throw DimensionError("concat: leading dimensions differ " + a.shape_str() +
                         " vs " + b.shape_str());
  }
  const size_t m = a.rank() == 2 ? a.rows() : 1;
  const size_t d1 = a.rank() == 2 ? a.cols() : a.size();
  const size_t d2 = b.rank() == 2 ? b.cols() : b.size();
  std::vector<double> out(m * (d1 + d2));
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < d1; ++j) out[i * (d1 + d2) + j] = a.data()[i * d1 + j];
    for (size_t j = 0; j < d2; ++j)
      out[i * (d1 + d2) + d1 + j] = b.data()[i * d2 + j];
  }
  std::vector<size_t> shape =
      a.rank() == 2 ? std::vector<size_t>{m, d1 + d2}
                    : std::vector<size_t>{d1 + d2};
  Tensor y = make_output(std::move(shape), std::move(out),
                         a.requires_grad() || b.requires_grad());
  push("concat", {a, b}, y, [a, b, y, m, d1, d2]() mutable {
    const std::vector<double>& gy = y.grad();
    if (a.requires_grad()) {
      std::vector<double>& ga = a.grad_buffer();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < d1; ++j) ga[i * d1 + j] += gy[i * (d1 + d2) + j];
    }
    if (b.requires_grad()) {
      std::vector<double>& gb = b.grad_buffer();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < d2; ++j)
          gb[i * d2 + j] += gy[i * (d1 + d2) + d1 + j];
    }
  });
  return y;
}

Tensor Graph::stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows given");
  const size_t d = rows[0].size();
  for (Tensor r : rows) {
    if (r.rank() != 1 || r.size() != d) {
      throw DimensionError("stack_rows: row shape " + r.shape_str() +
                           " does not match (" + std::to_string(d) + ")");
    }
  }
  const size_t m = rows.size();
  std::vector<double> out(m * d);
  for (size_t i = 0; i < m; ++i)
    std::copy(rows[i].data().begin(), rows[i].data().end(), out.begin() + i * d);
  Tensor y = make_output({m, d}, std::move(out), any_requires_grad(rows));
  std::vector<Tensor> inputs(rows.begin(), rows.end());
  push("stack_rows", inputs, y, [inputs, y, d]() mutable {
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad()) continue;
      std::vector<double>& g = inputs[i].grad_buffer();
      for (size_t j = 0; j < d; ++j) g[j] += gy[i * d + j];
    }
  });
  return y;
}

Tensor Graph::slice_cols(Tensor x, size_t c0, size_t c1) {
  if (x.rank() != 2 || c0 >= c1 || c1 > x.cols()) {
    throw DimensionError("slice_cols: invalid range [" + std::to_string(c0) +
                         "," + std::to_string(c1) + ") for " + x.shape_str());
  }
  const size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  std::vector<double> out(m * w);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < w; ++j) out[i * w + j] = x.at(i, c0 + j);
  Tensor y = make_output({m, w}, std::move(out), x.requires_grad());
  push("slice_cols", {x}, y, [x, y, m, n, w, c0]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += gy[i * w + j];
  });
  return y;
}

Tensor Graph::slice_vec(Tensor x, size_t i0, size_t i1) {
  if (x.rank() != 1 || i0 >= i1 || i1 > x.size()) {
    throw DimensionError("slice_vec: invalid range [" + std::to_string(i0) +
                         "," + std::to_string(i1) + ") for " + x.shape_str());
  }
  std::vector<double> out(x.data().begin() + static_cast<long>(i0),
                          x.data().begin() + static_cast<long>(i1));
  Tensor y = make_output({i1 - i0}, std::move(out), x.requires_grad());
  push("slice_vec", {x}, y, [x, y, i0]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t j = 0; j < gy.size(); ++j) gx[i0 + j] += gy[j];
  });
  return y;
}

Tensor Graph::row(Tensor x, size_t r) {
  if (x.rank() != 2 || r >= x.rows()) {
    throw DimensionError("row: index " + std::to_string(r) +
                         " out of range for " + x.shape_str());
  }
  const size_t n = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<long>(r * n),
                          x.data().begin() + static_cast<long>((r + 1) * n));
  Tensor y = make_output({n}, std::move(out), x.requires_grad());
  push("row", {x}, y, [x, y, r, n]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t j = 0; j < n; ++j) gx[r * n + j] += gy[j];
  });
  return y;
}

Tensor Graph::reshape_view(Tensor x, std::vector<size_t> shape,
                           const char* kind) {
  Tensor y = make_output(std::move(shape), x.data(), x.requires_grad());
  push(kind, {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
  return y;
}

Tensor Graph::as_row(Tensor x) {
  if (x.rank() != 1) {
    throw DimensionError("as_row: expected rank-1, got " + x.shape_str());
  }
  return reshape_view(x, {1, x.size()}, "as_row");
}

Tensor Graph::as_col(Tensor x) {
  if (x.rank() != 1) {
    throw DimensionError("as_col: expected rank-1, got " + x.shape_str());
  }
  return reshape_view(x, {x.size(), 1}, "as_col");
}

Tensor Graph::flatten(Tensor x) {
  if (x.rank() != 2 || (x.rows() != 1 && x.cols() != 1)) {
    throw DimensionError("flatten: expected a single row or column, got " +
                         x.shape_str());
  }
  return reshape_view(x, {x.size()}, "flatten");
}

Tensor Graph::gather_rows(Tensor x, std::vector<size_t> ids) {
  if (x.rank() != 2) {
    throw DimensionError("gather_rows: expected rank-2, got " + x.shape_str());
  }
  if (ids.empty()) throw ContractError("gather_rows: empty id list");
  const size_t n = x.cols();
  for (size_t id : ids) {
    if (id >= x.rows()) {
      throw ContractError("gather_rows: row id " + std::to_string(id) +
                          " out of range for " + x.shape_str());
    }
  }
  std::vector<double> out(ids.size() * n);
  for (size_t i = 0; i < ids.size(); ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = x.at(ids[i], j);
  Tensor y = make_output({ids.size(), n}, std::move(out), x.requires_grad());
  push("gather_rows", {x}, y, [x, y, ids, n]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < ids.size(); ++i)
      for (size_t j = 0; j < n; ++j) gx[ids[i] * n + j] += gy[i * n + j];
  });
  return y;
}

Tensor Graph::select_entries(Tensor x,
                             std::vector<std::pair<size_t, size_t>> entries) {
  if (x.rank() != 2) {
    throw DimensionError("select_entries: expected rank-2, got " +
                         x.shape_str());
  }
  if (entries.empty()) throw ContractError("select_entries: empty entry list");
  const size_t n = x.cols();
  std::vector<double> out(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    if (r >= x.rows() || c >= n) {
      throw ContractError("select_entries: entry (" + std::to_string(r) + "," +
                          std::to_string(c) + ") out of range for " +
                          x.shape_str());
    }
    out[i] = x.at(r, c);
  }
  Tensor y = make_output({entries.size()}, std::move(out), x.requires_grad());
  push("select_entries", {x}, y, [x, y, entries, n]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < entries.size(); ++i)
      gx[entries[i].first * n + entries[i].second] += gy[i];
  });
  return y;
}

// ---------------------------------------------------------------------------
// Arithmetic

Tensor Graph::add(Tensor a, Tensor b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out),
                         a.requires_grad() || b.requires_grad());
  push("add", {a, b}, y, [a, b, y]() mutable {
    const std::vector<double>& gy = y.grad();
    if (a.requires_grad()) {
      std::vector<double>& ga = a.grad_buffer();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      std::vector<double>& gb = b.grad_buffer();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
    }
  });
  return y;
}

Tensor Graph::sub(Tensor a, Tensor b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("sub: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor y = make_output(a.shape(), std::move(out),
                         a.requires_grad() || b.requires_grad());
  push("sub", {a, b}, y, [a, b, y]() mutable {
    const std::vector<double>& gy = y.grad();
    if (a.requires_grad()) {
      std::vector<double>& ga = a.grad_buffer();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      std::vector<double>& gb = b.grad_buffer();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
  return y;
}

Tensor Graph::add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw ContractError("add_n: no inputs");
  for (Tensor x : xs) {
    if (x.shape() != xs[0].shape()) {
      throw DimensionError("add_n: shape mismatch " + x.shape_str() + " vs " +
                           xs[0].shape_str());
    }
  }
  std::vector<double> out(xs[0].size(), 0.0);
  for (Tensor x : xs)
    for (size_t i = 0; i < out.size(); ++i) out[i] += x.data()[i];
  Tensor y = make_output(xs[0].shape(), std::move(out), any_requires_grad(xs));
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  push("add_n", inputs, y, [inputs, y]() mutable {
    const std::vector<double>& gy = y.grad();
    for (Tensor& x : inputs) {
      if (!x.requires_grad()) continue;
      std::vector<double>& gx = x.grad_buffer();
      for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
  return y;
}

Tensor Graph::add_row_bias(Tensor m, Tensor bias) {
  if (m.rank() != 2 || bias.rank() != 1 || bias.size() != m.cols()) {
    throw DimensionError("add_row_bias: shapes " + m.shape_str() + " and " +
                         bias.shape_str() + " are incompatible");
  }
  const size_t r = m.rows(), n = m.cols();
  std::vector<double> out(r * n);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = m.at(i, j) + bias.at(j);
  Tensor y = make_output({r, n}, std::move(out),
                         m.requires_grad() || bias.requires_grad());
  push("add_row_bias", {m, bias}, y, [m, bias, y, r, n]() mutable {
    const std::vector<double>& gy = y.grad();
    if (m.requires_grad()) {
      std::vector<double>& gm = m.grad_buffer();
      for (size_t i = 0; i < gy.size(); ++i) gm[i] += gy[i];
    }
    if (bias.requires_grad()) {
      std::vector<double>& gb = bias.grad_buffer();
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < n; ++j) gb[j] += gy[i * n + j];
    }
  });
  return y;
}

Tensor Graph::scale(Tensor x, double c) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * x.data()[i];
  Tensor y = make_output(x.shape(), std::move(out), x.requires_grad());
  push("scale", {x}, y, [x, y, c]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[i] += c * gy[i];
  });
  return y;
}

Tensor Graph::dot(Tensor a, Tensor b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size()) {
    throw DimensionError("dot: shapes " + a.shape_str() + " and " +
                         b.shape_str() + " are incompatible");
  }
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  Tensor y = make_output({1}, {s}, a.requires_grad() || b.requires_grad());
  push("dot", {a, b}, y, [a, b, y]() mutable {
    const double g = y.grad()[0];
    if (a.requires_grad()) {
      std::vector<double>& ga = a.grad_buffer();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * b.data()[i];
    }
    if (b.requires_grad()) {
      std::vector<double>& gb = b.grad_buffer();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g * a.data()[i];
    }
  });
  return y;
}

Tensor Graph::sum_all(Tensor x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = make_output({1}, {s}, x.requires_grad());
  push("sum_all", {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    const double g = y.grad()[0];
    std::vector<double>& gx = x.grad_buffer();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return y;
}

Tensor Graph::max_rows(Tensor x) {
  if (x.rank() != 2 || x.rows() == 0) {
    throw DimensionError("max_rows: expected non-empty rank-2, got " +
                         x.shape_str());
  }
  const size_t m = x.rows(), n = x.cols();
  std::vector<double> out(n);
  std::vector<size_t> argmax(n, 0);
  for (size_t j = 0; j < n; ++j) {
    double best = x.at(0, j);
    for (size_t i = 1; i < m; ++i) {
      if (x.at(i, j) > best) {
        best = x.at(i, j);
        argmax[j] = i;
      }
    }
    out[j] = best;
  }
  Tensor y = make_output({n}, std::move(out), x.requires_grad());
  push("max_rows", {x}, y, [x, y, argmax, n]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t j = 0; j < n; ++j) gx[argmax[j] * n + j] += gy[j];
  });
  return y;
}

// ---------------------------------------------------------------------------
// Nonlinearities and losses

Tensor Graph::leaky_relu(Tensor x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu: slope must lie in (0,1), got " +
                      std::to_string(slope));
  }
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = v >= 0.0 ? v : slope * v;
  }
  Tensor y = make_output(x.shape(), std::move(out), x.requires_grad());
  push("leaky_relu", {x}, y, [x, y, slope]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < gy.size(); ++i)
      gx[i] += (x.data()[i] >= 0.0 ? 1.0 : slope) * gy[i];
  });
  return y;
}

Tensor Graph::tanh_act(Tensor x) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  Tensor y = make_output(x.shape(), std::move(out), x.requires_grad());
  push("tanh", {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < gy.size(); ++i)
      gx[i] += (1.0 - y.data()[i] * y.data()[i]) * gy[i];
  });
  return y;
}

Tensor Graph::sigmoid_act(Tensor x) {
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  Tensor y = make_output(x.shape(), std::move(out), x.requires_grad());
  push("sigmoid", {x}, y, [x, y]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < gy.size(); ++i)
      gx[i] += y.data()[i] * (1.0 - y.data()[i]) * gy[i];
  });
  return y;
}

Tensor Graph::softmax_row(Tensor x) {
  require_finite(x, "softmax_row");
  if (x.size() == 0) throw ContractError("softmax_row: empty input");
  const size_t m = x.rank() == 2 ? x.rows() : 1;
  const size_t n = x.rank() == 2 ? x.cols() : x.size();
  if (n == 0) throw ContractError("softmax_row: empty rows");
  std::vector<double> out(m * n);
  for (size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * n;
    double mx = xi[0];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(xi[j] - mx);
      z += out[i * n + j];
    }
    for (size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  Tensor y = make_output(x.shape(), std::move(out), x.requires_grad());
  push("softmax_row", {x}, y, [x, y, m, n]() mutable {
    if (!x.requires_grad()) return;
    std::vector<double>& gx = x.grad_buffer();
    const std::vector<double>& gy = y.grad();
    for (size_t i = 0; i < m; ++i) {
      double inner = 0.0;
      for (size_t j = 0; j < n; ++j) inner += gy[i * n + j] * y.data()[i * n + j];
      for (size_t j = 0; j < n; ++j)
        gx[i * n + j] += y.data()[i * n + j] * (gy[i * n + j] - inner);
    }
  });
  return y;
}

Tensor Graph::logsumexp(Tensor x) {
  if (x.rank() != 1 || x.size() == 0) {
    throw DimensionError("logsumexp: expected non-empty rank-1, got " +
                         x.shape_str());
  }
  require_finite(x, "logsumexp");
  double mx = x.data()[0];
  for (double v : x.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : x.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Tensor y = make_output({1}, {lse}, x.requires_grad());
  push("logsumexp", {x}, y, [x, y, lse]() mutable {
    if (!x.requires_grad()) return;
    const double g = y.grad()[0];
    std::vector<double>& gx = x.grad_buffer();
    for (size_t i = 0; i < gx.size(); ++i)
      gx[i] += g * std::exp(x.data()[i] - lse);
  });
  return y;
}

Tensor Graph::cross_entropy(Tensor logits, size_t target) {
  if (logits.rank() != 1 || logits.size() == 0) {
    throw DimensionError("cross_entropy: expected non-empty rank-1 logits, got " +
                         logits.shape_str());
  }
  if (target >= logits.size()) {
    throw ContractError("cross_entropy: target " + std::to_string(target) +
                        " out of range for " + std::to_string(logits.size()) +
                        " classes");
  }
  require_finite(logits, "cross_entropy");
  const size_t n = logits.size();
  double mx = logits.data()[0];
  for (double v : logits.data()) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  const double loss = lse - logits.data()[target];
  Tensor y = make_output({1}, {loss}, logits.requires_grad());
  push("cross_entropy", {logits}, y, [logits, y, target, lse, n]() mutable {
    if (!logits.requires_grad()) return;
    const double g = y.grad()[0];
    std::vector<double>& gx = logits.grad_buffer();
    for (size_t i = 0; i < n; ++i) {
      const double p = std::exp(logits.data()[i] - lse);
      gx[i] += g * (p - (i == target ? 1.0 : 0.0));
    }
  });
  return y;
}

Tensor Graph::l2_normalize(Tensor x) {
  if (x.rank() != 1 || x.size() == 0) {
    throw DimensionError("l2_normalize: expected non-empty rank-1, got " +
                         x.shape_str());
  }
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NumericError("l2_normalize: vector norm is zero or non-finite");
  }
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] / norm;
  Tensor y = make_output(x.shape(), std::move(out), x.requires_grad());
  push("l2_normalize", {x}, y, [x, y, norm]() mutable {
    if (!x.requires_grad()) return;
    const std::vector<double>& gy = y.grad();
    double inner = 0.0;
    for (size_t i = 0; i < gy.size(); ++i) inner += gy[i] * y.data()[i];
    std::vector<double>& gx = x.grad_buffer();
    for (size_t i = 0; i < gx.size(); ++i)
      gx[i] += (gy[i] - inner * y.data()[i]) / norm;
  });
  return y;
}

Tensor Graph::affine(Tensor x, Tensor w, Tensor b) {
  if (x.rank() == 1) {
    return flatten(add_row_bias(matmul(as_row(x), w), b));
  }
  return add_row_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Gradient verification

bool grad_check(const std::function<Tensor(Graph&)>& f,
                std::span<const Tensor> params, double step, double tol,
                double* worst_rel_err) {
  if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
  for (Tensor p : params) p.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Tensor loss = f(g);
    if (loss.size() != 1) {
      throw ContractError("grad_check: f must return a scalar");
    }
    if (!std::isfinite(loss.scalar_value())) {
      throw NumericError("grad_check: f returned a non-finite value");
    }
    g.backward(loss);
  }
  for (Tensor p : params) {
    analytic.push_back(p.grad().empty() ? std::vector<double>(p.size(), 0.0)
                                        : p.grad());
  }
  double worst = 0.0;
  bool ok = true;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      const double old = p.data()[i];
      p.data()[i] = old + step;
      double fp;
      {
        Graph g;
        fp = f(g).scalar_value();
      }
      p.data()[i] = old - step;
      double fm;
      {
        Graph g;
        fm = f(g).scalar_value();
      }
      p.data()[i] = old;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("grad_check: perturbed evaluation is non-finite");
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
      if (rel > tol) ok = false;
    }
  }
  if (worst_rel_err) *worst_rel_err = worst;
  return ok;
}

}  // namespace klg
