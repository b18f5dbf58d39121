#ifndef DELAYCAST_TENSOR_HPP
#define DELAYCAST_TENSOR_HPP

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "delaycast/errors.hpp"
#include "delaycast/rng.hpp"

namespace delaycast {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major 2-D tensor doubling as a reverse-mode autodiff node.
// Leaves with requires_grad=true are trainable parameters; every op below
// returns a fresh node wired to its inputs with an exact backward closure.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or any ancestor does

  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_fn;

  std::size_t size() const { return rows * cols; }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  void ensure_grad() {
    if (grad.size() != size()) grad.assign(size(), 0.0);
  }

  void zero_grad() {
    grad.assign(size(), 0.0);
  }
};

inline TensorPtr make_tensor(std::size_t rows, std::size_t cols,
                             bool requires_grad = false) {
  auto t = std::make_shared<Tensor>();
  t->rows = rows;
  t->cols = cols;
  t->data.assign(rows * cols, 0.0);
  t->requires_grad = requires_grad;
  t->needs_grad = requires_grad;
  return t;
}

inline TensorPtr make_tensor(std::size_t rows, std::size_t cols,
                             std::vector<double> values,
                             bool requires_grad = false) {
  auto t = make_tensor(rows, cols, requires_grad);
  if (values.size() != rows * cols)
    throw std::invalid_argument("tensor data size does not match shape");
  t->data = std::move(values);
  return t;
}

// Output node wired to its inputs; needs_grad propagates from parents.
inline TensorPtr make_node(std::size_t rows, std::size_t cols,
                           std::vector<TensorPtr> parents,
                           std::function<void(Tensor&)> backward_fn) {
  auto t = make_tensor(rows, cols);
  for (const auto& p : parents)
    if (p->needs_grad) t->needs_grad = true;
  t->parents = std::move(parents);
  t->backward_fn = std::move(backward_fn);
  return t;
}

// ---------------------------------------------------------------------------
// Kink tracing: finite-difference checking must avoid coordinates whose
// perturbation crosses a non-differentiable point. Ops with kinks (ReLU,
// pinball) append their kink arguments here when a trace is installed.
// ---------------------------------------------------------------------------
namespace detail {
inline std::vector<double>*& kink_trace_slot() {
  thread_local std::vector<double>* slot = nullptr;
  return slot;
}
}  // namespace detail

class KinkTraceScope {
 public:
  explicit KinkTraceScope(std::vector<double>* sink) {
    prev_ = detail::kink_trace_slot();
    detail::kink_trace_slot() = sink;
  }
  ~KinkTraceScope() { detail::kink_trace_slot() = prev_; }
  KinkTraceScope(const KinkTraceScope&) = delete;
  KinkTraceScope& operator=(const KinkTraceScope&) = delete;

 private:
  std::vector<double>* prev_;
};

inline void trace_kink(double arg) {
  if (auto* sink = detail::kink_trace_slot()) sink->push_back(arg);
}

// ---------------------------------------------------------------------------
// Raw kernels (row-major, accumulate into C)
// ---------------------------------------------------------------------------
namespace detail {

// C[MxN] += A[MxK] * B[KxN]
inline void gemm_acc(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[MxN] += A[MxK] * B^T where B is [NxK]
inline void gemm_nt_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[MxN] += A^T * B where A is [KxM], B is [KxN]
inline void gemm_tn_acc(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

// y = x W^T + b with x:[B x in], W:[out x in], b:[1 x out]
inline TensorPtr linear_forward(const TensorPtr& x, const TensorPtr& w,
                                const TensorPtr& b) {
  if (x->cols != w->cols)
    throw RuntimeFailure("linear_forward: input width " +
                         std::to_string(x->cols) + " != weight fan-in " +
                         std::to_string(w->cols));
  if (b->rows != 1 || b->cols != w->rows)
    throw RuntimeFailure("linear_forward: bias shape mismatch");

  const std::size_t batch = x->rows, fan_in = x->cols, fan_out = w->rows;
  auto y = make_node(batch, fan_out, {x, w, b}, [](Tensor& self) {
    auto& x = *self.parents[0];
    auto& w = *self.parents[1];
    auto& b = *self.parents[2];
    const std::size_t batch = x.rows, fan_in = x.cols, fan_out = w.rows;
    if (x.needs_grad) {
      x.ensure_grad();
      detail::gemm_acc(self.grad.data(), w.data.data(), x.grad.data(), batch,
                       fan_out, fan_in);
    }
    if (w.needs_grad) {
      w.ensure_grad();
      detail::gemm_tn_acc(self.grad.data(), x.data.data(), w.grad.data(),
                          fan_out, batch, fan_in);
    }
    if (b.needs_grad) {
      b.ensure_grad();
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < fan_out; ++j)
          b.grad[j] += self.grad[i * fan_out + j];
    }
  });
  detail::gemm_nt_acc(x->data.data(), w->data.data(), y->data.data(), batch,
                      fan_in, fan_out);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < fan_out; ++j) y->data[i * fan_out + j] += b->data[j];
  return y;
}

inline TensorPtr relu(const TensorPtr& x) {
  auto y = make_node(x->rows, x->cols, {x}, [](Tensor& self) {
    auto& x = *self.parents[0];
    if (!x.needs_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i)
      if (x.data[i] > 0.0) x.grad[i] += self.grad[i];
  });
  for (std::size_t i = 0; i < x->size(); ++i) {
    trace_kink(x->data[i]);
    y->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  }
  return y;
}

inline TensorPtr sigmoid(const TensorPtr& x) {
  auto y = make_node(x->rows, x->cols, {x}, [](Tensor& self) {
    auto& x = *self.parents[0];
    if (!x.needs_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i) {
      const double s = self.data[i];
      x.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
  for (std::size_t i = 0; i < x->size(); ++i)
    y->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
  return y;
}

// Inverted dropout: scales kept units by 1/(1-rate) at train time so
// inference is a plain forward pass. rate = 0 is an exact pass-through and
// consumes no randomness.
inline TensorPtr dropout(const TensorPtr& x, double rate, bool training,
                         Rng* rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw RuntimeFailure("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) {
    auto y = make_node(x->rows, x->cols, {x}, [](Tensor& self) {
      auto& x = *self.parents[0];
      if (!x.needs_grad) return;
      x.ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i) x.grad[i] += self.grad[i];
    });
    y->data = x->data;
    return y;
  }
  if (rng == nullptr) throw RuntimeFailure("dropout in train mode needs an rng");
  auto mask = std::make_shared<std::vector<double>>(x->size());
  const double keep = 1.0 - rate;
  for (auto& m : *mask) m = rng->uniform01() < keep ? 1.0 / keep : 0.0;
  auto y = make_node(x->rows, x->cols, {x}, [mask](Tensor& self) {
    auto& x = *self.parents[0];
    if (!x.needs_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < self.size(); ++i)
      x.grad[i] += self.grad[i] * (*mask)[i];
  });
  for (std::size_t i = 0; i < x->size(); ++i)
    y->data[i] = x->data[i] * (*mask)[i];
  return y;
}

// Periodic feature map for one scalar column: x:[B x 1], freq:[1 x L] ->
// [sin(2*pi*f_j*x_i) ... ; cos(2*pi*f_j*x_i) ...] of shape [B x 2L].
inline TensorPtr sin_cos_features(const TensorPtr& x, const TensorPtr& freq) {
  if (x->cols != 1) throw RuntimeFailure("sin_cos_features expects a column");
  if (freq->rows != 1) throw RuntimeFailure("sin_cos_features: freq must be a row vector");
  const std::size_t batch = x->rows, nfreq = freq->cols;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  auto y = make_node(batch, 2 * nfreq, {x, freq}, [](Tensor& self) {
    auto& x = *self.parents[0];
    auto& f = *self.parents[1];
    const std::size_t batch = x.rows, nfreq = f.cols;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const bool gx = x.needs_grad, gf = f.needs_grad;
    if (!gx && !gf) return;
    if (gx) x.ensure_grad();
    if (gf) f.ensure_grad();
    for (std::size_t i = 0; i < batch; ++i) {
      const double xv = x.data[i];
      for (std::size_t j = 0; j < nfreq; ++j) {
        const double arg = two_pi * f.data[j] * xv;
        const double gs = self.grad[i * 2 * nfreq + j];
        const double gc = self.grad[i * 2 * nfreq + nfreq + j];
        const double common = gs * std::cos(arg) - gc * std::sin(arg);
        if (gf) f.grad[j] += two_pi * xv * common;
        if (gx) x.grad[i] += two_pi * f.data[j] * common;
      }
    }
  });
  for (std::size_t i = 0; i < batch; ++i) {
    const double xv = x->data[i];
    for (std::size_t j = 0; j < nfreq; ++j) {
      const double arg = two_pi * freq->data[j] * xv;
      y->data[i * 2 * nfreq + j] = std::sin(arg);
      y->data[i * 2 * nfreq + nfreq + j] = std::cos(arg);
    }
  }
  return y;
}

// Row gather from an embedding table [C x d]; backward scatter-adds.
inline TensorPtr embedding_lookup(const TensorPtr& table,
                                  std::vector<int> indices) {
  const std::size_t batch = indices.size(), dim = table->cols;
  for (int idx : indices)
    if (idx < 0 || static_cast<std::size_t>(idx) >= table->rows)
      throw RuntimeFailure("embedding index " + std::to_string(idx) +
                           " out of range [0, " + std::to_string(table->rows) +
                           ")");
  auto idx_holder = std::make_shared<std::vector<int>>(std::move(indices));
  auto y = make_node(batch, dim, {table}, [idx_holder](Tensor& self) {
    auto& t = *self.parents[0];
    if (!t.needs_grad) return;
    t.ensure_grad();
    const std::size_t dim = t.cols;
    for (std::size_t i = 0; i < idx_holder->size(); ++i) {
      const auto row = static_cast<std::size_t>((*idx_holder)[i]);
      for (std::size_t j = 0; j < dim; ++j)
        t.grad[row * dim + j] += self.grad[i * dim + j];
    }
  });
  for (std::size_t i = 0; i < idx_holder->size(); ++i) {
    const auto row = static_cast<std::size_t>((*idx_holder)[i]);
    for (std::size_t j = 0; j < dim; ++j)
      y->data[i * dim + j] = table->data[row * dim + j];
  }
  return y;
}

// Column-wise concatenation of same-height blocks.
inline TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw RuntimeFailure("concat_cols: no inputs");
  const std::size_t batch = parts[0]->rows;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p->rows != batch) throw RuntimeFailure("concat_cols: row mismatch");
    total += p->cols;
  }
  auto y = make_node(batch, total, parts, [](Tensor& self) {
    const std::size_t batch = self.rows;
    std::size_t off = 0;
    for (auto& pp : self.parents) {
      auto& p = *pp;
      if (p.needs_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < batch; ++i)
          for (std::size_t j = 0; j < p.cols; ++j)
            p.grad[i * p.cols + j] += self.grad[i * self.cols + off + j];
      }
      off += p.cols;
    }
  });
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < p->cols; ++j)
        y->data[i * total + off + j] = p->data[i * p->cols + j];
    off += p->cols;
  }
  return y;
}

// Scalar helpers used by loss plumbing and tests.
inline TensorPtr sum_all(const TensorPtr& x) {
  auto y = make_node(1, 1, {x}, [](Tensor& self) {
    auto& x = *self.parents[0];
    if (!x.needs_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < x.size(); ++i) x.grad[i] += self.grad[0];
  });
  double acc = 0.0;
  for (double v : x->data) acc += v;
  y->data[0] = acc;
  return y;
}

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  if (a->rows != b->rows || a->cols != b->cols)
    throw RuntimeFailure("add: shape mismatch");
  auto y = make_node(a->rows, a->cols, {a, b}, [](Tensor& self) {
    for (auto& pp : self.parents) {
      auto& p = *pp;
      if (!p.needs_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
  for (std::size_t i = 0; i < a->size(); ++i)
    y->data[i] = a->data[i] + b->data[i];
  return y;
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Runs reverse-mode accumulation from a 1x1 loss node. All reachable grads
// are zeroed first, so each call yields fresh gradients.
inline void backward(const TensorPtr& loss) {
  if (loss->size() != 1)
    throw RuntimeFailure("backward expects a scalar loss node");

  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen;
  // Iterative DFS postorder: children appended after all their inputs, then
  // reversed so every node runs before the nodes it reads from.
  std::vector<std::pair<TensorPtr, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (seen.insert(parent.get()).second)
        stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(node.get());
      stack.pop_back();
    }
  }

  for (auto* n : order)
    if (n->needs_grad || n == loss.get()) n->zero_grad();
  loss->ensure_grad();
  loss->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* n = *it;
    if (n->backward_fn && (n->needs_grad || n == loss.get()))
      n->backward_fn(*n);
  }
}

}  // namespace delaycast

#endif  // DELAYCAST_TENSOR_HPP
