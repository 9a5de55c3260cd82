// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensor with reverse-mode automatic differentiation.
// Graphs are built define-by-run: every op records its parents and a local
// backward closure; backward() topologically sorts from the loss and
// accumulates gradients into leaf parameters. Single-threaded by contract.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "savior/error.hpp"
#include "savior/rng.hpp"

namespace savior {

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, only when requires_grad
  bool requires_grad{false};
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::size_t numel() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContractError("tensor shape must have positive dims, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

// Graph recording can be suspended for evaluation-only forwards.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() : n_(std::make_shared<detail::TensorNode>()) {
    n_->shape = {1};
    n_->value = {0.0};
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.n_->shape = std::move(shape);
    t.n_->value.assign(detail::shape_numel(t.n_->shape), 0.0);
    t.n_->requires_grad = requires_grad;
    if (requires_grad) t.n_->ensure_grad();
    return t;
  }

  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.n_->value.begin(), t.n_->value.end(), v);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.n_->value = {v};
    return t;
  }

  static Tensor from_vector(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false) {
    Tensor t;
    t.n_->shape = std::move(shape);
    if (detail::shape_numel(t.n_->shape) != data.size())
      throw ContractError("from_vector: shape " + detail::shape_str(t.n_->shape) +
                          " does not match data length " + std::to_string(data.size()));
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    if (requires_grad) t.n_->ensure_grad();
    return t;
  }

  // Trainable leaf with N(0, scale^2) entries.
  static Tensor randn(std::vector<int> shape, Rng& rng, double scale, bool requires_grad = true) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.n_->value) x = rng.normal() * scale;
    return t;
  }

  // Leaf copy of another tensor's values, detached from any graph.
  static Tensor constant_like(const Tensor& src) {
    Tensor t;
    t.n_->shape = src.shape();
    t.n_->value = src.values();
    return t;
  }

  const std::vector<int>& shape() const { return n_->shape; }
  std::size_t numel() const { return n_->numel(); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& values() const { return n_->value; }
  std::vector<double>& mutable_values() { return n_->value; }
  double value_at(std::size_t i) const { return n_->value[i]; }
  double scalar_value() const {
    if (numel() != 1) throw ContractError("scalar_value on tensor of shape " + detail::shape_str(shape()));
    return n_->value[0];
  }

  const std::vector<double>& grad() const {
    const_cast<detail::TensorNode*>(n_.get())->ensure_grad();
    return n_->grad;
  }
  void zero_grad() {
    if (n_->requires_grad) {
      n_->ensure_grad();
      std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }
  }

  bool same_node(const Tensor& other) const { return n_ == other.n_; }
  detail::TensorNode* node() const { return n_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return n_; }

  bool all_finite() const {
    for (double v : n_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

inline Tensor make_op(std::vector<int> shape, std::vector<const Tensor*> inputs,
                      std::function<void(TensorNode&)> backward) {
  Tensor out = Tensor::zeros(std::move(shape));
  bool needs = false;
  if (grad_mode())
    for (const Tensor* t : inputs) needs |= t->requires_grad();
  if (needs) {
    TensorNode* n = out.node();
    n->requires_grad = true;
    n->ensure_grad();
    n->parents.reserve(inputs.size());
    for (const Tensor* t : inputs) n->parents.push_back(t->node_ptr());
    n->backward = std::move(backward);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + detail::shape_str(a.shape()) +
                        " vs " + detail::shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = detail::make_op(a.shape(), {&a, &b}, [](detail::TensorNode& self) {
    for (int p = 0; p < 2; ++p) {
      auto& par = *self.parents[static_cast<std::size_t>(p)];
      if (!par.requires_grad) continue;
      par.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
    }
  });
  auto& o = out.mutable_values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = detail::make_op(a.shape(), {&a, &b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
  auto& o = out.mutable_values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = detail::make_op(a.shape(), {&a, &b}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
  auto& o = out.mutable_values();
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = detail::make_op(a.shape(), {&a}, [c](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += c * self.grad[i];
  });
  auto& o = out.mutable_values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * av[i];
  return out;
}

inline Tensor leaky_relu(const Tensor& a, double alpha = 0.01) {
  Tensor out = detail::make_op(a.shape(), {&a}, [alpha](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa.grad[i] += self.grad[i] * (pa.value[i] > 0.0 ? 1.0 : alpha);
  });
  auto& o = out.mutable_values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : alpha * av[i];
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  Tensor out = detail::make_op(a.shape(), {&a}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      pa.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
  auto& o = out.mutable_values();
  const auto& av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double x = av[i];
    o[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return out;
}

inline Tensor sum(const Tensor& a) {
  Tensor out = detail::make_op({1}, {&a}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += self.grad[0];
  });
  out.mutable_values()[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  return out;
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = detail::make_op({1}, {&a}, [inv](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += self.grad[0] * inv;
  });
  out.mutable_values()[0] =
      std::accumulate(a.values().begin(), a.values().end(), 0.0) * inv;
  return out;
}

inline Tensor sum_squares(const Tensor& a) {
  Tensor out = detail::make_op({1}, {&a}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < pa.grad.size(); ++i)
      pa.grad[i] += self.grad[0] * 2.0 * pa.value[i];
  });
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  out.mutable_values()[0] = s;
  return out;
}

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (detail::shape_numel(shape) != a.numel())
    throw ContractError("reshape: numel mismatch " + detail::shape_str(a.shape()) + " -> " +
                        detail::shape_str(shape));
  Tensor out = detail::make_op(std::move(shape), {&a}, [](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
  out.mutable_values() = a.values();
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops (2-D row-major)
// ---------------------------------------------------------------------------

inline void matmul_accum(const double* a, const double* b, double* c, int m, int k, int n) {
  // c[m,n] += a[m,k] * b[k,n], ikj order for contiguous access
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ContractError(std::string(op) + ": expected a matrix, got shape " +
                        detail::shape_str(t.shape()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ContractError("matmul: inner dimension mismatch " + detail::shape_str(a.shape()) +
                        " x " + detail::shape_str(b.shape()));
  Tensor out = detail::make_op({m, n}, {&a, &b}, [m, k, n](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    // dA += G * B^T
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* grow = self.grad.data() + static_cast<std::size_t>(i) * n;
        double* darow = pa.grad.data() + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = pb.value.data() + static_cast<std::size_t>(kk) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          darow[kk] += acc;
        }
      }
    }
    // dB += A^T * G
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* arow = pa.value.data() + static_cast<std::size_t>(i) * k;
        const double* grow = self.grad.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const double av = arow[kk];
          if (av == 0.0) continue;
          double* dbrow = pb.grad.data() + static_cast<std::size_t>(kk) * n;
          for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
        }
      }
    }
  });
  matmul_accum(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
  return out;
}

inline Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = detail::make_op({n, m}, {&a}, [m, n](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        pa.grad[static_cast<std::size_t>(j) * n + i] +=
            self.grad[static_cast<std::size_t>(i) * m + j];
  });
  auto& o = out.mutable_values();
  const auto& av = a.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      o[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
  return out;
}

// m[R,C] + b[C] broadcast over rows.
inline Tensor add_bias(const Tensor& m, const Tensor& b) {
  require_matrix(m, "add_bias");
  if (b.rank() != 1 || b.dim(0) != m.dim(1))
    throw ContractError("add_bias: bias shape " + detail::shape_str(b.shape()) +
                        " does not match matrix " + detail::shape_str(m.shape()));
  const int rows = m.dim(0), cols = m.dim(1);
  Tensor out = detail::make_op({rows, cols}, {&m, &b}, [rows, cols](detail::TensorNode& self) {
    auto& pm = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pm.requires_grad) {
      pm.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const double* grow = self.grad.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) pb.grad[static_cast<std::size_t>(c)] += grow[c];
      }
    }
  });
  auto& o = out.mutable_values();
  const auto& mv = m.values();
  const auto& bv = b.values();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      o[static_cast<std::size_t>(r) * cols + c] = mv[static_cast<std::size_t>(r) * cols + c] + bv[static_cast<std::size_t>(c)];
  return out;
}

// Horizontal concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int cols = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != rows)
      throw ContractError("concat_cols: row mismatch " + detail::shape_str(parts[0].shape()) +
                          " vs " + detail::shape_str(p.shape()));
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<const Tensor*> ins;
  for (const auto& p : parts) ins.push_back(&p);
  Tensor out = detail::make_op({rows, cols}, ins, [rows, cols, widths](detail::TensorNode& self) {
    int off = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      auto& par = *self.parents[p];
      const int w = widths[p];
      if (par.requires_grad) {
        par.ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const double* grow = self.grad.data() + static_cast<std::size_t>(r) * cols + off;
          double* prow = par.grad.data() + static_cast<std::size_t>(r) * w;
          for (int c = 0; c < w; ++c) prow[c] += grow[c];
        }
      }
      off += w;
    }
  });
  auto& o = out.mutable_values();
  int off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const int w = widths[p];
    const auto& pv = parts[p].values();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c)
        o[static_cast<std::size_t>(r) * cols + off + c] = pv[static_cast<std::size_t>(r) * w + c];
    off += w;
  }
  return out;
}

// out[b,:] = table[idx[b],:]. Backward scatters, so unindexed rows keep
// exactly zero gradient.
inline Tensor row_gather(const Tensor& table, const std::vector<int>& idx) {
  require_matrix(table, "row_gather");
  const int n = table.dim(0), d = table.dim(1);
  for (int i : idx)
    if (i < 0 || i >= n)
      throw ContractError("row_gather: index " + std::to_string(i) + " out of range [0," +
                          std::to_string(n) + ")");
  const int b = static_cast<int>(idx.size());
  Tensor out = detail::make_op({b, d}, {&table}, [idx, d](detail::TensorNode& self) {
    auto& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    pt.ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* grow = self.grad.data() + r * static_cast<std::size_t>(d);
      double* trow = pt.grad.data() + static_cast<std::size_t>(idx[r]) * d;
      for (int c = 0; c < d; ++c) trow[c] += grow[c];
    }
  });
  auto& o = out.mutable_values();
  const auto& tv = table.values();
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < d; ++c)
      o[r * static_cast<std::size_t>(d) + c] = tv[static_cast<std::size_t>(idx[r]) * d + c];
  return out;
}

// ---------------------------------------------------------------------------
// Normalizers
// ---------------------------------------------------------------------------

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& m) {
  require_matrix(m, "softmax_rows");
  const int rows = m.dim(0), cols = m.dim(1);
  Tensor out = detail::make_op({rows, cols}, {&m}, [rows, cols](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* y = self.value.data() + static_cast<std::size_t>(r) * cols;
      const double* g = self.grad.data() + static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += y[c] * g[c];
      double* dx = pa.grad.data() + static_cast<std::size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dx[c] += y[c] * (g[c] - dot);
    }
  });
  auto& o = out.mutable_values();
  const auto& mv = m.values();
  for (int r = 0; r < rows; ++r) {
    const double* x = mv.data() + static_cast<std::size_t>(r) * cols;
    double* y = o.data() + static_cast<std::size_t>(r) * cols;
    double mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    const double inv = 1.0 / z;
    for (int c = 0; c < cols; ++c) y[c] *= inv;
  }
  return out;
}

// Row-wise y = x / max(||x||_2, eps). The eps floor makes the all-zero row
// map to zero instead of NaN.
inline Tensor l2_normalize_rows(const Tensor& m, double eps = 1e-12) {
  require_matrix(m, "l2_normalize_rows");
  if (eps <= 0.0) throw ConfigError("l2_normalize_rows: eps must be positive");
  const int rows = m.dim(0), cols = m.dim(1);
  Tensor out = detail::make_op({rows, cols}, {&m}, [rows, cols, eps](detail::TensorNode& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* x = pa.value.data() + static_cast<std::size_t>(r) * cols;
      const double* y = self.value.data() + static_cast<std::size_t>(r) * cols;
      const double* g = self.grad.data() + static_cast<std::size_t>(r) * cols;
      double* dx = pa.grad.data() + static_cast<std::size_t>(r) * cols;
      double nrm2 = 0.0;
      for (int c = 0; c < cols; ++c) nrm2 += x[c] * x[c];
      const double nrm = std::sqrt(nrm2);
      if (nrm > eps) {
        double gy = 0.0;
        for (int c = 0; c < cols; ++c) gy += g[c] * y[c];
        const double inv = 1.0 / nrm;
        for (int c = 0; c < cols; ++c) dx[c] += (g[c] - gy * y[c]) * inv;
      } else {
        const double inv = 1.0 / eps;
        for (int c = 0; c < cols; ++c) dx[c] += g[c] * inv;
      }
    }
  });
  auto& o = out.mutable_values();
  const auto& mv = m.values();
  for (int r = 0; r < rows; ++r) {
    const double* x = mv.data() + static_cast<std::size_t>(r) * cols;
    double* y = o.data() + static_cast<std::size_t>(r) * cols;
    double nrm2 = 0.0;
    for (int c = 0; c < cols; ++c) nrm2 += x[c] * x[c];
    const double inv = 1.0 / std::max(std::sqrt(nrm2), eps);
    for (int c = 0; c < cols; ++c) y[c] = x[c] * inv;
  }
  return out;
}

inline Tensor l2_normalize(const Tensor& v, double eps = 1e-12) {
  if (v.rank() == 1) {
    Tensor m = reshape(v, {1, v.dim(0)});
    return reshape(l2_normalize_rows(m, eps), {v.dim(0)});
  }
  return l2_normalize_rows(v, eps);
}

// ---------------------------------------------------------------------------
// Fused losses
// ---------------------------------------------------------------------------

// Mean binary cross-entropy computed from logits; labels in {0,1}.
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels) {
  if (logits.numel() != labels.size())
    throw ContractError("bce_with_logits: " + std::to_string(logits.numel()) + " logits vs " +
                        std::to_string(labels.size()) + " labels");
  const std::size_t n = labels.size();
  if (n == 0) throw ContractError("bce_with_logits: empty batch");
  Tensor out = detail::make_op({1}, {&logits}, [labels, n](detail::TensorNode& self) {
    auto& pl = *self.parents[0];
    if (!pl.requires_grad) return;
    pl.ensure_grad();
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = pl.value[i];
      const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      pl.grad[i] += g * (p - labels[i]);
    }
  });
  auto softplus = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
  double acc = 0.0;
  const auto& lv = logits.values();
  for (std::size_t i = 0; i < n; ++i)
    acc += labels[i] * softplus(-lv[i]) + (1.0 - labels[i]) * softplus(lv[i]);
  out.mutable_values()[0] = acc / static_cast<double>(n);
  return out;
}

// Mean over rows of -log softmax(logits[i, :])[pos[i]] with the diagonal
// excluded from the normalizer. This is the InfoNCE form where the anchor
// itself never appears among its own negatives.
inline Tensor softmax_xent_rows_exclude_diag(const Tensor& logits, const std::vector<int>& pos) {
  require_matrix(logits, "softmax_xent_rows_exclude_diag");
  const int n = logits.dim(0), m = logits.dim(1);
  if (static_cast<int>(pos.size()) != n)
    throw ContractError("softmax_xent_rows_exclude_diag: need one target per row");
  for (int i = 0; i < n; ++i)
    if (pos[i] < 0 || pos[i] >= m || pos[i] == i)
      throw ContractError("softmax_xent_rows_exclude_diag: bad target for row " + std::to_string(i));
  Tensor out = detail::make_op({1}, {&logits}, [n, m, pos](detail::TensorNode& self) {
    auto& pl = *self.parents[0];
    if (!pl.requires_grad) return;
    pl.ensure_grad();
    const double gscale = self.grad[0] / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
      const double* x = pl.value.data() + static_cast<std::size_t>(i) * m;
      double* dx = pl.grad.data() + static_cast<std::size_t>(i) * m;
      double mx = -1e300;
      for (int k = 0; k < m; ++k)
        if (k != i) mx = std::max(mx, x[k]);
      double z = 0.0;
      for (int k = 0; k < m; ++k)
        if (k != i) z += std::exp(x[k] - mx);
      for (int k = 0; k < m; ++k) {
        if (k == i) continue;
        const double p = std::exp(x[k] - mx) / z;
        dx[k] += gscale * (p - (k == pos[i] ? 1.0 : 0.0));
      }
    }
  });
  double acc = 0.0;
  const auto& lv = logits.values();
  for (int i = 0; i < n; ++i) {
    const double* x = lv.data() + static_cast<std::size_t>(i) * m;
    double mx = -1e300;
    for (int k = 0; k < m; ++k)
      if (k != i) mx = std::max(mx, x[k]);
    double z = 0.0;
    for (int k = 0; k < m; ++k)
      if (k != i) z += std::exp(x[k] - mx);
    acc += std::log(z) + mx - x[pos[i]];
  }
  out.mutable_values()[0] = acc / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Straight-through combine
// ---------------------------------------------------------------------------

// Forward equals `value_path`; backward sends the incoming gradient to both
// `value_path` and `grad_path` unchanged. Used to pass reconstruction
// gradients through residual quantization to the encoder output.
inline Tensor straight_through(const Tensor& value_path, const Tensor& grad_path) {
  check_same_shape(value_path, grad_path, "straight_through");
  Tensor out = detail::make_op(value_path.shape(), {&value_path, &grad_path},
                               [](detail::TensorNode& self) {
                                 for (int p = 0; p < 2; ++p) {
                                   auto& par = *self.parents[static_cast<std::size_t>(p)];
                                   if (!par.requires_grad) continue;
                                   par.ensure_grad();
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                     par.grad[i] += self.grad[i];
                                 }
                               });
  out.mutable_values() = value_path.values();
  return out;
}

// ---------------------------------------------------------------------------
// Ragged-sequence target attention kernels
// ---------------------------------------------------------------------------
//
// Sequences are packed as [B*T, width] with a per-row valid length. Positions
// t >= len[b] are padding and contribute nothing in either direction.

// scores[b, h*T + t] = <q[b, h*dk:(h+1)*dk], k[b*T+t, h*dk:(h+1)*dk]> / sqrt(dk)
inline Tensor ta_scores(const Tensor& q, const Tensor& k, const std::vector<int>& lens, int heads,
                        int max_len) {
  require_matrix(q, "ta_scores");
  require_matrix(k, "ta_scores");
  const int batch = q.dim(0);
  const int width = q.dim(1);
  if (width != k.dim(1) || width % heads != 0)
    throw ContractError("ta_scores: query width " + detail::shape_str(q.shape()) +
                        " incompatible with keys " + detail::shape_str(k.shape()));
  if (k.dim(0) != batch * max_len)
    throw ContractError("ta_scores: keys rows != batch*max_len");
  if (static_cast<int>(lens.size()) != batch) throw ContractError("ta_scores: lens size != batch");
  const int dk = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor out = detail::make_op(
      {batch, heads * max_len}, {&q, &k},
      [batch, heads, max_len, dk, inv_sqrt, lens](detail::TensorNode& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        const int width2 = heads * dk;
        for (int b = 0; b < batch; ++b) {
          const int len = std::min(lens[static_cast<std::size_t>(b)], max_len);
          for (int h = 0; h < heads; ++h) {
            for (int t = 0; t < len; ++t) {
              const double g =
                  self.grad[static_cast<std::size_t>(b) * heads * max_len + h * max_len + t] *
                  inv_sqrt;
              if (g == 0.0) continue;
              const std::size_t qoff = static_cast<std::size_t>(b) * width2 + h * dk;
              const std::size_t koff =
                  (static_cast<std::size_t>(b) * max_len + t) * width2 + h * dk;
              if (pq.requires_grad) {
                pq.ensure_grad();
                for (int e = 0; e < dk; ++e) pq.grad[qoff + e] += g * pk.value[koff + e];
              }
              if (pk.requires_grad) {
                pk.ensure_grad();
                for (int e = 0; e < dk; ++e) pk.grad[koff + e] += g * pq.value[qoff + e];
              }
            }
          }
        }
      });
  auto& o = out.mutable_values();
  const auto& qv = q.values();
  const auto& kv = k.values();
  for (int b = 0; b < batch; ++b) {
    const int len = std::min(lens[static_cast<std::size_t>(b)], max_len);
    for (int h = 0; h < heads; ++h) {
      for (int t = 0; t < len; ++t) {
        const std::size_t qoff = static_cast<std::size_t>(b) * width + h * dk;
        const std::size_t koff = (static_cast<std::size_t>(b) * max_len + t) * width + h * dk;
        double acc = 0.0;
        for (int e = 0; e < dk; ++e) acc += qv[qoff + e] * kv[koff + e];
        o[static_cast<std::size_t>(b) * heads * max_len + h * max_len + t] = acc * inv_sqrt;
      }
    }
  }
  return out;
}

// Per (batch, head) softmax across valid positions. Rows with len == 0 stay
// all-zero (cold user contract).
inline Tensor masked_softmax_scores(const Tensor& scores, const std::vector<int>& lens, int heads,
                                    int max_len) {
  require_matrix(scores, "masked_softmax_scores");
  const int batch = scores.dim(0);
  if (scores.dim(1) != heads * max_len)
    throw ContractError("masked_softmax_scores: score width mismatch");
  Tensor out = detail::make_op(
      scores.shape(), {&scores}, [batch, heads, max_len, lens](detail::TensorNode& self) {
        auto& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (int b = 0; b < batch; ++b) {
          const int len = std::min(lens[static_cast<std::size_t>(b)], max_len);
          if (len == 0) continue;
          for (int h = 0; h < heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(b) * heads * max_len + h * max_len;
            double dot = 0.0;
            for (int t = 0; t < len; ++t) dot += self.value[off + t] * self.grad[off + t];
            for (int t = 0; t < len; ++t)
              pa.grad[off + t] += self.value[off + t] * (self.grad[off + t] - dot);
          }
        }
      });
  auto& o = out.mutable_values();
  const auto& sv = scores.values();
  for (int b = 0; b < batch; ++b) {
    const int len = std::min(lens[static_cast<std::size_t>(b)], max_len);
    if (len == 0) continue;
    for (int h = 0; h < heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(b) * heads * max_len + h * max_len;
      double mx = sv[off];
      for (int t = 1; t < len; ++t) mx = std::max(mx, sv[off + t]);
      double z = 0.0;
      for (int t = 0; t < len; ++t) {
        o[off + t] = std::exp(sv[off + t] - mx);
        z += o[off + t];
      }
      const double inv = 1.0 / z;
      for (int t = 0; t < len; ++t) o[off + t] *= inv;
    }
  }
  return out;
}

// out[b, h*dv + e] = sum_t scores[b, h*T + t] * v[b*T + t, h*dv + e]
inline Tensor ta_aggregate(const Tensor& scores, const Tensor& v, const std::vector<int>& lens,
                           int heads, int max_len) {
  require_matrix(scores, "ta_aggregate");
  require_matrix(v, "ta_aggregate");
  const int batch = scores.dim(0);
  if (scores.dim(1) != heads * max_len)
    throw ContractError("ta_aggregate: score width mismatch");
  const int vwidth = v.dim(1);
  if (vwidth % heads != 0 || v.dim(0) != batch * max_len)
    throw ContractError("ta_aggregate: value shape " + detail::shape_str(v.shape()) +
                        " incompatible");
  const int dv = vwidth / heads;
  Tensor out = detail::make_op(
      {batch, heads * dv}, {&scores, &v},
      [batch, heads, max_len, dv, lens](detail::TensorNode& self) {
        auto& ps = *self.parents[0];
        auto& pv = *self.parents[1];
        const int vwidth2 = heads * dv;
        for (int b = 0; b < batch; ++b) {
          const int len = std::min(lens[static_cast<std::size_t>(b)], max_len);
          for (int h = 0; h < heads; ++h) {
            const std::size_t soff = static_cast<std::size_t>(b) * heads * max_len + h * max_len;
            const std::size_t goff = static_cast<std::size_t>(b) * vwidth2 + h * dv;
            for (int t = 0; t < len; ++t) {
              const std::size_t voff =
                  (static_cast<std::size_t>(b) * max_len + t) * vwidth2 + h * dv;
              if (ps.requires_grad) {
                ps.ensure_grad();
                double acc = 0.0;
                for (int e = 0; e < dv; ++e) acc += self.grad[goff + e] * pv.value[voff + e];
                ps.grad[soff + t] += acc;
              }
              if (pv.requires_grad) {
                pv.ensure_grad();
                const double s = ps.value[soff + t];
                for (int e = 0; e < dv; ++e) pv.grad[voff + e] += s * self.grad[goff + e];
              }
            }
          }
        }
      });
  auto& o = out.mutable_values();
  const auto& sv = scores.values();
  const auto& vv = v.values();
  for (int b = 0; b < batch; ++b) {
    const int len = std::min(lens[static_cast<std::size_t>(b)], max_len);
    for (int h = 0; h < heads; ++h) {
      const std::size_t soff = static_cast<std::size_t>(b) * heads * max_len + h * max_len;
      const std::size_t goff = static_cast<std::size_t>(b) * (heads * dv) + h * dv;
      for (int t = 0; t < len; ++t) {
        const double s = sv[soff + t];
        if (s == 0.0) continue;
        const std::size_t voff = (static_cast<std::size_t>(b) * max_len + t) * (heads * dv) + h * dv;
        for (int e = 0; e < dv; ++e) o[goff + e] += s * vv[voff + e];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Populates grads of every parameter reachable from `loss`. The graph is the
// implicit parent DAG recorded during the forward pass; each node is visited
// exactly once, in reverse topological order.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        detail::shape_str(loss.shape()));
  using detail::TensorNode;
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is now topological (parents before children); traverse in reverse.
  if (!loss.requires_grad()) return;
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace savior
