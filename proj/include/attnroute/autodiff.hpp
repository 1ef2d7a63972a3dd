#pragma once

// Reverse-mode automatic differentiation over dense 2-D arrays.
//
// Every op returns a Tensor that owns its value and, when gradients are being
// recorded, a closure that pushes its output gradient into its parents. The
// graph is freed when the last Tensor handle referencing it goes away.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "attnroute/array.hpp"
#include "attnroute/errors.hpp"

namespace attnroute::ad {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

struct Node {
  Array value;
  Array grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";
  bool requires_grad = false;

  Array& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) {
      grad = Array(value.shape(), 0.0);
    }
    return grad;
  }
  bool is_leaf() const { return parents.empty(); }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Array value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->op = "constant";
    return Tensor(std::move(node));
  }

  /// Leaf that accumulates a gradient during backward.
  static Tensor parameter(Array value) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->op = "parameter";
    node->requires_grad = true;
    return Tensor(std::move(node));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  const Array& grad() const { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const {
    if (node_->value.size() != 1) throw ContractError("item() on non-scalar tensor");
    return node_->value[0];
  }
  void zero_grad() { node_->grad = Array(node_->value.shape(), 0.0); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Array, const char*, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

/// Wraps an op output. Parents and the backward closure are only kept when
/// recording is enabled and some parent needs a gradient.
inline Tensor make_result(Array value, const char* op, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any && grad_enabled()) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.shared());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

/// Runs reverse-mode accumulation from a scalar root. Intermediate gradients
/// are reset first so repeated calls give the same leaf increments; leaf
/// gradients accumulate and must be zeroed by the caller.
inline void backward(const Tensor& root) {
  if (root.value().size() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        shape_string(root.value().shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* node : order) {
    if (!node->is_leaf()) node->grad = Array(node->value.shape(), 0.0);
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward) node->backward(*node);
  }
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline MapMat as_mat(Array& a) {
  return MapMat(a.data(), static_cast<Eigen::Index>(a.rows()),
                static_cast<Eigen::Index>(a.cols()));
}
inline CMapMat as_mat(const Array& a) {
  return CMapMat(a.data(), static_cast<Eigen::Index>(a.rows()),
                 static_cast<Eigen::Index>(a.cols()));
}

inline Array* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()));
  }
  Array out = Array::matrix(av.rows(), bv.cols());
  if (out.size() > 0) {
    if (av.cols() == 0) {
      out.fill(0.0);
    } else {
      detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
    }
  }
  return make_result(std::move(out), "matmul", {a, b}, [](detail::Node& self) {
    const Array& g = self.grad;
    const Array& A = self.parents[0]->value;
    const Array& B = self.parents[1]->value;
    if (Array* ga = detail::grad_of(self, 0)) {
      detail::as_mat(*ga).noalias() += detail::as_mat(g) * detail::as_mat(B).transpose();
    }
    if (Array* gb = detail::grad_of(self, 1)) {
      detail::as_mat(*gb).noalias() += detail::as_mat(A).transpose() * detail::as_mat(g);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a.value(), b.value(), "add");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), "add", {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Array* g = detail::grad_of(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), "sub", {a, b}, [](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Array* g = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

/// x[m x n] + bias[1 x n], bias broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const Array& xv = x.value();
  const Array& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw ShapeError("add_bias: " + shape_string(xv.shape()) + " + " +
                     shape_string(bv.shape()));
  }
  Array out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  }
  return make_result(std::move(out), "add_bias", {x, bias}, [n](detail::Node& self) {
    const Array& g = self.grad;
    if (Array* gx = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (Array* gb = detail::grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % n] += g[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  Array out = x.value();
  for (auto& v : out.storage()) v *= s;
  return make_result(std::move(out), "scale", {x}, [s](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

inline Tensor relu(const Tensor& x) {
  Array out = x.value();
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), "relu", {x}, [](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      const Array& in = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (in[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  });
}

inline Tensor tanh(const Tensor& x) {
  Array out = x.value();
  for (auto& v : out.storage()) v = std::tanh(v);
  return make_result(std::move(out), "tanh", {x}, [](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double t = self.value[i];
        (*g)[i] += self.grad[i] * (1.0 - t * t);
      }
    }
  });
}

inline Tensor exp(const Tensor& x) {
  Array out = x.value();
  for (auto& v : out.storage()) v = std::exp(v);
  return make_result(std::move(out), "exp", {x}, [](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * self.value[i];
    }
  });
}

inline Tensor log(const Tensor& x) {
  Array out = x.value();
  for (auto& v : out.storage()) v = std::log(v);
  return make_result(std::move(out), "log", {x}, [](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      const Array& in = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / in[i];
    }
  });
}

inline Tensor square(const Tensor& x) {
  Array out = x.value();
  for (auto& v : out.storage()) v = v * v;
  return make_result(std::move(out), "square", {x}, [](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      const Array& in = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += 2.0 * in[i] * self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_result(Array({1, 1}, s), "sum", {x}, [](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      const double up = self.grad[0];
      for (auto& v : g->storage()) v += up;
    }
  });
}

inline Tensor mean(const Tensor& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

/// sum_i weights[i] * x[i], weights held constant.
inline Tensor weighted_sum(const Tensor& x, std::vector<double> weights) {
  if (weights.size() != x.value().size()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) +
                     " weights for " + shape_string(x.value().shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] != 0.0) s += weights[i] * x.value()[i];
  }
  return make_result(Array({1, 1}, s), "weighted_sum", {x},
                     [w = std::move(weights)](detail::Node& self) {
                       if (Array* g = detail::grad_of(self, 0)) {
                         const double up = self.grad[0];
                         for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += up * w[i];
                       }
                     });
}

/// Mean of consecutive row blocks: x[(groups*k) x d] -> [groups x d].
inline Tensor segment_mean(const Tensor& x, std::size_t groups) {
  const Array& xv = x.value();
  if (groups == 0 || xv.rows() % groups != 0) {
    throw ShapeError("segment_mean: " + std::to_string(xv.rows()) +
                     " rows not divisible into " + std::to_string(groups) + " groups");
  }
  const std::size_t k = xv.rows() / groups;
  const std::size_t d = xv.cols();
  Array out = Array::matrix(groups, d);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < k; ++r) s += xv[(g * k + r) * d + c];
      out[g * d + c] = s / static_cast<double>(k);
    }
  }
  return make_result(std::move(out), "segment_mean", {x}, [k, d](detail::Node& self) {
    if (Array* gx = detail::grad_of(self, 0)) {
      const double inv = 1.0 / static_cast<double>(k);
      const std::size_t groups = self.value.rows();
      for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t r = 0; r < k; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            (*gx)[(g * k + r) * d + c] += self.grad[g * d + c] * inv;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    offsets.push_back(total);
    total += p.cols();
  }
  Array out = Array::matrix(rows, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& v = parts[k].value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * w, w, out.data() + r * total + offsets[k]);
    }
  }
  return make_result(std::move(out), "concat_cols", parts,
                     [offsets, total](detail::Node& self) {
                       const std::size_t rows = self.value.rows();
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Array* g = detail::grad_of(self, k);
                         if (!g) continue;
                         const std::size_t w = g->cols();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < w; ++c) {
                             (*g)[r * w + c] += self.grad[r * total + offsets[k] + c];
                           }
                         }
                       }
                     });
}

inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> index) {
  const Array& xv = x.value();
  const std::size_t d = xv.cols();
  Array out = Array::matrix(index.size(), d);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.data() + index[r] * d, d, out.data() + r * d);
  }
  return make_result(std::move(out), "gather_rows", {x},
                     [idx = std::move(index), d](detail::Node& self) {
                       if (Array* g = detail::grad_of(self, 0)) {
                         for (std::size_t r = 0; r < idx.size(); ++r) {
                           for (std::size_t c = 0; c < d; ++c) {
                             (*g)[idx[r] * d + c] += self.grad[r * d + c];
                           }
                         }
                       }
                     });
}

inline Tensor repeat_rows(const Tensor& x, std::size_t times) {
  const Array& xv = x.value();
  if (xv.rows() != 1) throw ShapeError("repeat_rows expects a single row");
  std::vector<std::size_t> index(times, 0);
  return gather_rows(x, std::move(index));
}

/// Per group g, stacks a's block of rows above b's block of rows.
inline Tensor interleave_blocks(const Tensor& a, const Tensor& b, std::size_t groups) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.cols() != bv.cols() || groups == 0 || av.rows() % groups || bv.rows() % groups) {
    throw ShapeError("interleave_blocks: incompatible shapes");
  }
  const std::size_t ka = av.rows() / groups;
  const std::size_t kb = bv.rows() / groups;
  const std::size_t d = av.cols();
  Array out = Array::matrix(av.rows() + bv.rows(), d);
  for (std::size_t g = 0; g < groups; ++g) {
    double* dst = out.data() + g * (ka + kb) * d;
    std::copy_n(av.data() + g * ka * d, ka * d, dst);
    std::copy_n(bv.data() + g * kb * d, kb * d, dst + ka * d);
  }
  return make_result(std::move(out), "interleave_blocks", {a, b},
                     [ka, kb, d, groups](detail::Node& self) {
                       for (std::size_t g = 0; g < groups; ++g) {
                         const double* src = self.grad.data() + g * (ka + kb) * d;
                         if (Array* ga = detail::grad_of(self, 0)) {
                           for (std::size_t i = 0; i < ka * d; ++i) (*ga)[g * ka * d + i] += src[i];
                         }
                         if (Array* gb = detail::grad_of(self, 1)) {
                           for (std::size_t i = 0; i < kb * d; ++i) {
                             (*gb)[g * kb * d + i] += src[ka * d + i];
                           }
                         }
                       }
                     });
}

/// out[r] = x[r, index[r]]; a negative index yields 0 and no gradient.
inline Tensor pick(const Tensor& x, std::vector<long> index) {
  const Array& xv = x.value();
  if (index.size() != xv.rows()) throw ShapeError("pick: one index per row required");
  const std::size_t n = xv.cols();
  Array out = Array::matrix(xv.rows(), 1);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0) continue;
    if (static_cast<std::size_t>(index[r]) >= n) throw ShapeError("pick: index out of range");
    out[r] = xv[r * n + static_cast<std::size_t>(index[r])];
  }
  return make_result(std::move(out), "pick", {x}, [idx = std::move(index), n](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= 0) (*g)[r * n + static_cast<std::size_t>(idx[r])] += self.grad[r];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family

using Mask = std::vector<std::uint8_t>;  // 1 = admissible

namespace detail {

inline bool admissible(const Array& x, const Mask* mask, std::size_t i) {
  if (mask && !(*mask)[i]) return false;
  return x[i] != kNegInf;
}

inline void check_mask(const Array& x, const Mask* mask) {
  if (mask && mask->size() != x.size()) {
    throw ShapeError("mask has " + std::to_string(mask->size()) + " entries for " +
                     shape_string(x.shape()));
  }
}

}  // namespace detail

/// Row-wise softmax over the last axis. Entries that are masked out or equal
/// to -inf receive probability exactly 0.
inline Tensor softmax_last(const Tensor& x, const Mask* mask = nullptr) {
  const Array& xv = x.value();
  detail::check_mask(xv, mask);
  const std::size_t n = xv.cols();
  Array out(xv.shape(), 0.0);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = kNegInf;
    for (std::size_t c = 0; c < n; ++c) {
      if (detail::admissible(xv, mask, r * n + c)) mx = std::max(mx, xv[r * n + c]);
    }
    if (mx == kNegInf) throw InvalidMaskError("softmax row " + std::to_string(r) + " fully masked");
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (detail::admissible(xv, mask, r * n + c)) {
        out[r * n + c] = std::exp(xv[r * n + c] - mx);
        z += out[r * n + c];
      }
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return make_result(std::move(out), "softmax_last", {x}, [n](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      const Array& p = self.value;
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += p[r * n + c] * self.grad[r * n + c];
        for (std::size_t c = 0; c < n; ++c) {
          const double pc = p[r * n + c];
          if (pc != 0.0) (*g)[r * n + c] += pc * (self.grad[r * n + c] - dot);
        }
      }
    }
  });
}

/// Row-wise log-softmax; excluded entries are -inf and pass no gradient.
inline Tensor log_softmax_last(const Tensor& x, const Mask* mask = nullptr) {
  const Array& xv = x.value();
  detail::check_mask(xv, mask);
  const std::size_t n = xv.cols();
  Array out(xv.shape(), kNegInf);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = kNegInf;
    for (std::size_t c = 0; c < n; ++c) {
      if (detail::admissible(xv, mask, r * n + c)) mx = std::max(mx, xv[r * n + c]);
    }
    if (mx == kNegInf) throw InvalidMaskError("log-softmax row " + std::to_string(r) + " fully masked");
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (detail::admissible(xv, mask, r * n + c)) z += std::exp(xv[r * n + c] - mx);
    }
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) {
      if (detail::admissible(xv, mask, r * n + c)) out[r * n + c] = xv[r * n + c] - lse;
    }
  }
  return make_result(std::move(out), "log_softmax_last", {x}, [n](detail::Node& self) {
    if (Array* g = detail::grad_of(self, 0)) {
      const Array& lp = self.value;
      for (std::size_t r = 0; r < lp.rows(); ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          if (lp[r * n + c] != kNegInf) total += self.grad[r * n + c];
        }
        for (std::size_t c = 0; c < n; ++c) {
          const double v = lp[r * n + c];
          if (v != kNegInf) (*g)[r * n + c] += self.grad[r * n + c] - std::exp(v) * total;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class Mode { train, eval };

struct BatchNormStats {
  Array running_mean;
  Array running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormStats fresh(std::size_t dim) {
    return {Array::matrix(1, dim, 0.0), Array::matrix(1, dim, 1.0)};
  }
  friend bool operator==(const BatchNormStats&, const BatchNormStats&) = default;
};

/// Per-feature normalization over all rows of x followed by w (.) x + b.
/// Train mode normalizes with the batch statistics and folds them into the
/// running estimates; eval mode uses the running estimates.
inline Tensor batchnorm(const Tensor& x, const Tensor& w, const Tensor& b, BatchNormStats& stats,
                        Mode mode) {
  const Array& xv = x.value();
  const std::size_t m = xv.rows();
  const std::size_t d = xv.cols();
  if (m == 0) throw ShapeError("batchnorm on empty batch");
  if (w.value().size() != d || b.value().size() != d || stats.running_mean.size() != d) {
    throw ShapeError("batchnorm: feature dimension mismatch");
  }
  std::vector<double> mu(d, 0.0), invstd(d, 0.0);
  if (mode == Mode::train) {
    std::vector<double> var(d, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) mu[c] += xv[r * d + c];
    for (auto& v : mu) v /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double t = xv[r * d + c] - mu[c];
        var[c] += t * t;
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      const double biased = var[c] / static_cast<double>(m);
      invstd[c] = 1.0 / std::sqrt(biased + stats.eps);
      const double unbiased = m > 1 ? var[c] / static_cast<double>(m - 1) : biased;
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mu[c];
      stats.running_var[c] = (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < d; ++c) {
      mu[c] = stats.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(stats.running_var[c] + stats.eps);
    }
  }
  Array xhat = Array::matrix(m, d);
  Array out = Array::matrix(m, d);
  const Array& wv = w.value();
  const Array& bv = b.value();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xv[r * d + c] - mu[c]) * invstd[c];
      xhat[r * d + c] = h;
      out[r * d + c] = wv[c] * h + bv[c];
    }
  }
  const bool train = mode == Mode::train;
  return make_result(
      std::move(out), "batchnorm", {x, w, b},
      [xhat = std::move(xhat), invstd = std::move(invstd), m, d, train](detail::Node& self) {
        const Array& g = self.grad;
        const Array& wv = self.parents[1]->value;
        if (Array* gw = detail::grad_of(self, 1)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < d; ++c) (*gw)[c] += g[r * d + c] * xhat[r * d + c];
        }
        if (Array* gb = detail::grad_of(self, 2)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < d; ++c) (*gb)[c] += g[r * d + c];
        }
        if (Array* gx = detail::grad_of(self, 0)) {
          if (!train) {
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < d; ++c)
                (*gx)[r * d + c] += g[r * d + c] * wv[c] * invstd[c];
            return;
          }
          std::vector<double> sum_dh(d, 0.0), sum_dh_h(d, 0.0);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = g[r * d + c] * wv[c];
              sum_dh[c] += dh;
              sum_dh_h[c] += dh * xhat[r * d + c];
            }
          }
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = g[r * d + c] * wv[c];
              (*gx)[r * d + c] +=
                  invstd[c] * (dh - inv_m * sum_dh[c] - xhat[r * d + c] * inv_m * sum_dh_h[c]);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Attention kernels

/// Batched multi-head scaled dot-product attention.
///
/// q is [groups*nq x D], k is [groups*nk x D], v is [groups*nk x Dv]. Queries
/// of group g attend only to keys of group g. Head h uses columns
/// [h*D/heads, (h+1)*D/heads) of q/k and the matching slice of v. `mask`, when
/// given, holds groups*nq*nk flags (1 = may attend). The per-head readouts are
/// returned concatenated: [groups*nq x Dv]. If `weights` is non-null it
/// receives the attention weights laid out as [group][head][query][key].
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   std::size_t heads, std::size_t nq, std::size_t nk,
                                   const Mask* mask = nullptr,
                                   std::vector<double>* weights = nullptr) {
  const Array& Q = q.value();
  const Array& K = k.value();
  const Array& V = v.value();
  const std::size_t D = Q.cols();
  const std::size_t Dv = V.cols();
  if (heads == 0 || D % heads || Dv % heads || K.cols() != D || nq == 0 || nk == 0 ||
      Q.rows() % nq || K.rows() != V.rows() || K.rows() % nk ||
      Q.rows() / nq != K.rows() / nk) {
    throw ShapeError("multi_head_attention: inconsistent shapes q" + shape_string(Q.shape()) +
                     " k" + shape_string(K.shape()) + " v" + shape_string(V.shape()));
  }
  const std::size_t groups = Q.rows() / nq;
  if (mask && mask->size() != groups * nq * nk) throw ShapeError("attention mask size mismatch");
  const std::size_t dk = D / heads;
  const std::size_t dv = Dv / heads;
  const double norm = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<double> attn(groups * heads * nq * nk, 0.0);
  Array out = Array::matrix(groups * nq, Dv);
  std::vector<double> u(nk);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < nq; ++i) {
        const double* qi = Q.data() + (g * nq + i) * D + h * dk;
        const std::uint8_t* mrow = mask ? mask->data() + (g * nq + i) * nk : nullptr;
        double mx = kNegInf;
        for (std::size_t j = 0; j < nk; ++j) {
          if (mrow && !mrow[j]) {
            u[j] = kNegInf;
            continue;
          }
          const double* kj = K.data() + (g * nk + j) * D + h * dk;
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          u[j] = s * norm;
          mx = std::max(mx, u[j]);
        }
        if (mx == kNegInf) {
          throw InvalidMaskError("attention query " + std::to_string(i) + " of group " +
                                 std::to_string(g) + " has no admissible key");
        }
        double* a = attn.data() + ((g * heads + h) * nq + i) * nk;
        double z = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          a[j] = u[j] == kNegInf ? 0.0 : std::exp(u[j] - mx);
          z += a[j];
        }
        double* oi = out.data() + (g * nq + i) * Dv + h * dv;
        for (std::size_t j = 0; j < nk; ++j) {
          a[j] /= z;
          if (a[j] == 0.0) continue;
          const double* vj = V.data() + (g * nk + j) * Dv + h * dv;
          for (std::size_t c = 0; c < dv; ++c) oi[c] += a[j] * vj[c];
        }
      }
    }
  }
  if (weights) *weights = attn;
  return make_result(
      std::move(out), "multi_head_attention", {q, k, v},
      [attn = std::move(attn), groups, heads, nq, nk, D, Dv, dk, dv, norm](detail::Node& self) {
        const Array& Q = self.parents[0]->value;
        const Array& K = self.parents[1]->value;
        const Array& V = self.parents[2]->value;
        Array* gq = detail::grad_of(self, 0);
        Array* gk = detail::grad_of(self, 1);
        Array* gv = detail::grad_of(self, 2);
        std::vector<double> da(nk), ds(nk);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < nq; ++i) {
              const double* a = attn.data() + ((g * heads + h) * nq + i) * nk;
              const double* go = self.grad.data() + (g * nq + i) * Dv + h * dv;
              double dot = 0.0;
              for (std::size_t j = 0; j < nk; ++j) {
                if (a[j] == 0.0) {
                  da[j] = 0.0;
                  continue;
                }
                const double* vj = V.data() + (g * nk + j) * Dv + h * dv;
                double s = 0.0;
                for (std::size_t c = 0; c < dv; ++c) s += go[c] * vj[c];
                da[j] = s;
                dot += a[j] * s;
                if (gv) {
                  double* gvj = gv->data() + (g * nk + j) * Dv + h * dv;
                  for (std::size_t c = 0; c < dv; ++c) gvj[c] += a[j] * go[c];
                }
              }
              for (std::size_t j = 0; j < nk; ++j) ds[j] = a[j] * (da[j] - dot) * norm;
              const double* qi = Q.data() + (g * nq + i) * D + h * dk;
              double* gqi = gq ? gq->data() + (g * nq + i) * D + h * dk : nullptr;
              for (std::size_t j = 0; j < nk; ++j) {
                if (ds[j] == 0.0) continue;
                const double* kj = K.data() + (g * nk + j) * D + h * dk;
                if (gqi) {
                  for (std::size_t c = 0; c < dk; ++c) gqi[c] += ds[j] * kj[c];
                }
                if (gk) {
                  double* gkj = gk->data() + (g * nk + j) * D + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) gkj[c] += ds[j] * qi[c];
                }
              }
            }
          }
        }
      });
}

/// Scaled compatibilities q.k/sqrt(D) within groups: q [groups*nq x D],
/// k [groups*nk x D] -> [groups*nq x nk].
inline Tensor compatibility(const Tensor& q, const Tensor& k, std::size_t nq, std::size_t nk) {
  const Array& Q = q.value();
  const Array& K = k.value();
  const std::size_t D = Q.cols();
  if (K.cols() != D || nq == 0 || nk == 0 || Q.rows() % nq || K.rows() % nk ||
      Q.rows() / nq != K.rows() / nk) {
    throw ShapeError("compatibility: inconsistent shapes");
  }
  const std::size_t groups = Q.rows() / nq;
  const double norm = 1.0 / std::sqrt(static_cast<double>(D));
  Array out = Array::matrix(groups * nq, nk);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < nq; ++i) {
      const double* qi = Q.data() + (g * nq + i) * D;
      for (std::size_t j = 0; j < nk; ++j) {
        const double* kj = K.data() + (g * nk + j) * D;
        double s = 0.0;
        for (std::size_t c = 0; c < D; ++c) s += qi[c] * kj[c];
        out[(g * nq + i) * nk + j] = s * norm;
      }
    }
  }
  return make_result(std::move(out), "compatibility", {q, k},
                     [groups, nq, nk, D, norm](detail::Node& self) {
                       const Array& Q = self.parents[0]->value;
                       const Array& K = self.parents[1]->value;
                       Array* gq = detail::grad_of(self, 0);
                       Array* gk = detail::grad_of(self, 1);
                       for (std::size_t g = 0; g < groups; ++g) {
                         for (std::size_t i = 0; i < nq; ++i) {
                           const double* qi = Q.data() + (g * nq + i) * D;
                           for (std::size_t j = 0; j < nk; ++j) {
                             const double up = self.grad[(g * nq + i) * nk + j] * norm;
                             if (up == 0.0) continue;
                             const double* kj = K.data() + (g * nk + j) * D;
                             if (gq) {
                               double* d = gq->data() + (g * nq + i) * D;
                               for (std::size_t c = 0; c < D; ++c) d[c] += up * kj[c];
                             }
                             if (gk) {
                               double* d = gk->data() + (g * nk + j) * D;
                               for (std::size_t c = 0; c < D; ++c) d[c] += up * qi[c];
                             }
                           }
                         }
                       }
                     });
}

}  // namespace attnroute::ad
