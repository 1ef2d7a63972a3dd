#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "attnroute/array.hpp"
#include "attnroute/autodiff.hpp"
#include "attnroute/errors.hpp"

namespace attnroute {

using Rng = std::mt19937_64;
using GradMap = std::map<std::string, Array>;

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  }
};

/// Named learnable arrays plus their Adam moments. Iteration order is the
/// lexicographic order of names, which keeps serialization deterministic.
class ParamStore {
 public:
  struct Entry {
    ad::Tensor param;
    Array m;
    Array v;
    std::uint64_t step = 0;
  };

  ad::Tensor& add(const std::string& name, Array init) {
    if (entries_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    Entry e;
    e.m = Array(init.shape(), 0.0);
    e.v = Array(init.shape(), 0.0);
    e.param = ad::Tensor::parameter(std::move(init));
    return entries_.emplace(name, std::move(e)).first->second.param;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization, with fan_in the
  /// number of rows of a weight matrix or the width of a row vector.
  ad::Tensor& add_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                          std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Array a = Array::matrix(rows, cols);
    for (auto& x : a.storage()) x = dist(rng);
    return add(name, std::move(a));
  }

  bool contains(const std::string& name) const { return entries_.contains(name); }

  const ad::Tensor& operator[](const std::string& name) const { return entry(name).param; }

  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.param.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.param.zero_grad();
  }

  GradMap gradients() const {
    GradMap out;
    for (const auto& [name, e] : entries_) out.emplace(name, e.param.grad());
    return out;
  }

  bool all_finite() const {
    for (const auto& [_, e] : entries_) {
      for (double x : e.param.value().values()) {
        if (!std::isfinite(x)) return false;
      }
    }
    return true;
  }

  /// Deep copy with independent parameter leaves.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, e] : entries_) {
      Entry c;
      c.param = ad::Tensor::parameter(e.param.value());
      c.m = e.m;
      c.v = e.v;
      c.step = e.step;
      out.entries_.emplace(name, std::move(c));
    }
    return out;
  }

  /// Copies parameter values (not optimizer moments) from `other`.
  void load_values(const ParamStore& other) {
    for (auto& [name, e] : entries_) e.param.mutable_value() = other[name].value();
  }

 private:
  std::map<std::string, Entry> entries_;
};

/// Adam with bias correction. Every gradient name must exist in the store.
inline void adam_step(ParamStore& store, const GradMap& grads, const AdamConfig& cfg) {
  cfg.validate();
  for (const auto& [name, g] : grads) {
    if (!store.contains(name)) throw ContractError("adam: gradient for unknown parameter " + name);
    if (g.shape() != store[name].value().shape()) {
      throw ShapeError("adam: gradient shape " + shape_string(g.shape()) + " for parameter " +
                       name + " " + shape_string(store[name].value().shape()));
    }
  }
  for (const auto& [name, g] : grads) {
    auto& e = store.entry(name);
    e.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
    Array& p = e.param.mutable_value();
    for (std::size_t i = 0; i < p.size(); ++i) {
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

/// Max over coordinates of |analytic - central difference| / max(1, |central|).
inline double finite_diff_check(const std::function<double(const Array&)>& f, const Array& x,
                                const Array& analytic, double h = 1e-4) {
  require_same_shape(x, analytic, "finite_diff_check");
  Array probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

/// Gradient check of every parameter in `store` against a scalar loss built
/// by `loss` from the store's current values. Returns the worst relative
/// error over all parameters.
inline double check_store_gradients(ParamStore& store,
                                    const std::function<ad::Tensor()>& loss, double h = 1e-4) {
  store.zero_grad();
  ad::backward(loss());
  const GradMap grads = store.gradients();
  double worst = 0.0;
  for (auto& [name, e] : store.entries()) {
    Array& value = e.param.mutable_value();
    const Array original = value;
    auto eval = [&](const Array& probe) {
      value = probe;
      ad::NoGradGuard guard;
      const double r = loss().item();
      value = original;
      return r;
    };
    worst = std::max(worst, finite_diff_check(eval, original, grads.at(name), h));
  }
  return worst;
}

}  // namespace attnroute
