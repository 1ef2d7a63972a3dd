#pragma once

#include <random>
#include <vector>

#include "attnroute/array.hpp"
#include "attnroute/params.hpp"
#include "attnroute/problems.hpp"

namespace attnroute::testing {

inline Array random_array(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array a = Array::matrix(rows, cols);
  for (auto& x : a.storage()) x = u(rng);
  return a;
}

inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(n);
  for (auto& x : w) x = u(rng);
  return w;
}

inline Instance square_tsp() {
  Instance inst;
  inst.problem = Problem::tsp;
  inst.n = 4;
  inst.coords = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  return inst;
}

/// Uniformly random feasible action at every step.
inline DecodeState random_rollout(const Instance& inst, Rng& rng) {
  DecodeState s = initial_state(inst);
  while (!s.done) {
    const auto mask = feasible_mask(inst, s);
    std::vector<int> options;
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (mask[j]) options.push_back(static_cast<int>(j));
    }
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    apply_action(inst, s, options[pick(rng)]);
  }
  return s;
}

/// Every complete feasible action sequence from the initial state.
inline void enumerate_sequences(const Instance& inst, const DecodeState& s, std::vector<std::vector<int>>& out) {
  if (s.done) {
    out.push_back(s.sequence);
    return;
  }
  const auto mask = feasible_mask(inst, s);
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (!mask[j]) continue;
    DecodeState next = s;
    apply_action(inst, next, static_cast<int>(j));
    enumerate_sequences(inst, next, out);
  }
}

inline std::vector<std::vector<int>> all_sequences(const Instance& inst) {
  std::vector<std::vector<int>> out;
  enumerate_sequences(inst, initial_state(inst), out);
  return out;
}

/// Copy of `inst` with customers reordered: new customer k is old customer
/// perm[k] (0-based over customers; the depot stays first).
inline Instance permute_customers(const Instance& inst, const std::vector<std::size_t>& perm) {
  Instance out = inst;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.coords[k] = inst.coords[perm[k]];
    if (!inst.demands.empty()) out.demands[k] = inst.demands[perm[k]];
    if (!inst.prizes.empty()) out.prizes[k] = inst.prizes[perm[k]];
    if (!inst.penalties.empty()) out.penalties[k] = inst.penalties[perm[k]];
    if (!inst.real_prizes.empty()) out.real_prizes[k] = inst.real_prizes[perm[k]];
  }
  return out;
}

}  // namespace attnroute::testing
