#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "attnroute/errors.hpp"
#include "attnroute/problems.hpp"

namespace attnroute {

inline constexpr std::size_t kHeldKarpMaxNodes = 22;
inline constexpr std::size_t kSubsetOracleMaxNodes = 10;

struct OracleResult {
  double cost = 0.0;
  std::vector<int> actions;
  std::uint64_t explored = 0;  // (subset, end-node) states evaluated
};

namespace detail {

inline std::vector<double> distance_matrix(const Instance& inst) {
  const std::size_t N = inst.num_nodes();
  std::vector<double> d(N * N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) d[i * N + j] = inst.dist(i, j);
  }
  return d;
}

/// Shortest paths from `start` that visit exactly the nodes of a subset of
/// `nodes`, ending at one of them. Indexed [mask * m + end].
struct SubsetPaths {
  std::size_t m = 0;
  std::vector<double> len;
  std::vector<std::uint8_t> parent;  // previous end index, or m for the first hop
  std::uint64_t explored = 0;

  double at(std::uint32_t mask, std::size_t j) const { return len[static_cast<std::size_t>(mask) * m + j]; }

  /// Node sequence of the path ending at `j` over `mask`.
  std::vector<int> path(std::uint32_t mask, std::size_t j, std::span<const std::size_t> nodes) const {
    std::vector<int> rev;
    while (true) {
      rev.push_back(static_cast<int>(nodes[j]));
      const std::size_t p = parent[static_cast<std::size_t>(mask) * m + j];
      if (p == m) break;
      mask ^= 1u << j;
      j = p;
    }
    return {rev.rbegin(), rev.rend()};
  }
};

inline SubsetPaths subset_paths(const Instance& inst, const std::vector<double>& D, std::size_t start,
                                std::span<const std::size_t> nodes) {
  const std::size_t N = inst.num_nodes();
  SubsetPaths t;
  t.m = nodes.size();
  const std::size_t m = t.m;
  const std::size_t subsets = std::size_t{1} << m;
  const double inf = std::numeric_limits<double>::infinity();
  t.len.assign(subsets * m, inf);
  t.parent.assign(subsets * m, static_cast<std::uint8_t>(m));
  for (std::size_t j = 0; j < m; ++j) t.len[(std::size_t{1} << j) * m + j] = D[start * N + nodes[j]];
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!(mask >> j & 1u)) continue;
      ++t.explored;
      const std::size_t prev = mask ^ (std::size_t{1} << j);
      if (prev == 0) continue;
      double best = inf;
      std::size_t arg = m;
      for (std::size_t k = 0; k < m; ++k) {
        if (!(prev >> k & 1u)) continue;
        const double c = t.len[prev * m + k] + D[nodes[k] * N + nodes[j]];
        if (c < best) {
          best = c;
          arg = k;
        }
      }
      t.len[mask * m + j] = best;
      t.parent[mask * m + j] = static_cast<std::uint8_t>(arg);
    }
  }
  return t;
}

inline void require_problem(const Instance& inst, std::initializer_list<Problem> allowed, const char* who) {
  for (Problem p : allowed) {
    if (inst.problem == p) return;
  }
  throw ContractError(std::string(who) + " does not handle " + to_string(inst.problem));
}

}  // namespace detail

/// Optimal TSP tour by dynamic programming over (visited subset, end node),
/// with node 0 fixed as the start.
inline OracleResult held_karp(const Instance& inst) {
  detail::require_problem(inst, {Problem::tsp}, "held_karp");
  if (inst.n == 0) throw ContractError("held_karp: empty instance");
  if (inst.n > kHeldKarpMaxNodes) {
    throw CapacityError("held_karp supports at most " + std::to_string(kHeldKarpMaxNodes) + " nodes, got " +
                        std::to_string(inst.n));
  }
  OracleResult r;
  if (inst.n == 1) {
    r.actions = {0};
    return r;
  }
  const auto D = detail::distance_matrix(inst);
  std::vector<std::size_t> nodes;
  for (std::size_t i = 1; i < inst.n; ++i) nodes.push_back(i);
  const auto t = detail::subset_paths(inst, D, 0, nodes);
  const std::uint32_t full = (1u << t.m) - 1u;
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t j = 0; j < t.m; ++j) {
    const double c = t.at(full, j) + D[nodes[j] * inst.n];
    if (c < best) {
      best = c;
      arg = j;
    }
  }
  r.actions = {0};
  for (int a : t.path(full, arg, nodes)) r.actions.push_back(a);
  r.cost = solution_cost(inst, r.actions);
  r.explored = t.explored;
  return r;
}

/// Maximum-prize OP route by dynamic programming over (visited subset, end
/// node). The cost is the negated prize, as everywhere else.
inline OracleResult brute_force_op(const Instance& inst) {
  detail::require_problem(inst, {Problem::op}, "brute_force_op");
  if (inst.n > kSubsetOracleMaxNodes) {
    throw CapacityError("brute_force_op supports at most " + std::to_string(kSubsetOracleMaxNodes) +
                        " customers, got " + std::to_string(inst.n));
  }
  const auto D = detail::distance_matrix(inst);
  const std::size_t N = inst.num_nodes();
  std::vector<std::size_t> nodes;
  for (std::size_t i = 1; i <= inst.n; ++i) nodes.push_back(i);
  const auto t = detail::subset_paths(inst, D, 0, nodes);
  const std::size_t subsets = std::size_t{1} << t.m;
  std::vector<double> prize(subsets, 0.0);
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    const std::size_t low = static_cast<std::size_t>(std::countr_zero(mask));
    prize[mask] = prize[mask & (mask - 1)] + inst.prize(nodes[low]);
  }
  double best = 0.0;
  std::uint32_t best_mask = 0;
  std::size_t best_end = 0;
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    if (!(prize[mask] > best)) continue;
    for (std::size_t j = 0; j < t.m; ++j) {
      if (!(mask >> j & 1u)) continue;
      if (t.at(static_cast<std::uint32_t>(mask), j) + D[nodes[j] * N] <= inst.max_length + kTolerance) {
        best = prize[mask];
        best_mask = static_cast<std::uint32_t>(mask);
        best_end = j;
        break;
      }
    }
  }
  OracleResult r;
  if (best_mask != 0) r.actions = t.path(best_mask, best_end, nodes);
  r.actions.push_back(0);
  r.cost = solution_cost(inst, r.actions);
  r.explored = t.explored;
  return r;
}

/// Optimal deterministic PCTSP continuation from `start` through a subset of
/// the unvisited customers, ending at the depot. Minimizes travel plus the
/// penalties of unvisited customers, subject to collecting `remaining_prize`
/// (expected prizes) unless every candidate is visited. The returned actions
/// exclude `start` and end with 0; the cost covers only the continuation.
inline OracleResult pctsp_plan(const Instance& inst, std::size_t start, double remaining_prize,
                               std::span<const std::uint8_t> visited) {
  detail::require_problem(inst, {Problem::pctsp, Problem::spctsp}, "pctsp_plan");
  if (visited.size() != inst.num_nodes()) throw ShapeError("pctsp_plan: visited flags must cover every node");
  std::vector<std::size_t> nodes;
  for (std::size_t i = 1; i <= inst.n; ++i) {
    if (!visited[i]) nodes.push_back(i);
  }
  if (nodes.size() > kSubsetOracleMaxNodes) {
    throw CapacityError("pctsp_plan supports at most " + std::to_string(kSubsetOracleMaxNodes) +
                        " open customers, got " + std::to_string(nodes.size()));
  }
  const auto D = detail::distance_matrix(inst);
  const std::size_t N = inst.num_nodes();
  const auto t = detail::subset_paths(inst, D, start, nodes);
  const std::size_t subsets = std::size_t{1} << t.m;
  std::vector<double> prize(subsets, 0.0), skipped(subsets, 0.0);
  double all_penalties = 0.0;
  for (std::size_t i : nodes) all_penalties += inst.penalty(i);
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    const std::size_t low = static_cast<std::size_t>(std::countr_zero(mask));
    prize[mask] = prize[mask & (mask - 1)] + inst.prize(nodes[low]);
    skipped[mask] = skipped[mask & (mask - 1)] + inst.penalty(nodes[low]);
  }
  const std::size_t full = subsets - 1;
  auto feasible = [&](std::size_t mask) { return mask == full || prize[mask] >= remaining_prize - kTolerance; };

  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_mask = 0;
  std::size_t best_end = 0;
  if (feasible(0)) best = D[start * N] + all_penalties;
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    if (!feasible(mask)) continue;
    const double penalty = all_penalties - skipped[mask];
    for (std::size_t j = 0; j < t.m; ++j) {
      if (!(mask >> j & 1u)) continue;
      const double c = t.at(static_cast<std::uint32_t>(mask), j) + D[nodes[j] * N] + penalty;
      if (c < best) {
        best = c;
        best_mask = static_cast<std::uint32_t>(mask);
        best_end = j;
      }
    }
  }
  OracleResult r;
  if (best_mask != 0) r.actions = t.path(best_mask, best_end, nodes);
  r.actions.push_back(0);
  r.cost = best;
  r.explored = t.explored;
  return r;
}

/// Optimal PCTSP solution (expected prizes for SPCTSP).
inline OracleResult brute_force_pctsp(const Instance& inst) {
  detail::require_problem(inst, {Problem::pctsp}, "brute_force_pctsp");
  if (inst.n > kSubsetOracleMaxNodes) {
    throw CapacityError("brute_force_pctsp supports at most " + std::to_string(kSubsetOracleMaxNodes) +
                        " customers, got " + std::to_string(inst.n));
  }
  const DecodeState s = initial_state(inst);
  OracleResult r = pctsp_plan(inst, 0, inst.min_prize, s.visited);
  r.cost = solution_cost(inst, r.actions);
  return r;
}

inline bool has_exact_oracle(Problem p) { return p == Problem::tsp || p == Problem::op || p == Problem::pctsp; }

inline OracleResult solve_exact(const Instance& inst) {
  switch (inst.problem) {
    case Problem::tsp: return held_karp(inst);
    case Problem::op: return brute_force_op(inst);
    case Problem::pctsp: return brute_force_pctsp(inst);
    default: throw ContractError("no exact oracle for " + to_string(inst.problem));
  }
}

/// Relative gap to the optimum. For OP (costs are negated prizes) the gap is
/// (optimal prize - achieved prize) / optimal prize, and 0 when both are 0.
inline double optimality_gap(double cost, double optimal, Problem problem = Problem::tsp) {
  if (problem == Problem::op) {
    const double opt_prize = -optimal, achieved = -cost;
    if (opt_prize == 0.0) {
      if (achieved == 0.0) return 0.0;
      throw ContractError("optimality_gap: optimal prize is 0 but achieved " + std::to_string(achieved));
    }
    if (opt_prize < 0.0) throw ContractError("optimality_gap: negative optimal prize");
    return (opt_prize - achieved) / opt_prize;
  }
  if (!(optimal > 0.0)) throw ContractError("optimality_gap: optimal cost must be positive");
  return (cost - optimal) / optimal;
}

}  // namespace attnroute
