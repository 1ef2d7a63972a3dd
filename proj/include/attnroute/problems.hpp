#pragma once

// Instances, rollout state machines, masks and objectives for the six
// routing problems. Node indexing: TSP uses 0..n-1 for its n nodes; every
// other problem uses 0 for the depot and 1..n for customers.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnroute/errors.hpp"

namespace attnroute {

enum class Problem { tsp, cvrp, sdvrp, op, pctsp, spctsp };
enum class PrizeMode { constant, uniform, distance };

inline constexpr std::array<Problem, 6> kAllProblems = {
    Problem::tsp, Problem::cvrp, Problem::sdvrp, Problem::op, Problem::pctsp, Problem::spctsp};

inline std::string to_string(Problem p) {
  switch (p) {
    case Problem::tsp: return "tsp";
    case Problem::cvrp: return "cvrp";
    case Problem::sdvrp: return "sdvrp";
    case Problem::op: return "op";
    case Problem::pctsp: return "pctsp";
    case Problem::spctsp: return "spctsp";
  }
  throw ContractError("unknown problem tag");
}

inline Problem parse_problem(std::string_view s) {
  for (Problem p : kAllProblems) {
    if (to_string(p) == s) return p;
  }
  throw ContractError("unknown problem: " + std::string(s));
}

inline std::string to_string(PrizeMode m) {
  switch (m) {
    case PrizeMode::constant: return "const";
    case PrizeMode::uniform: return "unif";
    case PrizeMode::distance: return "dist";
  }
  throw ContractError("unknown prize mode");
}

inline PrizeMode parse_prize_mode(std::string_view s) {
  if (s == "const") return PrizeMode::constant;
  if (s == "unif") return PrizeMode::uniform;
  if (s == "dist") return PrizeMode::distance;
  throw ContractError("unknown prize mode: " + std::string(s));
}

inline bool has_depot(Problem p) { return p != Problem::tsp; }
inline bool is_vrp(Problem p) { return p == Problem::cvrp || p == Problem::sdvrp; }
inline bool is_pctsp(Problem p) { return p == Problem::pctsp || p == Problem::spctsp; }

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

// Capacity comparisons and constraint checks tolerate this much rounding.
inline constexpr double kTolerance = 1e-9;

struct Instance {
  Problem problem = Problem::tsp;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<Point> coords;           // the n customers (TSP: all nodes)
  std::optional<Point> depot;
  std::vector<int> demands;            // raw demands in 1..9 (VRP)
  double capacity = 0.0;               // D^n (VRP)
  std::vector<double> prizes;          // normalized prizes (OP, PCTSP, SPCTSP)
  std::optional<PrizeMode> prize_mode;  // OP only
  std::vector<double> penalties;       // normalized penalties (PCTSP, SPCTSP)
  double max_length = 0.0;             // T^n (OP)
  double min_prize = 0.0;              // 1 for PCTSP/SPCTSP
  std::vector<double> real_prizes;     // hidden realized prizes (SPCTSP)

  std::size_t num_nodes() const { return has_depot(problem) ? n + 1 : n; }

  Point node(std::size_t i) const {
    if (!has_depot(problem)) return coords.at(i);
    return i == 0 ? *depot : coords.at(i - 1);
  }

  double dist(std::size_t i, std::size_t j) const { return distance(node(i), node(j)); }

  /// Normalized demand of customer node i (1..n).
  double demand(std::size_t i) const {
    return static_cast<double>(demands.at(i - 1)) / capacity;
  }
  /// Normalized expected prize of customer node i (1..n).
  double prize(std::size_t i) const { return prizes.at(i - 1); }
  double penalty(std::size_t i) const { return penalties.at(i - 1); }

  friend bool operator==(const Instance&, const Instance&) = default;
};

// ---------------------------------------------------------------------------
// Size-dependent constants. Anchored at n = 20, 50, 100 and extended
// piecewise-linearly (with linear extrapolation outside [20, 100]).

namespace detail {
inline double piecewise_linear(std::size_t n, double at20, double at50, double at100) {
  const double x = static_cast<double>(n);
  if (x <= 50.0) return at20 + (x - 20.0) * (at50 - at20) / 30.0;
  return at50 + (x - 50.0) * (at100 - at50) / 50.0;
}
}  // namespace detail

/// D^n: 30, 40, 50 for n = 20, 50, 100.
inline double vrp_capacity(std::size_t n) { return detail::piecewise_linear(n, 30.0, 40.0, 50.0); }
/// T^n: 2, 3, 4 for n = 20, 50, 100.
inline double op_max_length(std::size_t n) { return detail::piecewise_linear(n, 2.0, 3.0, 4.0); }
/// K^n: 2, 3, 4 for n = 20, 50, 100.
inline double pctsp_penalty_scale(std::size_t n) {
  return detail::piecewise_linear(n, 2.0, 3.0, 4.0);
}

/// Samples one instance. Draw order: depot, customer coordinates, then the
/// problem attributes, so a seed pins the instance completely.
inline Instance generate_instance(Problem problem, std::size_t n, PrizeMode prize_mode,
                                  std::mt19937_64& rng) {
  if (n == 0) throw ContractError("generate_instance: n must be positive");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Instance inst;
  inst.problem = problem;
  inst.n = n;
  if (has_depot(problem)) inst.depot = Point{unit(rng), unit(rng)};
  inst.coords.resize(n);
  for (auto& p : inst.coords) p = Point{unit(rng), unit(rng)};

  switch (problem) {
    case Problem::tsp:
      break;
    case Problem::cvrp:
    case Problem::sdvrp: {
      std::uniform_int_distribution<int> demand(1, 9);
      inst.demands.resize(n);
      for (auto& d : inst.demands) d = demand(rng);
      inst.capacity = vrp_capacity(n);
      break;
    }
    case Problem::op: {
      inst.prize_mode = prize_mode;
      inst.max_length = op_max_length(n);
      inst.prizes.resize(n);
      if (prize_mode == PrizeMode::constant) {
        std::fill(inst.prizes.begin(), inst.prizes.end(), 1.0);
      } else if (prize_mode == PrizeMode::uniform) {
        std::uniform_int_distribution<int> prize(1, 100);
        for (auto& p : inst.prizes) p = prize(rng) / 100.0;
      } else {
        double far = 0.0;
        for (const auto& c : inst.coords) far = std::max(far, distance(*inst.depot, c));
        for (std::size_t i = 0; i < n; ++i) {
          const double d = distance(*inst.depot, inst.coords[i]);
          const double raw = 1.0 + std::floor(99.0 * (far > 0.0 ? d / far : 0.0));
          inst.prizes[i] = raw / 100.0;
        }
      }
      break;
    }
    case Problem::pctsp:
    case Problem::spctsp: {
      const double scale = 4.0 / static_cast<double>(n);
      inst.prizes.resize(n);
      for (auto& p : inst.prizes) p = unit(rng) * scale;
      const double penalty_max = 3.0 * pctsp_penalty_scale(n) / static_cast<double>(n);
      inst.penalties.resize(n);
      for (auto& b : inst.penalties) b = unit(rng) * penalty_max;
      inst.min_prize = 1.0;
      if (problem == Problem::spctsp) {
        inst.real_prizes.resize(n);
        for (std::size_t i = 0; i < n; ++i) inst.real_prizes[i] = unit(rng) * 2.0 * inst.prizes[i];
      }
      break;
    }
  }
  return inst;
}

/// Mixes (seed, index) into a well-spread 64-bit seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Instance fully determined by `seed`, which is recorded on the instance.
inline Instance generate_instance(Problem problem, std::size_t n, PrizeMode prize_mode,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance inst = generate_instance(problem, n, prize_mode, rng);
  inst.seed = seed;
  return inst;
}

inline std::vector<Instance> generate_dataset(Problem problem, std::size_t n, std::size_t count,
                                              PrizeMode prize_mode, std::uint64_t seed) {
  std::vector<Instance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_instance(problem, n, prize_mode, derive_seed(seed, i)));
  }
  return out;
}

/// Realized prize of customer `node`, drawn when the instance was generated
/// and fixed from then on.
inline double reveal_prize(const Instance& inst, std::size_t node) {
  if (inst.problem != Problem::spctsp) throw ContractError("reveal_prize needs an SPCTSP instance");
  if (node == 0 || node > inst.n) throw ContractError("reveal_prize: not a customer node");
  return inst.real_prizes[node - 1];
}

// ---------------------------------------------------------------------------
// Rollout state

struct DecodeState {
  std::size_t step = 0;                    // actions taken so far
  std::vector<int> sequence;
  std::vector<std::uint8_t> visited;       // per node index
  std::size_t customers_visited = 0;
  int first = -1;
  int last = -1;                           // depot (0) before the first move
  double remaining_capacity = 1.0;         // VRP
  std::vector<double> remaining_demand;    // VRP, per node index (depot 0)
  double remaining_length = 0.0;           // OP
  double remaining_prize = 0.0;            // PCTSP / SPCTSP
  double length = 0.0;                     // distance travelled so far
  std::vector<std::pair<int, double>> revealed;  // SPCTSP (node, realized prize)
  bool done = false;
};

inline DecodeState initial_state(const Instance& inst) {
  DecodeState s;
  s.visited.assign(inst.num_nodes(), 0);
  if (has_depot(inst.problem)) s.last = 0;
  if (is_vrp(inst.problem)) {
    s.remaining_demand.assign(inst.num_nodes(), 0.0);
    for (std::size_t i = 1; i <= inst.n; ++i) s.remaining_demand[i] = inst.demand(i);
    s.remaining_capacity = 1.0;
  }
  if (inst.problem == Problem::op) s.remaining_length = inst.max_length;
  if (is_pctsp(inst.problem)) s.remaining_prize = inst.min_prize;
  return s;
}

/// Upper bound on the number of decoding steps of any rollout.
inline std::size_t max_steps(const Instance& inst) {
  switch (inst.problem) {
    case Problem::tsp: return inst.n;
    case Problem::cvrp: return 2 * inst.n;
    case Problem::sdvrp: return 5 * inst.n + 1;
    default: return inst.n + 1;
  }
}

/// 1 where the node may be chosen next.
inline std::vector<std::uint8_t> feasible_mask(const Instance& inst, const DecodeState& s) {
  if (s.done) throw ContractError("feasible_mask on a terminal state");
  const std::size_t N = inst.num_nodes();
  std::vector<std::uint8_t> m(N, 0);
  switch (inst.problem) {
    case Problem::tsp:
      for (std::size_t j = 0; j < N; ++j) m[j] = !s.visited[j];
      break;
    case Problem::cvrp:
    case Problem::sdvrp: {
      for (std::size_t j = 1; j < N; ++j) {
        const double rem = s.remaining_demand[j];
        bool ok = rem > 0.0;
        if (inst.problem == Problem::cvrp) {
          ok = ok && rem <= s.remaining_capacity + kTolerance;
        } else {
          ok = ok && s.remaining_capacity > kTolerance;
        }
        m[j] = ok;
      }
      m[0] = !(s.step == 0 || s.last == 0);
      break;
    }
    case Problem::op: {
      m[0] = 1;
      for (std::size_t j = 1; j < N; ++j) {
        m[j] = !s.visited[j] &&
               !(inst.dist(static_cast<std::size_t>(s.last), j) + inst.dist(j, 0) > s.remaining_length);
      }
      break;
    }
    case Problem::pctsp:
    case Problem::spctsp: {
      for (std::size_t j = 1; j < N; ++j) m[j] = !s.visited[j];
      m[0] = !(s.remaining_prize > 0.0 && s.customers_visited < inst.n);
      break;
    }
  }
  return m;
}

inline void apply_action(const Instance& inst, DecodeState& s, int node) {
  if (s.done) throw ContractError("apply_action on a terminal state");
  if (node < 0 || static_cast<std::size_t>(node) >= inst.num_nodes()) {
    throw FeasibilityError("action " + std::to_string(node) + " is not a node");
  }
  const auto mask = feasible_mask(inst, s);
  if (!mask[static_cast<std::size_t>(node)]) {
    throw FeasibilityError("action " + std::to_string(node) + " is infeasible at step " +
                           std::to_string(s.step));
  }
  const auto j = static_cast<std::size_t>(node);
  if (s.last >= 0) s.length += inst.dist(static_cast<std::size_t>(s.last), j);

  switch (inst.problem) {
    case Problem::tsp:
      if (s.first < 0) s.first = node;
      s.visited[j] = 1;
      ++s.customers_visited;
      s.done = s.customers_visited == inst.n;
      if (s.done) s.length += inst.dist(j, static_cast<std::size_t>(s.first));
      break;
    case Problem::cvrp:
    case Problem::sdvrp:
      if (node == 0) {
        s.remaining_capacity = 1.0;
        bool all_served = true;
        for (std::size_t i = 1; i <= inst.n; ++i) all_served = all_served && s.remaining_demand[i] == 0.0;
        s.done = all_served;
      } else {
        const double rem = s.remaining_demand[j];
        if (inst.problem == Problem::cvrp) {
          s.remaining_demand[j] = 0.0;
        } else {
          const double left = rem - s.remaining_capacity;
          s.remaining_demand[j] = left < kTolerance ? 0.0 : left;
        }
        s.remaining_capacity = std::max(s.remaining_capacity - rem, 0.0);
        if (!s.visited[j]) ++s.customers_visited;
        s.visited[j] = 1;
      }
      break;
    case Problem::op:
      s.remaining_length -= inst.dist(static_cast<std::size_t>(s.last), j);
      if (node == 0) {
        s.done = true;
      } else {
        s.visited[j] = 1;
        ++s.customers_visited;
      }
      break;
    case Problem::pctsp:
    case Problem::spctsp:
      if (node == 0) {
        s.done = true;
      } else {
        double collected = inst.prize(j);
        if (inst.problem == Problem::spctsp) {
          collected = reveal_prize(inst, j);
          s.revealed.emplace_back(node, collected);
        }
        s.remaining_prize = std::max(0.0, s.remaining_prize - collected);
        s.visited[j] = 1;
        ++s.customers_visited;
      }
      break;
  }
  s.sequence.push_back(node);
  s.last = node;
  ++s.step;
}

// ---------------------------------------------------------------------------
// Solutions

struct Solution {
  std::vector<int> actions;
  double cost = 0.0;
  std::vector<double> log_probs;  // per decoding step, when produced by a policy
  std::vector<std::pair<int, double>> revealed;  // SPCTSP realized prizes, in visiting order

  double log_likelihood() const {
    return std::accumulate(log_probs.begin(), log_probs.end(), 0.0);
  }
};

/// Route length of a depot-based action sequence (closed at the depot).
inline double route_length(const Instance& inst, std::span<const int> actions) {
  if (!has_depot(inst.problem)) {
    double len = 0.0;
    for (std::size_t i = 0; i < actions.size(); ++i) {
      len += inst.dist(static_cast<std::size_t>(actions[i]),
                       static_cast<std::size_t>(actions[(i + 1) % actions.size()]));
    }
    return len;
  }
  double len = 0.0;
  std::size_t prev = 0;
  for (int a : actions) {
    len += inst.dist(prev, static_cast<std::size_t>(a));
    prev = static_cast<std::size_t>(a);
  }
  return len + inst.dist(prev, 0);
}

/// Checks the constraints of each problem directly on the action sequence,
/// without going through the decoding state machine. Returns a description
/// of the first violation, if any.
inline std::optional<std::string> find_violation(const Instance& inst, std::span<const int> actions) {
  const std::size_t n = inst.n;
  auto in_range = [&](int a) { return a >= 0 && static_cast<std::size_t>(a) < inst.num_nodes(); };
  for (int a : actions) {
    if (!in_range(a)) return "node " + std::to_string(a) + " out of range";
  }
  switch (inst.problem) {
    case Problem::tsp: {
      if (actions.size() != n) return "tour visits " + std::to_string(actions.size()) + " of " + std::to_string(n) + " nodes";
      std::vector<int> seen(n, 0);
      for (int a : actions) {
        if (seen[static_cast<std::size_t>(a)]++) return "node " + std::to_string(a) + " visited twice";
      }
      return std::nullopt;
    }
    case Problem::cvrp:
    case Problem::sdvrp: {
      if (actions.empty() || actions.back() != 0) return "route does not end at the depot";
      if (actions.front() == 0) return "first move goes to the depot";
      std::vector<double> remaining(n + 1, 0.0);
      for (std::size_t i = 1; i <= n; ++i) remaining[i] = inst.demand(i);
      double load = 0.0;
      double cap = 1.0;
      for (std::size_t k = 0; k < actions.size(); ++k) {
        const int a = actions[k];
        if (a == 0) {
          if (k > 0 && actions[k - 1] == 0) return "depot visited twice in a row";
          load = 0.0;
          cap = 1.0;
          continue;
        }
        const auto i = static_cast<std::size_t>(a);
        if (remaining[i] <= 0.0) return "customer " + std::to_string(a) + " has nothing left to deliver";
        if (inst.problem == Problem::cvrp) {
          load += remaining[i];
          if (load > 1.0 + kTolerance) return "route load " + std::to_string(load) + " exceeds capacity";
          remaining[i] = 0.0;
        } else {
          if (cap <= kTolerance) return "empty vehicle visits customer " + std::to_string(a);
          const double delivered = std::min(remaining[i], cap);
          remaining[i] -= delivered;
          if (remaining[i] < kTolerance) remaining[i] = 0.0;
          cap -= delivered;
          load += delivered;
          if (load > 1.0 + kTolerance) return "route load exceeds capacity";
        }
      }
      for (std::size_t i = 1; i <= n; ++i) {
        if (remaining[i] > 0.0) return "customer " + std::to_string(i) + " not fully served";
      }
      return std::nullopt;
    }
    case Problem::op: {
      if (actions.empty() || actions.back() != 0) return "route does not end at the depot";
      std::vector<int> seen(n + 1, 0);
      for (std::size_t k = 0; k + 1 < actions.size(); ++k) {
        if (actions[k] == 0) return "depot visited mid-route";
        if (seen[static_cast<std::size_t>(actions[k])]++) return "customer visited twice";
      }
      const double len = route_length(inst, actions.first(actions.size() - 1));
      if (len > inst.max_length + kTolerance) {
        return "route length " + std::to_string(len) + " exceeds " + std::to_string(inst.max_length);
      }
      return std::nullopt;
    }
    case Problem::pctsp:
    case Problem::spctsp: {
      if (actions.empty() || actions.back() != 0) return "route does not end at the depot";
      std::vector<int> seen(n + 1, 0);
      double collected = 0.0;
      std::size_t visits = 0;
      for (std::size_t k = 0; k + 1 < actions.size(); ++k) {
        const int a = actions[k];
        if (a == 0) return "depot visited mid-route";
        if (seen[static_cast<std::size_t>(a)]++) return "customer visited twice";
        const auto i = static_cast<std::size_t>(a);
        collected += inst.problem == Problem::spctsp ? inst.real_prizes[i - 1] : inst.prize(i);
        ++visits;
      }
      if (visits < n && collected < inst.min_prize - kTolerance) {
        return "collected prize " + std::to_string(collected) + " below minimum";
      }
      return std::nullopt;
    }
  }
  return "unknown problem";
}

/// Objective to minimize. OP returns the negated collected prize.
inline double solution_cost(const Instance& inst, std::span<const int> actions) {
  if (auto v = find_violation(inst, actions)) {
    throw FeasibilityError(to_string(inst.problem) + " solution infeasible: " + *v);
  }
  switch (inst.problem) {
    case Problem::tsp:
      return route_length(inst, actions);
    case Problem::cvrp:
    case Problem::sdvrp:
      return route_length(inst, actions.first(actions.size() - 1));
    case Problem::op: {
      double prize = 0.0;
      for (std::size_t k = 0; k + 1 < actions.size(); ++k) prize += inst.prize(static_cast<std::size_t>(actions[k]));
      return -prize;
    }
    case Problem::pctsp:
    case Problem::spctsp: {
      std::vector<std::uint8_t> seen(inst.n + 1, 0);
      for (int a : actions) seen[static_cast<std::size_t>(a)] = 1;
      double penalty = 0.0;
      for (std::size_t i = 1; i <= inst.n; ++i) {
        if (!seen[i]) penalty += inst.penalty(i);
      }
      return route_length(inst, actions.first(actions.size() - 1)) + penalty;
    }
  }
  throw ContractError("unknown problem tag");
}

inline double solution_cost(const Instance& inst, const Solution& sol) {
  return solution_cost(inst, std::span<const int>(sol.actions));
}

}  // namespace attnroute
