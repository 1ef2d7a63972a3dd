#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "attnroute/errors.hpp"
#include "attnroute/oracle.hpp"
#include "attnroute/problems.hpp"
#include "attnroute/rollout.hpp"

namespace attnroute {

namespace detail {

inline Solution finish(const Instance& inst, std::vector<int> actions) {
  Solution s;
  s.cost = solution_cost(inst, actions);
  s.actions = std::move(actions);
  return s;
}

inline void require_tsp(const Instance& inst, const char* who) {
  if (inst.problem != Problem::tsp) throw ContractError(std::string(who) + " needs a TSP instance");
  if (inst.n == 0) throw ContractError(std::string(who) + " on an empty instance");
}

}  // namespace detail

/// Start at node 0 and always move to the nearest unvisited node.
inline Solution nearest_neighbor(const Instance& inst) {
  detail::require_tsp(inst, "nearest_neighbor");
  std::vector<std::uint8_t> seen(inst.n, 0);
  std::vector<int> tour{0};
  seen[0] = 1;
  std::size_t cur = 0;
  for (std::size_t step = 1; step < inst.n; ++step) {
    std::size_t best = inst.n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < inst.n; ++j) {
      if (seen[j]) continue;
      const double d = inst.dist(cur, j);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    seen[best] = 1;
    tour.push_back(static_cast<int>(best));
    cur = best;
  }
  return detail::finish(inst, std::move(tour));
}

enum class InsertionVariant { nearest, farthest, random };

inline std::string to_string(InsertionVariant v) {
  switch (v) {
    case InsertionVariant::nearest: return "nearest";
    case InsertionVariant::farthest: return "farthest";
    case InsertionVariant::random: return "random";
  }
  return "?";
}

inline InsertionVariant parse_insertion_variant(std::string_view s) {
  if (s == "nearest") return InsertionVariant::nearest;
  if (s == "farthest") return InsertionVariant::farthest;
  if (s == "random") return InsertionVariant::random;
  throw ConfigError("unknown insertion variant: " + std::string(s));
}

struct InsertionStep {
  int node = 0;
  std::size_t position = 0;  // index the node occupies after insertion
  double cost = 0.0;         // d(j,i) + d(i,k) - d(j,k)
};

/// Cheapest-position insertion. Nearest and farthest select by distance to
/// the partial tour; random takes nodes in input order. Nearest starts from
/// node 0, farthest from the node with the largest distance to any other.
inline Solution insertion(const Instance& inst, InsertionVariant variant,
                          std::vector<InsertionStep>* trace = nullptr) {
  detail::require_tsp(inst, "insertion");
  const std::size_t n = inst.n;
  std::vector<std::uint8_t> in_tour(n, 0);
  // Distance from each node to the nearest tour node.
  std::vector<double> to_tour(n, std::numeric_limits<double>::infinity());
  std::vector<int> tour;

  auto select = [&](std::size_t step) -> std::size_t {
    if (variant == InsertionVariant::random) return step;
    if (step == 0) {
      if (variant == InsertionVariant::nearest) return 0;
      std::size_t arg = 0;
      double far = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (inst.dist(i, j) > far) {
            far = inst.dist(i, j);
            arg = i;
          }
        }
      }
      return arg;
    }
    std::size_t arg = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_tour[i]) continue;
      if (arg == n) {
        arg = i;
        continue;
      }
      const bool better = variant == InsertionVariant::nearest ? to_tour[i] < to_tour[arg] : to_tour[i] > to_tour[arg];
      if (better) arg = i;
    }
    return arg;
  };

  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t a = select(step);
    std::size_t pos = 0;
    double cost = 0.0;
    if (!tour.empty()) {
      cost = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < tour.size(); ++k) {
        const auto j = static_cast<std::size_t>(tour[k]);
        const auto l = static_cast<std::size_t>(tour[(k + 1) % tour.size()]);
        const double c = inst.dist(j, a) + inst.dist(a, l) - inst.dist(j, l);
        if (c < cost) {
          cost = c;
          pos = k + 1;
        }
      }
    }
    tour.insert(tour.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<int>(a));
    in_tour[a] = 1;
    for (std::size_t i = 0; i < n; ++i) to_tour[i] = std::min(to_tour[i], inst.dist(i, a));
    if (trace) trace->push_back({static_cast<int>(a), pos, cost});
  }
  return detail::finish(inst, std::move(tour));
}

// ---------------------------------------------------------------------------
// Tsiligirides construction for the OP

/// (prize / distance)^4 for every node (0 for the depot); +inf at distance 0.
inline std::vector<double> tsiligirides_scores(const Instance& inst, const DecodeState& s) {
  std::vector<double> score(inst.num_nodes(), 0.0);
  for (std::size_t j = 1; j < score.size(); ++j) {
    const double d = inst.dist(static_cast<std::size_t>(s.last), j);
    score[j] = d == 0.0 ? std::numeric_limits<double>::infinity() : std::pow(inst.prize(j) / d, 4.0);
  }
  return score;
}

/// The top-min(4, #feasible) feasible customers by score, best first, ties
/// to the lower index. Empty when only the depot remains.
inline std::vector<int> tsiligirides_candidates(const Instance& inst, const DecodeState& s) {
  const auto mask = feasible_mask(inst, s);
  const auto score = tsiligirides_scores(inst, s);
  std::vector<int> cand;
  for (std::size_t j = 1; j < mask.size(); ++j) {
    if (mask[j]) cand.push_back(static_cast<int>(j));
  }
  std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return score[a] > score[b]; });
  if (cand.size() > 4) cand.resize(4);
  return cand;
}

inline Solution tsiligirides(const Instance& inst, Decoding mode, Rng* rng = nullptr) {
  if (inst.problem != Problem::op) throw ContractError("tsiligirides needs an OP instance");
  if (mode == Decoding::sample && !rng) throw ContractError("tsiligirides sampling needs a generator");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DecodeState s = initial_state(inst);
  while (!s.done) {
    const auto cand = tsiligirides_candidates(inst, s);
    int next = 0;
    if (!cand.empty()) {
      next = cand.front();
      const auto score = tsiligirides_scores(inst, s);
      if (mode == Decoding::sample && std::isfinite(score[next])) {
        double total = 0.0;
        for (int c : cand) total += score[c];
        const double u = unit(*rng) * total;
        double cum = 0.0;
        for (int c : cand) {
          cum += score[c];
          next = c;
          if (cum > u) break;
        }
      }
    }
    apply_action(inst, s, next);
  }
  return detail::finish(inst, s.sequence);
}

// ---------------------------------------------------------------------------
// SPCTSP re-planning

enum class ReplanStrategy { all, half, first };

inline std::string to_string(ReplanStrategy r) {
  switch (r) {
    case ReplanStrategy::all: return "all";
    case ReplanStrategy::half: return "half";
    case ReplanStrategy::first: return "first";
  }
  return "?";
}

inline ReplanStrategy parse_replan_strategy(std::string_view s) {
  if (s == "all") return ReplanStrategy::all;
  if (s == "half") return ReplanStrategy::half;
  if (s == "first") return ReplanStrategy::first;
  throw ConfigError("unknown replanning strategy: " + std::string(s));
}

/// Plans a deterministic PCTSP continuation from `state.last` over the
/// unvisited customers with `state.remaining_prize` still to collect. The
/// instance is a PCTSP view: expected prizes only. Returns customers to
/// visit, optionally followed by 0.
using PctspPlanner = std::function<std::vector<int>(const Instance& view, const DecodeState& state)>;

inline PctspPlanner exact_pctsp_planner() {
  return [](const Instance& view, const DecodeState& s) {
    return pctsp_plan(view, static_cast<std::size_t>(s.last), s.remaining_prize, s.visited).actions;
  };
}

/// Greedy continuation of a PCTSP-trained policy from the current state.
inline PctspPlanner policy_planner(AttentionModel& model) {
  if (model.problem() != Problem::pctsp) throw ContractError("policy planner needs a PCTSP model");
  return [&model](const Instance& view, const DecodeState& s) {
    ad::NoGradGuard guard;
    DecodeState start = s;
    start.revealed.clear();
    std::vector<DecodeState> starts{start};
    RunOptions opt;
    opt.start = &starts;
    const PolicyRun run = run_policy(model, std::span<const Instance>(&view, 1), opt);
    const auto& seq = run.solutions[0].actions;
    return std::vector<int>(seq.begin() + static_cast<std::ptrdiff_t>(s.sequence.size()), seq.end());
  };
}

/// The instance as a planner may see it: expected prizes, no hidden values.
inline Instance planning_view(const Instance& inst) {
  Instance view = inst;
  view.problem = Problem::pctsp;
  view.real_prizes.clear();
  return view;
}

struct ReplanResult {
  Solution solution;
  std::size_t planning_calls = 0;
};

/// Plan with expected prizes, execute part of the plan observing realized
/// prizes, and re-plan from the last visited node until the prize minimum
/// is met or every customer is visited; then return to the depot.
inline ReplanResult spctsp_replan(const Instance& inst, const PctspPlanner& planner, ReplanStrategy strategy) {
  if (inst.problem != Problem::spctsp) throw ContractError("spctsp_replan needs an SPCTSP instance");
  const Instance view = planning_view(inst);
  ReplanResult out;
  DecodeState s = initial_state(inst);
  auto context = [&] {
    std::string route;
    for (int a : s.sequence) route += (route.empty() ? "" : " ") + std::to_string(a);
    return " (route so far: [" + route + "], remaining prize " + std::to_string(s.remaining_prize) + ")";
  };
  auto satisfied = [&] { return s.remaining_prize <= 0.0 || s.customers_visited == inst.n; };

  while (!satisfied()) {
    std::vector<int> plan = planner(view, s);
    ++out.planning_calls;
    if (!plan.empty() && plan.back() == 0) plan.pop_back();
    if (plan.empty()) throw FeasibilityError("planner returned no customers" + context());
    std::size_t take = plan.size();
    if (strategy == ReplanStrategy::half) take = std::max<std::size_t>(1, plan.size() / 2);
    if (strategy == ReplanStrategy::first) take = 1;
    for (std::size_t k = 0; k < take; ++k) {
      const int a = plan[k];
      if (a <= 0 || static_cast<std::size_t>(a) > inst.n || s.visited[static_cast<std::size_t>(a)]) {
        throw FeasibilityError("planner proposed invalid customer " + std::to_string(a) + context());
      }
      apply_action(inst, s, a);
    }
  }
  apply_action(inst, s, 0);
  out.solution = detail::finish(inst, s.sequence);
  out.solution.revealed = s.revealed;
  return out;
}

}  // namespace attnroute
