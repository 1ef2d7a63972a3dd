#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "attnroute/heuristics.hpp"
#include "attnroute/oracle.hpp"
#include "attnroute/rollout.hpp"
#include "helpers.hpp"

using namespace attnroute;
using attnroute::testing::random_rollout;
using attnroute::testing::square_tsp;

namespace {

double brute_force_tsp(const Instance& inst) {
  std::vector<int> perm(inst.n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, route_length(inst, perm));
  } while (std::next_permutation(perm.begin() + 1, perm.end()));
  return best;
}

/// Every ordered sequence of distinct customers, visited by DFS.
void for_each_path(const Instance& inst, std::size_t start, std::vector<std::uint8_t>& used, std::vector<int>& path,
                   double len, const std::function<void(const std::vector<int>&, double)>& visit) {
  visit(path, len);
  const std::size_t last = path.empty() ? start : static_cast<std::size_t>(path.back());
  for (std::size_t j = 1; j <= inst.n; ++j) {
    if (used[j]) continue;
    used[j] = 1;
    path.push_back(static_cast<int>(j));
    for_each_path(inst, start, used, path, len + inst.dist(last, j), visit);
    path.pop_back();
    used[j] = 0;
  }
}

double enumerate_op(const Instance& inst) {
  std::vector<std::uint8_t> used(inst.n + 1, 0);
  std::vector<int> path;
  double best = 0.0;
  for_each_path(inst, 0, used, path, 0.0, [&](const std::vector<int>& p, double len) {
    const std::size_t last = p.empty() ? 0 : static_cast<std::size_t>(p.back());
    if (len + inst.dist(last, 0) > inst.max_length + kTolerance) return;
    double prize = 0.0;
    for (int a : p) prize += inst.prize(static_cast<std::size_t>(a));
    best = std::max(best, prize);
  });
  return -best;
}

double enumerate_pctsp(const Instance& inst, std::size_t start, double remaining, std::vector<std::uint8_t> used) {
  std::vector<int> path;
  std::size_t open = 0;
  for (std::size_t j = 1; j <= inst.n; ++j) open += !used[j];
  double best = std::numeric_limits<double>::infinity();
  for_each_path(inst, start, used, path, 0.0, [&](const std::vector<int>& p, double len) {
    double prize = 0.0, skipped = 0.0;
    std::vector<std::uint8_t> in(inst.n + 1, 0);
    for (int a : p) {
      prize += inst.prize(static_cast<std::size_t>(a));
      in[static_cast<std::size_t>(a)] = 1;
    }
    if (p.size() < open && prize < remaining - kTolerance) return;
    for (std::size_t j = 1; j <= inst.n; ++j) {
      if (!used[j] && !in[j]) skipped += inst.penalty(j);
    }
    const std::size_t last = p.empty() ? start : static_cast<std::size_t>(p.back());
    best = std::min(best, len + inst.dist(last, 0) + skipped);
  });
  return best;
}

}  // namespace

TEST(HeldKarp, UnitSquare) {
  const auto r = held_karp(square_tsp());
  EXPECT_NEAR(r.cost, 4.0, 1e-12);
  EXPECT_FALSE(find_violation(square_tsp(), r.actions));
}

TEST(HeldKarp, TrivialSizes) {
  Instance one = generate_instance(Problem::tsp, 1, PrizeMode::constant, 1);
  EXPECT_EQ(held_karp(one).cost, 0.0);
  Instance tri = generate_instance(Problem::tsp, 3, PrizeMode::constant, 2);
  const double perimeter = tri.dist(0, 1) + tri.dist(1, 2) + tri.dist(2, 0);
  EXPECT_NEAR(held_karp(tri).cost, perimeter, 1e-12);
}

TEST(HeldKarp, MatchesPermutationEnumeration) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Instance inst = generate_instance(Problem::tsp, 9, PrizeMode::constant, 1000 + s);
    const auto r = held_karp(inst);
    EXPECT_NEAR(r.cost, brute_force_tsp(inst), 1e-9);
    EXPECT_NEAR(solution_cost(inst, r.actions), r.cost, 1e-9);
    EXPECT_EQ(r.explored, 8u * (1u << 7));
  }
}

TEST(HeldKarp, InvariantUnderRelabeling) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Instance inst = generate_instance(Problem::tsp, 11, PrizeMode::constant, rng);
    Instance shuffled = inst;
    std::shuffle(shuffled.coords.begin(), shuffled.coords.end(), rng);
    EXPECT_NEAR(held_karp(inst).cost, held_karp(shuffled).cost, 1e-9);
  }
}

TEST(HeldKarp, Preconditions) {
  EXPECT_THROW(held_karp(generate_instance(Problem::tsp, 23, PrizeMode::constant, 1)), CapacityError);
  EXPECT_THROW(held_karp(generate_instance(Problem::op, 5, PrizeMode::constant, 1)), ContractError);
}

TEST(OpOracle, ShortBudgetCollectsNothing) {
  Instance inst = generate_instance(Problem::op, 6, PrizeMode::uniform, 4);
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j <= inst.n; ++j) closest = std::min(closest, 2.0 * inst.dist(0, j));
  inst.max_length = 0.5 * closest;
  const auto r = brute_force_op(inst);
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_EQ(r.actions, std::vector<int>{0});
}

TEST(OpOracle, LongBudgetCollectsEverything) {
  Instance inst = generate_instance(Problem::op, 7, PrizeMode::distance, 4);
  Instance tsp;
  tsp.problem = Problem::tsp;
  tsp.n = inst.n + 1;
  tsp.coords.push_back(*inst.depot);
  for (const auto& c : inst.coords) tsp.coords.push_back(c);
  inst.max_length = held_karp(tsp).cost;
  const double total = std::accumulate(inst.prizes.begin(), inst.prizes.end(), 0.0);
  EXPECT_NEAR(brute_force_op(inst).cost, -total, 1e-12);
}

TEST(OpOracle, MatchesExhaustiveEnumeration) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Instance inst = generate_instance(Problem::op, 8, s % 2 ? PrizeMode::uniform : PrizeMode::distance, 50 + s);
    const auto r = brute_force_op(inst);
    EXPECT_NEAR(r.cost, enumerate_op(inst), 1e-9);
    EXPECT_FALSE(find_violation(inst, r.actions));
  }
}

TEST(OpOracle, Preconditions) {
  EXPECT_THROW(brute_force_op(generate_instance(Problem::op, 11, PrizeMode::constant, 1)), CapacityError);
}

TEST(PctspOracle, MatchesExhaustiveEnumeration) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Instance inst = generate_instance(Problem::pctsp, 8, PrizeMode::constant, 70 + s);
    const auto r = brute_force_pctsp(inst);
    EXPECT_NEAR(r.cost, enumerate_pctsp(inst, 0, inst.min_prize, std::vector<std::uint8_t>(inst.n + 1, 0)), 1e-9);
    EXPECT_FALSE(find_violation(inst, r.actions));
  }
}

TEST(PctspOracle, LowTotalPrizeVisitsAll) {
  Instance inst = generate_instance(Problem::pctsp, 6, PrizeMode::constant, 9);
  for (auto& p : inst.prizes) p = 0.1;
  for (auto& b : inst.penalties) b = 0.0;
  Instance tsp;
  tsp.problem = Problem::tsp;
  tsp.n = inst.n + 1;
  tsp.coords.push_back(*inst.depot);
  for (const auto& c : inst.coords) tsp.coords.push_back(c);
  const auto r = brute_force_pctsp(inst);
  EXPECT_NEAR(r.cost, held_karp(tsp).cost, 1e-9);
  EXPECT_EQ(r.actions.size(), inst.n + 1);
}

TEST(PctspOracle, HugePenaltiesVisitAll) {
  Instance inst = generate_instance(Problem::pctsp, 7, PrizeMode::constant, 10);
  inst.min_prize = 0.0;
  for (auto& b : inst.penalties) b = 1e3;
  EXPECT_EQ(brute_force_pctsp(inst).actions.size(), inst.n + 1);
}

TEST(PctspOracle, PlanFromIntermediateNode) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Instance inst = generate_instance(Problem::pctsp, 7, PrizeMode::constant, rng);
    DecodeState s = initial_state(inst);
    apply_action(inst, s, 1 + t % 7);
    apply_action(inst, s, 1 + (t + 3) % 7);
    const auto r = pctsp_plan(inst, static_cast<std::size_t>(s.last), s.remaining_prize, s.visited);
    EXPECT_NEAR(r.cost, enumerate_pctsp(inst, static_cast<std::size_t>(s.last), s.remaining_prize, s.visited), 1e-9);
    for (std::size_t k = 0; k + 1 < r.actions.size(); ++k) apply_action(inst, s, r.actions[k]);
    apply_action(inst, s, 0);
    EXPECT_FALSE(find_violation(inst, s.sequence));
  }
}

TEST(Oracle, DispatchAndUnsupported) {
  EXPECT_TRUE(has_exact_oracle(Problem::op));
  EXPECT_FALSE(has_exact_oracle(Problem::cvrp));
  EXPECT_THROW(solve_exact(generate_instance(Problem::cvrp, 5, PrizeMode::constant, 1)), ContractError);
  EXPECT_THROW(brute_force_pctsp(generate_instance(Problem::spctsp, 5, PrizeMode::constant, 1)), ContractError);
}

TEST(Oracle, DominatesRandomRollouts) {
  Rng rng(8);
  for (Problem p : {Problem::tsp, Problem::op, Problem::pctsp}) {
    for (int t = 0; t < 20; ++t) {
      const Instance inst = generate_instance(p, 8, PrizeMode::uniform, rng);
      const double opt = solve_exact(inst).cost;
      for (int k = 0; k < 20; ++k) {
        const auto s = random_rollout(inst, rng);
        EXPECT_GE(solution_cost(inst, s.sequence), opt - 1e-9) << to_string(p);
      }
    }
  }
}

TEST(Gap, Definitions) {
  EXPECT_EQ(optimality_gap(4.0, 4.0), 0.0);
  EXPECT_NEAR(optimality_gap(4.2, 4.0), 0.05, 1e-12);
  EXPECT_THROW(optimality_gap(1.0, 0.0), ContractError);
  EXPECT_THROW(optimality_gap(1.0, -2.0), ContractError);
  EXPECT_NEAR(optimality_gap(-3.0, -4.0, Problem::op), 0.25, 1e-12);
  EXPECT_EQ(optimality_gap(0.0, 0.0, Problem::op), 0.0);
  EXPECT_THROW(optimality_gap(-1.0, 0.0, Problem::op), ContractError);
}

TEST(Gap, NearestNeighborMeanGap) {
  const auto data = generate_dataset(Problem::tsp, 10, 100, PrizeMode::constant, 21);
  double lib = 0.0, manual = 0.0;
  for (const auto& inst : data) {
    const double nn = nearest_neighbor(inst).cost;
    const double opt = held_karp(inst).cost;
    lib += optimality_gap(nn, opt);
    manual += nn / brute_force_tsp(inst) - 1.0;
    EXPECT_GE(nn, opt - 1e-9);
  }
  EXPECT_NEAR(lib / 100.0, manual / 100.0, 1e-9);
  EXPECT_GT(lib / 100.0, 0.0);
}

TEST(BestOf, SamplingBeatsGreedyOnMostInstances) {
  ModelConfig c;
  c.problem = Problem::tsp;
  c.embed_dim = 16;
  c.layers = 2;
  c.heads = 4;
  c.ff_dim = 32;
  AttentionModel model(c, 17);
  const auto data = generate_dataset(Problem::tsp, 8, 100, PrizeMode::constant, 5);
  const auto greedy = rollout(model, data, Decoding::greedy);
  int better = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double opt = held_karp(data[i]).cost;
    const double best = sample_best_of(model, data[i], 256, derive_seed(3, i)).cost;
    EXPECT_GE(best, opt - 1e-9);
    better += optimality_gap(best, opt) < optimality_gap(greedy[i].cost, opt);
  }
  EXPECT_GE(better, 50);
}
