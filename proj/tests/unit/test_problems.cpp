#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "attnroute/problems.hpp"
#include "helpers.hpp"

using namespace attnroute;
using attnroute::testing::random_rollout;
using attnroute::testing::square_tsp;

TEST(Constants, AnchorsAndInterpolation) {
  EXPECT_DOUBLE_EQ(vrp_capacity(20), 30.0);
  EXPECT_DOUBLE_EQ(vrp_capacity(50), 40.0);
  EXPECT_DOUBLE_EQ(vrp_capacity(100), 50.0);
  EXPECT_DOUBLE_EQ(op_max_length(20), 2.0);
  EXPECT_DOUBLE_EQ(op_max_length(50), 3.0);
  EXPECT_DOUBLE_EQ(op_max_length(100), 4.0);
  EXPECT_DOUBLE_EQ(pctsp_penalty_scale(20), 2.0);
  EXPECT_DOUBLE_EQ(pctsp_penalty_scale(100), 4.0);
  EXPECT_NEAR(vrp_capacity(35), 35.0, 1e-12);
  EXPECT_NEAR(vrp_capacity(75), 45.0, 1e-12);
  EXPECT_NEAR(op_max_length(10), 2.0 - 1.0 / 3.0, 1e-12);
}

TEST(Generate, OpConstantPrizesAreOne) {
  auto inst = generate_instance(Problem::op, 20, PrizeMode::constant, std::uint64_t{1});
  for (double p : inst.prizes) EXPECT_EQ(p, 1.0);
  EXPECT_EQ(inst.max_length, 2.0);
}

TEST(Generate, OpUniformPrizesOnHundredthGrid) {
  std::set<int> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto inst = generate_instance(Problem::op, 20, PrizeMode::uniform, s);
    for (double p : inst.prizes) {
      const double scaled = p * 100.0;
      EXPECT_NEAR(scaled, std::round(scaled), 1e-9);
      EXPECT_GE(p, 0.01);
      EXPECT_LE(p, 1.0);
      seen.insert(static_cast<int>(std::lround(scaled)));
    }
  }
  EXPECT_TRUE(seen.contains(100));
  EXPECT_TRUE(seen.contains(1));
}

TEST(Generate, OpDistancePrizesFollowDepotDistance) {
  auto inst = generate_instance(Problem::op, 20, PrizeMode::distance, std::uint64_t{4});
  double far = 0.0;
  for (std::size_t i = 1; i <= 20; ++i) far = std::max(far, inst.dist(0, i));
  for (std::size_t i = 1; i <= 20; ++i) {
    EXPECT_DOUBLE_EQ(inst.prize(i), (1.0 + std::floor(99.0 * inst.dist(0, i) / far)) / 100.0);
  }
  double top = 0.0;
  for (double p : inst.prizes) top = std::max(top, p);
  EXPECT_DOUBLE_EQ(top, 1.0);
}

TEST(Generate, VrpDemandsNormalizedByCapacity) {
  auto inst = generate_instance(Problem::cvrp, 20, PrizeMode::constant, std::uint64_t{2});
  EXPECT_EQ(inst.capacity, 30.0);
  for (std::size_t i = 1; i <= 20; ++i) {
    const double k = inst.demand(i) * 30.0;
    EXPECT_NEAR(k, std::round(k), 1e-12);
    EXPECT_GE(k, 1.0 - 1e-12);
    EXPECT_LE(k, 9.0 + 1e-12);
  }
}

TEST(Generate, PctspRanges) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto inst = generate_instance(Problem::pctsp, 20, PrizeMode::constant, s);
    EXPECT_EQ(inst.min_prize, 1.0);
    for (double p : inst.prizes) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 0.2);
    }
    for (double b : inst.penalties) {
      EXPECT_GT(b, 0.0);
      EXPECT_LT(b, 0.3);
    }
    EXPECT_TRUE(inst.real_prizes.empty());
  }
}

TEST(Generate, SeedReproducibleAndCoordsInUnitSquare) {
  for (Problem p : kAllProblems) {
    auto a = generate_dataset(p, 15, 20, PrizeMode::uniform, 99);
    auto b = generate_dataset(p, 15, 20, PrizeMode::uniform, 99);
    EXPECT_EQ(a, b);
    for (const auto& inst : a) {
      for (std::size_t i = 0; i < inst.num_nodes(); ++i) {
        EXPECT_GE(inst.node(i).x, 0.0);
        EXPECT_LT(inst.node(i).x, 1.0);
        EXPECT_GE(inst.node(i).y, 0.0);
        EXPECT_LT(inst.node(i).y, 1.0);
      }
    }
  }
  EXPECT_THROW(generate_instance(Problem::tsp, 0, PrizeMode::constant, std::uint64_t{1}), ContractError);
  EXPECT_THROW(parse_prize_mode("gaussian"), ContractError);
  EXPECT_THROW(parse_problem("vrptw"), ContractError);
}

TEST(Reveal, PreSampledAndUnbiased) {
  auto inst = generate_instance(Problem::spctsp, 10, PrizeMode::constant, std::uint64_t{3});
  EXPECT_EQ(reveal_prize(inst, 4), reveal_prize(inst, 4));
  for (std::size_t i = 1; i <= 10; ++i) {
    EXPECT_GE(reveal_prize(inst, i), 0.0);
    EXPECT_LE(reveal_prize(inst, i), 2.0 * inst.prize(i));
  }
  Instance zero = inst;
  zero.prizes[0] = 0.0;
  zero.real_prizes[0] = 0.0 * zero.real_prizes[0];
  EXPECT_EQ(reveal_prize(zero, 1), 0.0);
  EXPECT_THROW(reveal_prize(generate_instance(Problem::pctsp, 5, PrizeMode::constant, std::uint64_t{1}), 1),
               ContractError);

  double ratio = 0.0;
  const int count = 100000;
  for (int s = 0; s < count; ++s) {
    auto x = generate_instance(Problem::spctsp, 2, PrizeMode::constant, static_cast<std::uint64_t>(s));
    ratio += x.real_prizes[0] / x.prizes[0];
  }
  EXPECT_NEAR(ratio / count, 1.0, 0.01);
}

TEST(Mask, TspVisitedPattern) {
  Instance inst = square_tsp();
  DecodeState s = initial_state(inst);
  apply_action(inst, s, 1);
  apply_action(inst, s, 3);
  EXPECT_EQ(feasible_mask(inst, s), (std::vector<std::uint8_t>{1, 0, 1, 0}));
}

TEST(Mask, TspFeasibleCountShrinksByOne) {
  auto inst = generate_instance(Problem::tsp, 7, PrizeMode::constant, std::uint64_t{5});
  DecodeState s = initial_state(inst);
  for (std::size_t t = 0; t < 7; ++t) {
    auto m = feasible_mask(inst, s);
    EXPECT_EQ(std::count(m.begin(), m.end(), 1), static_cast<long>(7 - t));
    apply_action(inst, s, static_cast<int>(6 - t));
  }
  EXPECT_TRUE(s.done);
  EXPECT_THROW(feasible_mask(inst, s), ContractError);
  EXPECT_THROW(apply_action(inst, s, 0), ContractError);
}

TEST(Mask, VrpDepotRules) {
  auto inst = generate_instance(Problem::cvrp, 5, PrizeMode::constant, std::uint64_t{6});
  DecodeState s = initial_state(inst);
  EXPECT_EQ(feasible_mask(inst, s)[0], 0);
  apply_action(inst, s, 2);
  EXPECT_EQ(feasible_mask(inst, s)[0], 1);
  EXPECT_EQ(feasible_mask(inst, s)[2], 0);
  apply_action(inst, s, 0);
  EXPECT_EQ(feasible_mask(inst, s)[0], 0);
  EXPECT_THROW(apply_action(inst, s, 0), FeasibilityError);
}

TEST(Mask, CvrpForbidsDemandAboveCapacity) {
  Instance inst;
  inst.problem = Problem::cvrp;
  inst.n = 2;
  inst.depot = Point{0, 0};
  inst.coords = {{1, 0}, {0, 1}};
  inst.demands = {7, 5};
  inst.capacity = 10.0;
  DecodeState s = initial_state(inst);
  apply_action(inst, s, 1);
  EXPECT_NEAR(s.remaining_capacity, 0.3, 1e-15);
  EXPECT_EQ(feasible_mask(inst, s), (std::vector<std::uint8_t>{1, 0, 0}));
  inst.problem = Problem::sdvrp;
  DecodeState t = initial_state(inst);
  apply_action(inst, t, 1);
  EXPECT_EQ(feasible_mask(inst, t), (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(Mask, OpLengthBudget) {
  Instance inst;
  inst.problem = Problem::op;
  inst.n = 2;
  inst.depot = Point{0, 0};
  inst.coords = {{0.5, 0}, {0.9, 0}};
  inst.prizes = {1, 1};
  inst.max_length = 1.5;
  DecodeState s = initial_state(inst);
  EXPECT_EQ(feasible_mask(inst, s), (std::vector<std::uint8_t>{1, 1, 0}));
  apply_action(inst, s, 1);
  EXPECT_DOUBLE_EQ(s.remaining_length, 1.0);
  EXPECT_EQ(feasible_mask(inst, s), (std::vector<std::uint8_t>{1, 0, 0}));
}

TEST(Mask, PctspDepotOpensWhenPrizeCollected) {
  Instance inst;
  inst.problem = Problem::pctsp;
  inst.n = 3;
  inst.depot = Point{0, 0};
  inst.coords = {{1, 0}, {0, 1}, {1, 1}};
  inst.prizes = {0.6, 0.6, 0.1};
  inst.penalties = {0.1, 0.1, 0.1};
  inst.min_prize = 1.0;
  DecodeState s = initial_state(inst);
  EXPECT_EQ(feasible_mask(inst, s)[0], 0);
  apply_action(inst, s, 1);
  EXPECT_NEAR(s.remaining_prize, 0.4, 1e-15);
  EXPECT_EQ(feasible_mask(inst, s)[0], 0);
  apply_action(inst, s, 2);
  EXPECT_EQ(s.remaining_prize, 0.0);
  EXPECT_EQ(feasible_mask(inst, s)[0], 1);
}

TEST(Mask, PctspSmallTotalPrizeForcesFullTour) {
  Instance inst;
  inst.problem = Problem::pctsp;
  inst.n = 2;
  inst.depot = Point{0, 0};
  inst.coords = {{1, 0}, {0, 1}};
  inst.prizes = {0.2, 0.3};
  inst.penalties = {0.1, 0.1};
  inst.min_prize = 1.0;
  DecodeState s = initial_state(inst);
  apply_action(inst, s, 1);
  EXPECT_EQ(feasible_mask(inst, s)[0], 0);
  apply_action(inst, s, 2);
  EXPECT_EQ(feasible_mask(inst, s)[0], 1);
}

TEST(Apply, VrpCapacityBookkeeping) {
  Instance inst;
  inst.problem = Problem::cvrp;
  inst.n = 2;
  inst.depot = Point{0, 0};
  inst.coords = {{1, 0}, {0, 1}};
  inst.demands = {3, 4};
  inst.capacity = 10.0;
  DecodeState s = initial_state(inst);
  EXPECT_EQ(s.remaining_capacity, 1.0);
  apply_action(inst, s, 1);
  EXPECT_NEAR(s.remaining_capacity, 0.7, 1e-15);
  apply_action(inst, s, 0);
  EXPECT_EQ(s.remaining_capacity, 1.0);
  EXPECT_FALSE(s.done);
  apply_action(inst, s, 2);
  apply_action(inst, s, 0);
  EXPECT_TRUE(s.done);
  EXPECT_NEAR(solution_cost(inst, s.sequence), 4.0, 1e-12);
}

TEST(Apply, SdvrpSplitDelivery) {
  Instance inst;
  inst.problem = Problem::sdvrp;
  inst.n = 2;
  inst.depot = Point{0, 0};
  inst.coords = {{1, 0}, {0, 1}};
  inst.demands = {8, 5};
  inst.capacity = 10.0;
  DecodeState s = initial_state(inst);
  apply_action(inst, s, 1);
  EXPECT_NEAR(s.remaining_capacity, 0.2, 1e-15);
  apply_action(inst, s, 2);
  EXPECT_EQ(s.remaining_capacity, 0.0);
  EXPECT_NEAR(s.remaining_demand[2], 0.3, 1e-15);
  EXPECT_EQ(feasible_mask(inst, s), (std::vector<std::uint8_t>{1, 0, 0}));
}

TEST(Apply, PctspPrizeClampsAtZero) {
  Instance inst;
  inst.problem = Problem::pctsp;
  inst.n = 3;
  inst.depot = Point{0, 0};
  inst.coords = {{1, 0}, {0, 1}, {1, 1}};
  inst.prizes = {0.6, 0.6, 0.6};
  inst.penalties = {0, 0, 0};
  inst.min_prize = 1.0;
  DecodeState s = initial_state(inst);
  apply_action(inst, s, 1);
  EXPECT_NEAR(s.remaining_prize, 0.4, 1e-15);
  apply_action(inst, s, 2);
  EXPECT_EQ(s.remaining_prize, 0.0);
}

TEST(Apply, SpctspUsesRealPrizes) {
  auto inst = generate_instance(Problem::spctsp, 6, PrizeMode::constant, std::uint64_t{7});
  DecodeState s = initial_state(inst);
  apply_action(inst, s, 3);
  ASSERT_EQ(s.revealed.size(), 1u);
  EXPECT_EQ(s.revealed[0].first, 3);
  EXPECT_EQ(s.revealed[0].second, inst.real_prizes[2]);
  EXPECT_DOUBLE_EQ(s.remaining_prize, std::max(0.0, 1.0 - inst.real_prizes[2]));
}

TEST(Cost, HandCases) {
  EXPECT_DOUBLE_EQ(solution_cost(square_tsp(), std::vector<int>{0, 1, 2, 3}), 4.0);
  auto op = generate_instance(Problem::op, 5, PrizeMode::uniform, std::uint64_t{8});
  EXPECT_EQ(solution_cost(op, std::vector<int>{0}), 0.0);
  Instance pc;
  pc.problem = Problem::pctsp;
  pc.n = 2;
  pc.depot = Point{0, 0};
  pc.coords = {{1, 0}, {1, 1}};
  pc.prizes = {0.5, 0.6};
  pc.penalties = {5, 7};
  pc.min_prize = 1.0;
  EXPECT_NEAR(solution_cost(pc, std::vector<int>{1, 2, 0}), 2.0 + std::sqrt(2.0), 1e-12);
}

TEST(Cost, ViolationsAreReported) {
  EXPECT_THROW(solution_cost(square_tsp(), std::vector<int>{0, 1, 1, 3}), FeasibilityError);
  EXPECT_THROW(solution_cost(square_tsp(), std::vector<int>{0, 1, 2}), FeasibilityError);
  Instance inst;
  inst.problem = Problem::cvrp;
  inst.n = 2;
  inst.depot = Point{0, 0};
  inst.coords = {{1, 0}, {0, 1}};
  inst.demands = {7, 5};
  inst.capacity = 10.0;
  auto v = find_violation(inst, std::vector<int>{1, 2, 0});
  ASSERT_TRUE(v.has_value());
  EXPECT_NE(v->find("capacity"), std::string::npos);
  auto op = generate_instance(Problem::op, 20, PrizeMode::constant, std::uint64_t{9});
  std::vector<int> all;
  for (int i = 1; i <= 20; ++i) all.push_back(i);
  all.push_back(0);
  EXPECT_TRUE(find_violation(op, all).has_value());
}

TEST(Rollouts, RandomPoliciesStayFeasibleAndBounded) {
  Rng rng(10);
  for (Problem p : kAllProblems) {
    for (int k = 0; k < 200; ++k) {
      auto inst = generate_instance(p, 1 + static_cast<std::size_t>(k % 12), PrizeMode::uniform, rng);
      DecodeState s = random_rollout(inst, rng);
      EXPECT_LE(s.sequence.size(), max_steps(inst));
      EXPECT_FALSE(find_violation(inst, s.sequence).has_value()) << to_string(p);
      if (p != Problem::op) {
        double penalty = 0.0;
        for (std::size_t i = 1; is_pctsp(p) && i <= inst.n; ++i) penalty += s.visited[i] ? 0.0 : inst.penalty(i);
        EXPECT_NEAR(solution_cost(inst, s.sequence), s.length + penalty, 1e-9);
      }
      if (p == Problem::tsp) {
        EXPECT_EQ(s.sequence.size(), inst.n);
      }
    }
  }
}

TEST(Rollouts, SdvrpConservesDemand) {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    auto inst = generate_instance(Problem::sdvrp, 10, PrizeMode::constant, rng);
    DecodeState s = initial_state(inst);
    std::vector<double> delivered(inst.n + 1, 0.0);
    while (!s.done) {
      auto m = feasible_mask(inst, s);
      std::vector<int> options;
      for (std::size_t j = 0; j < m.size(); ++j) {
        if (m[j]) options.push_back(static_cast<int>(j));
      }
      const int a = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
      const double before = a ? s.remaining_demand[static_cast<std::size_t>(a)] : 0.0;
      apply_action(inst, s, a);
      if (a) delivered[static_cast<std::size_t>(a)] += before - s.remaining_demand[static_cast<std::size_t>(a)];
    }
    for (std::size_t i = 1; i <= inst.n; ++i) EXPECT_NEAR(delivered[i], inst.demand(i), 1e-9);
  }
}

TEST(Rollouts, OpAndPctspCountersNonIncreasing) {
  Rng rng(12);
  for (Problem p : {Problem::op, Problem::pctsp, Problem::spctsp}) {
    for (int k = 0; k < 100; ++k) {
      auto inst = generate_instance(p, 10, PrizeMode::distance, rng);
      DecodeState s = initial_state(inst);
      double prev_len = s.remaining_length;
      double prev_prize = s.remaining_prize;
      while (!s.done) {
        auto m = feasible_mask(inst, s);
        std::vector<int> options;
        for (std::size_t j = 0; j < m.size(); ++j) {
          if (m[j]) options.push_back(static_cast<int>(j));
        }
        apply_action(inst, s, options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)]);
        EXPECT_LE(s.remaining_length, prev_len);
        EXPECT_LE(s.remaining_prize, prev_prize);
        EXPECT_GE(s.remaining_prize, 0.0);
        prev_len = s.remaining_length;
        prev_prize = s.remaining_prize;
      }
      if (p == Problem::op) {
        EXPECT_GE(s.remaining_length, -1e-12);
      }
    }
  }
}
