#pragma once

#include <algorithm>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "attnroute/model.hpp"
#include "attnroute/problems.hpp"

namespace attnroute {

enum class Decoding { greedy, sample };

inline std::string to_string(Decoding d) { return d == Decoding::greedy ? "greedy" : "sample"; }

inline Decoding parse_decoding(std::string_view s) {
  if (s == "greedy") return Decoding::greedy;
  if (s == "sample") return Decoding::sample;
  throw ConfigError("unknown decoding mode: " + std::string(s));
}

struct RolloutConfig {
  Decoding mode = Decoding::greedy;
  std::size_t k = 1280;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw ConfigError("sample count must be at least 1");
  }
};

struct RunOptions {
  Decoding decoding = Decoding::greedy;
  ad::Mode mode = ad::Mode::eval;
  std::size_t replicas = 1;                                // rows per instance
  std::vector<Rng>* rngs = nullptr;                        // one per row when sampling
  const std::vector<std::vector<int>>* forced = nullptr;   // teacher-forced actions per row
  const std::vector<DecodeState>* start = nullptr;         // resume from these states
};

struct PolicyRun {
  std::vector<Solution> solutions;
  std::vector<DecodeState> states;
  ad::Tensor log_likelihood;  // [rows x 1]
};

/// Lockstep decoding of rows = instances x replicas. Finished rows keep
/// stepping with a depot-only mask and contribute no log-probability.
inline PolicyRun run_policy(AttentionModel& model, std::span<const Instance> instances,
                            const RunOptions& opt) {
  if (instances.empty()) throw ContractError("run_policy on an empty batch");
  if (opt.replicas < 1) throw ContractError("run_policy: replicas must be positive");
  const std::size_t R = instances.size() * opt.replicas;
  if (opt.decoding == Decoding::sample && !opt.forced && (!opt.rngs || opt.rngs->size() != R)) {
    throw ContractError("run_policy: sampling needs one generator per row");
  }
  if (opt.forced && opt.forced->size() != R) throw ShapeError("run_policy: one forced sequence per row");
  if (opt.start && opt.start->size() != R) throw ShapeError("run_policy: one start state per row");

  std::vector<std::size_t> instance_of(R);
  for (std::size_t r = 0; r < R; ++r) instance_of[r] = r / opt.replicas;
  auto inst = [&](std::size_t r) -> const Instance& { return instances[instance_of[r]]; };

  Embeddings emb = model.encode(instances, opt.mode);
  const DecoderCache cache =
      model.decoder().precompute(model.params, emb, opt.replicas > 1 ? std::span<const std::size_t>(instance_of)
                                                                     : std::span<const std::size_t>());
  const std::size_t N = cache.nodes_per_row;

  PolicyRun run;
  run.states.reserve(R);
  for (std::size_t r = 0; r < R; ++r) {
    run.states.push_back(opt.start ? (*opt.start)[r] : initial_state(inst(r)));
  }
  std::vector<std::vector<double>> step_logp(R);
  std::vector<std::size_t> cursor(R, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ad::Tensor total;
  bool have_total = false;

  auto all_done = [&] {
    return std::all_of(run.states.begin(), run.states.end(), [](const DecodeState& s) { return s.done; });
  };

  while (!all_done()) {
    ad::Mask mask(R * N, 0);
    for (std::size_t r = 0; r < R; ++r) {
      if (run.states[r].done) {
        mask[r * N] = 1;
        continue;
      }
      if (run.states[r].step >= max_steps(inst(r))) {
        throw ContractError("rollout exceeded the step bound of " + to_string(inst(r).problem));
      }
      const auto m = feasible_mask(inst(r), run.states[r]);
      std::copy(m.begin(), m.end(), mask.begin() + static_cast<std::ptrdiff_t>(r * N));
    }
    StepDistribution dist = model.decoder().step(model.params, cache, run.states, mask);
    const Array& lp = dist.log_probs.value();

    std::vector<long> action(R, -1);
    for (std::size_t r = 0; r < R; ++r) {
      if (run.states[r].done) continue;
      const double* row = lp.data() + r * N;
      const std::uint8_t* mrow = dist.mask.data() + r * N;
      long chosen = -1;
      if (opt.forced) {
        const auto& seq = (*opt.forced)[r];
        if (cursor[r] >= seq.size()) {
          throw FeasibilityError("forced sequence ends before the episode is complete");
        }
        chosen = seq[cursor[r]++];
        if (chosen < 0 || static_cast<std::size_t>(chosen) >= N || !mrow[chosen]) {
          throw FeasibilityError("forced action " + std::to_string(chosen) + " is infeasible at step " +
                                 std::to_string(run.states[r].step));
        }
      } else if (opt.decoding == Decoding::greedy) {
        for (std::size_t j = 0; j < N; ++j) {
          if (mrow[j] && (chosen < 0 || row[j] > row[chosen])) chosen = static_cast<long>(j);
        }
      } else {
        const double u = unit((*opt.rngs)[r]);
        double cum = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          if (!mrow[j]) continue;
          cum += std::exp(row[j]);
          chosen = static_cast<long>(j);
          if (cum > u) break;
        }
      }
      action[r] = chosen;
      step_logp[r].push_back(row[chosen]);
    }
    ad::Tensor picked = ad::pick(dist.log_probs, action);
    total = have_total ? ad::add(total, picked) : picked;
    have_total = true;
    for (std::size_t r = 0; r < R; ++r) {
      if (action[r] >= 0) apply_action(inst(r), run.states[r], static_cast<int>(action[r]));
    }
  }
  if (opt.forced) {
    for (std::size_t r = 0; r < R; ++r) {
      if (cursor[r] != (*opt.forced)[r].size()) {
        throw FeasibilityError("forced sequence continues after the episode is complete");
      }
    }
  }
  if (!have_total) total = ad::Tensor::constant(Array::matrix(R, 1));

  run.solutions.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    Solution& sol = run.solutions[r];
    sol.actions = run.states[r].sequence;
    sol.cost = solution_cost(inst(r), sol.actions);
    sol.log_probs = std::move(step_logp[r]);
    sol.revealed = run.states[r].revealed;
  }
  run.log_likelihood = std::move(total);
  return run;
}

/// Inference-only rollout of a dataset, evaluated in chunks. Sampling uses
/// a stream per instance derived from `seed` and the instance index.
inline std::vector<Solution> rollout(AttentionModel& model, std::span<const Instance> instances,
                                     Decoding decoding, std::uint64_t seed = 0,
                                     std::size_t chunk = 256) {
  ad::NoGradGuard guard;
  std::vector<Solution> out;
  out.reserve(instances.size());
  for (std::size_t begin = 0; begin < instances.size(); begin += chunk) {
    const std::size_t end = std::min(instances.size(), begin + chunk);
    std::vector<Rng> rngs;
    for (std::size_t i = begin; i < end; ++i) rngs.emplace_back(derive_seed(seed, i));
    RunOptions opt;
    opt.decoding = decoding;
    opt.rngs = &rngs;
    PolicyRun run = run_policy(model, instances.subspan(begin, end - begin), opt);
    for (auto& s : run.solutions) out.push_back(std::move(s));
  }
  return out;
}

/// Teacher-forced log-likelihood of one action sequence; differentiable.
inline ad::Tensor log_prob_tensor(AttentionModel& model, const Instance& instance,
                                  const std::vector<int>& actions, ad::Mode mode = ad::Mode::eval) {
  std::vector<std::vector<int>> forced{actions};
  RunOptions opt;
  opt.mode = mode;
  opt.forced = &forced;
  return run_policy(model, std::span<const Instance>(&instance, 1), opt).log_likelihood;
}

inline double log_prob(AttentionModel& model, const Instance& instance, const std::vector<int>& actions) {
  ad::NoGradGuard guard;
  return log_prob_tensor(model, instance, actions).item();
}

/// Best of k independent samples of one instance; ties keep the first found.
/// Sample s draws from a stream derived from `seed` and s.
inline Solution sample_best_of(AttentionModel& model, const Instance& instance, std::size_t k,
                               std::uint64_t seed, std::size_t chunk = 256) {
  if (k < 1) throw ConfigError("sample count must be at least 1");
  ad::NoGradGuard guard;
  Solution best;
  bool have = false;
  for (std::size_t begin = 0; begin < k; begin += chunk) {
    const std::size_t rows = std::min(k, begin + chunk) - begin;
    std::vector<Rng> rngs;
    for (std::size_t s = begin; s < begin + rows; ++s) rngs.emplace_back(derive_seed(seed, s));
    RunOptions opt;
    opt.decoding = Decoding::sample;
    opt.replicas = rows;
    opt.rngs = &rngs;
    PolicyRun run = run_policy(model, std::span<const Instance>(&instance, 1), opt);
    for (auto& s : run.solutions) {
      if (!have || s.cost < best.cost) {
        best = std::move(s);
        have = true;
      }
    }
  }
  return best;
}

}  // namespace attnroute
