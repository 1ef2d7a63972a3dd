// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 3,5,...]

#include <CLI11.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "../unit/helpers.hpp"
#include "attnroute/heuristics.hpp"
#include "attnroute/io.hpp"
#include "attnroute/oracle.hpp"
#include "attnroute/trainer.hpp"

using namespace attnroute;

namespace {

const Problem kAll[] = {Problem::tsp, Problem::cvrp, Problem::sdvrp, Problem::op, Problem::pctsp, Problem::spctsp};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ModelConfig model_config(Problem p, std::size_t d, std::size_t layers, std::size_t heads, std::size_t ff) {
  ModelConfig c;
  c.problem = p;
  c.embed_dim = d;
  c.layers = layers;
  c.heads = heads;
  c.ff_dim = ff;
  return c;
}

double max_abs_diff(const Array& a, const Array& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// 1 -------------------------------------------------------------------------
Outcome encoder_equivariance() {
  double worst = 0.0;
  Rng rng(101);
  for (Problem p : kAll) {
    AttentionModel m(model_config(p, 128, 3, 8, 512), 101);
    for (int t = 0; t < 100; ++t) {
      const Instance inst = generate_instance(p, 20, PrizeMode::uniform, rng);
      std::vector<std::size_t> perm(20);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const Instance shuffled = testing::permute_customers(inst, perm);
      for (ad::Mode mode : {ad::Mode::train, ad::Mode::eval}) {
        ad::NoGradGuard guard;
        const auto a = m.encode(std::span<const Instance>(&inst, 1), mode);
        const auto b = m.encode(std::span<const Instance>(&shuffled, 1), mode);
        const std::size_t off = has_depot(p) ? 1 : 0;
        const Array& na = a.nodes.value();
        const Array& nb = b.nodes.value();
        for (std::size_t c = 0; c < na.cols(); ++c) {
          if (off) worst = std::max(worst, std::abs(na(0, c) - nb(0, c)));
          for (std::size_t k = 0; k < 20; ++k) {
            worst = std::max(worst, std::abs(nb(off + k, c) - na(off + perm[k], c)));
          }
        }
        worst = std::max(worst, max_abs_diff(a.graph.value(), b.graph.value()));
      }
    }
  }
  return {worst < 1e-10, fmt("max deviation %.3g over 6 problems x 100 instances (n=20)", worst)};
}

// 2 -------------------------------------------------------------------------
Outcome gradient_correctness() {
  double worst_ll = 0.0, worst_surrogate = 0.0;
  for (Problem p : kAll) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      AttentionModel m(model_config(p, 8, 1, 2, 16), 200 + seed);
      const auto batch = generate_dataset(p, 5, 4, PrizeMode::uniform, 200 + seed);
      Rng rng(200 + seed);
      std::vector<std::vector<int>> forced;
      std::vector<double> costs, base;
      for (const auto& inst : batch) {
        forced.push_back(testing::random_rollout(inst, rng).sequence);
        costs.push_back(solution_cost(inst, forced.back()));
        base.push_back(0.5 * costs.back() + 0.1 * static_cast<double>(base.size()));
      }
      auto ll = [&] {
        RunOptions opt;
        opt.mode = ad::Mode::train;
        opt.forced = &forced;
        return run_policy(m, batch, opt).log_likelihood;
      };
      worst_ll = std::max(worst_ll, check_store_gradients(m.params, [&] { return ad::sum(ll()); }, 1e-6));
      worst_surrogate = std::max(
          worst_surrogate, check_store_gradients(m.params, [&] { return reinforce_loss(costs, base, ll()); }, 1e-6));
    }
  }
  return {worst_ll < 1e-4 && worst_surrogate < 1e-4,
          fmt("worst relative error: log-prob %.3g, surrogate %.3g (6 problems x 5 seeds, h=1e-6)", worst_ll,
              worst_surrogate)};
}

// 3 -------------------------------------------------------------------------
Outcome probability_normalization() {
  double worst = 0.0;
  std::size_t sequences = 0;
  for (Problem p : {Problem::tsp, Problem::op}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      AttentionModel m(model_config(p, 32, 2, 4, 64), 300 + seed);
      Instance inst = generate_instance(p, 5, PrizeMode::uniform, 300 + seed);
      if (p == Problem::op && seed % 2) inst.max_length = 3.0;
      double total = 0.0;
      for (const auto& seq : testing::all_sequences(inst)) {
        total += std::exp(log_prob(m, inst, seq));
        ++sequences;
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  return {worst <= 1e-9, fmt("max |sum p - 1| = %.3g over %zu complete solutions (TSP, OP; n=5)", worst, sequences)};
}

// 4 -------------------------------------------------------------------------
Outcome feasibility_fuzzing() {
  std::size_t violations = 0, total = 0;
  std::string first;
  for (Problem p : kAll) {
    AttentionModel m(model_config(p, 32, 2, 4, 64), 400);
    const auto data = generate_dataset(p, 20, 10000, PrizeMode::uniform, 400);
    const auto sols = rollout(m, data, Decoding::sample, 400);
    for (std::size_t i = 0; i < data.size(); ++i) {
      ++total;
      if (auto v = find_violation(data[i], sols[i].actions)) {
        if (first.empty()) first = to_string(p) + ": " + *v;
        ++violations;
      }
    }
  }
  return {violations == 0, fmt("%zu violations in %zu sampled rollouts%s", violations, total,
                               first.empty() ? "" : (" (" + first + ")").c_str())};
}

// 5 -------------------------------------------------------------------------
Outcome tsp_optimum() {
  const auto data = generate_dataset(Problem::tsp, 20, 200, PrizeMode::constant, 500);
  double sum = 0.0;
  for (const auto& inst : data) sum += held_karp(inst).cost;
  const double mean = sum / 200.0;
  return {std::abs(mean - 3.84) <= 0.10, fmt("mean optimal tour length %.4f (target 3.84 +- 0.10)", mean)};
}

// 6 -------------------------------------------------------------------------
Outcome tsiligirides_prizes() {
  double means[2];
  int k = 0;
  for (PrizeMode mode : {PrizeMode::constant, PrizeMode::uniform}) {
    const auto data = generate_dataset(Problem::op, 20, 10000, mode, 600);
    double sum = 0.0;
    for (const auto& inst : data) sum -= tsiligirides(inst, Decoding::greedy).cost;
    means[k++] = sum / static_cast<double>(data.size());
  }
  const bool ok = std::abs(means[0] - 8.82) <= 0.15 && std::abs(means[1] - 4.85) <= 0.10;
  return {ok, fmt("mean prize const %.3f (8.82 +- 0.15), unif %.3f (4.85 +- 0.10)", means[0], means[1])};
}

// 7 -------------------------------------------------------------------------
double enumerate_best(const Instance& inst) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& seq : testing::all_sequences(inst)) best = std::min(best, solution_cost(inst, seq));
  return best;
}

Outcome oracle_dominance() {
  double worst_gap = 0.0, worst_agree = 0.0;
  std::size_t checked = 0;
  for (Problem p : {Problem::tsp, Problem::op, Problem::pctsp}) {
    AttentionModel m(model_config(p, 32, 2, 4, 64), 700);
    const auto data = generate_dataset(p, 8, 100, PrizeMode::uniform, 700);
    const auto greedy = rollout(m, data, Decoding::greedy);
    const auto sampled = rollout(m, data, Decoding::sample, 700);
    Rng rng(700);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Instance& inst = data[i];
      const double opt = solve_exact(inst).cost;
      worst_agree = std::max(worst_agree, std::abs(opt - enumerate_best(inst)));
      std::vector<double> costs{greedy[i].cost, sampled[i].cost,
                                solution_cost(inst, testing::random_rollout(inst, rng).sequence)};
      if (p == Problem::tsp) {
        costs.push_back(nearest_neighbor(inst).cost);
        for (auto v : {InsertionVariant::nearest, InsertionVariant::farthest, InsertionVariant::random}) {
          costs.push_back(insertion(inst, v).cost);
        }
      } else if (p == Problem::op) {
        costs.push_back(tsiligirides(inst, Decoding::greedy).cost);
        costs.push_back(tsiligirides(inst, Decoding::sample, &rng).cost);
      }
      for (double c : costs) {
        worst_gap = std::min(worst_gap, optimality_gap(c, opt, p));
        ++checked;
      }
    }
  }
  return {worst_gap >= -1e-9 && worst_agree <= 1e-12,
          fmt("min gap %.3g over %zu solutions; oracle vs enumeration max difference %.3g", worst_gap, checked,
              worst_agree)};
}

// 8, 9 ----------------------------------------------------------------------
struct DeskRun {
  double epoch0_gap = 0.0;
  double final_gap = 0.0;
  double seconds = 0.0;
};

std::map<std::pair<BaselineKind, std::uint64_t>, DeskRun> desk_runs;

DeskRun desk_run(BaselineKind baseline, std::uint64_t seed) {
  const auto key = std::make_pair(baseline, seed);
  if (auto it = desk_runs.find(key); it != desk_runs.end()) return it->second;
  static std::vector<Instance> val;
  static std::vector<double> opt;
  if (val.empty()) {
    val = generate_dataset(Problem::tsp, 10, 500, PrizeMode::constant, 800);
    for (const auto& inst : val) opt.push_back(held_karp(inst).cost);
  }
  TrainConfig c;
  c.model = model_config(Problem::tsp, 64, 2, 8, 512);
  c.n = 10;
  c.baseline = baseline;
  c.warmup = baseline == BaselineKind::rollout;
  c.epochs = 10;
  c.steps = 200;
  c.batch = 128;
  c.lr = 1e-4;
  c.eval_size = 1000;
  c.val_size = 1;
  c.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  Trainer t(c);
  t.set_validation(val, opt);
  t.run([&](const EpochRecord& r) {
    std::fprintf(stderr, "  [%s seed %llu] epoch %zu val gap %.4f%s\n", to_string(baseline).c_str(),
                 static_cast<unsigned long long>(seed), r.epoch, r.val_gap, r.baseline_replaced ? " (replaced)" : "");
  });
  DeskRun d;
  d.epoch0_gap = t.history().front().val_gap;
  d.final_gap = t.history().back().val_gap;
  d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  desk_runs[key] = d;
  return d;
}

Outcome desk_training() {
  const DeskRun r = desk_run(BaselineKind::rollout, 1234);
  const bool ok = r.final_gap < 0.05 && r.final_gap <= 0.5 * r.epoch0_gap;
  return {ok, fmt("final gap %.2f%% (epoch 0: %.2f%%, reduction %.0f%%) in %.0f s", 100 * r.final_gap,
                  100 * r.epoch0_gap, 100 * (1 - r.final_gap / r.epoch0_gap), r.seconds)};
}

Outcome baseline_ordering() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : {1234u, 1235u}) {
    const DeskRun roll = desk_run(BaselineKind::rollout, seed);
    const DeskRun expo = desk_run(BaselineKind::exponential, seed);
    ok = ok && roll.final_gap <= expo.final_gap;
    detail += fmt("%sseed %llu: rollout %.2f%% vs exp %.2f%%", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(seed), 100 * roll.final_gap, 100 * expo.final_gap);
  }
  return {ok, detail};
}

// 10 ------------------------------------------------------------------------
Outcome ttest_behaviour() {
  std::mt19937_64 gen(1000);
  std::uniform_real_distribution<double> u(3.0, 5.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  bool identical_replaced = false;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> costs(1000);
    for (auto& c : costs) c = u(gen);
    identical_replaced = identical_replaced || ttest_update(costs, costs).replace;
  }
  std::vector<double> base(1000), cand(1000);
  for (std::size_t i = 0; i < base.size(); ++i) {
    base[i] = u(gen);
    cand[i] = 0.99 * base[i] + noise(gen);
  }
  const TTestDecision d = ttest_update(cand, base);
  const double independent = boost::math::cdf(boost::math::students_t(999.0), d.test.t);
  double worst = std::abs(d.test.p - independent);
  for (std::size_t n : {5u, 30u, 200u}) {
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = u(gen);
      a[i] = b[i] - 0.02 + 0.2 * noise(gen);
    }
    const auto r = stats::paired_ttest_less(a, b);
    worst = std::max(worst, std::abs(r.p - boost::math::cdf(boost::math::students_t(double(n - 1)), r.t)));
  }
  const bool ok = !identical_replaced && d.replace && d.test.p < 1e-3 && worst <= 1e-6;
  return {ok, fmt("identical replaced: %s; 1%% improvement p = %.3g (replaced: %s); max |p - t-CDF| %.3g",
                  identical_replaced ? "yes" : "no", d.test.p, d.replace ? "yes" : "no", worst)};
}

// 11 ------------------------------------------------------------------------
Outcome common_random_numbers() {
  TrainConfig c;
  c.model = model_config(Problem::spctsp, 16, 1, 2, 32);
  c.n = 10;
  c.baseline = BaselineKind::rollout;
  c.epochs = 2;
  c.steps = 5;
  c.batch = 32;
  c.eval_size = 64;
  c.val_size = 8;
  c.seed = 1100;
  Trainer t(c);
  std::size_t rows = 0, mismatches = 0, shared = 0;
  t.on_step([&](const StepTrace& s) {
    if (!s.baseline_rollouts) return;
    ad::NoGradGuard guard;
    std::vector<std::vector<int>> forced;
    for (const auto& sol : *s.samples) forced.push_back(sol.actions);
    RunOptions opt;
    opt.forced = &forced;
    const PolicyRun replay = run_policy(*t.baseline_model(), s.batch, opt);
    for (std::size_t i = 0; i < s.batch.size(); ++i) {
      ++rows;
      mismatches += replay.solutions[i].revealed != (*s.samples)[i].revealed;
      std::map<int, double> seen;
      for (auto [node, v] : (*s.samples)[i].revealed) seen[node] = v;
      for (auto [node, v] : (*s.baseline_rollouts)[i].revealed) {
        mismatches += v != s.batch[i].real_prizes[static_cast<std::size_t>(node - 1)];
        if (auto it = seen.find(node); it != seen.end()) {
          ++shared;
          mismatches += it->second != v;
        }
      }
    }
  });
  t.run();
  return {rows > 0 && mismatches == 0,
          fmt("%zu rows, %zu shared visits, %zu mismatching revealed prizes", rows, shared, mismatches)};
}

// 12 ------------------------------------------------------------------------
Outcome round_trips() {
  Rng rng(1200);
  std::vector<Instance> data;
  for (int i = 0; i < 1000; ++i) {
    data.push_back(generate_instance(kAll[i % 6], 1 + static_cast<std::size_t>(i % 50),
                                     static_cast<PrizeMode>(i % 3), rng));
  }
  const auto back = io::decode_dataset(io::encode_dataset(data));
  std::size_t dataset_mismatch = back.size() == data.size() ? 0 : data.size();
  for (std::size_t i = 0; i < std::min(back.size(), data.size()); ++i) dataset_mismatch += !(back[i] == data[i]);

  std::size_t checkpoint_mismatch = 0;
  for (BaselineKind b : {BaselineKind::exponential, BaselineKind::critic, BaselineKind::rollout}) {
    TrainConfig c;
    c.model = model_config(Problem::cvrp, 16, 1, 2, 32);
    c.n = 8;
    c.baseline = b;
    c.epochs = 1;
    c.steps = 3;
    c.batch = 16;
    c.eval_size = 32;
    c.val_size = 8;
    c.critic_layers = 1;
    c.critic_hidden = 16;
    Trainer t(c);
    t.run();
    const std::string bytes = io::encode_checkpoint(io::capture(t));
    checkpoint_mismatch += io::encode_checkpoint(io::decode_checkpoint(bytes)) != bytes;
    Trainer fresh(c);
    io::restore(io::decode_checkpoint(bytes), fresh);
    checkpoint_mismatch += io::encode_checkpoint(io::capture(fresh)) != bytes;
  }
  return {dataset_mismatch == 0 && checkpoint_mismatch == 0,
          fmt("%zu of 1000 instances differ; %zu of 6 checkpoint byte comparisons differ", dataset_mismatch,
              checkpoint_mismatch)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::vector<int> expect_fail;
  app.add_option("--only", only, "Criteria to run")->delimiter(',')->check(CLI::Range(1, 12));
  app.add_option("--expect-fail", expect_fail, "Known failing criteria; their FAIL lines do not affect the exit code")
      ->delimiter(',')
      ->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"encoder permutation equivariance", encoder_equivariance},
      {"gradient correctness", gradient_correctness},
      {"probability normalization", probability_normalization},
      {"feasibility fuzzing", feasibility_fuzzing},
      {"TSP n=20 optimal length", tsp_optimum},
      {"Tsiligirides greedy prizes", tsiligirides_prizes},
      {"oracle dominance", oracle_dominance},
      {"desk-scale training", desk_training},
      {"rollout vs exponential baseline", baseline_ordering},
      {"t-test behaviour", ttest_behaviour},
      {"SPCTSP common random numbers", common_random_numbers},
      {"round trips", round_trips},
  };
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  int unexpected = 0;
  std::vector<int> known;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(), s);
    std::fflush(stdout);
    if (o.pass) continue;
    if (expected.contains(id))
      known.push_back(id);
    else
      ++unexpected;
  }
  if (!known.empty()) {
    std::printf("expected failures:");
    for (int id : known) std::printf(" %d", id);
    std::printf("\n");
  }
  return unexpected == 0 ? 0 : 1;
}
