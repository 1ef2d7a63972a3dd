// attnroute: generate datasets, train, evaluate, solve, run baselines and
// exact oracles from the command line.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnroute/heuristics.hpp"
#include "attnroute/io.hpp"
#include "attnroute/oracle.hpp"
#include "attnroute/rollout.hpp"
#include "attnroute/trainer.hpp"

using namespace attnroute;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { ok = 0, io_failure = 1, config_failure = 2, capacity_failure = 3, diverged = 4 };

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    io::write_file_atomic(out, text);
  }
}

/// Attaches optimal values and gaps from the dataset's oracle cache,
/// computing missing entries when `compute` is set.
void attach_oracle(io::EvalReport& report, const std::vector<Instance>& data, const fs::path& dataset, bool compute) {
  const fs::path cache_path = io::oracle_cache_path(dataset);
  io::OracleCache cache = io::read_oracle_cache(cache_path);
  if (compute && io::fill_oracle_cache(cache, data) > 0) io::write_oracle_cache(cache_path, cache);
  for (auto& row : report.rows) {
    auto it = cache.find(io::instance_hash(data[row.index]));
    if (it == cache.end()) continue;
    row.optimal = it->second.cost;
    row.gap = optimality_gap(row.cost, it->second.cost, report.problem);
  }
}

io::EvalReport make_report(std::string method, Problem p, std::string decoding, std::size_t k,
                           const std::vector<Solution>& sols, double seconds) {
  io::EvalReport r;
  r.method = std::move(method);
  r.problem = p;
  r.decoding = std::move(decoding);
  r.samples = k;
  r.seconds = seconds;
  for (std::size_t i = 0; i < sols.size(); ++i) r.rows.push_back({i, sols[i].cost, std::nullopt, std::nullopt});
  return r;
}

std::vector<Solution> run_model(AttentionModel& model, const std::vector<Instance>& data, Decoding mode,
                                std::size_t k, std::uint64_t seed) {
  if (mode == Decoding::greedy) return rollout(model, data, Decoding::greedy);
  std::vector<Solution> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back(sample_best_of(model, data[i], k, derive_seed(seed, i)));
  return out;
}

void check_problem(const AttentionModel& model, const std::vector<Instance>& data) {
  for (const auto& inst : data) {
    if (inst.problem != model.problem()) {
      throw ContractError("checkpoint is a " + to_string(model.problem()) + " model, dataset holds " +
                          to_string(inst.problem) + " instances");
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-model routing: datasets, training, evaluation, baselines"};
  app.require_subcommand(1);
  std::size_t workers = 1;
  app.add_option("--workers", workers, "Worker threads (this build evaluates serially)")->check(CLI::PositiveNumber);

  const std::vector<std::string> problems{"tsp", "cvrp", "sdvrp", "op", "pctsp", "spctsp"};
  const std::vector<std::string> prize_modes{"const", "unif", "dist"};

  // generate
  auto* gen = app.add_subcommand("generate", "Write a random dataset");
  std::string g_problem = "tsp", g_prize = "dist", g_out;
  std::size_t g_n = 20, g_count = 10000;
  std::uint64_t g_seed = 1234;
  gen->add_option("--problem", g_problem)->check(CLI::IsMember(problems));
  gen->add_option("--n", g_n)->check(CLI::PositiveNumber);
  gen->add_option("--count", g_count);
  gen->add_option("--seed", g_seed);
  gen->add_option("--prize-mode", g_prize)->check(CLI::IsMember(prize_modes));
  gen->add_option("--out", g_out)->required();

  // train
  auto* train = app.add_subcommand("train", "Train a policy with REINFORCE");
  std::string t_config, t_resume, t_out = "model.ckpt", t_history;
  std::optional<std::string> t_problem, t_prize, t_baseline;
  std::optional<std::size_t> t_n, t_epochs, t_steps, t_batch, t_eval_size, t_val_size;
  std::optional<double> t_lr, t_lr_decay, t_alpha;
  std::optional<std::uint64_t> t_seed;
  bool t_warmup = false;
  train->add_option("--config", t_config, "JSON training configuration")->check(CLI::ExistingFile);
  train->add_option("--resume", t_resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--out", t_out, "Checkpoint written after every epoch");
  train->add_option("--history", t_history, "Per-epoch history (JSON lines)");
  train->add_option("--problem", t_problem)->check(CLI::IsMember(problems));
  train->add_option("--n", t_n);
  train->add_option("--prize-mode", t_prize)->check(CLI::IsMember(prize_modes));
  train->add_option("--baseline", t_baseline)->check(CLI::IsMember({"exp", "critic", "rollout", "none"}));
  train->add_option("--epochs", t_epochs);
  train->add_option("--steps", t_steps);
  train->add_option("--batch", t_batch);
  train->add_option("--lr", t_lr);
  train->add_option("--lr-decay", t_lr_decay);
  train->add_option("--alpha", t_alpha);
  train->add_option("--eval-size", t_eval_size);
  train->add_option("--val-size", t_val_size);
  train->add_option("--seed", t_seed);
  train->add_flag("--warmup", t_warmup);

  // eval and solve
  std::string e_ckpt, e_dataset, e_mode = "greedy", e_out;
  std::size_t e_k = 1280;
  std::uint64_t e_seed = 1234;
  bool e_oracle = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  auto* solve = app.add_subcommand("solve", "Solve a dataset with a checkpoint and print the routes");
  for (auto* sub : {eval, solve}) {
    sub->add_option("--checkpoint", e_ckpt)->required()->check(CLI::ExistingFile);
    sub->add_option("--dataset", e_dataset)->required()->check(CLI::ExistingFile);
    sub->add_option("--mode", e_mode)->check(CLI::IsMember({"greedy", "sample"}));
    sub->add_option("--k", e_k)->check(CLI::PositiveNumber);
    sub->add_option("--seed", e_seed);
    sub->add_option("--out", e_out);
  }
  eval->add_flag("--oracle", e_oracle, "Compute missing optimal values with the exact oracle");

  // baseline
  auto* base = app.add_subcommand("baseline", "Run a classic heuristic on a dataset");
  std::string b_method, b_dataset, b_out;
  std::uint64_t b_seed = 1234;
  std::size_t b_k = 1;
  bool b_oracle = false;
  base->add_option("--method", b_method)
      ->required()
      ->check(CLI::IsMember({"nn", "nearest", "farthest", "random", "tsili", "tsili-sample", "replan-all",
                             "replan-half", "replan-first"}));
  base->add_option("--dataset", b_dataset)->required()->check(CLI::ExistingFile);
  base->add_option("--seed", b_seed);
  base->add_option("--k", b_k, "Samples per instance for tsili-sample")->check(CLI::PositiveNumber);
  base->add_option("--out", b_out);
  base->add_flag("--oracle", b_oracle);

  // oracle
  auto* orc = app.add_subcommand("oracle", "Solve a dataset exactly and cache the optima");
  std::string o_dataset, o_out;
  orc->add_option("--dataset", o_dataset)->required()->check(CLI::ExistingFile);
  orc->add_option("--out", o_out, "Report path (the cache sits next to the dataset)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::config_failure;
  }

  try {
    if (gen->parsed()) {
      const auto data = generate_dataset(parse_problem(g_problem), g_n, g_count, parse_prize_mode(g_prize), g_seed);
      io::write_dataset(g_out, data);
      std::cerr << "wrote " << data.size() << " instances to " << g_out << "\n";
    } else if (train->parsed()) {
      std::optional<io::Checkpoint> resume;
      TrainConfig cfg;
      if (!t_resume.empty()) {
        resume = io::load_checkpoint(t_resume);
        cfg = resume->train_config();
      } else if (!t_config.empty()) {
        cfg = io::read_train_config(t_config);
      }
      if (resume && (t_problem || t_prize || t_baseline || t_n || t_steps || t_batch || t_lr || t_lr_decay || t_alpha ||
                     t_seed || t_eval_size || t_val_size || t_warmup)) {
        throw ConfigError("only --epochs may change when resuming");
      }
      if (t_problem) cfg.model.problem = parse_problem(*t_problem);
      if (t_prize) cfg.prize_mode = parse_prize_mode(*t_prize);
      if (t_baseline) cfg.baseline = parse_baseline(*t_baseline);
      if (t_n) cfg.n = *t_n;
      if (t_epochs) cfg.epochs = *t_epochs;
      if (t_steps) cfg.steps = *t_steps;
      if (t_batch) cfg.batch = *t_batch;
      if (t_lr) cfg.lr = *t_lr;
      if (t_lr_decay) cfg.lr_decay = *t_lr_decay;
      if (t_alpha) cfg.alpha = *t_alpha;
      if (t_seed) cfg.seed = *t_seed;
      if (t_eval_size) cfg.eval_size = *t_eval_size;
      if (t_val_size) cfg.val_size = *t_val_size;
      if (t_warmup) cfg.warmup = true;

      Trainer trainer(cfg);
      if (resume) io::restore(*resume, trainer);
      auto log = [&](const EpochRecord& r) {
        std::fprintf(stderr, "epoch %zu  train %.5f  val %.5f  replaced %d  %.1fs\n", r.epoch, r.train_cost,
                     r.val_cost, r.baseline_replaced ? 1 : 0, r.seconds);
        io::save_checkpoint(t_out, io::capture(trainer));
        if (!t_history.empty()) io::write_file_atomic(t_history, io::encode_history(trainer.history()));
      };
      trainer.run(log);
      io::save_checkpoint(t_out, io::capture(trainer));
      if (!t_history.empty()) io::write_file_atomic(t_history, io::encode_history(trainer.history()));
    } else if (eval->parsed() || solve->parsed()) {
      AttentionModel model = io::load_policy(io::load_checkpoint(e_ckpt));
      const auto data = io::read_dataset(e_dataset);
      check_problem(model, data);
      const Decoding mode = parse_decoding(e_mode);
      const std::size_t k = mode == Decoding::greedy ? 1 : e_k;
      const auto t0 = std::chrono::steady_clock::now();
      const auto sols = run_model(model, data, mode, k, e_seed);
      io::EvalReport report = make_report("model", model.problem(), e_mode, k, sols, seconds_since(t0));
      if (eval->parsed()) {
        attach_oracle(report, data, e_dataset, e_oracle);
        report.finalize();
        emit(e_out, io::to_json(report).dump(2) + "\n");
      } else {
        report.finalize();
        json j = io::to_json(report);
        json routes = json::array();
        for (const auto& s : sols) routes.push_back(s.actions);
        j["routes"] = std::move(routes);
        emit(e_out, j.dump() + "\n");
      }
    } else if (base->parsed()) {
      const auto data = io::read_dataset(b_dataset);
      if (data.empty()) throw ContractError("empty dataset");
      const Problem p = data.front().problem;
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<Solution> sols;
      std::string decoding = "deterministic";
      for (std::size_t i = 0; i < data.size(); ++i) {
        const Instance& inst = data[i];
        if (b_method == "nn") {
          sols.push_back(nearest_neighbor(inst));
        } else if (b_method == "nearest" || b_method == "farthest" || b_method == "random") {
          sols.push_back(insertion(inst, parse_insertion_variant(b_method)));
        } else if (b_method == "tsili") {
          sols.push_back(tsiligirides(inst, Decoding::greedy));
        } else if (b_method == "tsili-sample") {
          decoding = "sample";
          Rng rng(derive_seed(b_seed, i));
          Solution best = tsiligirides(inst, Decoding::sample, &rng);
          for (std::size_t s = 1; s < b_k; ++s) {
            Solution c = tsiligirides(inst, Decoding::sample, &rng);
            if (c.cost < best.cost) best = std::move(c);
          }
          sols.push_back(std::move(best));
        } else {
          const ReplanStrategy strategy = parse_replan_strategy(b_method.substr(std::string("replan-").size()));
          sols.push_back(spctsp_replan(inst, exact_pctsp_planner(), strategy).solution);
        }
      }
      io::EvalReport report =
          make_report(b_method, p, decoding, b_method == "tsili-sample" ? b_k : 1, sols, seconds_since(t0));
      attach_oracle(report, data, b_dataset, b_oracle);
      report.finalize();
      emit(b_out, io::to_json(report).dump(2) + "\n");
    } else if (orc->parsed()) {
      const auto data = io::read_dataset(o_dataset);
      const fs::path cache_path = io::oracle_cache_path(o_dataset);
      io::OracleCache cache = io::read_oracle_cache(cache_path);
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t computed = io::fill_oracle_cache(cache, data);
      if (computed > 0) io::write_oracle_cache(cache_path, cache);
      std::vector<Solution> sols;
      for (const auto& inst : data) {
        const auto& r = cache.at(io::instance_hash(inst));
        sols.push_back(Solution{r.actions, r.cost, {}, {}});
      }
      io::EvalReport report = make_report("oracle", data.empty() ? Problem::tsp : data.front().problem,
                                          "exact", 1, sols, seconds_since(t0));
      report.finalize();
      std::cerr << "computed " << computed << ", reused " << data.size() - computed << " optima\n";
      emit(o_out, io::to_json(report).dump(2) + "\n");
    }
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return Exit::diverged;
  } catch (const CapacityError& e) {
    std::cerr << "capacity: " << e.what() << "\n";
    return Exit::capacity_failure;
  } catch (const ConfigError& e) {
    std::cerr << "config: " << e.what() << "\n";
    return Exit::config_failure;
  } catch (const ContractError& e) {
    std::cerr << "usage: " << e.what() << "\n";
    return Exit::config_failure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::io_failure;
  }
  return Exit::ok;
}
