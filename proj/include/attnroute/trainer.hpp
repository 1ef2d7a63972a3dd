#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnroute/errors.hpp"
#include "attnroute/model.hpp"
#include "attnroute/oracle.hpp"
#include "attnroute/params.hpp"
#include "attnroute/problems.hpp"
#include "attnroute/rollout.hpp"
#include "attnroute/stats.hpp"

namespace attnroute {

enum class BaselineKind { none, exponential, critic, rollout };

inline std::string to_string(BaselineKind b) {
  switch (b) {
    case BaselineKind::none: return "none";
    case BaselineKind::exponential: return "exp";
    case BaselineKind::critic: return "critic";
    case BaselineKind::rollout: return "rollout";
  }
  return "?";
}

inline BaselineKind parse_baseline(std::string_view s) {
  if (s == "none") return BaselineKind::none;
  if (s == "exp" || s == "exponential") return BaselineKind::exponential;
  if (s == "critic") return BaselineKind::critic;
  if (s == "rollout") return BaselineKind::rollout;
  throw ConfigError("unknown baseline: " + std::string(s));
}

struct TrainConfig {
  ModelConfig model;
  std::size_t n = 20;
  PrizeMode prize_mode = PrizeMode::distance;
  BaselineKind baseline = BaselineKind::rollout;
  std::size_t epochs = 100;
  std::size_t steps = 2500;
  std::size_t batch = 512;
  double lr = 1e-4;
  double lr_decay = 1.0;  // multiplied into lr after every epoch
  double alpha = 0.05;
  double beta = 0.8;
  bool warmup = false;
  std::size_t eval_size = 10000;  // t-test instances of the rollout baseline
  std::size_t val_size = 10000;
  std::size_t critic_layers = 3;
  std::size_t critic_hidden = 128;
  std::uint64_t seed = 1234;

  void validate() const {
    model.validate();
    if (n < 1) throw ConfigError("train: n must be positive");
    if (epochs < 1 || batch < 1) throw ConfigError("train: epochs and batch size must be positive");
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr decay must lie in (0, 1]");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("train: alpha must lie in (0, 1)");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("train: beta must lie in [0, 1)");
    if (baseline == BaselineKind::rollout && eval_size < 2) throw ConfigError("train: eval set needs 2+ instances");
    if (val_size < 1) throw ConfigError("train: validation set must be non-empty");
    if (baseline == BaselineKind::critic && (critic_layers < 1 || critic_hidden < 1)) {
      throw ConfigError("train: critic needs at least one layer and one hidden unit");
    }
    if (warmup && baseline != BaselineKind::rollout) throw ConfigError("train: warm-up applies to the rollout baseline");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// ---------------------------------------------------------------------------
// Baselines

/// Surrogate loss mean_i (L_i - b_i) * log p_i. The advantages enter as
/// constants, so the gradient is the REINFORCE estimator with baseline.
inline ad::Tensor reinforce_loss(std::span<const double> costs, std::span<const double> baselines,
                                 const ad::Tensor& log_likelihood) {
  if (costs.size() != baselines.size() || costs.size() != log_likelihood.value().size()) {
    throw ShapeError("reinforce_loss: " + std::to_string(costs.size()) + " costs, " +
                     std::to_string(baselines.size()) + " baselines, " +
                     std::to_string(log_likelihood.value().size()) + " log-likelihoods");
  }
  if (costs.empty()) throw ShapeError("reinforce_loss on an empty batch");
  std::vector<double> w(costs.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = (costs[i] - baselines[i]) / static_cast<double>(w.size());
  return ad::weighted_sum(log_likelihood, std::move(w));
}

/// M <- mean(L) on the first batch, then M <- beta M + (1 - beta) mean(L).
struct ExponentialBaseline {
  double beta = 0.8;
  double value = 0.0;
  bool initialized = false;

  double update(std::span<const double> costs) {
    if (!(beta >= 0.0 && beta < 1.0)) throw ContractError("exponential baseline: beta must lie in [0, 1)");
    double mean = 0.0;
    for (double c : costs) mean += c;
    mean /= static_cast<double>(costs.size());
    value = initialized ? beta * value + (1.0 - beta) * mean : mean;
    initialized = true;
    return value;
  }
};

/// Attention encoder, mean-pooled, followed by a one-hidden-layer ReLU MLP.
class Critic {
 public:
  Critic() = default;
  Critic(const ModelConfig& model, std::size_t layers, std::size_t hidden, std::uint64_t seed)
      : hidden_(hidden) {
    EncoderConfig ec = model.encoder();
    ec.layers = layers;
    encoder_ = Encoder("critic.enc", ec);
    Rng rng(seed);
    encoder_.init_params(params, buffers, rng);
    const std::size_t d = ec.embed_dim;
    params.add_uniform("critic.mlp.W0", d, hidden, d, rng);
    params.add_uniform("critic.mlp.b0", 1, hidden, d, rng);
    params.add_uniform("critic.mlp.W1", hidden, 1, hidden, rng);
    params.add_uniform("critic.mlp.b1", 1, 1, hidden, rng);
  }

  Critic(const Critic&) = delete;
  Critic& operator=(const Critic&) = delete;
  Critic(Critic&&) = default;
  Critic& operator=(Critic&&) = default;

  /// Predicted cost per instance, [B x 1].
  ad::Tensor values(std::span<const Instance> batch, ad::Mode mode) {
    const Embeddings emb = encoder_.encode(params, buffers, node_features(batch), mode);
    ad::Tensor h = ad::relu(ad::add_bias(ad::matmul(emb.graph, params["critic.mlp.W0"]), params["critic.mlp.b0"]));
    return ad::add_bias(ad::matmul(h, params["critic.mlp.W1"]), params["critic.mlp.b1"]);
  }

  /// Mean squared error against observed costs.
  ad::Tensor loss(std::span<const Instance> batch, std::span<const double> costs, ad::Mode mode) {
    const ad::Tensor v = values(batch, mode);
    if (v.value().size() != costs.size()) throw ShapeError("critic loss: one cost per instance");
    Array target = Array::matrix(costs.size(), 1);
    for (std::size_t i = 0; i < costs.size(); ++i) target[i] = costs[i];
    return ad::mean(ad::square(ad::sub(v, ad::Tensor::constant(std::move(target)))));
  }

  std::size_t hidden() const { return hidden_; }

  ParamStore params;
  BnBuffers buffers;

 private:
  Encoder encoder_;
  std::size_t hidden_ = 0;
};

struct TTestDecision {
  bool replace = false;
  stats::TTest test;
};

/// Replace the baseline policy iff the candidate's greedy costs are lower on
/// average with one-sided p < alpha.
inline TTestDecision ttest_update(std::span<const double> candidate_costs, std::span<const double> baseline_costs,
                                  double alpha = 0.05) {
  TTestDecision d;
  d.test = stats::paired_ttest_less(candidate_costs, baseline_costs);
  d.replace = d.test.mean < 0.0 && d.test.p < alpha;
  return d;
}

inline std::vector<double> costs_of(const std::vector<Solution>& sols) {
  std::vector<double> c;
  c.reserve(sols.size());
  for (const auto& s : sols) c.push_back(s.cost);
  return c;
}

inline std::vector<double> greedy_costs(AttentionModel& model, std::span<const Instance> instances) {
  return costs_of(rollout(model, instances, Decoding::greedy));
}

inline double mean_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;  // 0: before training
  double train_cost = std::numeric_limits<double>::quiet_NaN();
  double val_cost = 0.0;
  double val_gap = std::numeric_limits<double>::quiet_NaN();
  bool baseline_replaced = false;
  double p_value = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
  double seconds = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// What one training step consumed, for inspection.
struct StepTrace {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::span<const Instance> batch;
  const std::vector<Solution>* samples = nullptr;
  const std::vector<Solution>* baseline_rollouts = nullptr;  // rollout baseline only
  std::span<const double> baselines;
};

/// Counter-based random streams: batches, policy samples and evaluation sets
/// derive from (seed, stream, counter), so runs with different baselines see
/// the same instances.
struct Streams {
  static constexpr std::uint64_t model_init = 0, data = 1, sampling = 2, eval = 3, validation = 4, critic_init = 5;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    model_ = AttentionModel(cfg_.model, derive_seed(cfg_.seed, Streams::model_init));
    exp_.beta = cfg_.beta;
    if (cfg_.baseline == BaselineKind::critic) {
      critic_.emplace(cfg_.model, cfg_.critic_layers, cfg_.critic_hidden, derive_seed(cfg_.seed, Streams::critic_init));
    }
    val_ = generate_dataset(cfg_.model.problem, cfg_.n, cfg_.val_size, cfg_.prize_mode,
                            derive_seed(cfg_.seed, Streams::validation));
    if (cfg_.baseline == BaselineKind::rollout) {
      baseline_model_.emplace(model_.clone());
      refresh_eval_set();
    }
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Replaces the validation set; `optimal` (same length, or empty) enables gaps.
  void set_validation(std::vector<Instance> instances, std::vector<double> optimal = {}) {
    if (instances.empty()) throw ContractError("validation set must be non-empty");
    if (!optimal.empty() && optimal.size() != instances.size()) {
      throw ShapeError("validation optimum needs one value per instance");
    }
    val_ = std::move(instances);
    val_optimal_ = std::move(optimal);
  }

  void on_step(std::function<void(const StepTrace&)> hook) { hook_ = std::move(hook); }

  /// Greedy validation cost (and gap) of the current policy.
  EpochRecord validate() {
    EpochRecord r;
    r.epoch = epoch_;
    const auto costs = greedy_costs(model_, val_);
    r.val_cost = mean_of(costs);
    if (!val_optimal_.empty()) {
      double g = 0.0;
      for (std::size_t i = 0; i < costs.size(); ++i) g += optimality_gap(costs[i], val_optimal_[i], cfg_.model.problem);
      r.val_gap = g / static_cast<double>(costs.size());
    }
    return r;
  }

  double current_lr() const { return cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(epoch_)); }

  /// One epoch of Algorithm 1, followed by the baseline test and validation.
  EpochRecord run_epoch() {
    if (!model_.params.all_finite()) throw DivergenceError(divergence_message("policy", 0));
    if (history_.empty()) history_.push_back(validate());
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = current_lr();
    double cost_sum = 0.0;
    std::size_t cost_count = 0;
    for (std::size_t step = 0; step < cfg_.steps; ++step) {
      cost_sum += train_step(step, lr);
      cost_count += cfg_.batch;
    }
    ++epoch_;
    EpochRecord r;
    if (baseline_model_) {
      const auto cand = greedy_costs(model_, eval_set_);
      const TTestDecision d = ttest_update(cand, eval_costs_, cfg_.alpha);
      r.p_value = d.test.p;
      if (d.replace) {
        baseline_model_->load_from(model_);
        ++eval_generation_;
        refresh_eval_set();
        r.baseline_replaced = true;
      }
    }
    const EpochRecord v = validate();
    r.epoch = epoch_;
    r.val_cost = v.val_cost;
    r.val_gap = v.val_gap;
    r.train_cost = cost_count ? cost_sum / static_cast<double>(cost_count) : std::numeric_limits<double>::quiet_NaN();
    r.lr = lr;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history_.push_back(r);
    return r;
  }

  /// Runs the remaining epochs; `after_epoch` sees each record.
  const std::vector<EpochRecord>& run(const std::function<void(const EpochRecord&)>& after_epoch = {}) {
    while (epoch_ < cfg_.epochs) {
      const EpochRecord r = run_epoch();
      if (after_epoch) after_epoch(r);
    }
    return history_;
  }

  const TrainConfig& config() const { return cfg_; }
  AttentionModel& model() { return model_; }
  const AttentionModel& model() const { return model_; }
  AttentionModel* baseline_model() { return baseline_model_ ? &*baseline_model_ : nullptr; }
  Critic* critic() { return critic_ ? &*critic_ : nullptr; }
  ExponentialBaseline& exponential() { return exp_; }
  const std::vector<Instance>& eval_set() const { return eval_set_; }
  const std::vector<double>& eval_costs() const { return eval_costs_; }
  const std::vector<Instance>& validation_set() const { return val_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  std::size_t epoch() const { return epoch_; }
  std::uint64_t eval_generation() const { return eval_generation_; }

  /// Restores counters saved with a checkpoint. Load the baseline parameters
  /// first: the evaluation set costs are recomputed from them.
  void restore(std::size_t epoch, std::uint64_t eval_generation, ExponentialBaseline exp,
               std::vector<EpochRecord> history) {
    epoch_ = epoch;
    eval_generation_ = eval_generation;
    exp_ = exp;
    history_ = std::move(history);
    if (baseline_model_) refresh_eval_set();
  }

  /// Instances of training step `step` in epoch `epoch` (0-based).
  std::vector<Instance> batch_instances(std::size_t epoch, std::size_t step) const {
    const std::uint64_t global = static_cast<std::uint64_t>(epoch) * cfg_.steps + step;
    return generate_dataset(cfg_.model.problem, cfg_.n, cfg_.batch, cfg_.prize_mode,
                            derive_seed(derive_seed(cfg_.seed, Streams::data), global));
  }

 private:
  void refresh_eval_set() {
    eval_set_ = generate_dataset(cfg_.model.problem, cfg_.n, cfg_.eval_size, cfg_.prize_mode,
                                 derive_seed(derive_seed(cfg_.seed, Streams::eval), eval_generation_));
    eval_costs_ = greedy_costs(*baseline_model_, eval_set_);
  }

  /// Returns the summed sampled cost of the batch.
  double train_step(std::size_t step, double lr) {
    const std::vector<Instance> batch = batch_instances(epoch_, step);
    const std::uint64_t global = static_cast<std::uint64_t>(epoch_) * cfg_.steps + step;
    const std::uint64_t row_seed = derive_seed(derive_seed(cfg_.seed, Streams::sampling), global);
    std::vector<Rng> rngs;
    rngs.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) rngs.emplace_back(derive_seed(row_seed, i));

    RunOptions opt;
    opt.decoding = Decoding::sample;
    opt.mode = ad::Mode::train;
    opt.rngs = &rngs;
    PolicyRun run = run_policy(model_, batch, opt);
    const std::vector<double> costs = costs_of(run.solutions);

    std::vector<double> b(batch.size(), 0.0);
    std::vector<Solution> bl_rollouts;
    const bool warm = cfg_.warmup && epoch_ == 0;
    if (cfg_.baseline == BaselineKind::exponential || (cfg_.baseline == BaselineKind::rollout && warm)) {
      std::fill(b.begin(), b.end(), exp_.update(costs));
    } else if (cfg_.baseline == BaselineKind::rollout) {
      bl_rollouts = rollout(*baseline_model_, batch, Decoding::greedy);
      b = costs_of(bl_rollouts);
    } else if (cfg_.baseline == BaselineKind::critic) {
      critic_->params.zero_grad();
      const ad::Tensor v = critic_->values(batch, ad::Mode::train);
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = v.value()[i];
      Array target = Array::matrix(costs.size(), 1);
      for (std::size_t i = 0; i < costs.size(); ++i) target[i] = costs[i];
      ad::backward(ad::mean(ad::square(ad::sub(v, ad::Tensor::constant(std::move(target))))));
      AdamConfig ac;
      ac.lr = lr;
      adam_step(critic_->params, critic_->params.gradients(), ac);
      if (!critic_->params.all_finite()) throw DivergenceError(divergence_message("critic", step));
    }

    if (hook_) {
      StepTrace t;
      t.epoch = epoch_;
      t.step = step;
      t.batch = batch;
      t.samples = &run.solutions;
      t.baseline_rollouts = bl_rollouts.empty() ? nullptr : &bl_rollouts;
      t.baselines = b;
      hook_(t);
    }

    model_.params.zero_grad();
    const ad::Tensor loss = reinforce_loss(costs, b, run.log_likelihood);
    if (!std::isfinite(loss.item())) throw DivergenceError(divergence_message("policy loss", step));
    ad::backward(loss);
    AdamConfig ac;
    ac.lr = lr;
    adam_step(model_.params, model_.params.gradients(), ac);
    if (!model_.params.all_finite()) throw DivergenceError(divergence_message("policy", step));
    return std::accumulate(costs.begin(), costs.end(), 0.0);
  }

  std::string divergence_message(const char* what, std::size_t step) const {
    return std::string(what) + " parameters became non-finite at epoch " + std::to_string(epoch_ + 1) + ", step " +
           std::to_string(step) + " (lr " + std::to_string(current_lr()) + ", seed " + std::to_string(cfg_.seed) + ")";
  }

  TrainConfig cfg_;
  AttentionModel model_;
  std::optional<AttentionModel> baseline_model_;
  std::optional<Critic> critic_;
  ExponentialBaseline exp_;
  std::vector<Instance> eval_set_;
  std::vector<double> eval_costs_;
  std::uint64_t eval_generation_ = 0;
  std::vector<Instance> val_;
  std::vector<double> val_optimal_;
  std::vector<EpochRecord> history_;
  std::size_t epoch_ = 0;
  std::function<void(const StepTrace&)> hook_;
};

}  // namespace attnroute
