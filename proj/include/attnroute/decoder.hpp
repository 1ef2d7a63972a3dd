#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "attnroute/autodiff.hpp"
#include "attnroute/encoder.hpp"
#include "attnroute/params.hpp"
#include "attnroute/problems.hpp"

namespace attnroute {

struct DecoderConfig {
  Problem problem = Problem::tsp;
  std::size_t embed_dim = 128;
  std::size_t heads = 8;
  double clip = 10.0;

  /// TSP: [graph, last, first]. Others: [graph, last, one scalar].
  std::size_t context_dim() const {
    return problem == Problem::tsp ? 3 * embed_dim : 2 * embed_dim + 1;
  }

  void validate() const {
    if (heads == 0 || embed_dim % heads != 0) {
      throw ConfigError("decoder embedding dimension must be divisible by the number of heads");
    }
    if (!(clip > 0.0)) throw ConfigError("logit clipping constant must be positive");
  }
};

/// Per-row gathers that map decoding rows onto encoder instances.
/// Row r decodes instance `instance_of[r]`.
inline ad::Tensor gather_blocks(const ad::Tensor& x, std::size_t block,
                                std::span<const std::size_t> instance_of) {
  std::vector<std::size_t> index;
  index.reserve(instance_of.size() * block);
  for (std::size_t b : instance_of) {
    for (std::size_t i = 0; i < block; ++i) index.push_back(b * block + i);
  }
  return ad::gather_rows(x, std::move(index));
}

/// Keys and values projected once per decoding episode.
struct DecoderCache {
  ad::Tensor nodes;       // [rows*N x d_h]
  ad::Tensor graph;       // [rows x d_h]
  ad::Tensor glimpse_k;   // [rows*N x d_h]
  ad::Tensor glimpse_v;   // [rows*N x d_h]
  ad::Tensor logit_k;     // [rows*N x d_h]
  std::size_t rows = 0;
  std::size_t nodes_per_row = 0;
};

struct StepDistribution {
  ad::Tensor logits;     // clipped compatibilities before masking, [rows x N]
  ad::Tensor log_probs;  // [rows x N], -inf where masked
  ad::Mask mask;         // rows*N flags

  /// Probabilities of one row; masked entries are exactly 0.
  std::vector<double> probs(std::size_t row) const {
    const Array& lp = log_probs.value();
    const std::size_t n = lp.cols();
    std::vector<double> p(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[row * n + j]) p[j] = std::exp(lp[row * n + j]);
    }
    return p;
  }
};

/// Single-query decoder: a context node attends to the node embeddings with
/// M heads (the glimpse), then one clipped single-head attention layer gives
/// the logits over feasible nodes.
class Decoder {
 public:
  Decoder() = default;
  Decoder(std::string prefix, DecoderConfig cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    cfg_.validate();
  }

  const DecoderConfig& config() const { return cfg_; }
  std::string name(const std::string& leaf) const { return prefix_ + "." + leaf; }

  void init_params(ParamStore& store, Rng& rng) const {
    const std::size_t d = cfg_.embed_dim;
    const std::size_t ctx = cfg_.context_dim();
    if (cfg_.problem == Problem::tsp) {
      store.add_uniform(name("v_last"), 1, d, d, rng);
      store.add_uniform(name("v_first"), 1, d, d, rng);
    }
    store.add_uniform(name("glimpse.Wq"), ctx, d, ctx, rng);
    store.add_uniform(name("glimpse.Wk"), d, d, d, rng);
    store.add_uniform(name("glimpse.Wv"), d, d, d, rng);
    store.add_uniform(name("glimpse.Wo"), d, d, d, rng);
    store.add_uniform(name("logit.Wq"), d, d, d, rng);
    store.add_uniform(name("logit.Wk"), d, d, d, rng);
    if (cfg_.problem == Problem::sdvrp) {
      store.add_uniform(name("glimpse.Wd_k"), 1, d, 1, rng);
      store.add_uniform(name("glimpse.Wd_v"), 1, d, 1, rng);
      store.add_uniform(name("logit.Wd_k"), 1, d, 1, rng);
    }
  }

  /// Projects keys and values of the encoder output and lays them out per
  /// decoding row. An empty `instance_of` means one row per instance.
  DecoderCache precompute(const ParamStore& store, const Embeddings& emb,
                          std::span<const std::size_t> instance_of = {}) const {
    const std::size_t N = emb.nodes_per_instance;
    DecoderCache c;
    c.nodes_per_row = N;
    ad::Tensor gk = ad::matmul(emb.nodes, store[name("glimpse.Wk")]);
    ad::Tensor gv = ad::matmul(emb.nodes, store[name("glimpse.Wv")]);
    ad::Tensor lk = ad::matmul(emb.nodes, store[name("logit.Wk")]);
    if (instance_of.empty()) {
      c.rows = emb.batch;
      c.nodes = emb.nodes;
      c.graph = emb.graph;
      c.glimpse_k = gk;
      c.glimpse_v = gv;
      c.logit_k = lk;
    } else {
      c.rows = instance_of.size();
      c.nodes = gather_blocks(emb.nodes, N, instance_of);
      c.graph = gather_blocks(emb.graph, 1, instance_of);
      c.glimpse_k = gather_blocks(gk, N, instance_of);
      c.glimpse_v = gather_blocks(gv, N, instance_of);
      c.logit_k = gather_blocks(lk, N, instance_of);
    }
    return c;
  }

  /// Raw context vectors, one row per decoding row.
  ad::Tensor context(const ParamStore& store, const DecoderCache& c,
                     std::span<const DecodeState> states) const {
    if (states.size() != c.rows) throw ShapeError("decoder context: one state per row required");
    const std::size_t N = c.nodes_per_row;
    const std::size_t R = c.rows;
    if (cfg_.problem == Problem::tsp) {
      // Index R*N selects the placeholder appended after the node rows.
      std::vector<std::size_t> last(R), first(R);
      for (std::size_t r = 0; r < R; ++r) {
        const DecodeState& s = states[r];
        last[r] = s.step == 0 ? R * N : r * N + static_cast<std::size_t>(s.last);
        first[r] = s.step == 0 ? R * N : r * N + static_cast<std::size_t>(s.first);
      }
      ad::Tensor with_last = ad::interleave_blocks(c.nodes, store[name("v_last")], 1);
      ad::Tensor with_first = ad::interleave_blocks(c.nodes, store[name("v_first")], 1);
      return ad::concat_cols({c.graph, ad::gather_rows(with_last, std::move(last)),
                              ad::gather_rows(with_first, std::move(first))});
    }
    std::vector<std::size_t> last(R);
    Array scalar = Array::matrix(R, 1);
    for (std::size_t r = 0; r < R; ++r) {
      const DecodeState& s = states[r];
      last[r] = r * N + static_cast<std::size_t>(s.last < 0 ? 0 : s.last);
      scalar[r] = context_scalar(s);
    }
    return ad::concat_cols({c.graph, ad::gather_rows(c.nodes, std::move(last)),
                            ad::Tensor::constant(std::move(scalar))});
  }

  /// Remaining capacity (VRP), remaining length (OP) or remaining prize to
  /// collect (PCTSP).
  double context_scalar(const DecodeState& s) const {
    switch (cfg_.problem) {
      case Problem::tsp: throw ContractError("TSP context has no scalar slot");
      case Problem::cvrp:
      case Problem::sdvrp: return s.remaining_capacity;
      case Problem::op: return s.remaining_length;
      case Problem::pctsp:
      case Problem::spctsp: return s.remaining_prize;
    }
    throw ContractError("unknown problem tag");
  }

  /// Remaining demand column [rows*N x 1] for the split-delivery key/value
  /// adjustment; the depot row is 0.
  static Array demand_column(std::span<const DecodeState> states, std::size_t N) {
    Array col = Array::matrix(states.size() * N, 1);
    for (std::size_t r = 0; r < states.size(); ++r) {
      for (std::size_t j = 1; j < N; ++j) col[r * N + j] = states[r].remaining_demand[j];
    }
    return col;
  }

  ad::Tensor glimpse(const ParamStore& store, const DecoderCache& c, const ad::Tensor& ctx,
                     const ad::Tensor& keys, const ad::Tensor& values, const ad::Mask& mask,
                     std::vector<double>* weights = nullptr) const {
    ad::Tensor q = ad::matmul(ctx, store[name("glimpse.Wq")]);
    ad::Tensor heads = ad::multi_head_attention(q, keys, values, cfg_.heads, 1, c.nodes_per_row,
                                                &mask, weights);
    return ad::matmul(heads, store[name("glimpse.Wo")]);
  }

  /// C * tanh(q.k / sqrt(d_h)) for every node, before masking.
  ad::Tensor output_logits(const ParamStore& store, const DecoderCache& c, const ad::Tensor& glimpsed,
                           const ad::Tensor& keys) const {
    ad::Tensor q = ad::matmul(glimpsed, store[name("logit.Wq")]);
    return ad::scale(ad::tanh(ad::compatibility(q, keys, 1, c.nodes_per_row)), cfg_.clip);
  }

  StepDistribution step(const ParamStore& store, const DecoderCache& c,
                        std::span<const DecodeState> states, ad::Mask mask) const {
    const std::size_t N = c.nodes_per_row;
    if (mask.size() != c.rows * N) throw ShapeError("decoder step: mask size mismatch");
    for (std::size_t r = 0; r < c.rows; ++r) {
      bool any = false;
      for (std::size_t j = 0; j < N; ++j) any = any || mask[r * N + j];
      if (!any) throw InvalidMaskError("decoder row " + std::to_string(r) + " has no feasible node");
    }
    ad::Tensor gk = c.glimpse_k;
    ad::Tensor gv = c.glimpse_v;
    ad::Tensor lk = c.logit_k;
    if (cfg_.problem == Problem::sdvrp) {
      ad::Tensor delta = ad::Tensor::constant(demand_column(states, N));
      gk = ad::add(gk, ad::matmul(delta, store[name("glimpse.Wd_k")]));
      gv = ad::add(gv, ad::matmul(delta, store[name("glimpse.Wd_v")]));
      lk = ad::add(lk, ad::matmul(delta, store[name("logit.Wd_k")]));
    }
    ad::Tensor ctx = context(store, c, states);
    ad::Tensor g = glimpse(store, c, ctx, gk, gv, mask);
    StepDistribution out;
    out.logits = output_logits(store, c, g, lk);
    out.log_probs = ad::log_softmax_last(out.logits, &mask);
    out.mask = std::move(mask);
    return out;
  }

 private:
  std::string prefix_ = "dec";
  DecoderConfig cfg_;
};

}  // namespace attnroute
