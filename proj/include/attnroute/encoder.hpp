#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "attnroute/autodiff.hpp"
#include "attnroute/params.hpp"
#include "attnroute/problems.hpp"

namespace attnroute {

using BnBuffers = std::map<std::string, ad::BatchNormStats>;

struct EncoderConfig {
  std::size_t input_dim = 2;   // per-customer feature width
  std::size_t embed_dim = 128;
  std::size_t layers = 3;
  std::size_t heads = 8;
  std::size_t ff_dim = 512;
  bool depot = false;          // depot row gets its own projection of its coordinates

  std::size_t head_dim() const { return embed_dim / heads; }

  void validate() const {
    if (layers < 1) throw ConfigError("encoder needs at least one attention layer");
    if (heads == 0 || embed_dim % heads != 0) {
      throw ConfigError("embedding dimension must be divisible by the number of heads");
    }
    if (input_dim == 0 || ff_dim == 0) throw ConfigError("encoder dimensions must be positive");
  }
};

/// Per-customer feature width of each problem: coordinates plus demand,
/// prize, or prize and penalty.
inline std::size_t feature_dim(Problem p) {
  switch (p) {
    case Problem::tsp: return 2;
    case Problem::cvrp:
    case Problem::sdvrp:
    case Problem::op: return 3;
    case Problem::pctsp:
    case Problem::spctsp: return 4;
  }
  throw ContractError("unknown problem tag");
}

/// Encoder inputs for a batch of same-sized instances of one problem.
struct NodeFeatures {
  std::size_t batch = 0;
  std::size_t customers = 0;
  Array depot;  // [batch x 2], empty when the problem has no depot
  Array nodes;  // [batch*customers x input_dim]

  std::size_t nodes_per_instance() const { return customers + (depot.empty() ? 0 : 1); }
};

inline NodeFeatures node_features(std::span<const Instance> batch) {
  if (batch.empty()) throw ShapeError("node_features of an empty batch");
  const Problem p = batch.front().problem;
  const std::size_t n = batch.front().n;
  const std::size_t dx = feature_dim(p);
  NodeFeatures f;
  f.batch = batch.size();
  f.customers = n;
  f.nodes = Array::matrix(batch.size() * n, dx);
  if (has_depot(p)) f.depot = Array::matrix(batch.size(), 2);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Instance& inst = batch[b];
    if (inst.problem != p || inst.n != n) {
      throw ContractError("a batch must share problem and size");
    }
    if (has_depot(p)) {
      f.depot(b, 0) = inst.depot->x;
      f.depot(b, 1) = inst.depot->y;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double* row = f.nodes.data() + (b * n + i) * dx;
      row[0] = inst.coords[i].x;
      row[1] = inst.coords[i].y;
      if (is_vrp(p)) {
        row[2] = inst.demand(i + 1);
      } else if (p == Problem::op) {
        row[2] = inst.prizes[i];
      } else if (is_pctsp(p)) {
        row[2] = inst.prizes[i];
        row[3] = inst.penalties[i];
      }
    }
  }
  return f;
}

struct Embeddings {
  ad::Tensor nodes;  // [batch*nodes_per_instance x embed_dim]
  ad::Tensor graph;  // [batch x embed_dim], mean of each instance's node rows
  std::size_t batch = 0;
  std::size_t nodes_per_instance = 0;
};

/// Stack of attention layers (MHA and feed-forward sublayers, each with a
/// skip connection and batch normalization) over a learned linear embedding
/// of the node features. No positional information enters, so the output is
/// equivariant to the order of the input nodes.
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::string prefix, EncoderConfig cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    cfg_.validate();
  }

  const EncoderConfig& config() const { return cfg_; }

  std::string name(const std::string& leaf) const { return prefix_ + "." + leaf; }
  std::string layer_name(std::size_t layer, const std::string& leaf) const {
    return prefix_ + ".layer" + std::to_string(layer) + "." + leaf;
  }

  void init_params(ParamStore& store, BnBuffers& buffers, Rng& rng) const {
    const std::size_t d = cfg_.embed_dim;
    store.add_uniform(name("embed.W"), cfg_.input_dim, d, cfg_.input_dim, rng);
    store.add_uniform(name("embed.b"), 1, d, cfg_.input_dim, rng);
    if (cfg_.depot) {
      store.add_uniform(name("embed_depot.W"), 2, d, 2, rng);
      store.add_uniform(name("embed_depot.b"), 1, d, 2, rng);
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      for (const char* w : {"mha.Wq", "mha.Wk", "mha.Wv", "mha.Wo"}) {
        store.add_uniform(layer_name(l, w), d, d, d, rng);
      }
      store.add_uniform(layer_name(l, "bn1.w"), 1, d, d, rng);
      store.add_uniform(layer_name(l, "bn1.b"), 1, d, d, rng);
      store.add_uniform(layer_name(l, "ff.W0"), d, cfg_.ff_dim, d, rng);
      store.add_uniform(layer_name(l, "ff.b0"), 1, cfg_.ff_dim, d, rng);
      store.add_uniform(layer_name(l, "ff.W1"), cfg_.ff_dim, d, cfg_.ff_dim, rng);
      store.add_uniform(layer_name(l, "ff.b1"), 1, d, cfg_.ff_dim, rng);
      store.add_uniform(layer_name(l, "bn2.w"), 1, d, d, rng);
      store.add_uniform(layer_name(l, "bn2.b"), 1, d, d, rng);
      buffers[layer_name(l, "bn1")] = ad::BatchNormStats::fresh(d);
      buffers[layer_name(l, "bn2")] = ad::BatchNormStats::fresh(d);
    }
  }

  /// Initial embeddings h^(0): one linear projection for customers and, when
  /// configured, a separate one for the depot. Rows are laid out per
  /// instance with the depot first.
  ad::Tensor init_embed(const ParamStore& store, const NodeFeatures& f) const {
    if (f.nodes.cols() != cfg_.input_dim) {
      throw ShapeError("init_embed: features have width " + std::to_string(f.nodes.cols()) +
                       ", encoder expects " + std::to_string(cfg_.input_dim));
    }
    if (f.depot.empty() == cfg_.depot) {
      throw ShapeError("init_embed: depot features do not match encoder configuration");
    }
    ad::Tensor customers = ad::add_bias(ad::matmul(ad::Tensor::constant(f.nodes), store[name("embed.W")]),
                                        store[name("embed.b")]);
    if (!cfg_.depot) return customers;
    ad::Tensor depot = ad::add_bias(ad::matmul(ad::Tensor::constant(f.depot), store[name("embed_depot.W")]),
                                    store[name("embed_depot.b")]);
    return ad::interleave_blocks(depot, customers, f.batch);
  }

  /// Multi-head attention sublayer. `adjacency` (nodes x nodes, shared by
  /// the batch) restricts which nodes exchange messages; null means fully
  /// connected with self-connections.
  ad::Tensor mha(const ParamStore& store, std::size_t layer, const ad::Tensor& h, std::size_t batch,
                 std::size_t nodes, const ad::Mask* adjacency = nullptr,
                 std::vector<double>* weights = nullptr) const {
    ad::Tensor q = ad::matmul(h, store[layer_name(layer, "mha.Wq")]);
    ad::Tensor k = ad::matmul(h, store[layer_name(layer, "mha.Wk")]);
    ad::Tensor v = ad::matmul(h, store[layer_name(layer, "mha.Wv")]);
    ad::Mask expanded;
    if (adjacency) {
      if (adjacency->size() != nodes * nodes) throw ShapeError("adjacency must be nodes x nodes");
      expanded.reserve(batch * nodes * nodes);
      for (std::size_t b = 0; b < batch; ++b) expanded.insert(expanded.end(), adjacency->begin(), adjacency->end());
    }
    ad::Tensor heads = ad::multi_head_attention(q, k, v, cfg_.heads, nodes, nodes,
                                                adjacency ? &expanded : nullptr, weights);
    return ad::matmul(heads, store[layer_name(layer, "mha.Wo")]);
  }

  ad::Tensor feed_forward(const ParamStore& store, std::size_t layer, const ad::Tensor& h) const {
    ad::Tensor hidden = ad::relu(ad::add_bias(ad::matmul(h, store[layer_name(layer, "ff.W0")]),
                                              store[layer_name(layer, "ff.b0")]));
    return ad::add_bias(ad::matmul(hidden, store[layer_name(layer, "ff.W1")]),
                        store[layer_name(layer, "ff.b1")]);
  }

  ad::Tensor attention_layer(const ParamStore& store, BnBuffers& buffers, std::size_t layer,
                             const ad::Tensor& h, std::size_t batch, std::size_t nodes, ad::Mode mode,
                             const ad::Mask* adjacency = nullptr) const {
    ad::Tensor mixed = ad::add(h, mha(store, layer, h, batch, nodes, adjacency));
    ad::Tensor hhat = ad::batchnorm(mixed, store[layer_name(layer, "bn1.w")],
                                    store[layer_name(layer, "bn1.b")],
                                    buffers.at(layer_name(layer, "bn1")), mode);
    ad::Tensor ff = ad::add(hhat, feed_forward(store, layer, hhat));
    return ad::batchnorm(ff, store[layer_name(layer, "bn2.w")], store[layer_name(layer, "bn2.b")],
                         buffers.at(layer_name(layer, "bn2")), mode);
  }

  Embeddings encode(const ParamStore& store, BnBuffers& buffers, const NodeFeatures& f, ad::Mode mode,
                    const ad::Mask* adjacency = nullptr) const {
    const std::size_t nodes = f.nodes_per_instance();
    ad::Tensor h = init_embed(store, f);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      h = attention_layer(store, buffers, l, h, f.batch, nodes, mode, adjacency);
    }
    Embeddings e;
    e.graph = ad::segment_mean(h, f.batch);
    e.nodes = std::move(h);
    e.batch = f.batch;
    e.nodes_per_instance = nodes;
    return e;
  }

 private:
  std::string prefix_ = "enc";
  EncoderConfig cfg_;
};

}  // namespace attnroute
