#pragma once

#include <cstdint>
#include <span>

#include "attnroute/decoder.hpp"
#include "attnroute/encoder.hpp"
#include "attnroute/params.hpp"
#include "attnroute/problems.hpp"

namespace attnroute {

struct ModelConfig {
  Problem problem = Problem::tsp;
  std::size_t embed_dim = 128;
  std::size_t layers = 3;
  std::size_t heads = 8;
  std::size_t ff_dim = 512;
  double clip = 10.0;

  EncoderConfig encoder() const {
    return EncoderConfig{feature_dim(problem), embed_dim, layers, heads, ff_dim, has_depot(problem)};
  }
  DecoderConfig decoder() const { return DecoderConfig{problem, embed_dim, heads, clip}; }

  void validate() const {
    encoder().validate();
    decoder().validate();
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Encoder, decoder, their parameters and the batch-norm running statistics.
/// Copying would alias parameter leaves, so only moves and clone() exist.
class AttentionModel {
 public:
  AttentionModel() = default;
  AttentionModel(ModelConfig cfg, std::uint64_t seed)
      : cfg_(cfg), encoder_("enc", cfg.encoder()), decoder_("dec", cfg.decoder()) {
    cfg_.validate();
    Rng rng(seed);
    encoder_.init_params(params, buffers, rng);
    decoder_.init_params(params, rng);
  }

  AttentionModel(const AttentionModel&) = delete;
  AttentionModel& operator=(const AttentionModel&) = delete;
  AttentionModel(AttentionModel&&) = default;
  AttentionModel& operator=(AttentionModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  Problem problem() const { return cfg_.problem; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  Embeddings encode(std::span<const Instance> batch, ad::Mode mode,
                    const ad::Mask* adjacency = nullptr) {
    for (const auto& inst : batch) {
      if (inst.problem != cfg_.problem) {
        throw ContractError("model for " + to_string(cfg_.problem) + " given a " +
                            to_string(inst.problem) + " instance");
      }
    }
    return encoder_.encode(params, buffers, node_features(batch), mode, adjacency);
  }

  AttentionModel clone() const {
    AttentionModel out;
    out.cfg_ = cfg_;
    out.encoder_ = encoder_;
    out.decoder_ = decoder_;
    out.params = params.clone();
    out.buffers = buffers;
    return out;
  }

  /// Copies parameter values and batch-norm statistics from `other`.
  void load_from(const AttentionModel& other) {
    if (!(other.cfg_ == cfg_)) throw ConfigError("load_from: model configurations differ");
    params.load_values(other.params);
    buffers = other.buffers;
  }

  ParamStore params;
  BnBuffers buffers;

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  Decoder decoder_;
};

}  // namespace attnroute
