#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "must/decomp.hpp"
#include "must/encoders.hpp"
#include "must/survival.hpp"

namespace must {

struct ModelConfig {
  EncoderConfig encoder;
  int rank = 64;
  ProjectorMode projector_mode = ProjectorMode::kExact;
  int hazard_bins = 4;
  int head_hidden = 256;
  NllVariant nll_variant = NllVariant::kHazardOnly;

  void validate() const {
    encoder.validate();
    if (rank < 1 || rank > encoder.embed_dim)
      throw ConfigError("rank: must satisfy 1 <= r <= embed_dim");
    if (hazard_bins < 1) throw ConfigError("hazard_bins: must be >= 1");
    if (head_hidden < 1) throw ConfigError("head_hidden: must be >= 1");
  }
};

/// The full multimodal survival model: both encoders, the shared-subspace
/// projector, and the hazard head, all registered in one parameter store.
/// Training mutates parameters and is single-threaded per instance; frozen
/// forward passes are safe to run concurrently.
template <class T>
class MustModel {
 public:
  MustModel(ModelConfig cfg, std::uint64_t init_seed)
      : cfg_(std::move(cfg)), init_seed_(init_seed) {
    cfg_.validate();
    Rng rng(mix_seed(init_seed, 0x4d4f44454cULL));  // independent init stream
    encoder_.emplace(cfg_.encoder, store_, rng);
    projector_ = SharedProjector<T>::create(store_, cfg_.encoder.embed_dim,
                                            cfg_.rank, rng);
    head_ = HazardHead<T>::create(store_, 3 * cfg_.encoder.embed_dim,
                                  cfg_.head_hidden, cfg_.hazard_bins, rng);
  }

  MustModel(const MustModel&) = delete;
  MustModel& operator=(const MustModel&) = delete;

  EncoderOutputs<T> encode(const PatientRecord& rec) const {
    return encoder_->encode(rec);
  }

  typename Encoder<T>::SingleOutputs encode_single(const FloatMatrix& tokens,
                                                   Modality m) const {
    return encoder_->encode_single(tokens, m);
  }

  Decomposition<T> decompose(const EncoderOutputs<T>& enc) const {
    return project(projector_, enc);
  }

  typename HazardHead<T>::Forward head_forward(const Tensor<T>& fused) const {
    return head_.forward(fused, &clamp_events_);
  }

  HazardPrediction predict_from_fused(const Tensor<T>& fused) const {
    return head_.predict(fused);
  }

  Encoder<T>& encoder() { return *encoder_; }
  const Encoder<T>& encoder() const { return *encoder_; }
  SharedProjector<T>& projector() { return projector_; }
  const SharedProjector<T>& projector() const { return projector_; }
  HazardHead<T>& head() { return head_; }
  const HazardHead<T>& head() const { return head_; }
  ParamStore<T>& params() { return store_; }
  const ModelConfig& config() const { return cfg_; }
  std::uint64_t init_seed() const { return init_seed_; }
  std::atomic<long>& clamp_events() const { return clamp_events_; }

  /// Warm-up stage parameters: token embeddings, global aggregators, head.
  std::vector<Parameter<T>*> stage1_params() {
    std::vector<Parameter<T>*> out;
    for (const char* prefix :
         {"path.embed", "gene.embed", "path.agg", "gene.agg", "head"}) {
      for (auto* p : store_.with_prefix(prefix)) out.push_back(p);
    }
    return out;
  }

  /// Parameters that only the decomposition objective touches: the specific
  /// extraction stacks, cross attention, and the subspace basis.
  std::vector<Parameter<T>*> decomposition_params() {
    std::vector<Parameter<T>*> out;
    for (const char* prefix : {"path.spec", "gene.spec", "cross", "proj"}) {
      for (auto* p : store_.with_prefix(prefix)) out.push_back(p);
    }
    return out;
  }

  std::vector<Parameter<T>*> all_params() { return store_.all(); }

 private:
  ModelConfig cfg_;
  std::uint64_t init_seed_;
  ParamStore<T> store_;
  std::optional<Encoder<T>> encoder_;
  SharedProjector<T> projector_;
  HazardHead<T> head_;
  mutable std::atomic<long> clamp_events_{0};
};

}  // namespace must
