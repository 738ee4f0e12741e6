#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "must/ldm.hpp"
#include "must/model.hpp"

namespace must {

struct ModalityMask {
  bool has_pathology = true;
  bool has_genomics = true;

  bool complete() const { return has_pathology && has_genomics; }
  bool any() const { return has_pathology || has_genomics; }
};

struct PhaseTimings {
  double encode_ms = 0.0;
  double recover_ms = 0.0;
  double generate_ms = 0.0;
  double head_ms = 0.0;
  double total_ms = 0.0;
};

struct InferenceResult {
  HazardPrediction prediction;
  std::vector<double> recovered_c;  // c-tilde; empty on the complete path
  std::vector<double> generated_u;  // present iff exactly one modality missing
  ModalityMask mask;
  PhaseTimings timing;
};

struct MissingInferenceOptions {
  int ddim_steps = 50;
  int ddim_samples = 5;
  bool zero_impute = false;
  std::uint64_t seed = 1;
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point a) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - a)
      .count();
}

template <class T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(t.value()[i]);
  return out;
}

}  // namespace detail

/// Complete-data path: h = phi([u^_P ; c^ ; u^_G]).
template <class T>
InferenceResult predict_complete(const MustModel<T>& model,
                                 const PatientRecord& rec) {
  InferenceResult res;
  res.mask = ModalityMask{true, true};
  const auto t0 = std::chrono::steady_clock::now();
  EncoderOutputs<T> enc = model.encode(rec);
  Decomposition<T> dec = model.decompose(enc);
  res.timing.encode_ms = detail::ms_since(t0);
  const auto t1 = std::chrono::steady_clock::now();
  res.prediction = model.predict_from_fused(fuse_for_prediction(dec));
  res.timing.head_ms = detail::ms_since(t1);
  res.timing.total_ms = detail::ms_since(t0);
  return res;
}

/// Algebraic shared-component recovery from one modality:
/// c~ = g_m - (I - P) u_m.
template <class T>
std::vector<double> recover_shared(const MustModel<T>& model,
                                   Modality available,
                                   const PatientRecord& rec) {
  const FloatMatrix& tokens = available == Modality::kPathology
                                  ? rec.path_tokens
                                  : rec.gene_tokens;
  auto single = model.encode_single(tokens, available);
  Tensor<T> hat_u = model.projector().project_specific(single.u);
  return detail::to_doubles(sub(single.g, hat_u));
}

/// Missing-modality path: recover c~ from the available side, generate the
/// absent specific component by DDIM (or substitute zeros), and feed the
/// head with slot order preserved.
template <class T>
InferenceResult predict_missing(const MustModel<T>& model,
                                const Denoiser<T>* denoiser_path,
                                const Denoiser<T>* denoiser_gene,
                                const NoiseSchedule& schedule,
                                const PatientRecord& rec, ModalityMask mask,
                                const MissingInferenceOptions& opts) {
  if (!mask.any())
    throw ConfigError("predict_missing: both modalities missing is undefined");
  if (mask.complete()) return predict_complete(model, rec);

  const Modality avail =
      mask.has_pathology ? Modality::kPathology : Modality::kGenomics;
  const Modality missing =
      mask.has_pathology ? Modality::kGenomics : Modality::kPathology;

  InferenceResult res;
  res.mask = mask;
  const auto t0 = std::chrono::steady_clock::now();
  const FloatMatrix& tokens =
      avail == Modality::kPathology ? rec.path_tokens : rec.gene_tokens;
  auto single = model.encode_single(tokens, avail);
  Tensor<T> hat_u_avail = model.projector().project_specific(single.u);
  res.timing.encode_ms = detail::ms_since(t0);

  const auto t1 = std::chrono::steady_clock::now();
  Tensor<T> c_tilde = sub(single.g, hat_u_avail);
  res.recovered_c = detail::to_doubles(c_tilde);
  res.timing.recover_ms = detail::ms_since(t1);

  const auto t2 = std::chrono::steady_clock::now();
  const std::size_t d = std::size_t(model.config().encoder.embed_dim);
  if (opts.zero_impute) {
    res.generated_u.assign(d, 0.0);
  } else {
    const Denoiser<T>* den =
        missing == Modality::kPathology ? denoiser_path : denoiser_gene;
    if (!den)
      throw ConfigError(std::string("predict_missing: no denoiser for "
                                    "missing modality ") +
                        modality_tag(missing));
    if (den->config().width != model.config().encoder.embed_dim)
      throw ConfigError("predict_missing: denoiser width does not match model");
    const std::vector<double> cond_cls =
        detail::to_doubles(model.encoder().cls_u(missing));
    const std::uint64_t patient_seed =
        mix_seed(mix_seed(opts.seed, fnv1a64(rec.id)),
                 missing == Modality::kPathology ? 0x50ULL : 0x47ULL);
    const SharedProjector<T>* proj =
        model.config().projector_mode == ProjectorMode::kExact
            ? &model.projector()
            : nullptr;
    res.generated_u =
        ddim_sample(*den, schedule, res.recovered_c, cond_cls, opts.ddim_steps,
                    opts.ddim_samples, patient_seed, proj);
  }
  res.timing.generate_ms = detail::ms_since(t2);

  const auto t3 = std::chrono::steady_clock::now();
  std::vector<T> gen(d);
  for (std::size_t i = 0; i < d; ++i) gen[i] = T(res.generated_u[i]);
  Tensor<T> u_gen = Tensor<T>::from_vector(1, d, std::move(gen));
  Tensor<T> fused = missing == Modality::kGenomics
                        ? hcat<T>({hat_u_avail, c_tilde, u_gen})
                        : hcat<T>({u_gen, c_tilde, hat_u_avail});
  res.prediction = model.predict_from_fused(fused);
  res.timing.head_ms = detail::ms_since(t3);
  res.timing.total_ms = detail::ms_since(t0);
  return res;
}

}  // namespace must
