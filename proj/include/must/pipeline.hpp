#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "must/evalkit.hpp"
#include "must/inference.hpp"
#include "must/ldm.hpp"
#include "must/trainer.hpp"

namespace must {

struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  LdmTrainConfig ldm;
  int ddim_steps = 50;
  int ddim_samples = 5;
  std::uint64_t master_seed = 1;
  int jobs = 1;
  bool with_ldm = true;       // train denoisers, run missing scenarios
  bool with_unimodal = true;  // train single-modality ablation arms
};

/// Per-patient cosine diagnostics over the pair set of the decomposition
/// analysis: specific-vs-specific, shared-vs-shared, global-vs-global, and
/// the reconstruction fidelity cos(g, u^ + c^) per modality, plus the two
/// intra-modal structural pairs.
struct CosSimReport {
  std::vector<std::string> ids;
  std::map<std::string, std::vector<double>> pairs;

  static const std::vector<std::string>& pair_names() {
    static const std::vector<std::string> names = {
        "cos_u_p_u_g",      "cos_chat_pg_gp",      "cos_g_p_g_g",
        "cos_g_p_recon",    "cos_g_g_recon",       "abs_cos_u_p_chat_pg",
        "abs_cos_u_g_chat_gp"};
    return names;
  }

  std::map<std::string, double> means() const {
    std::map<std::string, double> out;
    for (const auto& [name, values] : pairs) {
      double s = 0;
      for (double v : values) s += v;
      out[name] = values.empty() ? 0.0 : s / double(values.size());
    }
    return out;
  }

  void append(const CosSimReport& other) {
    ids.insert(ids.end(), other.ids.begin(), other.ids.end());
    for (const auto& [name, values] : other.pairs) {
      auto& dst = pairs[name];
      dst.insert(dst.end(), values.begin(), values.end());
    }
  }
};

struct FoldOutcome {
  int fold = 0;
  std::vector<std::string> test_ids;
  std::vector<double> times;
  std::vector<int> events;
  std::map<std::string, std::vector<double>> scenario_risks;
  CosSimReport cossim;
  double complete_ms_per_patient = 0.0;
  double missing_ms_per_patient = 0.0;
};

struct CrossValResult {
  std::vector<FoldOutcome> folds;
  std::map<std::string, FoldMetrics> metrics;  // scenario -> per-fold C-index
  CosSimReport cossim;
  std::vector<std::string> pooled_ids;
  std::vector<double> pooled_times;
  std::vector<int> pooled_events;
  std::map<std::string, std::vector<double>> pooled_risks;
  double complete_ms_per_patient = 0.0;
  double missing_ms_per_patient = 0.0;
};

namespace detail {

template <class T>
std::vector<double> values_of(const Tensor<T>& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(t.value()[i]);
  return out;
}

inline std::vector<double> add_vecs(const std::vector<double>& a,
                                    const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace detail

/// Cosine diagnostics for one patient under the current (frozen) parameters.
template <class T>
void append_cossim_row(CosSimReport& report, const MustModel<T>& model,
                       const PatientRecord& rec) {
  EncoderOutputs<T> enc = model.encode(rec);
  Decomposition<T> dec = model.decompose(enc);
  const auto g_p = detail::values_of(enc.g_path);
  const auto g_g = detail::values_of(enc.g_gene);
  const auto u_p = detail::values_of(dec.hat_u_p);
  const auto u_g = detail::values_of(dec.hat_u_g);
  const auto c_pg = detail::values_of(dec.hat_c_pg);
  const auto c_gp = detail::values_of(dec.hat_c_gp);
  report.ids.push_back(rec.id);
  report.pairs["cos_u_p_u_g"].push_back(cosine_similarity(u_p, u_g));
  report.pairs["cos_chat_pg_gp"].push_back(cosine_similarity(c_pg, c_gp));
  report.pairs["cos_g_p_g_g"].push_back(cosine_similarity(g_p, g_g));
  report.pairs["cos_g_p_recon"].push_back(
      cosine_similarity(g_p, detail::add_vecs(u_p, c_gp)));
  report.pairs["cos_g_g_recon"].push_back(
      cosine_similarity(g_g, detail::add_vecs(u_g, c_pg)));
  report.pairs["abs_cos_u_p_chat_pg"].push_back(
      std::abs(cosine_similarity(u_p, c_pg)));
  report.pairs["abs_cos_u_g_chat_gp"].push_back(
      std::abs(cosine_similarity(u_g, c_gp)));
}

/// Decomposition diagnostics over a patient set (test fold or whole cohort).
template <class T>
CosSimReport decomposition_report(const MustModel<T>& model,
                                  const Cohort& cohort,
                                  const std::vector<std::string>& ids) {
  CosSimReport report;
  for (const auto& id : ids) {
    const PatientRecord* rec = cohort.find(id);
    if (!rec) throw ConfigError("decomposition_report: unknown id " + id);
    append_cossim_row(report, model, *rec);
  }
  return report;
}

/// Builds the frozen-model training set for one denoiser (Eq.-10 pairing:
/// the u^_G generator is conditioned on c^_{G<-P}, and vice versa). Unpaired
/// patients contribute their available component with the recovered c~ as a
/// surrogate condition.
template <class T>
std::vector<LdmExample> ldm_examples(const MustModel<T>& model,
                                     const Cohort& cohort,
                                     const std::vector<std::string>& ids,
                                     Modality target, double missing_rate,
                                     std::uint64_t missing_seed) {
  std::vector<LdmExample> out;
  const std::vector<double> cls = detail::values_of(model.encoder().cls_u(target));
  for (const auto& id : ids) {
    const PatientRecord* rec = cohort.find(id);
    if (!rec) throw ConfigError("ldm_examples: unknown id " + id);
    const auto missing = training_missing_assignment(missing_seed, missing_rate, id);
    LdmExample ex;
    ex.cond_cls = cls;
    if (!missing) {
      EncoderOutputs<T> enc = model.encode(*rec);
      Decomposition<T> dec = model.decompose(enc);
      if (target == Modality::kGenomics) {
        ex.z0 = detail::values_of(dec.hat_u_g);
        ex.cond_c = detail::values_of(dec.hat_c_gp);
      } else {
        ex.z0 = detail::values_of(dec.hat_u_p);
        ex.cond_c = detail::values_of(dec.hat_c_pg);
      }
      out.push_back(std::move(ex));
    } else if (*missing != target) {
      // The target modality is the available one: its specific component is
      // real, and c~ recovered from it stands in for the exact c-hat.
      const FloatMatrix& tokens = target == Modality::kPathology
                                      ? rec->path_tokens
                                      : rec->gene_tokens;
      auto single = model.encode_single(tokens, target);
      Tensor<T> hat_u = model.projector().project_specific(single.u);
      ex.z0 = detail::values_of(hat_u);
      ex.cond_c = detail::values_of(sub(single.g, hat_u));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

/// Single-modality ablation arm: warm-up objective on one modality only,
/// evaluated with zeroed noise slots. Returns risks for the test ids.
template <class T>
std::vector<double> train_eval_unimodal(const Cohort& cohort,
                                        const PipelineConfig& cfg,
                                        Modality modality,
                                        const std::vector<std::string>& train_ids,
                                        const std::vector<std::string>& test_ids,
                                        std::uint64_t seed) {
  MustModel<T> model(cfg.model, mix_seed(seed, 0x554e49ULL));
  std::vector<Parameter<T>*> params;
  const char* embed_prefix =
      modality == Modality::kPathology ? "path.embed" : "gene.embed";
  const char* agg_prefix =
      modality == Modality::kPathology ? "path.agg" : "gene.agg";
  for (auto* p : model.params().with_prefix(embed_prefix)) params.push_back(p);
  for (auto* p : model.params().with_prefix(agg_prefix)) params.push_back(p);
  for (auto* p : model.params().with_prefix("head")) params.push_back(p);
  AdamW<T> opt(params, OptimConfig{cfg.train.lr_stage1, cfg.train.weight_decay,
                                   0.9, 0.999, 1e-8, cfg.train.decay_mode});
  Rng noise_rng(mix_seed(seed, 0x554e4fULL));
  const int epochs = cfg.train.stage1_epochs + cfg.train.stage2_epochs;
  auto* counter = &model.clamp_events();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::string> perm(train_ids);
    Rng shuffle_rng(mix_seed(seed, 0x55504552ULL + std::uint64_t(epoch)));
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1],
                perm[std::size_t(shuffle_rng.uniform_int(0, long(i) - 1))]);
    const long n = long(perm.size());
    const long accum = cfg.train.accum_steps;
    for (long begin = 0; begin < n; begin += accum) {
      const long end = std::min(n, begin + accum);
      model.params().zero_grad();
      for (long i = begin; i < end; ++i) {
        const PatientRecord& rec = *cohort.find(perm[std::size_t(i)]);
        const FloatMatrix& tokens = modality == Modality::kPathology
                                        ? rec.path_tokens
                                        : rec.gene_tokens;
        auto single = model.encode_single(tokens, modality);
        Tensor<T> loss = warmup_term(model.head(), single.g, rec.interval,
                                     rec.event, cfg.train.sigma, noise_rng,
                                     model.config().nll_variant, counter);
        if (!std::isfinite(double(loss.item())))
          throw NanAbort("unimodal arm: non-finite loss");
        loss.backward();
      }
      const T inv = T(1.0 / double(end - begin));
      for (auto* p : params)
        for (auto& g : p->tensor.grad()) g *= inv;
      opt.step();
    }
  }

  std::vector<double> risks;
  const std::size_t d = std::size_t(cfg.model.encoder.embed_dim);
  for (const auto& id : test_ids) {
    const PatientRecord& rec = *cohort.find(id);
    const FloatMatrix& tokens =
        modality == Modality::kPathology ? rec.path_tokens : rec.gene_tokens;
    auto single = model.encode_single(tokens, modality);
    Tensor<T> fused = hcat<T>({single.g, Tensor<T>::zeros(1, 2 * d)});
    risks.push_back(model.predict_from_fused(fused).risk);
  }
  return risks;
}

template <class T>
FoldOutcome run_fold(const Cohort& cohort, const PipelineConfig& cfg,
                     int fold_idx) {
  if (fold_idx < 0 || fold_idx >= int(cohort.folds.size()))
    throw ConfigError("run_fold: fold index out of range");
  FoldOutcome out;
  out.fold = fold_idx;
  out.test_ids = cohort.folds[std::size_t(fold_idx)];
  std::vector<std::string> train_ids;
  for (std::size_t f = 0; f < cohort.folds.size(); ++f) {
    if (int(f) == fold_idx) continue;
    train_ids.insert(train_ids.end(), cohort.folds[f].begin(),
                     cohort.folds[f].end());
  }
  std::sort(train_ids.begin(), train_ids.end());

  MustModel<T> model(cfg.model,
                     mix_seed(cfg.master_seed, 0xF01DULL + std::uint64_t(fold_idx)));
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.master_seed, 0x7124ULL + std::uint64_t(fold_idx));
  Trainer<T> trainer(model, tc);
  trainer.run_all(cohort, train_ids);

  std::unique_ptr<Denoiser<T>> den_p, den_g;
  NoiseSchedule schedule = NoiseSchedule::linear();
  if (cfg.with_ldm) {
    DenoiserConfig dc;
    dc.width = cfg.model.encoder.embed_dim;
    dc.heads = cfg.model.encoder.heads;
    for (Modality m : {Modality::kPathology, Modality::kGenomics}) {
      auto examples = ldm_examples(model, cohort, train_ids, m,
                                   tc.train_missing_rate, tc.seed);
      LdmTrainConfig lc = cfg.ldm;
      lc.seed = mix_seed(cfg.master_seed,
                         0x1d4ULL + std::uint64_t(fold_idx) * 2 +
                             (m == Modality::kGenomics ? 1 : 0));
      auto den = std::make_unique<Denoiser<T>>(
          dc, mix_seed(cfg.master_seed,
                       0xde0ULL + std::uint64_t(fold_idx) * 2 +
                           (m == Modality::kGenomics ? 1 : 0)));
      train_ldm(*den, schedule, examples, lc);
      (m == Modality::kPathology ? den_p : den_g) = std::move(den);
    }
  }

  for (const auto& id : out.test_ids) {
    const PatientRecord& rec = *cohort.find(id);
    out.times.push_back(rec.time);
    out.events.push_back(rec.event);

    InferenceResult complete = predict_complete(model, rec);
    out.scenario_risks["complete"].push_back(complete.prediction.risk);
    out.complete_ms_per_patient += complete.timing.total_ms;

    if (cfg.with_ldm) {
      MissingInferenceOptions opts;
      opts.ddim_steps = cfg.ddim_steps;
      opts.ddim_samples = cfg.ddim_samples;
      opts.seed = mix_seed(cfg.master_seed, 0xddffULL);

      InferenceResult mg = predict_missing(model, den_p.get(), den_g.get(),
                                           schedule, rec,
                                           ModalityMask{true, false}, opts);
      out.scenario_risks["missing_g_ldm"].push_back(mg.prediction.risk);
      out.missing_ms_per_patient += mg.timing.total_ms;
      InferenceResult mp = predict_missing(model, den_p.get(), den_g.get(),
                                           schedule, rec,
                                           ModalityMask{false, true}, opts);
      out.scenario_risks["missing_p_ldm"].push_back(mp.prediction.risk);
      out.missing_ms_per_patient += mp.timing.total_ms;

      MissingInferenceOptions zero_opts = opts;
      zero_opts.zero_impute = true;
      out.scenario_risks["missing_g_zero"].push_back(
          predict_missing(model, den_p.get(), den_g.get(), schedule, rec,
                          ModalityMask{true, false}, zero_opts)
              .prediction.risk);
      out.scenario_risks["missing_p_zero"].push_back(
          predict_missing(model, den_p.get(), den_g.get(), schedule, rec,
                          ModalityMask{false, true}, zero_opts)
              .prediction.risk);
    }

    append_cossim_row(out.cossim, model, rec);
  }
  if (!out.test_ids.empty()) {
    out.complete_ms_per_patient /= double(out.test_ids.size());
    if (cfg.with_ldm) out.missing_ms_per_patient /= 2.0 * double(out.test_ids.size());
  }

  if (cfg.with_unimodal) {
    out.scenario_risks["path_only"] = train_eval_unimodal<T>(
        cohort, cfg, Modality::kPathology, train_ids, out.test_ids,
        mix_seed(cfg.master_seed, 0xab10ULL + std::uint64_t(fold_idx)));
    out.scenario_risks["gene_only"] = train_eval_unimodal<T>(
        cohort, cfg, Modality::kGenomics, train_ids, out.test_ids,
        mix_seed(cfg.master_seed, 0xab20ULL + std::uint64_t(fold_idx)));
  }
  return out;
}

/// Trains and evaluates every fold (optionally in parallel worker threads;
/// folds share nothing, so the result is independent of `jobs`), then
/// aggregates per-scenario C-indices and pools out-of-fold risks.
template <class T>
CrossValResult cross_validate(const Cohort& cohort, const PipelineConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  const int n_folds = int(cohort.folds.size());
  if (n_folds < 2) throw ConfigError("cross_validate: need >= 2 folds");

  CrossValResult result;
  result.folds.resize(std::size_t(n_folds));
  const int jobs = std::max(1, std::min(cfg.jobs, n_folds));
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors;
  errors.resize(std::size_t(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w]() {
      try {
        for (int f = w; f < n_folds; f += jobs)
          result.folds[std::size_t(f)] = run_fold<T>(cohort, cfg, f);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::map<std::string, std::vector<double>> per_scenario;
  for (const auto& fold : result.folds) {
    for (const auto& [scenario, risks] : fold.scenario_risks) {
      const auto c = c_index(risks, fold.times, fold.events);
      if (!c)
        throw ConfigError("cross_validate: undefined C-index in fold " +
                          std::to_string(fold.fold));
      per_scenario[scenario].push_back(*c);
      auto& pooled = result.pooled_risks[scenario];
      pooled.insert(pooled.end(), risks.begin(), risks.end());
    }
    result.pooled_ids.insert(result.pooled_ids.end(), fold.test_ids.begin(),
                             fold.test_ids.end());
    result.pooled_times.insert(result.pooled_times.end(), fold.times.begin(),
                               fold.times.end());
    result.pooled_events.insert(result.pooled_events.end(),
                                fold.events.begin(), fold.events.end());
    result.cossim.append(fold.cossim);
    result.complete_ms_per_patient += fold.complete_ms_per_patient;
    result.missing_ms_per_patient += fold.missing_ms_per_patient;
  }
  for (auto& [scenario, values] : per_scenario)
    result.metrics[scenario] = FoldMetrics::from(scenario, values);
  result.complete_ms_per_patient /= double(n_folds);
  result.missing_ms_per_patient /= double(n_folds);
  return result;
}

/// Median-split log-rank over pooled out-of-fold risks for one scenario.
inline std::optional<LogRankResult> stratification_logrank(
    const std::vector<double>& risks, const std::vector<double>& times,
    const std::vector<int>& events) {
  const auto [high, low] = stratify_median(risks);
  if (high.empty() || low.empty()) return std::nullopt;
  std::vector<double> ta, tb;
  std::vector<int> ea, eb;
  for (std::size_t i : high) {
    ta.push_back(times[i]);
    ea.push_back(events[i]);
  }
  for (std::size_t i : low) {
    tb.push_back(times[i]);
    eb.push_back(events[i]);
  }
  return log_rank(ta, ea, tb, eb);
}

/// Full pipeline per rank; ranks above the embedding dim are rejected.
template <class T>
std::map<int, CrossValResult> rank_sweep(const Cohort& cohort,
                                         const PipelineConfig& base,
                                         const std::vector<int>& ranks) {
  for (int r : ranks)
    if (r < 1 || r > base.model.encoder.embed_dim)
      throw ConfigError("rank_sweep: rank " + std::to_string(r) +
                        " outside [1, embed_dim]");
  std::map<int, CrossValResult> out;
  for (int r : ranks) {
    PipelineConfig cfg = base;
    cfg.model.rank = r;
    out[r] = cross_validate<T>(cohort, cfg);
  }
  return out;
}

}  // namespace must
