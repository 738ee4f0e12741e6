#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "must/checkpoint.hpp"
#include "must/model.hpp"
#include "must/optimizer.hpp"
#include "must/synthcohort.hpp"

namespace must {

struct TrainConfig {
  int stage1_epochs = 30;
  int stage2_epochs = 30;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 2e-4;
  double weight_decay = 1e-5;
  int accum_steps = 32;
  double sigma = 0.1;
  double lambda_dec = 1.0;
  double lambda_sh = 1.0;
  double lambda_orth = 0.5;
  double penalty_weight = 1.0;  // projector penalty mode only
  double train_missing_rate = 0.0;
  std::uint64_t seed = 1;
  DecayMode decay_mode = DecayMode::kDecoupled;

  void validate() const {
    if (stage1_epochs < 0 || stage2_epochs < 0)
      throw ConfigError("epochs: must be >= 0");
    if (!(lr_stage1 > 0) || !(lr_stage2 > 0))
      throw ConfigError("learning_rate: must be > 0");
    if (weight_decay < 0) throw ConfigError("weight_decay: must be >= 0");
    if (accum_steps < 1) throw ConfigError("accum_steps: must be >= 1");
    if (sigma < 0) throw ConfigError("sigma: must be >= 0");
    if (lambda_dec < 0 || lambda_sh < 0 || lambda_orth < 0)
      throw ConfigError("lambda: loss weights must be >= 0");
    if (penalty_weight < 0) throw ConfigError("penalty_weight: must be >= 0");
    if (train_missing_rate < 0 || train_missing_rate > 1)
      throw ConfigError("train_missing_rate: must be in [0, 1]");
    if (train_missing_rate == 1.0)
      throw ConfigError(
          "train_missing_rate: rate 1 would leave both modalities with no "
          "paired sample");
  }
};

struct EpochLog {
  int stage = 0;
  int epoch = 0;
  double loss_total = 0.0;
  double loss_surv = 0.0;
  double loss_decomp = 0.0;
  double loss_shared = 0.0;
  double loss_orth = 0.0;
  double loss_penalty = 0.0;
  double grad_norm = 0.0;
  long clamp_events = 0;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Seeded unpaired-sample assignment for training-time missingness; a pure
/// function of (seed, patient id), shared by the trainer and the LDM
/// example builder.
inline std::optional<Modality> training_missing_assignment(
    std::uint64_t seed, double rate, const std::string& id) {
  if (rate <= 0) return std::nullopt;
  Rng r(mix_seed(seed, fnv1a64(id) ^ 0x4d495353ULL));
  if (r.uniform() >= rate) return std::nullopt;
  return r.uniform() < 0.5 ? Modality::kPathology : Modality::kGenomics;
}

/// Two-stage progressive trainer. Stage 1 optimizes the warm-up objective
/// over the embedding/aggregator/head group only; stage 2 optimizes the full
/// objective over all parameters, retracting the projector after every step
/// in exact mode. All stochasticity flows through seeded streams captured in
/// checkpoints, so resumed runs reproduce unresumed trajectories.
template <class T>
class Trainer {
 public:
  Trainer(MustModel<T>& model, TrainConfig cfg)
      : model_(model),
        cfg_(cfg),
        noise_rng_(mix_seed(cfg.seed, 0x4e4f495345ULL)),
        retract_rng_(mix_seed(cfg.seed, 0x52455452ULL)) {
    cfg_.validate();
    OptimConfig o1{cfg_.lr_stage1, cfg_.weight_decay, 0.9, 0.999, 1e-8,
                   cfg_.decay_mode};
    OptimConfig o2{cfg_.lr_stage2, cfg_.weight_decay, 0.9, 0.999, 1e-8,
                   cfg_.decay_mode};
    opt_stage1_.emplace(model_.stage1_params(), o1);
    opt_stage2_.emplace(model_.all_params(), o2);
  }

  struct Position {
    int epoch = 0;
    int window = 0;  // completed windows within the current epoch
  };

  std::optional<Modality> missing_assignment(const std::string& id) const {
    return training_missing_assignment(cfg_.seed, cfg_.train_missing_rate, id);
  }

  void run_stage1(const Cohort& cohort, const std::vector<std::string>& ids,
                  long stop_after_windows = -1) {
    run_stage(1, cohort, ids, cfg_.stage1_epochs, stage1_pos_,
              stop_after_windows);
  }

  void run_stage2(const Cohort& cohort, const std::vector<std::string>& ids,
                  long stop_after_windows = -1) {
    run_stage(2, cohort, ids, cfg_.stage2_epochs, stage2_pos_,
              stop_after_windows);
  }

  void run_all(const Cohort& cohort, const std::vector<std::string>& ids) {
    run_stage1(cohort, ids);
    run_stage2(cohort, ids);
  }

  const std::vector<EpochLog>& logs() const { return logs_; }
  const std::vector<double>& window_losses() const { return window_losses_; }
  void set_log_sink(std::function<void(const EpochLog&)> sink) {
    log_sink_ = std::move(sink);
  }
  /// When set, a NaN abort writes the last good state here before throwing.
  void set_abort_checkpoint_path(const std::string& path) {
    abort_path_ = path;
  }

  Position stage1_position() const { return stage1_pos_; }
  Position stage2_position() const { return stage2_pos_; }
  const TrainConfig& config() const { return cfg_; }
  MustModel<T>& model() { return model_; }

  struct LossParts {
    double surv = 0, decomp = 0, shared = 0, orth = 0, penalty = 0;
  };

  /// Graph for one sample's full stage objective. Exposed so tests can audit
  /// per-parameter gradients (e.g. that unpaired samples leave the absent
  /// modality's encoder untouched).
  Tensor<T> build_sample_loss(int stage, const PatientRecord& rec,
                              LossParts& parts) {
    return sample_loss(stage, rec, parts);
  }

  /// Deterministic per-epoch patient order.
  std::vector<std::string> epoch_permutation(
      int stage, int epoch, const std::vector<std::string>& ids) const {
    std::vector<std::string> perm(ids);
    Rng rng(mix_seed(cfg_.seed,
                     0x45504f43ULL + std::uint64_t(stage) * 1000003ULL +
                         std::uint64_t(epoch)));
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[std::size_t(rng.uniform_int(0, long(i) - 1))]);
    return perm;
  }

  CheckpointFile snapshot() const {
    CheckpointFile ckpt;
    ckpt.dtype_bytes = int(sizeof(T));
    ckpt.meta["kind"] = "trainer";
    ckpt.meta["precision"] = int(sizeof(T)) * 8;
    ckpt.meta["model_config"] = model_config_to_json(model_.config());
    ckpt.meta["train_config"] = train_config_to_json(cfg_);
    ckpt.meta["init_seed"] = model_.init_seed();
    ckpt.meta["stage1_epoch"] = stage1_pos_.epoch;
    ckpt.meta["stage1_window"] = stage1_pos_.window;
    ckpt.meta["stage2_epoch"] = stage2_pos_.epoch;
    ckpt.meta["stage2_window"] = stage2_pos_.window;
    ckpt.meta["opt1_steps"] = opt_stage1_->step_count();
    ckpt.meta["opt2_steps"] = opt_stage2_->step_count();
    ckpt.meta["noise_rng"] = noise_rng_.save_state();
    ckpt.meta["retract_rng"] = retract_rng_.save_state();
    ckpt.meta["clamp_events"] = model_.clamp_events().load();
    append_params(ckpt, model_.params());
    append_optimizer(ckpt, *opt_stage1_, "opt1");
    append_optimizer(ckpt, *opt_stage2_, "opt2");
    return ckpt;
  }

  void restore(const CheckpointFile& ckpt) {
    if (ckpt.meta.value("kind", "") != "trainer")
      throw FormatError("checkpoint: not a trainer checkpoint");
    if (ckpt.meta.value("precision", 0) != int(sizeof(T)) * 8)
      throw FormatError("checkpoint: precision mismatch");
    restore_params(ckpt, model_.params());
    restore_optimizer(ckpt, *opt_stage1_, "opt1");
    restore_optimizer(ckpt, *opt_stage2_, "opt2");
    opt_stage1_->set_step_count(ckpt.meta.at("opt1_steps").get<long>());
    opt_stage2_->set_step_count(ckpt.meta.at("opt2_steps").get<long>());
    stage1_pos_ = {ckpt.meta.at("stage1_epoch").get<int>(),
                   ckpt.meta.at("stage1_window").get<int>()};
    stage2_pos_ = {ckpt.meta.at("stage2_epoch").get<int>(),
                   ckpt.meta.at("stage2_window").get<int>()};
    noise_rng_.load_state(ckpt.meta.at("noise_rng").get<std::string>());
    retract_rng_.load_state(ckpt.meta.at("retract_rng").get<std::string>());
  }

 private:
  const PatientRecord& record_of(const Cohort& cohort,
                                 const std::string& id) const {
    const PatientRecord* rec = cohort.find(id);
    if (!rec) throw ConfigError("trainer: unknown patient id " + id);
    return *rec;
  }

  Tensor<T> sample_loss(int stage, const PatientRecord& rec, LossParts& parts) {
    const auto missing = missing_assignment(rec.id);
    const NllVariant variant = model_.config().nll_variant;
    auto* counter = &model_.clamp_events();

    if (stage == 1) {
      Tensor<T> total;
      if (!missing || *missing == Modality::kGenomics) {
        auto pe = model_.encoder().embed_pathology(rec.path_tokens);
        Tensor<T> g_p =
            model_.encoder().aggregate_global(pe, Modality::kPathology);
        Tensor<T> term = warmup_term(model_.head(), g_p, rec.interval,
                                     rec.event, cfg_.sigma, noise_rng_,
                                     variant, counter);
        total = total.defined() ? add(total, term) : term;
      }
      if (!missing || *missing == Modality::kPathology) {
        auto ge = model_.encoder().embed_genomics(rec.gene_tokens);
        Tensor<T> g_g =
            model_.encoder().aggregate_global(ge, Modality::kGenomics);
        Tensor<T> term = warmup_term(model_.head(), g_g, rec.interval,
                                     rec.event, cfg_.sigma, noise_rng_,
                                     variant, counter);
        total = total.defined() ? add(total, term) : term;
      }
      parts.surv = double(total.item());
      return total;
    }

    // Stage 2.
    Tensor<T> total;
    if (!missing) {
      EncoderOutputs<T> enc = model_.encode(rec);
      Decomposition<T> dec = model_.decompose(enc);
      auto fwd = model_.head_forward(fuse_for_prediction(dec));
      Tensor<T> l_surv =
          nll_loss<T>(fwd, rec.interval, rec.event, variant, counter);
      Tensor<T> l_dec = decomp_loss(dec, enc);
      Tensor<T> l_sh = shared_loss(dec);
      Tensor<T> l_orth = orth_loss(dec);
      parts.surv = double(l_surv.item());
      parts.decomp = double(l_dec.item());
      parts.shared = double(l_sh.item());
      parts.orth = double(l_orth.item());
      total = add(l_surv, add(scale(l_dec, T(cfg_.lambda_dec)),
                              add(scale(l_sh, T(cfg_.lambda_sh)),
                                  scale(l_orth, T(cfg_.lambda_orth)))));
    } else {
      // Unpaired sample: zero tensor for the missing specific component,
      // shared component recovered from the available side, survival loss
      // only. The absent modality's encoder never enters the graph.
      const Modality avail = *missing == Modality::kPathology
                                 ? Modality::kGenomics
                                 : Modality::kPathology;
      const FloatMatrix& tokens = avail == Modality::kPathology
                                      ? rec.path_tokens
                                      : rec.gene_tokens;
      auto single = model_.encode_single(tokens, avail);
      Tensor<T> hat_u = model_.projector().project_specific(single.u);
      Tensor<T> c_tilde = sub(single.g, hat_u);
      Tensor<T> zero =
          Tensor<T>::zeros(1, std::size_t(model_.config().encoder.embed_dim));
      Tensor<T> fused = *missing == Modality::kGenomics
                            ? hcat<T>({hat_u, c_tilde, zero})
                            : hcat<T>({zero, c_tilde, hat_u});
      auto fwd = model_.head_forward(fused);
      total = nll_loss<T>(fwd, rec.interval, rec.event, variant, counter);
      parts.surv = double(total.item());
    }
    if (model_.config().projector_mode == ProjectorMode::kPenalty) {
      Tensor<T> pen = model_.projector().orthonormality_penalty();
      parts.penalty = double(pen.item());
      total = add(total, scale(pen, T(cfg_.penalty_weight)));
    }
    return total;
  }

  void run_stage(int stage, const Cohort& cohort,
                 const std::vector<std::string>& ids, int target_epochs,
                 Position& pos, long stop_after_windows) {
    if (ids.empty()) throw ConfigError("trainer: empty training set");
    AdamW<T>& opt = stage == 1 ? *opt_stage1_ : *opt_stage2_;
    auto opt_params =
        stage == 1 ? model_.stage1_params() : model_.all_params();
    long windows_run = 0;

    if (!last_good_.has_value()) last_good_ = snapshot();

    while (pos.epoch < target_epochs) {
      const auto perm = epoch_permutation(stage, pos.epoch, ids);
      const long n = long(perm.size());
      const long n_windows = (n + cfg_.accum_steps - 1) / cfg_.accum_steps;
      EpochLog log;
      log.stage = stage;
      log.epoch = pos.epoch;
      const long clamp_before = model_.clamp_events().load();
      long samples_seen = 0;
      long windows_this_epoch = 0;

      for (long w = pos.window; w < n_windows; ++w) {
        if (stop_after_windows >= 0 && windows_run >= stop_after_windows)
          return;
        const long begin = w * cfg_.accum_steps;
        const long end = std::min(n, begin + cfg_.accum_steps);
        model_.params().zero_grad();
        double window_loss = 0;
        LossParts window_parts;
        for (long i = begin; i < end; ++i) {
          LossParts parts;
          Tensor<T> loss =
              sample_loss(stage, record_of(cohort, perm[std::size_t(i)]), parts);
          const double lv = double(loss.item());
          if (!std::isfinite(lv)) abort_with_checkpoint("non-finite loss");
          loss.backward();
          window_loss += lv;
          window_parts.surv += parts.surv;
          window_parts.decomp += parts.decomp;
          window_parts.shared += parts.shared;
          window_parts.orth += parts.orth;
          window_parts.penalty += parts.penalty;
        }
        const long count = end - begin;
        const T inv = T(1.0 / double(count));
        double grad_sq = 0;
        for (auto* p : opt_params) {
          for (auto& g : p->tensor.grad()) {
            g *= inv;
            grad_sq += double(g) * double(g);
          }
        }
        try {
          opt.step();
        } catch (const NanAbort&) {
          abort_with_checkpoint("non-finite gradient");
        }
        if (stage == 2 &&
            model_.config().projector_mode == ProjectorMode::kExact)
          model_.projector().retract(retract_rng_);

        window_losses_.push_back(window_loss / double(count));
        log.loss_total += window_loss;
        log.loss_surv += window_parts.surv;
        log.loss_decomp += window_parts.decomp;
        log.loss_shared += window_parts.shared;
        log.loss_orth += window_parts.orth;
        log.loss_penalty += window_parts.penalty;
        log.grad_norm += std::sqrt(grad_sq);
        samples_seen += count;
        pos.window = int(w + 1);
        ++windows_run;
        ++windows_this_epoch;
      }

      if (samples_seen > 0) {
        log.loss_total /= double(samples_seen);
        log.loss_surv /= double(samples_seen);
        log.loss_decomp /= double(samples_seen);
        log.loss_shared /= double(samples_seen);
        log.loss_orth /= double(samples_seen);
        log.loss_penalty /= double(samples_seen);
        log.grad_norm /= double(windows_this_epoch);
      }
      log.clamp_events = model_.clamp_events().load() - clamp_before;
      pos.epoch += 1;
      pos.window = 0;
      logs_.push_back(log);
      if (log_sink_) log_sink_(log);
      last_good_ = snapshot();
    }
  }

  [[noreturn]] void abort_with_checkpoint(const std::string& why) {
    if (!abort_path_.empty() && last_good_.has_value())
      write_checkpoint_file(abort_path_, *last_good_);
    throw NanAbort("training aborted (" + why + "); last good state " +
                   (abort_path_.empty() ? "not persisted" : abort_path_));
  }

  MustModel<T>& model_;
  TrainConfig cfg_;
  Rng noise_rng_;
  Rng retract_rng_;
  std::optional<AdamW<T>> opt_stage1_;
  std::optional<AdamW<T>> opt_stage2_;
  Position stage1_pos_{};
  Position stage2_pos_{};
  std::vector<EpochLog> logs_;
  std::vector<double> window_losses_;
  std::function<void(const EpochLog&)> log_sink_;
  std::string abort_path_;
  std::optional<CheckpointFile> last_good_;
};

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["embed_dim"] = cfg.encoder.embed_dim;
  j["heads"] = cfg.encoder.heads;
  j["agg_layers"] = cfg.encoder.agg_layers;
  j["gene_group_hidden"] = cfg.encoder.gene_group_hidden;
  j["raw_path_dim"] = cfg.encoder.raw_path_dim;
  j["raw_gene_dim"] = cfg.encoder.raw_gene_dim;
  j["n_gene_groups"] = cfg.encoder.n_gene_groups;
  j["path_token_cap"] = cfg.encoder.path_token_cap;
  j["rank"] = cfg.rank;
  j["projector_mode"] =
      cfg.projector_mode == ProjectorMode::kExact ? "exact" : "penalty";
  j["hazard_bins"] = cfg.hazard_bins;
  j["head_hidden"] = cfg.head_hidden;
  j["nll_variant"] =
      cfg.nll_variant == NllVariant::kHazardOnly ? "hazard" : "full";
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.encoder.embed_dim = j.at("embed_dim").get<int>();
  cfg.encoder.heads = j.at("heads").get<int>();
  cfg.encoder.agg_layers = j.at("agg_layers").get<int>();
  cfg.encoder.gene_group_hidden =
      j.at("gene_group_hidden").get<std::vector<int>>();
  cfg.encoder.raw_path_dim = j.at("raw_path_dim").get<int>();
  cfg.encoder.raw_gene_dim = j.at("raw_gene_dim").get<int>();
  cfg.encoder.n_gene_groups = j.at("n_gene_groups").get<int>();
  cfg.encoder.path_token_cap = j.at("path_token_cap").get<int>();
  cfg.rank = j.at("rank").get<int>();
  cfg.projector_mode = j.at("projector_mode").get<std::string>() == "exact"
                           ? ProjectorMode::kExact
                           : ProjectorMode::kPenalty;
  cfg.hazard_bins = j.at("hazard_bins").get<int>();
  cfg.head_hidden = j.at("head_hidden").get<int>();
  cfg.nll_variant = j.at("nll_variant").get<std::string>() == "hazard"
                        ? NllVariant::kHazardOnly
                        : NllVariant::kFullLikelihood;
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["stage1_epochs"] = cfg.stage1_epochs;
  j["stage2_epochs"] = cfg.stage2_epochs;
  j["lr_stage1"] = cfg.lr_stage1;
  j["lr_stage2"] = cfg.lr_stage2;
  j["weight_decay"] = cfg.weight_decay;
  j["accum_steps"] = cfg.accum_steps;
  j["sigma"] = cfg.sigma;
  j["lambda_dec"] = cfg.lambda_dec;
  j["lambda_sh"] = cfg.lambda_sh;
  j["lambda_orth"] = cfg.lambda_orth;
  j["penalty_weight"] = cfg.penalty_weight;
  j["train_missing_rate"] = cfg.train_missing_rate;
  j["seed"] = cfg.seed;
  j["optimizer"] =
      cfg.decay_mode == DecayMode::kDecoupled ? "adamw" : "adam";
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.stage1_epochs = j.at("stage1_epochs").get<int>();
  cfg.stage2_epochs = j.at("stage2_epochs").get<int>();
  cfg.lr_stage1 = j.at("lr_stage1").get<double>();
  cfg.lr_stage2 = j.at("lr_stage2").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.accum_steps = j.at("accum_steps").get<int>();
  cfg.sigma = j.at("sigma").get<double>();
  cfg.lambda_dec = j.at("lambda_dec").get<double>();
  cfg.lambda_sh = j.at("lambda_sh").get<double>();
  cfg.lambda_orth = j.at("lambda_orth").get<double>();
  cfg.penalty_weight = j.at("penalty_weight").get<double>();
  cfg.train_missing_rate = j.at("train_missing_rate").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.decay_mode = j.at("optimizer").get<std::string>() == "adamw"
                       ? DecayMode::kDecoupled
                       : DecayMode::kCoupled;
  return cfg;
}

}  // namespace must
