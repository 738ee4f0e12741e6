#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "must/errors.hpp"

namespace must {

/// Fewer usable samples than the operation needs.
class InsufficientDataError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Row-major float32 matrix, the in-memory mirror of a token blob.
struct FloatMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool operator==(const FloatMatrix& o) const = default;
};

struct GeneratorConfig {
  std::uint64_t seed = 42;
  int num_patients = 600;
  int d_shared = 4;
  int d_spec_p = 4;
  int d_spec_g = 4;
  int n_path_tokens_min = 8;
  int n_path_tokens_max = 16;
  int n_gene_groups = 6;
  int raw_path_dim = 64;
  int raw_gene_dim = 32;
  double noise_std = 0.3;
  double censor_rate = 0.25;
  std::vector<double> risk_weights_shared;
  std::vector<double> risk_weights_path;
  std::vector<double> risk_weights_gene;
  int k_intervals = 4;
  int n_folds = 5;

  /// Desk-scale default with weights sized to the default latent dims.
  static GeneratorConfig defaults();

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct TimeGrid {
  int k = 0;
  /// tau_0 .. tau_K with tau_0 = 0 and tau_K = +infinity.
  std::vector<double> boundaries;

  /// 1-based bin: the k in [1, K] with tau_{k-1} <= t < tau_k.
  int interval_of(double time) const;
};

struct PatientRecord {
  std::string id;
  FloatMatrix path_tokens;  // N_P x raw_path_dim
  FloatMatrix gene_tokens;  // n_gene_groups x raw_gene_dim
  double time = 0.0;
  int event = 0;
  int interval = 0;
};

struct Cohort {
  std::vector<PatientRecord> records;
  TimeGrid grid;
  std::vector<std::vector<std::string>> folds;
  GeneratorConfig provenance;
  /// Oracle sidecar: the planted linear risk per patient. Written under
  /// provenance/ on disk; evaluation-only, never an input to training.
  std::map<std::string, double> true_risk;

  const PatientRecord* find(const std::string& id) const;
};

/// Builds a reproducible synthetic cohort. Pure function of the config:
/// the same config yields byte-identical files from save_cohort.
Cohort generate(const GeneratorConfig& cfg);

/// Interior boundaries are empirical quantiles of the uncensored times at
/// fractions 1/k .. (k-1)/k, with ties broken by the midpoint of adjacent
/// order statistics.
TimeGrid discretize(const std::vector<double>& times,
                    const std::vector<int>& events, int k);

void save_cohort(const Cohort& cohort, const std::string& dir);
Cohort load_cohort(const std::string& dir);

/// Field-for-field equality with bit-exact token payload comparison.
bool cohorts_equal(const Cohort& a, const Cohort& b);

// Token blob IO (magic "MSTK1", little-endian u32 header, float32 payload).
void write_token_blob(const std::string& path, const FloatMatrix& m);
FloatMatrix read_token_blob(const std::string& path);

}  // namespace must
