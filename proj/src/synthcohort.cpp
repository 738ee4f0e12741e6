#include "must/synthcohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "must/rng.hpp"

namespace must {

namespace fs = std::filesystem;

namespace {

constexpr double kBaseLogit = -2.5;  // monthly hazard at zero risk ~ 0.076
constexpr double kRiskScale = 1.0;
constexpr long kMaxMonths = 10000;

// Stream tags for seed derivation; one independent stream per concern so a
// config change in one place cannot shift draws elsewhere.
constexpr std::uint64_t kTagLoadings = 1;
constexpr std::uint64_t kTagFolds = 2;
constexpr std::uint64_t kTagPatientBase = 1000;

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("unparsable real value: '" + s + "'");
  return v;
}

long parse_long(const std::string& s) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("unparsable integer value: '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw FormatError("token blob: truncated header");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

// Draws a geometric event month (success prob h) from a single uniform, so
// the per-patient stream layout is independent of the hazard value.
long geometric_month(double hazard, double u) {
  hazard = std::min(std::max(hazard, 1e-12), 1.0 - 1e-12);
  const long t = 1 + long(std::floor(std::log1p(-u) / std::log1p(-hazard)));
  return std::min(std::max(t, 1L), kMaxMonths);
}

double dot_prod(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Uniform censoring bound b such that P(U(0,b) < T) matches the target rate
// on the empirical event-time sample; f(b) = mean(min(t, b)) / b decreases
// monotonically from 1 to 0.
double censor_bound(const std::vector<double>& event_times, double rate) {
  auto frac = [&](double b) {
    double s = 0;
    for (double t : event_times) s += std::min(t, b);
    return s / (b * double(event_times.size()));
  };
  double lo = 1e-9;
  double hi = 1.0;
  while (frac(hi) > rate && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (frac(mid) > rate)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig cfg;
  cfg.risk_weights_shared = {1.0, -0.8, 0.9, -0.7};
  cfg.risk_weights_path = {0.8, -0.6, 0.7, -0.5};
  cfg.risk_weights_gene = {0.8, -0.7, 0.6, -0.5};
  return cfg;
}

void GeneratorConfig::validate() const {
  if (num_patients < 10) throw ConfigError("num_patients: must be >= 10");
  if (d_shared < 1) throw ConfigError("d_shared: must be >= 1");
  if (d_spec_p < 1) throw ConfigError("d_spec_p: must be >= 1");
  if (d_spec_g < 1) throw ConfigError("d_spec_g: must be >= 1");
  if (n_path_tokens_min < 1)
    throw ConfigError("n_path_tokens_range: min must be >= 1");
  if (n_path_tokens_max < n_path_tokens_min)
    throw ConfigError("n_path_tokens_range: max must be >= min");
  if (n_gene_groups < 1) throw ConfigError("n_gene_groups: must be >= 1");
  if (raw_path_dim < 1) throw ConfigError("raw_path_dim: must be >= 1");
  if (raw_gene_dim < 1) throw ConfigError("raw_gene_dim: must be >= 1");
  if (!(noise_std >= 0)) throw ConfigError("noise_std: must be >= 0");
  if (!(censor_rate >= 0.0 && censor_rate <= 1.0))
    throw ConfigError("censor_rate: must be in [0, 1]");
  if (int(risk_weights_shared.size()) != d_shared)
    throw ConfigError("risk_weights_shared: length must equal d_shared");
  if (int(risk_weights_path.size()) != d_spec_p)
    throw ConfigError("risk_weights_path: length must equal d_spec_p");
  if (int(risk_weights_gene.size()) != d_spec_g)
    throw ConfigError("risk_weights_gene: length must equal d_spec_g");
  if (k_intervals < 1) throw ConfigError("k_intervals: must be >= 1");
  if (n_folds < 2) throw ConfigError("n_folds: must be >= 2");
}

int TimeGrid::interval_of(double time) const {
  int bin = 1;
  for (int j = 1; j < k; ++j) {
    if (boundaries[std::size_t(j)] <= time) ++bin;
  }
  return bin;
}

const PatientRecord* Cohort::find(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

TimeGrid discretize(const std::vector<double>& times,
                    const std::vector<int>& events, int k) {
  if (times.size() != events.size())
    throw ConfigError("discretize: times/events length mismatch");
  if (k < 1) throw ConfigError("discretize: k must be >= 1");
  std::vector<double> uncensored;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i] == 1) uncensored.push_back(times[i]);
  if (long(uncensored.size()) < k)
    throw InsufficientDataError(
        "discretize: need at least k uncensored samples, have " +
        std::to_string(uncensored.size()));
  std::sort(uncensored.begin(), uncensored.end());
  const std::size_t m = uncensored.size();

  TimeGrid grid;
  grid.k = k;
  grid.boundaries.resize(std::size_t(k) + 1);
  grid.boundaries[0] = 0.0;
  for (int j = 1; j < k; ++j) {
    const std::size_t idx = std::size_t(j) * m / std::size_t(k);  // in [1, m-1]
    grid.boundaries[std::size_t(j)] =
        0.5 * (uncensored[idx - 1] + uncensored[idx]);
  }
  grid.boundaries[std::size_t(k)] = std::numeric_limits<double>::infinity();
  for (int j = 1; j <= k; ++j) {
    if (!(grid.boundaries[std::size_t(j)] > grid.boundaries[std::size_t(j) - 1]))
      throw ConfigError(
          "discretize: degenerate boundaries (tied times collapse bins)");
  }
  return grid;
}

Cohort generate(const GeneratorConfig& cfg) {
  cfg.validate();

  Cohort cohort;
  cohort.provenance = cfg;

  // Fixed loading matrices, scaled so each token coordinate has O(1)
  // variance regardless of latent dimension.
  Rng load_rng(mix_seed(cfg.seed, kTagLoadings));
  auto draw_loading = [&](int rows, int cols) {
    std::vector<double> m(std::size_t(rows) * std::size_t(cols));
    const double s = 1.0 / std::sqrt(double(cols));
    for (auto& v : m) v = load_rng.normal(0.0, s);
    return m;
  };
  const auto l_path_shared = draw_loading(cfg.raw_path_dim, cfg.d_shared);
  const auto l_path_spec = draw_loading(cfg.raw_path_dim, cfg.d_spec_p);
  const auto l_gene_shared = draw_loading(cfg.raw_gene_dim, cfg.d_shared);
  const auto l_gene_spec = draw_loading(cfg.raw_gene_dim, cfg.d_spec_g);

  auto apply_loading = [](const std::vector<double>& l, int rows,
                          const std::vector<double>& z) {
    std::vector<double> out(std::size_t(rows), 0.0);
    const std::size_t cols = z.size();
    for (int r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c)
        s += l[std::size_t(r) * cols + c] * z[c];
      out[std::size_t(r)] = s;
    }
    return out;
  };

  std::vector<double> event_times(std::size_t(cfg.num_patients));
  std::vector<double> censor_uniforms(std::size_t(cfg.num_patients));

  for (int i = 0; i < cfg.num_patients; ++i) {
    Rng rng(mix_seed(cfg.seed, kTagPatientBase + std::uint64_t(i)));
    PatientRecord rec;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "p%05d", i);
    rec.id = idbuf;

    std::vector<double> z_s(std::size_t(cfg.d_shared));
    std::vector<double> z_p(std::size_t(cfg.d_spec_p));
    std::vector<double> z_g(std::size_t(cfg.d_spec_g));
    for (auto& v : z_s) v = rng.normal();
    for (auto& v : z_p) v = rng.normal();
    for (auto& v : z_g) v = rng.normal();

    const long n_path =
        rng.uniform_int(cfg.n_path_tokens_min, cfg.n_path_tokens_max);
    const auto shared_path = apply_loading(l_path_shared, cfg.raw_path_dim, z_s);
    const auto spec_path = apply_loading(l_path_spec, cfg.raw_path_dim, z_p);
    rec.path_tokens.rows = std::size_t(n_path);
    rec.path_tokens.cols = std::size_t(cfg.raw_path_dim);
    rec.path_tokens.data.resize(rec.path_tokens.rows * rec.path_tokens.cols);
    for (long t = 0; t < n_path; ++t) {
      const double a = rng.uniform(0.25, 1.75);
      const double b = rng.uniform(0.25, 1.75);
      for (int d = 0; d < cfg.raw_path_dim; ++d) {
        const double v = a * shared_path[std::size_t(d)] +
                         b * spec_path[std::size_t(d)] +
                         cfg.noise_std * rng.normal();
        rec.path_tokens.data[std::size_t(t) * rec.path_tokens.cols +
                             std::size_t(d)] = float(v);
      }
    }

    const auto shared_gene = apply_loading(l_gene_shared, cfg.raw_gene_dim, z_s);
    const auto spec_gene = apply_loading(l_gene_spec, cfg.raw_gene_dim, z_g);
    rec.gene_tokens.rows = std::size_t(cfg.n_gene_groups);
    rec.gene_tokens.cols = std::size_t(cfg.raw_gene_dim);
    rec.gene_tokens.data.resize(rec.gene_tokens.rows * rec.gene_tokens.cols);
    for (int gidx = 0; gidx < cfg.n_gene_groups; ++gidx) {
      const double a = rng.uniform(0.25, 1.75);
      const double b = rng.uniform(0.25, 1.75);
      for (int d = 0; d < cfg.raw_gene_dim; ++d) {
        const double v = a * shared_gene[std::size_t(d)] +
                         b * spec_gene[std::size_t(d)] +
                         cfg.noise_std * rng.normal();
        rec.gene_tokens.data[std::size_t(gidx) * rec.gene_tokens.cols +
                             std::size_t(d)] = float(v);
      }
    }

    const double risk = dot_prod(cfg.risk_weights_shared, z_s) +
                        dot_prod(cfg.risk_weights_path, z_p) +
                        dot_prod(cfg.risk_weights_gene, z_g);
    cohort.true_risk[rec.id] = risk;

    const double hazard =
        1.0 / (1.0 + std::exp(-(kBaseLogit + kRiskScale * risk)));
    const long months = geometric_month(hazard, rng.uniform());
    const double within = rng.uniform();  // position inside the event month
    event_times[std::size_t(i)] = double(months) - within;
    censor_uniforms[std::size_t(i)] = rng.uniform();

    cohort.records.push_back(std::move(rec));
  }

  // Independent uniform censoring, calibrated to the requested rate.
  if (cfg.censor_rate > 0.0) {
    const double bound = censor_bound(event_times, cfg.censor_rate);
    for (int i = 0; i < cfg.num_patients; ++i) {
      const double c = censor_uniforms[std::size_t(i)] * bound;
      auto& rec = cohort.records[std::size_t(i)];
      if (c < event_times[std::size_t(i)]) {
        rec.time = c;
        rec.event = 0;
      } else {
        rec.time = event_times[std::size_t(i)];
        rec.event = 1;
      }
    }
  } else {
    for (int i = 0; i < cfg.num_patients; ++i) {
      cohort.records[std::size_t(i)].time = event_times[std::size_t(i)];
      cohort.records[std::size_t(i)].event = 1;
    }
  }

  std::vector<double> times;
  std::vector<int> events;
  for (const auto& r : cohort.records) {
    times.push_back(r.time);
    events.push_back(r.event);
  }
  cohort.grid = discretize(times, events, cfg.k_intervals);
  for (auto& r : cohort.records) r.interval = cohort.grid.interval_of(r.time);

  // Patient-level fold assignment: shuffled ids, round-robin.
  Rng fold_rng(mix_seed(cfg.seed, kTagFolds));
  std::vector<std::size_t> perm(std::size_t(cfg.num_patients));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[std::size_t(fold_rng.uniform_int(0, long(i) - 1))]);
  cohort.folds.assign(std::size_t(cfg.n_folds), {});
  for (std::size_t i = 0; i < perm.size(); ++i)
    cohort.folds[i % std::size_t(cfg.n_folds)].push_back(
        cohort.records[perm[i]].id);
  for (auto& f : cohort.folds) std::sort(f.begin(), f.end());

  return cohort;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void write_token_blob(const std::string& path, const FloatMatrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("MSTK1", 5);
  put_u32_le(os, std::uint32_t(m.rows));
  put_u32_le(os, std::uint32_t(m.cols));
  for (float v : m.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32_le(os, bits);
  }
  if (!os) throw IoError("write failed: " + path);
}

FloatMatrix read_token_blob(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "MSTK1", 5) != 0)
    throw FormatError("token blob: bad magic in " + path);
  FloatMatrix m;
  m.rows = get_u32_le(is);
  m.cols = get_u32_le(is);
  m.data.resize(m.rows * m.cols);
  for (auto& v : m.data) {
    const std::uint32_t bits = get_u32_le(is);
    std::memcpy(&v, &bits, 4);
  }
  is.peek();
  if (!is.eof()) throw FormatError("token blob: trailing bytes in " + path);
  for (float v : m.data)
    if (!std::isfinite(v)) throw FormatError("token blob: non-finite value");
  return m;
}

namespace {

struct Manifest {
  std::map<std::string, std::pair<std::string, std::string>> entries;  // key -> (type, value)
  std::vector<std::string> order;

  void put(const std::string& key, const std::string& type,
           const std::string& value) {
    entries[key] = {type, value};
    order.push_back(key);
  }
  const std::string& get(const std::string& key, const std::string& type) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw FormatError("manifest: missing key " + key);
    if (it->second.first != type)
      throw FormatError("manifest: key " + key + " has type " +
                        it->second.first + ", expected " + type);
    return it->second.second;
  }
  bool has(const std::string& key) const { return entries.count(key) != 0; }
};

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  for (const auto& key : m.order) {
    const auto& [type, value] = m.entries.at(key);
    os << key << ": " << type << " = " << value << "\n";
  }
}

Manifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(": ");
    const auto eq = line.find(" = ", colon == std::string::npos ? 0 : colon);
    if (colon == std::string::npos || eq == std::string::npos)
      throw FormatError("manifest: malformed line '" + line + "'");
    m.put(line.substr(0, colon), line.substr(colon + 2, eq - colon - 2),
          line.substr(eq + 3));
  }
  return m;
}

std::string join_reals(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += format_double(v[i]);
  }
  return s;
}

std::vector<double> split_reals(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& part : split(s, ',')) out.push_back(parse_double(part));
  return out;
}

}  // namespace

void save_cohort(const Cohort& cohort, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "tokens", ec);
  fs::create_directories(fs::path(dir) / "provenance", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir);

  const auto& cfg = cohort.provenance;
  Manifest m;
  m.put("format", "str", "must-cohort");
  m.put("version", "int", "1");
  m.put("seed", "int", std::to_string(cfg.seed));
  m.put("num_patients", "int", std::to_string(cfg.num_patients));
  m.put("d_shared", "int", std::to_string(cfg.d_shared));
  m.put("d_spec_p", "int", std::to_string(cfg.d_spec_p));
  m.put("d_spec_g", "int", std::to_string(cfg.d_spec_g));
  m.put("n_path_tokens_min", "int", std::to_string(cfg.n_path_tokens_min));
  m.put("n_path_tokens_max", "int", std::to_string(cfg.n_path_tokens_max));
  m.put("n_gene_groups", "int", std::to_string(cfg.n_gene_groups));
  m.put("raw_path_dim", "int", std::to_string(cfg.raw_path_dim));
  m.put("raw_gene_dim", "int", std::to_string(cfg.raw_gene_dim));
  m.put("noise_std", "real", format_double(cfg.noise_std));
  m.put("censor_rate", "real", format_double(cfg.censor_rate));
  m.put("risk_weights_shared", "reals", join_reals(cfg.risk_weights_shared));
  m.put("risk_weights_path", "reals", join_reals(cfg.risk_weights_path));
  m.put("risk_weights_gene", "reals", join_reals(cfg.risk_weights_gene));
  m.put("k", "int", std::to_string(cohort.grid.k));
  {
    std::vector<double> b(cohort.grid.boundaries);
    m.put("boundaries", "reals", join_reals(b));
  }
  m.put("n_folds", "int", std::to_string(cohort.folds.size()));
  for (std::size_t f = 0; f < cohort.folds.size(); ++f) {
    std::string ids;
    for (std::size_t i = 0; i < cohort.folds[f].size(); ++i) {
      if (i) ids += ",";
      ids += cohort.folds[f][i];
    }
    m.put("fold_" + std::to_string(f), "strs", ids);
  }
  write_manifest((fs::path(dir) / "manifest.txt").string(), m);

  {
    std::ofstream os((fs::path(dir) / "labels.csv").string());
    if (!os) throw IoError("cannot write labels.csv");
    os << "id,time,event,interval\n";
    for (const auto& r : cohort.records)
      os << r.id << "," << format_double(r.time) << "," << r.event << ","
         << r.interval << "\n";
  }
  {
    std::ofstream os((fs::path(dir) / "provenance" / "true_risk.csv").string());
    if (!os) throw IoError("cannot write true_risk.csv");
    os << "id,true_risk\n";
    for (const auto& r : cohort.records)
      os << r.id << "," << format_double(cohort.true_risk.at(r.id)) << "\n";
  }
  for (const auto& r : cohort.records) {
    write_token_blob((fs::path(dir) / "tokens" / (r.id + ".path.mstk")).string(),
                     r.path_tokens);
    write_token_blob((fs::path(dir) / "tokens" / (r.id + ".gene.mstk")).string(),
                     r.gene_tokens);
  }
}

Cohort load_cohort(const std::string& dir) {
  const Manifest m = read_manifest((fs::path(dir) / "manifest.txt").string());
  if (m.get("format", "str") != "must-cohort")
    throw FormatError("manifest: not a must-cohort dataset");
  if (parse_long(m.get("version", "int")) != 1)
    throw FormatError("manifest: unsupported dataset version");

  Cohort cohort;
  auto& cfg = cohort.provenance;
  cfg.seed = std::uint64_t(parse_long(m.get("seed", "int")));
  cfg.num_patients = int(parse_long(m.get("num_patients", "int")));
  cfg.d_shared = int(parse_long(m.get("d_shared", "int")));
  cfg.d_spec_p = int(parse_long(m.get("d_spec_p", "int")));
  cfg.d_spec_g = int(parse_long(m.get("d_spec_g", "int")));
  cfg.n_path_tokens_min = int(parse_long(m.get("n_path_tokens_min", "int")));
  cfg.n_path_tokens_max = int(parse_long(m.get("n_path_tokens_max", "int")));
  cfg.n_gene_groups = int(parse_long(m.get("n_gene_groups", "int")));
  cfg.raw_path_dim = int(parse_long(m.get("raw_path_dim", "int")));
  cfg.raw_gene_dim = int(parse_long(m.get("raw_gene_dim", "int")));
  cfg.noise_std = parse_double(m.get("noise_std", "real"));
  cfg.censor_rate = parse_double(m.get("censor_rate", "real"));
  cfg.risk_weights_shared = split_reals(m.get("risk_weights_shared", "reals"));
  cfg.risk_weights_path = split_reals(m.get("risk_weights_path", "reals"));
  cfg.risk_weights_gene = split_reals(m.get("risk_weights_gene", "reals"));
  cfg.k_intervals = int(parse_long(m.get("k", "int")));

  cohort.grid.k = cfg.k_intervals;
  cohort.grid.boundaries = split_reals(m.get("boundaries", "reals"));
  if (long(cohort.grid.boundaries.size()) != long(cohort.grid.k) + 1)
    throw FormatError("manifest: boundary count does not match k");

  const long n_folds = parse_long(m.get("n_folds", "int"));
  cfg.n_folds = int(n_folds);
  for (long f = 0; f < n_folds; ++f) {
    const auto& ids = m.get("fold_" + std::to_string(f), "strs");
    cohort.folds.push_back(ids.empty() ? std::vector<std::string>{}
                                       : split(ids, ','));
  }

  // Labels.
  std::ifstream ls((fs::path(dir) / "labels.csv").string());
  if (!ls) throw IoError("cannot read labels.csv");
  std::string line;
  if (!std::getline(ls, line) || line != "id,time,event,interval")
    throw FormatError("labels.csv: bad header");
  while (std::getline(ls, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 4) throw FormatError("labels.csv: bad row '" + line + "'");
    PatientRecord rec;
    rec.id = cells[0];
    rec.time = parse_double(cells[1]);
    rec.event = int(parse_long(cells[2]));
    rec.interval = int(parse_long(cells[3]));
    if (!(rec.time > 0)) throw FormatError("labels.csv: nonpositive time");
    if (rec.event != 0 && rec.event != 1)
      throw FormatError("labels.csv: event flag must be 0 or 1");
    if (rec.interval != cohort.grid.interval_of(rec.time))
      throw FormatError("labels.csv: interval inconsistent with grid for " +
                        rec.id);
    cohort.records.push_back(std::move(rec));
  }
  if (long(cohort.records.size()) != long(cfg.num_patients))
    throw FormatError("labels.csv: row count does not match manifest");

  for (auto& rec : cohort.records) {
    rec.path_tokens = read_token_blob(
        (fs::path(dir) / "tokens" / (rec.id + ".path.mstk")).string());
    rec.gene_tokens = read_token_blob(
        (fs::path(dir) / "tokens" / (rec.id + ".gene.mstk")).string());
    if (long(rec.gene_tokens.rows) != long(cfg.n_gene_groups))
      throw FormatError("gene token count mismatch for " + rec.id);
    if (long(rec.path_tokens.cols) != long(cfg.raw_path_dim) ||
        long(rec.gene_tokens.cols) != long(cfg.raw_gene_dim))
      throw FormatError("token dim mismatch for " + rec.id);
  }

  // Optional oracle sidecar.
  std::ifstream rs((fs::path(dir) / "provenance" / "true_risk.csv").string());
  if (rs) {
    if (std::getline(rs, line) && line == "id,true_risk") {
      while (std::getline(rs, line)) {
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 2) throw FormatError("true_risk.csv: bad row");
        cohort.true_risk[cells[0]] = parse_double(cells[1]);
      }
    }
  }

  // Fold partition sanity.
  std::map<std::string, int> seen;
  for (const auto& f : cohort.folds)
    for (const auto& id : f) seen[id]++;
  if (long(seen.size()) != long(cohort.records.size()))
    throw FormatError("manifest: folds do not cover all patients");
  for (const auto& [id, n] : seen)
    if (n != 1) throw FormatError("manifest: patient " + id + " in multiple folds");

  return cohort;
}

bool cohorts_equal(const Cohort& a, const Cohort& b) {
  if (a.records.size() != b.records.size()) return false;
  if (a.grid.k != b.grid.k || a.grid.boundaries != b.grid.boundaries)
    return false;
  if (a.folds != b.folds) return false;
  if (a.true_risk != b.true_risk) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& ra = a.records[i];
    const auto& rb = b.records[i];
    if (ra.id != rb.id || ra.time != rb.time || ra.event != rb.event ||
        ra.interval != rb.interval)
      return false;
    if (!(ra.path_tokens == rb.path_tokens) ||
        !(ra.gene_tokens == rb.gene_tokens))
      return false;
  }
  return true;
}

}  // namespace must
