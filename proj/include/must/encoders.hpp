#pragma once

#include <string>
#include <vector>

#include "must/nn.hpp"
#include "must/synthcohort.hpp"

namespace must {

enum class Modality { kPathology, kGenomics };

inline const char* modality_tag(Modality m) {
  return m == Modality::kPathology ? "P" : "G";
}

struct EncoderConfig {
  int embed_dim = 256;
  int heads = 4;
  int agg_layers = 2;
  std::vector<int> gene_group_hidden = {128};
  int raw_path_dim = 64;
  int raw_gene_dim = 32;
  int n_gene_groups = 6;
  int path_token_cap = 2048;

  void validate() const {
    if (embed_dim < 1) throw ConfigError("embed_dim: must be >= 1");
    if (heads < 1 || embed_dim % heads != 0)
      throw ConfigError("heads: embed_dim must be divisible by heads");
    if (agg_layers < 1) throw ConfigError("agg_layers: must be >= 1");
    if (n_gene_groups < 1) throw ConfigError("n_gene_groups: must be >= 1");
    if (raw_path_dim < 1) throw ConfigError("raw_path_dim: must be >= 1");
    if (raw_gene_dim < 1) throw ConfigError("raw_gene_dim: must be >= 1");
    if (path_token_cap < 1) throw ConfigError("path_token_cap: must be >= 1");
  }
};

/// The six per-patient vectors of the representation pipeline plus the two
/// learned specific-extraction class tokens (reused later as diffusion
/// conditioning priors).
template <class T>
struct EncoderOutputs {
  Tensor<T> g_path;           // global pathology representation
  Tensor<T> g_gene;           // global genomics representation
  Tensor<T> u_path;           // pathology-specific (pre-projection)
  Tensor<T> u_gene;           // genomics-specific (pre-projection)
  Tensor<T> c_path_from_gene; // pathology attends genomics
  Tensor<T> c_gene_from_path; // genomics attends pathology
  Tensor<T> cls_u_path;
  Tensor<T> cls_u_gene;
};

namespace detail {

template <class T>
Tensor<T> tensor_from_float(const FloatMatrix& m) {
  std::vector<T> data(m.data.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = T(m.data[i]);
  return Tensor<T>::from_vector(m.rows, m.cols, std::move(data));
}

}  // namespace detail

/// One class-token attention stack: [CLS; tokens] -> blocks -> LN(CLS row).
/// Attention-only pre-norm blocks; the pooled output is invariant to token
/// order because nothing positional is ever added.
template <class T>
struct ClassTokenAggregator {
  Parameter<T>* cls = nullptr;
  std::vector<AttnBlock<T>> blocks;

  static ClassTokenAggregator create(ParamStore<T>& store,
                                     const std::string& name, int dim,
                                     int heads, int layers, Rng& rng) {
    ClassTokenAggregator a;
    a.cls = &store.create(name + ".cls", 1, std::size_t(dim),
                          Init::kNormalSmall, rng);
    for (int l = 0; l < layers; ++l)
      a.blocks.push_back(AttnBlock<T>::create(
          store, name + ".b" + std::to_string(l), std::size_t(dim),
          std::size_t(heads), rng));
    return a;
  }

  Tensor<T> forward(const Tensor<T>& tokens) const {
    if (tokens.rows() < 1) throw ShapeError("aggregator: empty token set");
    Tensor<T> x = vcat<T>({cls->tensor, tokens});
    for (const auto& b : blocks) x = b.forward(x);
    return layer_norm_rows(row(x, 0));
  }
};

/// Class-token pooled cross attention: the class token rides along with the
/// query-side tokens and its output row is the pooled vector c.
template <class T>
struct PooledCrossAttention {
  Parameter<T>* cls = nullptr;
  CrossAttention<T> attn;

  static PooledCrossAttention create(ParamStore<T>& store,
                                     const std::string& name, int dim,
                                     Rng& rng) {
    PooledCrossAttention c;
    c.cls = &store.create(name + ".cls", 1, std::size_t(dim),
                          Init::kNormalSmall, rng);
    c.attn = CrossAttention<T>::create(store, name, std::size_t(dim), rng);
    return c;
  }

  Tensor<T> forward(const Tensor<T>& q_tokens, const Tensor<T>& k_tokens) const {
    if (q_tokens.rows() < 1 || k_tokens.rows() < 1)
      throw ShapeError("cross_attend: empty token set");
    Tensor<T> q = vcat<T>({cls->tensor, q_tokens});
    return row(attn.forward(q, k_tokens), 0);
  }
};

/// Both modality encoders. Pathology and genomics parameters are disjoint by
/// name prefix (path.* / gene.*); the bidirectional cross-attention modules
/// are separate parameter sets under cross.*.
template <class T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, ParamStore<T>& store, Rng& rng)
      : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.embed_dim;
    path_embed_ = Linear<T>::create(store, "path.embed",
                                    std::size_t(cfg.raw_path_dim),
                                    std::size_t(d), rng);
    std::vector<std::size_t> hidden;
    for (int h : cfg.gene_group_hidden) hidden.push_back(std::size_t(h));
    for (int g = 0; g < cfg.n_gene_groups; ++g)
      gene_group_mlps_.push_back(
          Mlp<T>::create(store, "gene.embed.g" + std::to_string(g),
                         std::size_t(cfg.raw_gene_dim), hidden,
                         std::size_t(d), rng));
    path_agg_ = ClassTokenAggregator<T>::create(store, "path.agg", d,
                                                cfg.heads, cfg.agg_layers, rng);
    gene_agg_ = ClassTokenAggregator<T>::create(store, "gene.agg", d,
                                                cfg.heads, cfg.agg_layers, rng);
    path_spec_ = ClassTokenAggregator<T>::create(store, "path.spec", d,
                                                 cfg.heads, cfg.agg_layers, rng);
    gene_spec_ = ClassTokenAggregator<T>::create(store, "gene.spec", d,
                                                 cfg.heads, cfg.agg_layers, rng);
    cross_pg_ = PooledCrossAttention<T>::create(store, "cross.pg", d, rng);
    cross_gp_ = PooledCrossAttention<T>::create(store, "cross.gp", d, rng);
  }

  /// Per-token linear projection of raw pathology features to D.
  Tensor<T> embed_pathology(const FloatMatrix& tokens) const {
    if (long(tokens.cols) != long(cfg_.raw_path_dim))
      throw ShapeError("embed_pathology: raw dim mismatch");
    FloatMatrix capped = cap_tokens(tokens);
    return path_embed_.forward(detail::tensor_from_float<T>(capped));
  }

  /// Group i is processed by MLP_i only; no weight sharing across groups.
  Tensor<T> embed_genomics(const FloatMatrix& tokens) const {
    if (long(tokens.rows) != long(cfg_.n_gene_groups))
      throw ShapeError("embed_genomics: group count mismatch");
    if (long(tokens.cols) != long(cfg_.raw_gene_dim))
      throw ShapeError("embed_genomics: raw dim mismatch");
    Tensor<T> raw = detail::tensor_from_float<T>(tokens);
    std::vector<Tensor<T>> rows;
    rows.reserve(tokens.rows);
    for (std::size_t g = 0; g < tokens.rows; ++g)
      rows.push_back(gene_group_mlps_[g].forward(row(raw, g)));
    return vcat(rows);
  }

  Tensor<T> aggregate_global(const Tensor<T>& emb, Modality m) const {
    return (m == Modality::kPathology ? path_agg_ : gene_agg_).forward(emb);
  }

  Tensor<T> extract_specific(const Tensor<T>& emb, Modality m) const {
    return (m == Modality::kPathology ? path_spec_ : gene_spec_).forward(emb);
  }

  std::pair<Tensor<T>, Tensor<T>> cross_attend(const Tensor<T>& path_emb,
                                               const Tensor<T>& gene_emb) const {
    return {cross_pg_.forward(path_emb, gene_emb),
            cross_gp_.forward(gene_emb, path_emb)};
  }

  EncoderOutputs<T> encode(const PatientRecord& rec) const {
    Tensor<T> pe = embed_pathology(rec.path_tokens);
    Tensor<T> ge = embed_genomics(rec.gene_tokens);
    EncoderOutputs<T> out;
    out.g_path = aggregate_global(pe, Modality::kPathology);
    out.g_gene = aggregate_global(ge, Modality::kGenomics);
    out.u_path = extract_specific(pe, Modality::kPathology);
    out.u_gene = extract_specific(ge, Modality::kGenomics);
    auto [c_pg, c_gp] = cross_attend(pe, ge);
    out.c_path_from_gene = c_pg;
    out.c_gene_from_path = c_gp;
    out.cls_u_path = path_spec_.cls->tensor;
    out.cls_u_gene = gene_spec_.cls->tensor;
    return out;
  }

  /// Single-modality path for missing-modality regimes: only g and u exist.
  struct SingleOutputs {
    Tensor<T> g;
    Tensor<T> u;
    Tensor<T> cls_u;
  };

  SingleOutputs encode_single(const FloatMatrix& tokens, Modality m) const {
    Tensor<T> emb = m == Modality::kPathology ? embed_pathology(tokens)
                                              : embed_genomics(tokens);
    SingleOutputs out;
    out.g = aggregate_global(emb, m);
    out.u = extract_specific(emb, m);
    out.cls_u = (m == Modality::kPathology ? path_spec_ : gene_spec_).cls->tensor;
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }
  Tensor<T> cls_u(Modality m) const {
    return (m == Modality::kPathology ? path_spec_ : gene_spec_).cls->tensor;
  }

 private:
  // Uniform seeded subsample when a slide exceeds the token cap. The seed
  // depends only on the token payload size, so repeated encodes of one
  // patient agree.
  FloatMatrix cap_tokens(const FloatMatrix& tokens) const {
    if (long(tokens.rows) <= long(cfg_.path_token_cap)) return tokens;
    Rng rng(mix_seed(0x70c4u, tokens.rows * 1315423911ULL + tokens.cols));
    std::vector<std::size_t> idx(tokens.rows);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < std::size_t(cfg_.path_token_cap); ++i) {
      const std::size_t j =
          i + std::size_t(rng.uniform_int(0, long(idx.size() - i) - 1));
      std::swap(idx[i], idx[j]);
    }
    FloatMatrix out;
    out.rows = std::size_t(cfg_.path_token_cap);
    out.cols = tokens.cols;
    out.data.resize(out.rows * out.cols);
    for (std::size_t i = 0; i < out.rows; ++i)
      std::copy_n(tokens.data.begin() + long(idx[i] * tokens.cols), tokens.cols,
                  out.data.begin() + long(i * out.cols));
    return out;
  }

  EncoderConfig cfg_;
  Linear<T> path_embed_;
  std::vector<Mlp<T>> gene_group_mlps_;
  ClassTokenAggregator<T> path_agg_, gene_agg_, path_spec_, gene_spec_;
  PooledCrossAttention<T> cross_pg_, cross_gp_;
};

}  // namespace must
