#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "must/encoders.hpp"
#include "must/nn.hpp"

namespace must {

enum class ProjectorMode {
  kExact,    // B re-orthonormalized (QR retraction) after every step
  kPenalty,  // unconstrained B; ||B^T B - I||_F^2 penalty joins the objective
};

/// Learnable low-rank basis B [D, r] defining the shared-subspace projector
/// P = B B^T. In exact mode, retract() keeps columns orthonormal so P is
/// symmetric idempotent and the recovery algebra g - (I-P)u holds literally.
template <class T>
class SharedProjector {
 public:
  SharedProjector() = default;

  static SharedProjector create(ParamStore<T>& store, int dim, int rank,
                                Rng& rng) {
    if (rank < 1 || rank > dim)
      throw ConfigError("rank: must satisfy 1 <= r <= embed_dim");
    SharedProjector p;
    p.dim_ = dim;
    p.rank_ = rank;
    p.basis_ = &store.create("proj.B", std::size_t(dim), std::size_t(rank),
                             Init::kXavier, rng);
    p.retract(rng);  // start on the manifold
    return p;
  }

  /// P v for a row vector v [1, D], computed as (v B) B^T.
  Tensor<T> project_shared(const Tensor<T>& v) const {
    return matmul(matmul(v, basis_->tensor), transpose(basis_->tensor));
  }

  /// (I - P) v.
  Tensor<T> project_specific(const Tensor<T>& v) const {
    return sub(v, project_shared(v));
  }

  /// Graph-attached orthonormality penalty ||B^T B - I||_F^2.
  Tensor<T> orthonormality_penalty() const {
    Tensor<T> gram = matmul(transpose(basis_->tensor), basis_->tensor);
    Tensor<T> dev = gram;
    // Subtract the identity without a dedicated op: add -1 on the diagonal.
    std::vector<T> eye(std::size_t(rank_) * std::size_t(rank_), T(0));
    for (int i = 0; i < rank_; ++i)
      eye[std::size_t(i) * std::size_t(rank_) + std::size_t(i)] = T(1);
    dev = sub(gram, Tensor<T>::from_vector(std::size_t(rank_),
                                           std::size_t(rank_), eye));
    return sq_norm(dev);
  }

  struct RetractInfo {
    int reinitialized_columns = 0;
  };

  /// Twice-iterated modified Gram-Schmidt on the columns of B; preserves the
  /// column span and leaves an already-orthonormal basis untouched (positive
  /// diagonal of R by construction). Columns that collapse to (numerical)
  /// rank deficiency are re-drawn randomly and counted in the result.
  RetractInfo retract(Rng& rng) {
    RetractInfo info;
    auto& b = basis_->values();
    const int d = dim_, r = rank_;
    auto col_dot = [&](int i, int j) {
      double s = 0;
      for (int row = 0; row < d; ++row)
        s += double(b[std::size_t(row) * std::size_t(r) + std::size_t(i)]) *
             double(b[std::size_t(row) * std::size_t(r) + std::size_t(j)]);
      return s;
    };
    for (int j = 0; j < r; ++j) {
      for (int attempt = 0;; ++attempt) {
        for (int pass = 0; pass < 2; ++pass) {
          for (int i = 0; i < j; ++i) {
            const double proj = col_dot(i, j);
            for (int row = 0; row < d; ++row)
              b[std::size_t(row) * std::size_t(r) + std::size_t(j)] -=
                  T(proj) *
                  b[std::size_t(row) * std::size_t(r) + std::size_t(i)];
          }
        }
        const double norm = std::sqrt(col_dot(j, j));
        if (norm > 1e-10) {
          const double inv = 1.0 / norm;
          for (int row = 0; row < d; ++row)
            b[std::size_t(row) * std::size_t(r) + std::size_t(j)] *= T(inv);
          break;
        }
        if (attempt >= 4)
          throw NanAbort("projector retraction: cannot span rank " +
                         std::to_string(r));
        ++info.reinitialized_columns;
        for (int row = 0; row < d; ++row)
          b[std::size_t(row) * std::size_t(r) + std::size_t(j)] =
              T(rng.normal());
      }
    }
    return info;
  }

  /// Dense P = B B^T; diagnostics only.
  std::vector<double> projector_matrix() const {
    const auto& b = basis_->values();
    std::vector<double> p(std::size_t(dim_) * std::size_t(dim_), 0.0);
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) {
        double s = 0;
        for (int k = 0; k < rank_; ++k)
          s += double(b[std::size_t(i) * std::size_t(rank_) + std::size_t(k)]) *
               double(b[std::size_t(j) * std::size_t(rank_) + std::size_t(k)]);
        p[std::size_t(i) * std::size_t(dim_) + std::size_t(j)] = s;
      }
    return p;
  }

  /// ||B^T B - I||_F, the orthonormality residual.
  double gram_residual() const {
    const auto& b = basis_->values();
    double acc = 0;
    for (int i = 0; i < rank_; ++i)
      for (int j = 0; j < rank_; ++j) {
        double s = 0;
        for (int row = 0; row < dim_; ++row)
          s += double(b[std::size_t(row) * std::size_t(rank_) + std::size_t(i)]) *
               double(b[std::size_t(row) * std::size_t(rank_) + std::size_t(j)]);
        const double target = i == j ? 1.0 : 0.0;
        acc += (s - target) * (s - target);
      }
    return std::sqrt(acc);
  }

  Parameter<T>* basis() { return basis_; }
  const Parameter<T>* basis() const { return basis_; }
  int rank() const { return rank_; }
  int dim() const { return dim_; }

 private:
  Parameter<T>* basis_ = nullptr;
  int dim_ = 0;
  int rank_ = 0;
};

/// The eight projected vectors of one decomposition pass.
template <class T>
struct Decomposition {
  Tensor<T> hat_c_pg;  // P c_{P<-G}
  Tensor<T> hat_c_gp;  // P c_{G<-P}
  Tensor<T> hat_u_p;   // (I-P) u_P
  Tensor<T> hat_u_g;   // (I-P) u_G
  Tensor<T> shared_c;  // (hat_c_pg + hat_c_gp) / 2
};

template <class T>
Decomposition<T> project(const SharedProjector<T>& proj,
                         const EncoderOutputs<T>& enc) {
  Decomposition<T> d;
  d.hat_c_pg = proj.project_shared(enc.c_path_from_gene);
  d.hat_c_gp = proj.project_shared(enc.c_gene_from_path);
  d.hat_u_p = proj.project_specific(enc.u_path);
  d.hat_u_g = proj.project_specific(enc.u_gene);
  d.shared_c = scale(add(d.hat_c_pg, d.hat_c_gp), T(0.5));
  return d;
}

/// ||g_P - (u^_P + c^_{G<-P})||^2 + ||g_G - (u^_G + c^_{P<-G})||^2.
template <class T>
Tensor<T> decomp_loss(const Decomposition<T>& d, const EncoderOutputs<T>& e) {
  return add(sq_norm(sub(e.g_path, add(d.hat_u_p, d.hat_c_gp))),
             sq_norm(sub(e.g_gene, add(d.hat_u_g, d.hat_c_pg))));
}

/// ||c^_{P<-G} - c^_{G<-P}||^2.
template <class T>
Tensor<T> shared_loss(const Decomposition<T>& d) {
  return sq_norm(sub(d.hat_c_pg, d.hat_c_gp));
}

/// |cos(u^_P, u^_G)| + |cos(u^_P, c^_{P<-G})| + |cos(u^_G, c^_{G<-P})|.
/// Near-zero vectors contribute 0 by the cosine guard convention.
template <class T>
Tensor<T> orth_loss(const Decomposition<T>& d) {
  return add(add(abs_t(cosine(d.hat_u_p, d.hat_u_g)),
                 abs_t(cosine(d.hat_u_p, d.hat_c_pg))),
             abs_t(cosine(d.hat_u_g, d.hat_c_gp)));
}

/// Prediction-head input [u^_P ; c^ ; u^_G], c^ = averaged shared component.
template <class T>
Tensor<T> fuse_for_prediction(const Decomposition<T>& d) {
  return hcat<T>({d.hat_u_p, d.shared_c, d.hat_u_g});
}

}  // namespace must
