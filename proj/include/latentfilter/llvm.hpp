#pragma once

/*
 * Linear latent variable models (PPCA / factor analysis) fitted by EM.
 *
 * Generative model:   y = W z + mu + eta,   z ~ N(0, I_M),  eta ~ N(0, Psi)
 * with Psi = sigma^2 I (PPCA) or Psi = diag(sigma_1^2 .. sigma_H^2) (FA).
 *
 * Everything is kept in factored form: the only matrices ever formed are
 * H x M and M x M, so fitting and inference cost O(H N M) and O(H M^2)
 * respectively. No H x H matrix is materialized anywhere in this header.
 */

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "latentfilter/rng.hpp"

namespace latentfilter {

enum class LlvmVariant { Ppca, Fa };

template <typename Scalar = double>
using MatrixX = Eigen::MatrixX<Scalar>;
template <typename Scalar = double>
using VectorX = Eigen::VectorX<Scalar>;

// Ensemble of N joint samples, one column per member, each the stack
// [qoi; observable] of a propagated state and its predicted observable.
template <typename Scalar = double>
struct JointEnsemble {
  MatrixX<Scalar> samples;  // (qoi_dim + obs_dim) x N
  Eigen::Index qoi_dim = 0;
  Eigen::Index obs_dim = 0;

  JointEnsemble() = default;
  JointEnsemble(MatrixX<Scalar> s, Eigen::Index hq, Eigen::Index hd)
      : samples(std::move(s)), qoi_dim(hq), obs_dim(hd) {
    if (samples.rows() != hq + hd)
      throw std::invalid_argument("JointEnsemble: block sizes do not match sample dimension");
    if (samples.cols() < 1)
      throw std::invalid_argument("JointEnsemble: need at least one sample");
    if (!samples.allFinite())
      throw std::invalid_argument("JointEnsemble: non-finite sample");
  }

  Eigen::Index dim() const { return samples.rows(); }
  Eigen::Index size() const { return samples.cols(); }
};

// Gaussian posterior of the latent variable given one joint sample.
template <typename Scalar = double>
struct LatentPosterior {
  VectorX<Scalar> mean;  // E[z | y]
  MatrixX<Scalar> cov;   // Cov[z | y]; independent of the sample
};

// Fitted model parameters, immutable after construction. The constructor
// precomputes the quantities shared by every per-sample query:
//   psi_inv_w = Psi^-1 W
//   latent_precision = I_M + W^T Psi^-1 W
//   latent_cov = (I_M + W^T Psi^-1 W)^-1  == Cov[z|y] for every sample
//   log_det_sigma = log|W W^T + Psi|   (matrix determinant lemma)
template <typename Scalar = double>
class LlvmParams {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  LlvmParams(Matrix loadings, Vector mean, Vector noise_var, LlvmVariant variant,
             Eigen::Index qoi_dim, Eigen::Index obs_dim)
      : w_(std::move(loadings)),
        mu_(std::move(mean)),
        psi_(std::move(noise_var)),
        variant_(variant),
        h_q_(qoi_dim),
        h_d_(obs_dim) {
    const Eigen::Index h = w_.rows();
    if (mu_.size() != h || psi_.size() != h)
      throw std::invalid_argument("LlvmParams: inconsistent dimensions");
    if (h_q_ + h_d_ != h)
      throw std::invalid_argument("LlvmParams: blocks must partition the joint dimension");
    if ((psi_.array() <= Scalar(0)).any())
      throw std::invalid_argument("LlvmParams: noise variances must be positive");
    if (variant_ == LlvmVariant::Ppca && (psi_.array() != psi_[0]).any())
      throw std::invalid_argument("LlvmParams: PPCA requires a shared noise variance");

    psi_inv_w_ = psi_.cwiseInverse().asDiagonal() * w_;
    latent_precision_ = Matrix::Identity(latent_dim(), latent_dim());
    latent_precision_.noalias() += w_.transpose() * psi_inv_w_;
    Eigen::LLT<Matrix> llt(latent_precision_);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("LlvmParams: latent precision not positive definite");
    latent_cov_ = llt.solve(Matrix::Identity(latent_dim(), latent_dim()));
    // symmetrize; the solve is exact only up to roundoff
    latent_cov_ = ((latent_cov_ + latent_cov_.transpose()) / Scalar(2)).eval();
    log_det_sigma_ = psi_.array().log().sum() +
                     Scalar(2) * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  const Matrix& loadings() const { return w_; }
  const Vector& mean() const { return mu_; }
  const Vector& noise_var() const { return psi_; }
  LlvmVariant variant() const { return variant_; }

  Eigen::Index joint_dim() const { return w_.rows(); }
  Eigen::Index latent_dim() const { return w_.cols(); }
  Eigen::Index qoi_dim() const { return h_q_; }
  Eigen::Index obs_dim() const { return h_d_; }

  auto loadings_qoi() const { return w_.topRows(h_q_); }
  auto loadings_obs() const { return w_.bottomRows(h_d_); }
  auto mean_qoi() const { return mu_.head(h_q_); }
  auto mean_obs() const { return mu_.tail(h_d_); }
  auto noise_var_qoi() const { return psi_.head(h_q_); }
  auto noise_var_obs() const { return psi_.tail(h_d_); }

  const Matrix& psi_inv_loadings() const { return psi_inv_w_; }
  const Matrix& latent_precision() const { return latent_precision_; }
  const Matrix& latent_cov() const { return latent_cov_; }
  Scalar log_det_sigma() const { return log_det_sigma_; }

 private:
  Matrix w_;
  Vector mu_;
  Vector psi_;
  LlvmVariant variant_;
  Eigen::Index h_q_;
  Eigen::Index h_d_;

  Matrix psi_inv_w_;
  Matrix latent_precision_;
  Matrix latent_cov_;
  Scalar log_det_sigma_;
};

struct EmOptions {
  double tol = 1e-8;   // relative log-likelihood change
  int max_iter = 500;
};

template <typename Scalar = double>
struct FitResult {
  LlvmParams<Scalar> params;
  std::vector<Scalar> loglik_trace;  // total log-likelihood at each iterate
  int iterations = 0;
  bool converged = false;
  bool degenerate_data = false;  // every coordinate had zero variance
};

// Posterior of z given one joint sample:
//   E[z|y]   = W^T Sigma^-1 (y - mu)  == latent_cov * W^T Psi^-1 (y - mu)
//   Cov[z|y] = I - W^T Sigma^-1 W     == latent_cov
// The Woodbury form above costs O(H M), and the covariance is cached in the
// params so every call returns the identical matrix.
template <typename Scalar>
LatentPosterior<Scalar> latent_posterior(const LlvmParams<Scalar>& params,
                                         const VectorX<Scalar>& sample) {
  if (sample.size() != params.joint_dim())
    throw std::invalid_argument("latent_posterior: sample dimension mismatch");
  VectorX<Scalar> t = params.psi_inv_loadings().transpose() * (sample - params.mean());
  return {params.latent_cov() * t, params.latent_cov()};
}

// Log-density of a sample under the marginal N(mu, W W^T + Psi), evaluated
// with the determinant lemma and the Woodbury identity in O(H M).
template <typename Scalar>
Scalar marginal_loglik(const LlvmParams<Scalar>& params, const VectorX<Scalar>& sample) {
  if (sample.size() != params.joint_dim())
    throw std::invalid_argument("marginal_loglik: sample dimension mismatch");
  const VectorX<Scalar> u = sample - params.mean();
  const VectorX<Scalar> t = params.psi_inv_loadings().transpose() * u;
  const Scalar quad =
      (u.array().square() / params.noise_var().array()).sum() - t.dot(params.latent_cov() * t);
  constexpr Scalar log2pi = Scalar(1.8378770664093454835606594728112353L);
  return Scalar(-0.5) * (Scalar(params.joint_dim()) * log2pi + params.log_det_sigma() + quad);
}

namespace detail {

// One pass of total marginal log-likelihood over centered data, reusing the
// E-step pieces: t_i = W^T Psi^-1 yc_i, ez_i = G t_i.
template <typename Scalar>
Scalar total_loglik(const MatrixX<Scalar>& centered, const VectorX<Scalar>& psi,
                    const MatrixX<Scalar>& t, const MatrixX<Scalar>& ez,
                    Scalar log_det_latent_precision) {
  const Eigen::Index h = centered.rows();
  const Eigen::Index n = centered.cols();
  const Scalar log_det = psi.array().log().sum() + log_det_latent_precision;
  const Scalar quad =
      (psi.cwiseInverse().asDiagonal() * centered).cwiseProduct(centered).sum() -
      t.cwiseProduct(ez).sum();
  constexpr Scalar log2pi = Scalar(1.8378770664093454835606594728112353L);
  return Scalar(-0.5) * (Scalar(n) * (Scalar(h) * log2pi + log_det) + quad);
}

}  // namespace detail

// Maximum-likelihood fit of the latent model by EM. mu is the ensemble
// sample mean (exact ML, set once); W and Psi are iterated with the
// standard E/M updates, using the 1/N covariance convention throughout.
// Per-iteration cost is O(H N M); only H x M and M x M matrices are formed.
// A previous fit of matching shape may be passed to warm-start the iteration.
template <typename Scalar>
FitResult<Scalar> fit_llvm(const JointEnsemble<Scalar>& ensemble, Eigen::Index latent_dim,
                           LlvmVariant variant, const EmOptions& opts = {},
                           std::uint64_t seed = 0,
                           const LlvmParams<Scalar>* warm_start = nullptr) {
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  const Eigen::Index h = ensemble.dim();
  const Eigen::Index n = ensemble.size();
  if (latent_dim < 1 || latent_dim >= n)
    throw std::invalid_argument("fit_llvm: need 1 <= latent_dim < ensemble size");
  if (warm_start && (warm_start->joint_dim() != h || warm_start->latent_dim() != latent_dim))
    throw std::invalid_argument("fit_llvm: warm start shape mismatch");

  const Vector mu = ensemble.samples.rowwise().mean();
  const Matrix centered = ensemble.samples.colwise() - mu;
  const Vector diag_s = centered.array().square().rowwise().mean();  // diag of 1/N covariance

  const Scalar max_var = diag_s.maxCoeff();
  const Scalar psi_floor = std::max(Scalar(1e-9) * max_var, Scalar(1e-12));
  const bool degenerate = !(max_var > Scalar(0));

  // Initialization: loadings are Gaussian entries scaled by the per-coordinate
  // data standard deviation / sqrt(M); Psi starts at the residual variance
  // after a least-squares projection of the centered data onto those loadings.
  Rng rng(seed);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  Matrix w(h, latent_dim);
  Vector psi(h);
  if (warm_start) {
    w = warm_start->loadings();
    psi = warm_start->noise_var().cwiseMax(psi_floor);
  } else {
    const Vector sd = diag_s.cwiseSqrt();
    const Scalar init_scale = Scalar(1) / std::sqrt(Scalar(latent_dim));
    for (Eigen::Index i = 0; i < h; ++i)
      for (Eigen::Index j = 0; j < latent_dim; ++j) w(i, j) = normal(rng) * sd[i] * init_scale;

    Matrix gram = w.transpose() * w;
    gram.diagonal().array() += std::numeric_limits<Scalar>::epsilon() * (Scalar(1) + max_var);
    const Matrix coeff = Eigen::LDLT<Matrix>(gram).solve(w.transpose() * centered);
    const Matrix resid = centered - w * coeff;
    psi = resid.array().square().rowwise().mean();
    if (variant == LlvmVariant::Ppca) psi.setConstant(psi.mean());
    psi = psi.cwiseMax(psi_floor);
  }

  std::vector<Scalar> trace;
  trace.reserve(16);
  bool converged = false;
  int iter = 0;
  Scalar prev_ll = -std::numeric_limits<Scalar>::infinity();

  const Matrix identity = Matrix::Identity(latent_dim, latent_dim);
  for (; iter < opts.max_iter; ++iter) {
    // E-step at the current parameters
    const Matrix psi_inv_w = psi.cwiseInverse().asDiagonal() * w;
    Matrix c0 = identity;
    c0.noalias() += w.transpose() * psi_inv_w;
    const Eigen::LLT<Matrix> llt(c0);
    const Matrix g = llt.solve(identity);  // Cov[z|y]
    const Scalar log_det_c0 =
        Scalar(2) * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Matrix t = psi_inv_w.transpose() * centered;  // M x N
    const Matrix ez = g * t;

    const Scalar ll = detail::total_loglik<Scalar>(centered, psi, t, ez, log_det_c0);
    trace.push_back(ll);
    if (iter > 0 &&
        std::abs(ll - prev_ll) <= opts.tol * std::max(Scalar(1), std::abs(prev_ll))) {
      converged = true;
      break;
    }
    prev_ll = ll;

    // M-step
    Matrix b = g;  // (1/N) sum_i E[z_i z_i^T]
    b.noalias() += ez * ez.transpose() / Scalar(n);
    Matrix delta = centered * ez.transpose() / Scalar(n);  // H x M
    w = Eigen::LDLT<Matrix>(b).solve(delta.transpose()).transpose();
    psi = diag_s - w.cwiseProduct(delta).rowwise().sum();
    if (variant == LlvmVariant::Ppca) psi.setConstant(psi.mean());
    psi = psi.cwiseMax(psi_floor);
  }

  LlvmParams<Scalar> params(std::move(w), mu, std::move(psi), variant, ensemble.qoi_dim,
                            ensemble.obs_dim);
  if (!converged) {
    // record the likelihood of the final iterate as well
    Scalar ll = Scalar(0);
    for (Eigen::Index i = 0; i < n; ++i)
      ll += marginal_loglik(params, VectorX<Scalar>(ensemble.samples.col(i)));
    trace.push_back(ll);
  }
  return {std::move(params), std::move(trace), iter, converged, degenerate};
}

}  // namespace latentfilter
