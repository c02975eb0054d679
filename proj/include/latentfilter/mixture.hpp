#pragma once

/*
 * Gaussian mixtures in factored covariance form, built from the per-sample
 * reconstruction error of a fitted linear latent variable model, plus the
 * conditioning step that turns the joint mixture into a QoI posterior.
 *
 * Every component covariance is kept as  A S A^T + diag(p)  with A a D x M
 * factor and S an M x M PSD core, so building, conditioning and sampling all
 * stay low-rank; dense materialization exists for small-D diagnostics.
 */

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "latentfilter/llvm.hpp"
#include "latentfilter/rng.hpp"

namespace latentfilter {

template <typename Scalar = double>
struct LowRankDiagCov {
  MatrixX<Scalar> factor;  // D x M
  MatrixX<Scalar> core;    // M x M, symmetric PSD
  VectorX<Scalar> diag;    // D

  Eigen::Index dim() const { return factor.rows(); }

  MatrixX<Scalar> dense() const {
    MatrixX<Scalar> out = factor * core * factor.transpose();
    out.diagonal() += diag;
    return out;
  }

  // marginal variance of a single coordinate
  Scalar variance(Eigen::Index i) const {
    return factor.row(i).dot(core * factor.row(i).transpose()) + diag[i];
  }
};

template <typename Scalar = double>
struct GaussianMixture {
  VectorX<Scalar> weights;                   // K, non-negative, sums to 1
  std::vector<VectorX<Scalar>> means;        // K vectors of length D
  std::vector<LowRankDiagCov<Scalar>> covs;  // K factored covariances
  bool degenerate_weights = false;           // set when conditioning had to fall back

  Eigen::Index size() const { return weights.size(); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
};

template <typename Scalar = double>
struct MixtureMoments {
  VectorX<Scalar> mean;
  MatrixX<Scalar> cov;
};

template <typename Scalar = double>
struct InflationResult {
  Scalar alpha;      // max(1, alpha_raw)
  Scalar alpha_raw;  // maximum-likelihood value before the clamp
};

namespace detail {

// Symmetric PSD square root via eigendecomposition, with negative roundoff
// eigenvalues clamped to zero. Used for M x M cores only.
template <typename Scalar>
MatrixX<Scalar> psd_sqrt(const MatrixX<Scalar>& m) {
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(m);
  return es.eigenvectors() *
         es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

// Exponentiate-and-normalize a vector of unnormalized log weights (log-sum-exp).
// Returns uniform weights and sets the flag when every entry is -inf or NaN.
template <typename Scalar>
std::pair<VectorX<Scalar>, bool> normalized_exp(const VectorX<Scalar>& log_weights) {
  const Eigen::Index k = log_weights.size();
  Scalar max_lw = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < k; ++i)
    if (std::isfinite(log_weights[i])) max_lw = std::max(max_lw, log_weights[i]);
  if (!std::isfinite(max_lw))
    return {VectorX<Scalar>::Constant(k, Scalar(1) / Scalar(k)), true};
  VectorX<Scalar> w(k);
  for (Eigen::Index i = 0; i < k; ++i)
    w[i] = std::isfinite(log_weights[i]) ? std::exp(log_weights[i] - max_lw) : Scalar(0);
  w /= w.sum();
  return {w, false};
}

// Mixture approximation of the predictive joint: one equally weighted
// component per ensemble member, mean W E[z|y_i] + mu and shared covariance
// W Cov[z|y] W^T + Psi (the reconstruction error of the latent model).
template <typename Scalar>
GaussianMixture<Scalar> build_joint_mixture(const LlvmParams<Scalar>& params,
                                            const JointEnsemble<Scalar>& ensemble) {
  if (ensemble.dim() != params.joint_dim() || ensemble.qoi_dim != params.qoi_dim() ||
      ensemble.obs_dim != params.obs_dim())
    throw std::invalid_argument("build_joint_mixture: ensemble/params dimension mismatch");

  const Eigen::Index n = ensemble.size();
  const MatrixX<Scalar> centered = ensemble.samples.colwise() - params.mean();
  const MatrixX<Scalar> ez =
      params.latent_cov() * (params.psi_inv_loadings().transpose() * centered);

  GaussianMixture<Scalar> gm;
  gm.weights = VectorX<Scalar>::Constant(n, Scalar(1) / Scalar(n));
  gm.means.reserve(n);
  gm.covs.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    gm.means.push_back(params.mean() + params.loadings() * ez.col(i));
    gm.covs.push_back({params.loadings(), params.latent_cov(), params.noise_var()});
  }
  return gm;
}

// First two moments of a mixture, densely (diagnostics; D is small here).
template <typename Scalar>
MixtureMoments<Scalar> mixture_moments(const GaussianMixture<Scalar>& gm) {
  const Eigen::Index d = gm.dim();
  VectorX<Scalar> mean = VectorX<Scalar>::Zero(d);
  for (Eigen::Index i = 0; i < gm.size(); ++i) mean += gm.weights[i] * gm.means[i];
  MatrixX<Scalar> cov = MatrixX<Scalar>::Zero(d, d);
  for (Eigen::Index i = 0; i < gm.size(); ++i) {
    const VectorX<Scalar> c = gm.means[i] - mean;
    cov += gm.weights[i] * (gm.covs[i].dense() + c * c.transpose());
  }
  return {std::move(mean), ((cov + cov.transpose()) / Scalar(2)).eval()};
}

// Maximum-likelihood observation-noise inflation: with the empirical noise
// covariance taken as the outer product of the innovation r = d_obs - mu_d,
// the ML scale of N(d_obs; mu_d, alpha Psi_d) is r^T Psi_d^-1 r / H_d.
// Only inflation is applied (alpha clamped below at 1).
template <typename Scalar>
InflationResult<Scalar> inflate_noise(const LlvmParams<Scalar>& params,
                                      const VectorX<Scalar>& d_obs) {
  if (d_obs.size() != params.obs_dim())
    throw std::invalid_argument("inflate_noise: observation dimension mismatch");
  if (!d_obs.allFinite()) throw std::invalid_argument("inflate_noise: non-finite observation");
  const VectorX<Scalar> r = d_obs - params.mean_obs();
  const Scalar raw =
      (r.array().square() / params.noise_var_obs().array()).sum() / Scalar(params.obs_dim());
  return {std::max(Scalar(1), raw), raw};
}

// Condition the joint mixture on an observation: each component's latent
// Gaussian is updated with the linear observation model d = W_d z + mu_d + eta,
// eta ~ N(0, alpha Psi_d), then pushed through the QoI block. Component
// weights are the observation likelihoods under each component's observable
// marginal, normalized in log space.
template <typename Scalar>
GaussianMixture<Scalar> condition_mixture(const LlvmParams<Scalar>& params,
                                          const std::vector<LatentPosterior<Scalar>>& posteriors,
                                          const VectorX<Scalar>& d_obs, Scalar alpha) {
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  if (alpha < Scalar(1)) throw std::invalid_argument("condition_mixture: alpha must be >= 1");
  if (d_obs.size() != params.obs_dim())
    throw std::invalid_argument("condition_mixture: observation dimension mismatch");
  if (posteriors.empty()) throw std::invalid_argument("condition_mixture: no components");

  const Eigen::Index m = params.latent_dim();
  const Eigen::Index h_d = params.obs_dim();
  const Eigen::Index k = static_cast<Eigen::Index>(posteriors.size());

  const auto w_d = params.loadings_obs();
  const auto w_q = params.loadings_qoi();
  const Vector noise = alpha * params.noise_var_obs();
  const Vector noise_inv = noise.cwiseInverse();
  const Vector r0 = d_obs - params.mean_obs();

  const Matrix wd_t_ninv = w_d.transpose() * noise_inv.asDiagonal();  // M x H_d
  const Matrix obs_info = wd_t_ninv * w_d;                            // M x M
  const Vector b_obs = wd_t_ninv * r0;
  const Scalar log_det_noise = noise.array().log().sum();
  constexpr Scalar log2pi = Scalar(1.8378770664093454835606594728112353L);

  const Matrix identity = Matrix::Identity(m, m);

  GaussianMixture<Scalar> gm;
  gm.means.reserve(k);
  gm.covs.reserve(k);
  Vector log_w(k);

  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& prior = posteriors[i];
    if (prior.mean.size() != m || prior.cov.rows() != m || prior.cov.cols() != m)
      throw std::invalid_argument("condition_mixture: latent posterior dimension mismatch");

    const Eigen::LDLT<Matrix> prior_ldlt(prior.cov);
    const Matrix prior_prec = prior_ldlt.solve(identity);
    Matrix post_cov = (prior_prec + obs_info).llt().solve(identity);
    post_cov = ((post_cov + post_cov.transpose()) / Scalar(2)).eval();
    const Vector post_mean = post_cov * (b_obs + prior_ldlt.solve(prior.mean));

    gm.means.push_back(params.mean_qoi() + w_q * post_mean);
    gm.covs.push_back({Matrix(w_q), post_cov, Vector(params.noise_var_qoi())});

    // likelihood of d_obs under N(W_d m_i + mu_d, W_d G_i W_d^T + alpha Psi_d)
    const Vector r = r0 - w_d * prior.mean;
    const Matrix v = w_d * detail::psd_sqrt<Scalar>(prior.cov);  // H_d x M
    Matrix cap = identity;
    cap.noalias() += v.transpose() * noise_inv.asDiagonal() * v;
    const Eigen::LLT<Matrix> cap_llt(cap);
    const Vector s = v.transpose() * noise_inv.cwiseProduct(r);
    const Scalar quad = r.dot(noise_inv.cwiseProduct(r)) - s.dot(cap_llt.solve(s));
    const Scalar log_det =
        log_det_noise +
        Scalar(2) * cap_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    log_w[i] = Scalar(-0.5) * (Scalar(h_d) * log2pi + log_det + quad);
  }

  auto [weights, degenerate] = normalized_exp(log_w);
  gm.weights = std::move(weights);
  gm.degenerate_weights = degenerate;
  return gm;
}

// i.i.d. draws from the mixture: component by inverse-CDF on the weights,
// then mean + A sqrt(S) xi + sqrt(p) .* eps with fresh standard normals.
template <typename Scalar>
MatrixX<Scalar> sample_mixture(const GaussianMixture<Scalar>& gm, Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_mixture: need n >= 1");
  if (gm.size() < 1) throw std::invalid_argument("sample_mixture: empty mixture");

  const Eigen::Index d = gm.dim();
  std::vector<MatrixX<Scalar>> core_sqrt;
  core_sqrt.reserve(gm.covs.size());
  for (const auto& c : gm.covs) core_sqrt.push_back(detail::psd_sqrt<Scalar>(c.core));

  std::uniform_real_distribution<Scalar> unif(Scalar(0), Scalar(1));
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));

  MatrixX<Scalar> out(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Scalar u = unif(rng);
    Eigen::Index comp = gm.size() - 1;
    Scalar acc = Scalar(0);
    for (Eigen::Index i = 0; i < gm.size(); ++i) {
      acc += gm.weights[i];
      if (u < acc) {
        comp = i;
        break;
      }
    }
    const auto& cov = gm.covs[comp];
    VectorX<Scalar> xi(cov.core.rows());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = normal(rng);
    VectorX<Scalar> x = gm.means[comp] + cov.factor * (core_sqrt[comp] * xi);
    for (Eigen::Index i = 0; i < d; ++i) x[i] += std::sqrt(cov.diag[i]) * normal(rng);
    out.col(j) = x;
  }
  return out;
}

// Number of modes of the 1-D marginal density of one coordinate, counted on
// a fine grid. Peaks below rel_floor of the global maximum are ignored, and
// neighbouring peaks without a genuine valley between them are merged.
template <typename Scalar>
int count_marginal_modes(const GaussianMixture<Scalar>& gm, Eigen::Index coord,
                         Eigen::Index grid_points = 2001, Scalar rel_floor = Scalar(0.01)) {
  const Eigen::Index k = gm.size();
  VectorX<Scalar> mu(k), sd(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    mu[i] = gm.means[i][coord];
    sd[i] = std::sqrt(std::max(gm.covs[i].variance(coord),
                               std::numeric_limits<Scalar>::min()));
  }
  const Scalar lo = (mu - Scalar(5) * sd).minCoeff();
  const Scalar hi = (mu + Scalar(5) * sd).maxCoeff();
  const Scalar step = (hi - lo) / Scalar(grid_points - 1);

  VectorX<Scalar> dens = VectorX<Scalar>::Zero(grid_points);
  const Scalar inv_sqrt2pi = Scalar(0.3989422804014326779399460599343819L);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Scalar norm = gm.weights[i] * inv_sqrt2pi / sd[i];
    for (Eigen::Index g = 0; g < grid_points; ++g) {
      const Scalar z = (lo + step * Scalar(g) - mu[i]) / sd[i];
      dens[g] += norm * std::exp(Scalar(-0.5) * z * z);
    }
  }

  const Scalar floor = rel_floor * dens.maxCoeff();
  std::vector<Eigen::Index> peaks;
  for (Eigen::Index g = 1; g + 1 < grid_points; ++g)
    if (dens[g] > dens[g - 1] && dens[g] > dens[g + 1] && dens[g] >= floor)
      peaks.push_back(g);

  // merge peaks that are not separated by a real valley
  int count = 0;
  Eigen::Index prev = -1;
  for (const Eigen::Index p : peaks) {
    if (prev < 0) {
      ++count;
      prev = p;
      continue;
    }
    Scalar valley = dens[prev];
    for (Eigen::Index g = prev; g <= p; ++g) valley = std::min(valley, dens[g]);
    if (valley < Scalar(0.95) * std::min(dens[prev], dens[p])) {
      ++count;
      prev = p;
    } else if (dens[p] > dens[prev]) {
      prev = p;  // merged; keep the taller of the pair
    }
  }
  return count;
}

}  // namespace latentfilter
