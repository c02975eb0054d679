#pragma once

/*
 * Filter cycles: the latent-mixture filter (propagate -> fit -> inflate ->
 * condition -> resample) and a stochastic ensemble Kalman filter baseline
 * with perturbed observations.
 */

#include <cmath>
#include <optional>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "latentfilter/dynamics.hpp"
#include "latentfilter/llvm.hpp"
#include "latentfilter/mixture.hpp"
#include "latentfilter/rng.hpp"

namespace latentfilter {

template <typename Scalar = double>
struct FilterState {
  MatrixX<Scalar> ensemble;  // state_dim x N, one member per column
  int step = 0;
  Rng rng;
  std::optional<LlvmParams<Scalar>> previous_fit;  // used only when warm starting

  Eigen::Index size() const { return ensemble.cols(); }
  Eigen::Index dim() const { return ensemble.rows(); }
};

template <typename Scalar = double>
struct CycleDiagnostics {
  Scalar alpha = 1;
  Scalar alpha_raw = 0;
  Scalar eff_components = 0;  // exp of weight entropy, in [1, N]
  VectorX<Scalar> posterior_mean;
  VectorX<Scalar> posterior_var_diag;
  bool degenerate_weights = false;
  int em_iterations = 0;
  bool em_converged = false;
};

template <typename Scalar = double>
struct EnllvmOptions {
  Eigen::Index latent_dim = 2;
  LlvmVariant variant = LlvmVariant::Ppca;
  EmOptions em{};
  bool warm_start = false;  // reuse the previous cycle's fit as EM init
};

// Effective number of mixture components: exp of the Shannon entropy of the
// weights. Equals K for uniform weights and 1 when a single component holds
// all the mass.
template <typename Scalar>
Scalar effective_components(const VectorX<Scalar>& weights) {
  Scalar entropy = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (weights[i] > Scalar(0)) entropy -= weights[i] * std::log(weights[i]);
  return std::exp(entropy);
}

namespace detail {

template <typename Scalar>
MatrixX<Scalar> propagate_members(const DynSystem<Scalar>& sys, const MatrixX<Scalar>& ensemble,
                                  Scalar dt_model, int n_steps, int cycle) {
  MatrixX<Scalar> out(ensemble.rows(), ensemble.cols());
  for (Eigen::Index i = 0; i < ensemble.cols(); ++i) {
    try {
      out.col(i) = integrate(sys, Eigen::VectorX<Scalar>(ensemble.col(i)), dt_model, n_steps);
    } catch (const std::runtime_error&) {
      throw DivergenceError("filter member diverged during propagation", cycle);
    }
  }
  return out;
}

}  // namespace detail

// One assimilation cycle of the latent-mixture filter. Each member is
// propagated through the dynamics and pushed through the full measurement
// model (including a fresh observation-noise draw), so the joint ensemble
// carries samples of [q; d] and the update never evaluates an observation
// likelihood in the original space.
template <typename Scalar>
CycleDiagnostics<Scalar> enllvm_cycle(FilterState<Scalar>& state, const DynSystem<Scalar>& sys,
                                      Scalar dt_model, int n_steps,
                                      const MeasModel<Scalar>& meas,
                                      const VectorX<Scalar>& d_obs,
                                      const EnllvmOptions<Scalar>& opts) {
  if (d_obs.size() != meas.obs_dim)
    throw std::invalid_argument("enllvm_cycle: observation dimension mismatch");

  const Eigen::Index n = state.size();
  const Eigen::Index h_q = state.dim();
  const Eigen::Index h_d = meas.obs_dim;

  const MatrixX<Scalar> propagated =
      detail::propagate_members(sys, state.ensemble, dt_model, n_steps, state.step);

  MatrixX<Scalar> joint(h_q + h_d, n);
  joint.topRows(h_q) = propagated;
  for (Eigen::Index i = 0; i < n; ++i)
    joint.col(i).tail(h_d) = measure(meas, Eigen::VectorX<Scalar>(propagated.col(i)), state.rng);

  const JointEnsemble<Scalar> ensemble(std::move(joint), h_q, h_d);
  const std::uint64_t em_seed = state.rng();
  const LlvmParams<Scalar>* warm =
      (opts.warm_start && state.previous_fit && state.previous_fit->joint_dim() == h_q + h_d &&
       state.previous_fit->latent_dim() == opts.latent_dim)
          ? &*state.previous_fit
          : nullptr;
  FitResult<Scalar> fit =
      fit_llvm(ensemble, opts.latent_dim, opts.variant, opts.em, em_seed, warm);

  std::vector<LatentPosterior<Scalar>> posteriors;
  posteriors.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i)
    posteriors.push_back(
        latent_posterior(fit.params, VectorX<Scalar>(ensemble.samples.col(i))));

  const InflationResult<Scalar> inflation = inflate_noise(fit.params, d_obs);
  const GaussianMixture<Scalar> posterior =
      condition_mixture(fit.params, posteriors, d_obs, inflation.alpha);
  const MixtureMoments<Scalar> moments = mixture_moments(posterior);

  state.ensemble = sample_mixture(posterior, n, state.rng);
  state.step += 1;
  if (opts.warm_start) state.previous_fit = fit.params;

  CycleDiagnostics<Scalar> diag;
  diag.alpha = inflation.alpha;
  diag.alpha_raw = inflation.alpha_raw;
  diag.eff_components = effective_components(posterior.weights);
  diag.posterior_mean = moments.mean;
  diag.posterior_var_diag = moments.cov.diagonal();
  diag.degenerate_weights = posterior.degenerate_weights;
  diag.em_iterations = fit.iterations;
  diag.em_converged = fit.converged;
  return diag;
}

// One assimilation cycle of the stochastic EnKF with perturbed observations,
// in observation-ensemble form so nonlinear measurement operators are
// handled by sampling rather than linearization.
template <typename Scalar>
void enkf_cycle(FilterState<Scalar>& state, const DynSystem<Scalar>& sys, Scalar dt_model,
                int n_steps, const MeasModel<Scalar>& meas, const VectorX<Scalar>& d_obs) {
  if (d_obs.size() != meas.obs_dim)
    throw std::invalid_argument("enkf_cycle: observation dimension mismatch");

  const Eigen::Index n = state.size();
  const Eigen::Index h_d = meas.obs_dim;
  if (n < 2) throw std::invalid_argument("enkf_cycle: need at least two members");

  MatrixX<Scalar> x =
      detail::propagate_members(sys, state.ensemble, dt_model, n_steps, state.step);

  MatrixX<Scalar> y(h_d, n);
  for (Eigen::Index i = 0; i < n; ++i)
    y.col(i) = measure_noiseless(meas, Eigen::VectorX<Scalar>(x.col(i)));

  const VectorX<Scalar> x_mean = x.rowwise().mean();
  const VectorX<Scalar> y_mean = y.rowwise().mean();
  const MatrixX<Scalar> xc = x.colwise() - x_mean;
  const MatrixX<Scalar> yc = y.colwise() - y_mean;

  const Scalar norm = Scalar(1) / Scalar(n - 1);
  const MatrixX<Scalar> c_xd = xc * yc.transpose() * norm;
  MatrixX<Scalar> c_dd = yc * yc.transpose() * norm;
  c_dd.diagonal() += meas.noise_var;

  const Eigen::LDLT<MatrixX<Scalar>> ldlt(c_dd);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("enkf_cycle: innovation covariance not factorizable");
  // K = C_xd (C_dd + R)^-1, applied through the solve
  const MatrixX<Scalar> gain_t = ldlt.solve(c_xd.transpose());  // h_d x h_q

  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  for (Eigen::Index i = 0; i < n; ++i) {
    VectorX<Scalar> innovation = d_obs - y.col(i);
    for (Eigen::Index j = 0; j < h_d; ++j)
      innovation[j] += std::sqrt(meas.noise_var[j]) * normal(state.rng);
    x.col(i) += gain_t.transpose() * innovation;
  }

  state.ensemble = std::move(x);
  state.step += 1;
}

}  // namespace latentfilter
