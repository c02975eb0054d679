#pragma once

/*
 * Benchmark dynamical systems (Lorenz 63, Lorenz 96), a classical RK4
 * integrator, the measurement operators used in the twin experiments, and
 * synthetic truth/observation generation.
 */

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "latentfilter/rng.hpp"

namespace latentfilter {

template <typename Scalar = double>
struct DynSystem {
  Eigen::Index dim = 0;
  // writes dx/dt into the second argument
  std::function<void(const Eigen::VectorX<Scalar>&, Eigen::VectorX<Scalar>&)> drift;
};

template <typename Scalar = double>
struct MeasModel {
  Eigen::Index obs_dim = 0;
  std::function<void(const Eigen::VectorX<Scalar>&, Eigen::VectorX<Scalar>&)> observe;
  Eigen::VectorX<Scalar> noise_var;  // diagonal observation-noise covariance
};

// Truth states and noisy observations at the assimilation times
// t_k = k * dt_obs, k = 1..n_cycles.
template <typename Scalar = double>
struct TwinRun {
  std::vector<Eigen::VectorX<Scalar>> truth;
  std::vector<Eigen::VectorX<Scalar>> observations;
  Scalar dt_model = 0;
  Scalar dt_obs = 0;
};

struct DivergenceError : std::runtime_error {
  int cycle;
  explicit DivergenceError(const std::string& what, int cycle_index)
      : std::runtime_error(what), cycle(cycle_index) {}
};

template <typename Scalar>
Eigen::VectorX<Scalar> lorenz63_drift(const Eigen::VectorX<Scalar>& x, Scalar c, Scalar b,
                                      Scalar r) {
  Eigen::VectorX<Scalar> d(3);
  d[0] = c * (x[1] - x[0]);
  d[1] = -x[0] * x[2] + r * x[0] - x[1];
  d[2] = x[0] * x[1] - b * x[2];
  return d;
}

template <typename Scalar>
Eigen::VectorX<Scalar> lorenz96_drift(const Eigen::VectorX<Scalar>& x, Scalar forcing) {
  const Eigen::Index n = x.size();
  Eigen::VectorX<Scalar> d(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Scalar xp1 = x[(j + 1) % n];
    const Scalar xm1 = x[(j - 1 + n) % n];
    const Scalar xm2 = x[(j - 2 + n) % n];
    d[j] = (xp1 - xm2) * xm1 - x[j] + forcing;
  }
  return d;
}

template <typename Scalar = double>
DynSystem<Scalar> lorenz63_system(Scalar c = Scalar(10), Scalar b = Scalar(8) / Scalar(3),
                                  Scalar r = Scalar(28)) {
  return {3, [c, b, r](const Eigen::VectorX<Scalar>& x, Eigen::VectorX<Scalar>& d) {
            d = lorenz63_drift(x, c, b, r);
          }};
}

template <typename Scalar = double>
DynSystem<Scalar> lorenz96_system(Eigen::Index dim = 40, Scalar forcing = Scalar(8)) {
  return {dim, [forcing](const Eigen::VectorX<Scalar>& x, Eigen::VectorX<Scalar>& d) {
            d = lorenz96_drift(x, forcing);
          }};
}

// One classical 4th-order Runge-Kutta step.
template <typename Scalar>
Eigen::VectorX<Scalar> rk4_step(const DynSystem<Scalar>& sys, const Eigen::VectorX<Scalar>& x,
                                Scalar dt) {
  if (!(dt > Scalar(0))) throw std::invalid_argument("rk4_step: dt must be positive");
  Eigen::VectorX<Scalar> k1(sys.dim), k2(sys.dim), k3(sys.dim), k4(sys.dim);
  sys.drift(x, k1);
  sys.drift(x + (dt / Scalar(2)) * k1, k2);
  sys.drift(x + (dt / Scalar(2)) * k2, k3);
  sys.drift(x + dt * k3, k4);
  Eigen::VectorX<Scalar> out =
      x + (dt / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
  if (!out.allFinite()) throw std::runtime_error("rk4_step: state diverged");
  return out;
}

template <typename Scalar>
Eigen::VectorX<Scalar> integrate(const DynSystem<Scalar>& sys, Eigen::VectorX<Scalar> x,
                                 Scalar dt, int n_steps) {
  for (int i = 0; i < n_steps; ++i) x = rk4_step(sys, x, dt);
  return x;
}

// Noiseless observation h(x).
template <typename Scalar>
Eigen::VectorX<Scalar> measure_noiseless(const MeasModel<Scalar>& model,
                                         const Eigen::VectorX<Scalar>& x) {
  Eigen::VectorX<Scalar> d(model.obs_dim);
  model.observe(x, d);
  return d;
}

// h(x) plus a diagonal Gaussian noise draw.
template <typename Scalar>
Eigen::VectorX<Scalar> measure(const MeasModel<Scalar>& model, const Eigen::VectorX<Scalar>& x,
                               Rng& rng) {
  Eigen::VectorX<Scalar> d = measure_noiseless(model, x);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] += std::sqrt(model.noise_var[i]) * normal(rng);
  return d;
}

// Lorenz 63 range observation: ||x|| + v, v ~ N(0, 1).
template <typename Scalar = double>
MeasModel<Scalar> l63_range_model() {
  return {1,
          [](const Eigen::VectorX<Scalar>& x, Eigen::VectorX<Scalar>& d) { d[0] = x.norm(); },
          Eigen::VectorX<Scalar>::Ones(1)};
}

// Lorenz 96 observation of every other coordinate: d_j = x_{2j-1} (1-based).
template <typename Scalar = double>
MeasModel<Scalar> l96_linear_model(Eigen::Index state_dim = 40) {
  const Eigen::Index p = state_dim / 2;
  return {p,
          [p](const Eigen::VectorX<Scalar>& x, Eigen::VectorX<Scalar>& d) {
            for (Eigen::Index j = 0; j < p; ++j) d[j] = x[2 * j];
          },
          Eigen::VectorX<Scalar>::Ones(p)};
}

// Nonlinear model (I): products of adjacent coordinate pairs.
template <typename Scalar = double>
MeasModel<Scalar> l96_pair_product_model(Eigen::Index state_dim = 40) {
  const Eigen::Index p = state_dim / 2;
  return {p,
          [p](const Eigen::VectorX<Scalar>& x, Eigen::VectorX<Scalar>& d) {
            for (Eigen::Index j = 0; j < p; ++j) d[j] = x[2 * j] * x[2 * j + 1];
          },
          Eigen::VectorX<Scalar>::Ones(p)};
}

// Nonlinear model (II): squares of every other coordinate.
template <typename Scalar = double>
MeasModel<Scalar> l96_square_model(Eigen::Index state_dim = 40) {
  const Eigen::Index p = state_dim / 2;
  return {p,
          [p](const Eigen::VectorX<Scalar>& x, Eigen::VectorX<Scalar>& d) {
            for (Eigen::Index j = 0; j < p; ++j) d[j] = x[2 * j] * x[2 * j];
          },
          Eigen::VectorX<Scalar>::Ones(p)};
}

// Integrate the truth from x0 and record state plus noisy observation at
// every assimilation time. dt_obs must be an integer multiple of dt_model.
template <typename Scalar>
TwinRun<Scalar> generate_twin(const DynSystem<Scalar>& sys_truth, const MeasModel<Scalar>& meas,
                              Eigen::VectorX<Scalar> x0, Scalar dt_model, Scalar dt_obs,
                              int n_cycles, Rng& rng) {
  const Scalar ratio = dt_obs / dt_model;
  const int n_sub = static_cast<int>(std::lround(static_cast<double>(ratio)));
  if (n_sub < 1 || std::abs(ratio - Scalar(n_sub)) > Scalar(1e-9) * ratio)
    throw std::invalid_argument("generate_twin: dt_obs must be a multiple of dt_model");

  TwinRun<Scalar> run;
  run.dt_model = dt_model;
  run.dt_obs = dt_obs;
  run.truth.reserve(n_cycles);
  run.observations.reserve(n_cycles);

  Eigen::VectorX<Scalar> x = std::move(x0);
  for (int k = 0; k < n_cycles; ++k) {
    try {
      x = integrate(sys_truth, x, dt_model, n_sub);
    } catch (const std::runtime_error&) {
      throw DivergenceError("generate_twin: truth diverged", k);
    }
    run.truth.push_back(x);
    run.observations.push_back(measure(meas, x, rng));
  }
  return run;
}

}  // namespace latentfilter
