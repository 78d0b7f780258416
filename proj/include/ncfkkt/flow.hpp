#pragma once

// Continuous and discrete dynamics: training gradient flow, NCF ascent flow,
// gradient descent, projected and adaptive-step gradient ascent, and the
// delta-rescaling between training time and NCF time.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "ncfkkt/loss.hpp"
#include "ncfkkt/ncf.hpp"
#include "ncfkkt/net.hpp"
#include "ncfkkt/trajectory.hpp"

namespace ncfkkt {

struct IntegratorConfig {
  double step = 1e-3;
  double horizon = 1.0;
  std::size_t snapshot_stride = 1;
  double blowup_norm_cap = 1e8;
  double zero_floor = 1e-12;
  // Scale the step by (r0/||x||)^(order-2) once the state grows past its
  // initial norm r0, so each step changes ||x|| by a bounded relative amount.
  bool step_shrink_near_blowup = false;
  // Snapshots below zero_floor in a row before ConvergedToZero is declared.
  std::size_t zero_patience = 100;

  void validate() const;
};

struct BlowupReport {
  double t_star_estimate = 0.0;
  double fitted_exponent = 0.0;
  double kappa_rate = 0.0;  // prefactor of (T* - t)^(-exponent)
  double r_squared = 0.0;
  std::size_t samples = 0;
};

using VectorField = std::function<void(std::span<const double> x, Vector& dx)>;

// Classical RK4 on x' = f(x). `order` is the homogeneity order of f plus one
// (f(cx) = c^(order-1) f(x)); it only drives step shrinking.
Trajectory integrate_rk4(const VectorField& f, Vector x0, const IntegratorConfig& cfg,
                         int order);

// w' = -grad L(w), w(0) = delta * w0 with ||w0|| = 1.
Trajectory integrate_training_flow(const NetSpec& spec, const Weights& w0, double delta,
                                   const Dataset& data, LossKind kind,
                                   const IntegratorConfig& cfg);

// u' = grad N(u), u(0) = u0.
Trajectory integrate_ncf_flow(const NcfProblem& prob, const Weights& u0,
                              const IntegratorConfig& cfg);
Trajectory integrate_ncf_flow(const NetSpec& spec, const Weights& u0, std::span<const double> z,
                              const Dataset& data, const IntegratorConfig& cfg);

// Least-squares fit of log||u|| against -log(T* - t) on samples whose norm is
// past 10x the initial norm. Throws std::invalid_argument with fewer than 8.
BlowupReport fit_blowup_rate(const Trajectory& traj, int order);

// s(t) = w(t / delta^(order-2)) / delta
Trajectory rescale_trajectory(const Trajectory& traj, double delta, int order);

// l'(H(X; w), y) - l'(0, y)
Vector xi_residual(const NetSpec& spec, const Weights& w, const Dataset& data, LossKind kind);

// Explicit Euler on -grad L from delta * w0. Snapshot every `stride` iterations
// plus the final iterate.
Trajectory gradient_descent(const NetSpec& spec, const Weights& w0, double delta, double step,
                            std::size_t iters, const Dataset& data, LossKind kind,
                            std::size_t stride = 1);

struct PgaOptions {
  std::size_t stride = 1;
  // Stop as soon as the alignment at the current iterate reaches this value.
  // Values > 1 never trigger.
  double stop_alignment = 2.0;
};

// v <- (v + step grad N(v)) / ||v + step grad N(v)||. The factors
// c_t = 1 / ||v_t + step grad N(v_t)|| are returned in scale_factors.
Trajectory projected_gradient_ascent(const NcfProblem& prob, const Weights& u0, double step,
                                     std::size_t iters, const PgaOptions& opts = {});

struct StochasticPgaOptions {
  std::size_t batch = 10;
  std::size_t stride = 1;
  // Full-batch alignment is checked every check_every steps and at the end.
  std::size_t check_every = 100;
  double stop_alignment = 2.0;
  std::uint64_t seed = 0;
};

// Projected ascent on the NCF of a mini-batch, reshuffled every epoch. The
// last batch of an epoch may be short. scale_factors holds the c_t as above.
Trajectory stochastic_projected_gradient_ascent(const NcfProblem& prob, const Weights& u0,
                                                double step, std::size_t iters,
                                                const StochasticPgaOptions& opts = {});

// u <- u + step (c_0 ... c_{t-1})^(order-2) grad N(u), consuming c_t from a
// paired projected run.
Trajectory adaptive_gradient_ascent(const NcfProblem& prob, const Weights& u0, double base_step,
                                    std::span<const double> scale_factors, std::size_t iters,
                                    std::size_t stride = 1);

}  // namespace ncfkkt
