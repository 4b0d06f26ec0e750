#pragma once

#include <vector>

#include "delay_lqr/model.hpp"

namespace delay_lqr {

/// Grids of the backward Riccati solve, indexed by time node k (t = k * dt,
/// k = 0..N). K[k] is the feedback gain at t, with the negative-feedback sign
/// convention u = K yhat.
struct RiccatiSolution {
    TimeGrid grid;
    double alpha = 0.0;
    std::vector<Matrix> Phat;   // n x n
    std::vector<Matrix> P;      // n x n
    std::vector<Matrix> Pi;     // n x n, Pi(t, t)
    std::vector<Matrix> Omega;  // m x m
    std::vector<Matrix> K;      // m x n

    double time_at(std::size_t k) const { return static_cast<double>(k) * grid.dt; }
};

/// Stationary solution of the algebraic equation (Q = R = I, H = 0), found by
/// integrating the backward equation until the trailing window stops moving.
struct SteadyGain {
    Matrix Phat;
    Matrix P;
    Matrix Pi0;    // Pi(0)
    Matrix Omega;
    Matrix K;
    double alpha = 0.0;
    long iterations = 0;   // backward steps taken
    double residual = 0.0; // max-abs of A'Phat + Phat A + alpha Phat + I - Pi(0)
};

struct AreOptions {
    double tol = 1e-9;     // stationarity: max change of P over one window
    double T_max = -1.0;   // horizon cap; < 0 means 200 * max(1, h_r)
    double dt_hint = -1.0; // < 0 means default_dt_hint(sys)
};

/// Backward integration of the advanced-argument form: the derivative of P at
/// t couples to Pi at t + h_r, the gain uses the reconstruction integral of Pi
/// over the delay window, and Phat is recovered from it. Terminal P(T) = H
/// (H is forced to 0 when alpha > 0), Pi(T, T+theta) = 0 for theta > 0.
/// Throws SingularityError when Omega(t) loses strict positive definiteness.
RiccatiSolution solve_dre(const StochasticDelaySystem& sys, const CostSpec& cost,
                          const TimeGrid& grid, double alpha = 0.0);

/// Same solution through the Phat-form equations (direct integration of Phat
/// with P rebuilt by quadrature); kept as an independent route to cross-check
/// the equivalence of the two forms.
RiccatiSolution solve_dre_hat_form(const StochasticDelaySystem& sys, const CostSpec& cost,
                                   const TimeGrid& grid, double alpha = 0.0);

/// Value iteration for the stationary gain at decay rate alpha >= 0. Throws
/// NonConvergenceError when the horizon cap is hit before stationarity
/// (read: not certified stabilizable at this alpha) and DegeneracyError when
/// the stationary Phat is not strictly positive definite.
SteadyGain solve_are(const StochasticDelaySystem& sys, double alpha,
                     const AreOptions& opts = {});

/// Largest certified decay rate in [0, alpha_hi], by bisection on
/// "solve_are(sys, alpha) converges with Phat positive definite". The
/// returned rate and its half are re-verified. Throws NotStabilizableError
/// when alpha = 0 already fails.
double certify_max_alpha(const StochasticDelaySystem& sys, double alpha_hi, double tol,
                         const AreOptions& opts = {});

/// Gain at an on-grid time t; off-grid times are a GridError.
const Matrix& gain_at(const RiccatiSolution& sol, double t);

/// Optimal cost prediction from the initial state: x0' Phat(0) x0 under a
/// zero prefill on [-h_r, 0), or x0' P(0) x0 under the convention that the
/// control also stays zero on [0, h_r).
double predicted_cost(const RiccatiSolution& sol, const Matrix& x0, bool zero_prefill);

}  // namespace delay_lqr
