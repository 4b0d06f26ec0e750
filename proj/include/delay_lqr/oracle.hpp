#pragma once

#include <vector>

#include "delay_lqr/model.hpp"
#include "delay_lqr/riccati.hpp"

namespace delay_lqr {

/// Euler discretization of the delayed system on the augmented state
/// z_k = [x_k; u_{k-1}; ...; u_{k-d_r}], N_z = n + m d_r. Deliberately built
/// without matrix exponentials (forward map I + A dt, input injections B_i dt,
/// noise injections Bbar_i sqrt(dt) at their lags) so it is an independent
/// code path from the continuous solver.
///
/// The per-step cost embeds the reduced-coordinate quadratic: Q_z =
/// dt (D'QD + Theta) where D maps z to the discrete conditional-mean state
/// (x plus Euler-kernel history weights) and Theta carries the second moment
/// of the noise still pending in the delay window. A z with zero history
/// block gives back dt x'Qx.
struct DiscreteAugmented {
    std::size_t n = 0, m = 0;
    long d_r = 0;
    long Nz = 0;
    double dt = 0.0;
    Matrix A_z, B_z;        // Nz x Nz, Nz x m
    Matrix Q_z, R_z, H_z;   // per-step state cost, per-step control cost, terminal
    Matrix Bbar_current;    // n x m, noise multiplying the current control (lag-0 channels)
    std::vector<long> lags;             // per channel
    std::vector<Matrix> channel_B;      // per channel, n x m
    std::vector<Matrix> channel_Bbar;   // per channel, n x m
};

/// Desk-scale cap: m * d_r <= 2000.
DiscreteAugmented build_augmented(const StochasticDelaySystem& sys, const CostSpec& cost,
                                  const TimeGrid& grid);

struct DiscreteLqSolution {
    Matrix S0;                  // optimal cost quadratic form at step 0
    std::vector<Matrix> gains;  // u_k = L_k z_k, k = 0..N-1
    long steps = 0;
};

/// Exact backward recursion of the discrete LQ problem with multiplicative
/// input noise: delayed channels contribute state-multiplicative noise on
/// their history slot, lag-0 channels contribute control-multiplicative
/// noise inside the inner matrix. The inner matrix must stay positive
/// definite (the discrete mirror of Omega(t) > 0).
DiscreteLqSolution solve_discrete_lq(const DiscreteAugmented& aug, long steps);

struct OracleComparison {
    double continuous_cost = 0.0;  // x0' Phat(0) x0
    double discrete_cost = 0.0;    // z0' S_0 z0, zero history block
    double rel_error = 0.0;        // |diff| / max(1, |discrete|)
    double gain_alignment = 0.0;   // cosine between K(0) and the x-block of L_0
};

/// Zero-prefill comparison of the continuous finite-horizon solve against the
/// discrete oracle on a matched grid.
OracleComparison compare(const RiccatiSolution& sol, const DiscreteLqSolution& lq,
                         const DiscreteAugmented& aug, const Matrix& x0);

}  // namespace delay_lqr
