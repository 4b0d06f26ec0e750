#pragma once

#include <cstdint>
#include <vector>

#include "delay_lqr/linalg.hpp"

namespace delay_lqr {

/// One input channel of the Ito system: drive matrix B, noise intensity
/// matrix Bbar, and the channel's input delay h (h = 0 for the direct channel).
struct Channel {
    Matrix B;     // n x m
    Matrix Bbar;  // n x m
    double h = 0.0;
};

/// dx = (A x + sum_i B_i u(t-h_i)) dt + sum_i Bbar_i u(t-h_i) dw_i(t).
/// Channels are kept sorted by delay; channel 0 always has h = 0.
struct StochasticDelaySystem {
    Matrix A;  // n x n
    std::vector<Channel> channels;

    std::size_t state_dim() const { return A.rows(); }
    std::size_t input_dim() const { return channels.empty() ? 0 : channels.front().B.cols(); }
    double max_delay() const { return channels.empty() ? 0.0 : channels.back().h; }
};

/// Quadratic cost weights and horizon: integral of y'Qy + u'Ru plus terminal
/// y(T)'Hy(T).
struct CostSpec {
    Matrix Q;  // n x n, PSD
    Matrix R;  // m x m, PD
    Matrix H;  // n x n, PSD
    double T = 0.0;
};

struct DiscountSpec {
    double alpha = 0.0;
};

/// Delay-compensated input maps of the reduced system:
///   F_i = e^{-A h_i} B_i,  E_i = e^{-A h_i} Bbar_i,  B = sum_i F_i.
struct DerivedMaps {
    Matrix B;               // n x m
    std::vector<Matrix> F;  // per channel, n x m
    std::vector<Matrix> E;  // per channel, n x m
};

/// Uniform grid aligned with every delay: d_i * dt = h_i exactly (to 1e-9
/// relative) and N * dt = T.
struct TimeGrid {
    double dt = 0.0;
    std::vector<long> steps_per_delay;
    long horizon_steps = 0;

    long max_delay_steps() const {
        return steps_per_delay.empty() ? 0 : steps_per_delay.back();
    }
};

/// Checks invariants and returns the system with channels sorted by delay.
/// Requires an h = 0 channel (use B_0 = 0 if the plant has none).
StochasticDelaySystem validate_system(StochasticDelaySystem sys);

/// Checks Q, H symmetric PSD and R symmetric PD against (n, m).
void validate_cost(const CostSpec& cost, std::size_t n, std::size_t m);

DerivedMaps derive_maps(const StochasticDelaySystem& sys);

/// Largest dt <= dt_hint making every h_i and T an integer multiple of dt:
/// first dt_hint / 2^k for k <= 20, then rational refinement against the
/// delay set. Throws GridError when nothing fits within 1e7 steps.
TimeGrid build_grid(const StochasticDelaySystem& sys, double T, double dt_hint);

/// dt hint used when a config leaves it unspecified: h_r / 64, or 1/64 for
/// delay-free systems.
double default_dt_hint(const StochasticDelaySystem& sys);

}  // namespace delay_lqr
