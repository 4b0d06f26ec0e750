#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "delay_lqr/model.hpp"
#include "delay_lqr/predictor.hpp"
#include "delay_lqr/riccati.hpp"

namespace delay_lqr {

/// Past-control policy on [-h_r, 0).
struct Prefill {
    enum class Kind { Zero, Constant, Samples };
    Kind kind = Kind::Zero;
    Matrix constant;               // m x 1 (Constant)
    std::vector<Matrix> samples;   // d_r samples covering [-h_r, 0) (Samples)
};

struct SimConfig {
    double dt = 0.0;
    double T_sim = 0.0;
    long paths = 1;
    std::uint64_t master_seed = 0;
    Matrix x0;
    Prefill prefill;
    // control is held at zero before this time (Corollary-2 style runs)
    double gain_start_time = 0.0;
};

/// Constant gain (stationary case) or per-node schedule from a finite-horizon
/// solve; reads past the schedule end return the last gain.
class GainSchedule {
public:
    static GainSchedule constant(Matrix K);
    static GainSchedule from_solution(const RiccatiSolution& sol);
    const Matrix& at(long node) const {
        return K_[static_cast<std::size_t>(node) < K_.size() ? node
                                                             : static_cast<long>(K_.size()) - 1];
    }

private:
    std::vector<Matrix> K_;
};

struct MartingaleStats {
    double t = 0.0;
    std::vector<double> mean;      // per component of the dropped noise terms
    std::vector<double> stderr_;
};

struct LyapunovPoint {
    double t = 0.0;
    double mean = 0.0;
    double stderr_ = 0.0;
};

struct SimOptions {
    // when set, per-path quadratic costs are accumulated
    const CostSpec* cost = nullptr;
    double cost_alpha = 0.0;
    bool cost_on_y = true;  // evaluate the integrand on the reduced state y
    // probe times for the conditional-mean and Lyapunov diagnostics
    std::vector<double> checkpoints;
    // monitor V(t) = e^{at} E[y'P y - y' sum_l w_l k_l' Pi0 k_l yhat(t|t+th_l)]
    const SteadyGain* lyapunov = nullptr;
    long threads = 0;  // 0: DELAY_LQR_THREADS env var, else hardware
};

struct SimResult {
    std::vector<double> times;
    std::vector<double> mean_sq_x, stderr_sq_x;
    std::vector<double> mean_sq_u, stderr_sq_u;
    double cost_mean = 0.0, cost_stderr = 0.0;
    std::vector<double> per_path_cost;  // non-divergent paths only
    bool rate_valid = false;
    double fitted_rate = 0.0;
    double divergence_ratio = 0.0;
    long first_divergence_node = -1;
    std::vector<MartingaleStats> martingale;
    std::vector<LyapunovPoint> lyapunov;
    long paths_used = 0;
};

/// Euler-Maruyama Monte Carlo of the closed loop u = K yhat(t|t): per-channel
/// independent Gaussian increments of variance dt, zero-order-hold control.
/// Path p draws from a counter-based stream keyed by (master_seed, p); the
/// result is bit-identical for a fixed (seed, paths, dt) at any thread count.
/// Divergent paths are excluded from the statistics and counted in
/// divergence_ratio.
SimResult simulate_paths(const StochasticDelaySystem& sys, const GainSchedule& gain,
                         const SimConfig& cfg, const SimOptions& options = {});

/// Mean and standard error of per-path costs.
std::pair<double, double> estimate_cost(const std::vector<double>& per_path_cost);

/// Least-squares slope of log mean_sq over the trailing `window` fraction of
/// the horizon, negated: the empirical rate rho with mean_sq ~ C e^{-rho t}.
double fit_decay_rate(const std::vector<double>& times, const std::vector<double>& mean_sq,
                      double window);

struct ReductionReport {
    // max node-wise gap between the reduced state integrated through its own
    // dynamics and the same state evaluated from the original path
    double max_discrepancy = 0.0;
    // gap between predictor_state and an independently ordered evaluation of
    // the same quadrature on the recorded controls (roundoff-level; with
    // Bbar = 0 this is exactly the zero-noise identity of the reduction)
    double max_conditional_mean_gap = 0.0;
    double state_scale = 0.0;  // max |y| seen, for relative reading
    long paths = 0;
};

/// Simulates x through the original dynamics and, on the same draws
/// (channel i reads the increments of w_i(t + h_i)), integrates the reduced
/// state y directly; y is also rebuilt from the x-path by quadrature. The
/// discrepancy between the two vanishes at scheme order.
ReductionReport simulate_reduction_check(const StochasticDelaySystem& sys,
                                         const GainSchedule& gain, const SimConfig& cfg);

}  // namespace delay_lqr
