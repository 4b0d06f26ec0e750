#pragma once

#include <vector>

#include "delay_lqr/model.hpp"

namespace delay_lqr {

/// Ring buffer of the last d_r + 1 applied controls, owned by one simulation
/// path. entry(j) is the control that was applied on the interval
/// [current_time - (j+1) dt, current_time - j dt); slots older than h_r exist
/// but are never read.
class ControlHistory {
public:
    ControlHistory() = default;
    ControlHistory(std::size_t input_dim, long max_delay_steps, double dt);

    std::size_t input_dim() const { return m_; }
    long capacity() const { return capacity_; }
    long count() const { return count_; }
    double current_time() const { return current_time_; }
    double dt() const { return dt_; }

    const double* entry_ptr(long j) const;
    Matrix entry(long j) const;

    void push_raw(const double* u);
    void set_time(double t) { current_time_ = t; }

private:
    std::size_t m_ = 0;
    long capacity_ = 0;
    long count_ = 0;
    long head_ = 0;  // slot of entry(0)
    double dt_ = 0.0;
    double current_time_ = 0.0;
    std::vector<double> ring_;
};

/// Builds a history from samples of the past control on [-h_r, 0): sample l
/// is the control on [-h_r + l dt, -h_r + (l+1) dt). Exactly d_r samples are
/// required (none for a delay-free system); current_time starts at 0.
ControlHistory init_history(const std::vector<Matrix>& mu, double dt, std::size_t input_dim,
                            long max_delay_steps);

/// Appends the control just applied and advances current_time by dt, evicting
/// the slot that fell out of the window.
void push(ControlHistory& hist, const Matrix& u);

/// Precomputed quadrature weights of the conditional-expectation state: per
/// channel, trapezoid-weighted kernels w_j e^{-A j dt} B_i over [0, h_i],
/// plus the matching noise kernels e^{-A j dt} Bbar_i used when the reduced
/// state is reconstructed pathwise. These weights depend only on
/// (A, B_i, h_i, dt) — the controller built on top of them is exactly a
/// constant matrix on x plus a weighted sum over the input history window.
struct PredictorKernels {
    std::size_t n = 0, m = 0;
    double dt = 0.0;
    std::vector<long> d;  // steps per delay, per channel
    // weight(i, j): n x m block, row-major, j = 0..d_i
    std::vector<std::vector<double>> control_weights;
    // noise_kernel(i, j): n x m block e^{-A j dt} Bbar_i, j = 0..d_i-1
    std::vector<std::vector<double>> noise_kernels;

    const double* weight(std::size_t i, long j) const {
        return control_weights[i].data() + static_cast<std::size_t>(j) * n * m;
    }
    const double* noise_kernel(std::size_t i, long j) const {
        return noise_kernels[i].data() + static_cast<std::size_t>(j) * n * m;
    }

    static PredictorKernels build(const StochasticDelaySystem& sys, const TimeGrid& grid);
};

/// yhat(t|t) = x + sum_i integral of e^{-A tau} B_i u(t - h_i + tau) over
/// [0, h_i], by the trapezoid rule on the grid; the endpoint at the current
/// time reads the newest stored control (the ZOH left limit). The dropped
/// stochastic integrals contribute zero conditional mean.
Matrix predictor_state(const Matrix& x, const ControlHistory& hist, const PredictorKernels& ker);

/// Allocation-free variant for simulation inner loops.
void predictor_state_into(const double* x, const ControlHistory& hist,
                          const PredictorKernels& ker, double* yhat);

/// u = K yhat.
Matrix control(const Matrix& K, const Matrix& yhat);

}  // namespace delay_lqr
