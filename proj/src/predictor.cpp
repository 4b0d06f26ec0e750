#include "delay_lqr/predictor.hpp"

#include <cmath>
#include <cstring>

namespace delay_lqr {

ControlHistory::ControlHistory(std::size_t input_dim, long max_delay_steps, double dt)
    : m_(input_dim), capacity_(max_delay_steps + 1), dt_(dt), ring_(capacity_ * input_dim, 0.0) {
    if (input_dim == 0 || dt <= 0.0) throw HistoryError("history: bad input dimension or dt");
}

const double* ControlHistory::entry_ptr(long j) const {
    if (j < 0 || j >= capacity_) throw HistoryError("history: slot out of range");
    if (j >= count_) throw HistoryError("history: slot not yet populated");
    const long slot = (head_ + j) % capacity_;
    return ring_.data() + static_cast<std::size_t>(slot) * m_;
}

Matrix ControlHistory::entry(long j) const {
    const double* p = entry_ptr(j);
    Matrix v(m_, 1);
    for (std::size_t c = 0; c < m_; ++c) v(c, 0) = p[c];
    return v;
}

void ControlHistory::push_raw(const double* u) {
    for (std::size_t c = 0; c < m_; ++c) {
        if (!std::isfinite(u[c])) throw NumericError("history: non-finite control pushed");
    }
    head_ = (head_ - 1 + capacity_) % capacity_;
    std::memcpy(ring_.data() + static_cast<std::size_t>(head_) * m_, u, m_ * sizeof(double));
    count_ = std::min(count_ + 1, capacity_);
    current_time_ += dt_;
}

ControlHistory init_history(const std::vector<Matrix>& mu, double dt, std::size_t input_dim,
                            long max_delay_steps) {
    if (static_cast<long>(mu.size()) != max_delay_steps) {
        throw HistoryError("init_history: need exactly one sample per grid cell of [-h_r, 0)");
    }
    ControlHistory hist(input_dim, max_delay_steps, dt);
    // oldest first in mu; entry(0) must end up as the newest (u on [-dt, 0))
    for (const Matrix& s : mu) {
        if (s.rows() != input_dim || s.cols() != 1) {
            throw HistoryError("init_history: sample has wrong shape");
        }
        hist.push_raw(s.data());
    }
    hist.set_time(0.0);  // the prefill pushes are anchored before t = 0
    return hist;
}

PredictorKernels PredictorKernels::build(const StochasticDelaySystem& sys, const TimeGrid& grid) {
    PredictorKernels ker;
    ker.n = sys.state_dim();
    ker.m = sys.input_dim();
    ker.dt = grid.dt;
    ker.d = grid.steps_per_delay;

    const long dr = grid.max_delay_steps();
    // decay powers e^{-A j dt}, built by repeated multiplication
    std::vector<Matrix> decay;
    decay.reserve(dr + 1);
    decay.push_back(Matrix::identity(ker.n));
    if (dr > 0) {
        const Matrix step = mat_exp(sys.A, -grid.dt);
        for (long j = 1; j <= dr; ++j) decay.push_back(decay.back() * step);
    }

    for (std::size_t i = 0; i < sys.channels.size(); ++i) {
        const long di = ker.d[i];
        std::vector<double> w;
        std::vector<double> nk;
        if (di > 0) {
            w.resize(static_cast<std::size_t>(di + 1) * ker.n * ker.m);
            nk.resize(static_cast<std::size_t>(di) * ker.n * ker.m);
            for (long j = 0; j <= di; ++j) {
                const double wj = grid.dt * ((j == 0 || j == di) ? 0.5 : 1.0);
                const Matrix blk = wj * (decay[j] * sys.channels[i].B);
                std::memcpy(w.data() + static_cast<std::size_t>(j) * ker.n * ker.m, blk.data(),
                            ker.n * ker.m * sizeof(double));
                if (j < di) {
                    const Matrix nblk = decay[j] * sys.channels[i].Bbar;
                    std::memcpy(nk.data() + static_cast<std::size_t>(j) * ker.n * ker.m,
                                nblk.data(), ker.n * ker.m * sizeof(double));
                }
            }
        }
        ker.control_weights.push_back(std::move(w));
        ker.noise_kernels.push_back(std::move(nk));
    }
    return ker;
}

void push(ControlHistory& hist, const Matrix& u) {
    if (u.rows() != hist.input_dim() || u.cols() != 1) {
        throw DimensionError("push: control has wrong shape");
    }
    hist.push_raw(u.data());
}

void predictor_state_into(const double* x, const ControlHistory& hist,
                          const PredictorKernels& ker, double* yhat) {
    const std::size_t n = ker.n, m = ker.m;
    for (std::size_t r = 0; r < n; ++r) yhat[r] = x[r];
    for (std::size_t i = 0; i < ker.d.size(); ++i) {
        const long di = ker.d[i];
        if (di == 0) continue;
        for (long j = 0; j <= di; ++j) {
            // grid node at tau = j dt is the control at t - h_i + j dt; for
            // j = d_i that is the current instant, read as the ZOH left limit
            const long slot = (j == di) ? 0 : di - 1 - j;
            const double* u = hist.entry_ptr(slot);
            const double* W = ker.weight(i, j);
            for (std::size_t r = 0; r < n; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < m; ++c) acc += W[r * m + c] * u[c];
                yhat[r] += acc;
            }
        }
    }
}

Matrix predictor_state(const Matrix& x, const ControlHistory& hist, const PredictorKernels& ker) {
    if (x.rows() != ker.n || x.cols() != 1) throw DimensionError("predictor_state: x shape");
    if (hist.input_dim() != ker.m) throw GridError("predictor_state: history/kernels mismatch");
    Matrix yhat(ker.n, 1);
    predictor_state_into(x.data(), hist, ker, yhat.data());
    return yhat;
}

Matrix control(const Matrix& K, const Matrix& yhat) {
    if (K.cols() != yhat.rows() || yhat.cols() != 1) {
        throw DimensionError("control: gain/state shape mismatch");
    }
    return K * yhat;
}

}  // namespace delay_lqr
