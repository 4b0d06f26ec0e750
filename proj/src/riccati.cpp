#include "delay_lqr/riccati.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace delay_lqr {

namespace {

constexpr double kOmegaMinEig = 1e-10;
constexpr double kPhatPdEig = 1e-10;
constexpr double kDivergenceCap = 1e12;

enum class Form { Advanced, Hat };

struct NodeQuantities {
    Matrix P, Phat, Omega, K, Pi;
};

// Backward march in time-to-go tau: node j holds the solution at t = T - j*dt.
// Both Riccati forms share this integrator; they differ only in which matrix
// is stepped and where Pi comes from inside the right-hand side.
class BackwardMarch {
public:
    BackwardMarch(const StochasticDelaySystem& sys, const Matrix& Q, const Matrix& R,
                  const Matrix& H, const TimeGrid& grid, double alpha, Form form)
        : A_(sys.A),
          At_(sys.A.transpose()),
          Q_(Q),
          R_(R),
          alpha_(alpha),
          dt_(grid.dt),
          dr_(grid.max_delay_steps()),
          form_(form),
          n_(sys.state_dim()),
          m_(sys.input_dim()) {
        const DerivedMaps maps = derive_maps(sys);
        B_ = maps.B;
        Bt_ = B_.transpose();
        E_ = maps.E;
        for (Matrix& e : E_) Et_.push_back(e.transpose());

        // Reconstruction kernels over the delay window with the discounted
        // shift absorbed: kernel(theta) = e^{alpha theta / 2} e^{A theta}.
        kernel_.reserve(dr_ + 1);
        kernel_t_.reserve(dr_ + 1);
        for (long l = 0; l <= dr_; ++l) {
            const double theta = static_cast<double>(l) * dt_;
            Matrix k = std::exp(alpha_ * theta / 2.0) * mat_exp(A_, theta);
            kernel_t_.push_back(k.transpose());
            kernel_.push_back(std::move(k));
        }
        state_ = sym_part(H);
        push_node(node_quantities(state_, 0, 0, /*terminal=*/true));
    }

    // One RK4 step from node j to node j+1; the advance/history terms are
    // read from stored nodes (linearly interpolated at half stages).
    void step() {
        const long j = static_cast<long>(P_.size()) - 1;
        const Matrix k1 = rhs(state_, 2 * j);
        const Matrix k2 = rhs(state_ + (dt_ / 2.0) * k1, 2 * j + 1);
        const Matrix k3 = rhs(state_ + (dt_ / 2.0) * k2, 2 * j + 1);
        const Matrix k4 = rhs(state_ + dt_ * k3, 2 * j + 2);
        state_ += (dt_ / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        state_ = sym_part(state_);
        push_node(node_quantities(state_, 2 * (j + 1), j + 1, /*terminal=*/false));
    }

    long nodes() const { return static_cast<long>(P_.size()); }
    const Matrix& P_at(long j) const { return P_[j]; }
    const Matrix& Phat_at(long j) const { return Phat_[j]; }
    const Matrix& Pi_at(long j) const { return Pi_[j]; }
    const Matrix& Omega_at(long j) const { return Omega_[j]; }
    const Matrix& K_at(long j) const { return K_[j]; }

    // Residual of the stationary Phat equation at the newest node.
    double stationary_residual() const {
        const Matrix& Ph = Phat_.back();
        const Matrix r = At_ * Ph + Ph * A_ + alpha_ * Ph + Q_ - Pi_.back();
        return r.max_abs();
    }

    void move_into(RiccatiSolution& out) {
        const long N = nodes() - 1;
        out.Phat.resize(N + 1);
        out.P.resize(N + 1);
        out.Pi.resize(N + 1);
        out.Omega.resize(N + 1);
        out.K.resize(N + 1);
        for (long j = 0; j <= N; ++j) {
            out.Phat[N - j] = std::move(Phat_[j]);
            out.P[N - j] = std::move(P_[j]);
            out.Pi[N - j] = std::move(Pi_[j]);
            out.Omega[N - j] = std::move(Omega_[j]);
            out.K[N - j] = std::move(K_[j]);
        }
    }

private:
    // Pi at a stored node index; beyond the terminal time it is identically 0.
    Matrix pi_stored(long j) const {
        if (j < 0) return Matrix::zero(n_, n_);
        return Pi_[j];
    }

    // Pi at a position in half-node units (even = node, odd = midpoint).
    Matrix pi_at_half(long half) const {
        if (half < 0) return Matrix::zero(n_, n_);
        if (half % 2 == 0) return pi_stored(half / 2);
        const Matrix a = pi_stored((half - 1) / 2);
        const Matrix b = pi_stored((half + 1) / 2);
        return 0.5 * (a + b);
    }

    // Trapezoid tail of the reconstruction integral: the theta > 0 nodes of
    // integral_0^{h_r} kernel(theta)' Pi(t + theta) kernel(theta) d(theta).
    Matrix grest(long half_pos) const {
        Matrix G = Matrix::zero(n_, n_);
        for (long l = 1; l <= dr_; ++l) {
            const double w = dt_ * (l == dr_ ? 0.5 : 1.0);
            const Matrix piv = pi_at_half(half_pos - 2 * l);
            if (piv.max_abs() == 0.0) continue;
            G += w * (kernel_t_[l] * piv * kernel_[l]);
        }
        return G;
    }

    // Resolves (P, Phat, Omega, K, Pi) at one position given the integrated
    // value. The theta = 0 quadrature term couples Pi to itself, so a short
    // fixed-point iteration closes the loop; it contracts at O(dt).
    // At the terminal node the reconstruction integral is exactly zero
    // (Pi(T, T+theta) = 0 for theta > 0), giving the exact terminal gain.
    NodeQuantities node_quantities(const Matrix& value, long half_pos, long node_or_neg,
                                   bool terminal) const {
        const bool no_window = (dr_ == 0) || terminal;
        const double w0 = no_window ? 0.0 : dt_ * 0.5;
        const Matrix Gr = no_window ? Matrix::zero(n_, n_) : grest(half_pos);

        NodeQuantities q;
        q.Pi = Pi_.empty() ? Matrix::zero(n_, n_) : Pi_.back();
        for (int it = 0; it < 100; ++it) {
            const Matrix G = w0 == 0.0 ? Gr : Gr + w0 * q.Pi;
            if (form_ == Form::Advanced) {
                q.P = value;
                q.Phat = value - G;
            } else {
                q.Phat = value;
                q.P = value + G;
            }
            q.Omega = R_;
            for (std::size_t i = 0; i < E_.size(); ++i) {
                q.Omega += Et_[i] * q.P * E_[i];
            }
            q.K = -solve(q.Omega, Bt_ * q.Phat);
            const Matrix Pi_next = q.K.transpose() * q.Omega * q.K;
            const double change = (Pi_next - q.Pi).max_abs();
            q.Pi = Pi_next;
            if (change <= 1e-14 * (1.0 + q.Pi.max_abs())) break;
            if (it == 99) throw NumericError("riccati: node fixed point did not converge");
        }
        if (node_or_neg >= 0 && min_eigenvalue(q.Omega) <= kOmegaMinEig) {
            throw SingularityError("riccati: Omega(t) not strictly positive definite",
                                   static_cast<double>(node_or_neg) * dt_);
        }
        return q;
    }

    Matrix rhs(const Matrix& X, long half_pos) const {
        Matrix adv;
        if (form_ == Form::Hat) {
            adv = node_quantities(X, half_pos, -1, /*terminal=*/false).Pi;
        } else if (dr_ == 0) {
            adv = node_quantities(X, half_pos, -1, /*terminal=*/false).Pi;
        } else {
            const Matrix piv = pi_at_half(half_pos - 2 * dr_);
            adv = kernel_t_[dr_] * piv * kernel_[dr_];
        }
        return sym_part(X * A_ + At_ * X + alpha_ * X + Q_ - adv);
    }

    void push_node(NodeQuantities q) {
        P_.push_back(std::move(q.P));
        Phat_.push_back(std::move(q.Phat));
        Pi_.push_back(std::move(q.Pi));
        Omega_.push_back(std::move(q.Omega));
        K_.push_back(std::move(q.K));
    }

    Matrix A_, At_, Q_, R_, B_, Bt_;
    std::vector<Matrix> E_, Et_;
    std::vector<Matrix> kernel_, kernel_t_;
    double alpha_;
    double dt_;
    long dr_;
    Form form_;
    std::size_t n_, m_;
    Matrix state_;
    std::vector<Matrix> P_, Phat_, Pi_, Omega_, K_;
};

void check_grid(const StochasticDelaySystem& sys, const TimeGrid& grid) {
    if (!(grid.dt > 0.0)) throw GridError("riccati: grid has nonpositive dt");
    if (grid.steps_per_delay.size() != sys.channels.size()) {
        throw GridError("riccati: grid delay table does not match the system's channels");
    }
    for (std::size_t i = 0; i < sys.channels.size(); ++i) {
        const double target = static_cast<double>(grid.steps_per_delay[i]) * grid.dt;
        if (std::abs(target - sys.channels[i].h) > 1e-9 * std::max(1.0, sys.channels[i].h)) {
            throw GridError("riccati: grid misaligned with delay of channel " + std::to_string(i));
        }
    }
}

RiccatiSolution run_finite_horizon(const StochasticDelaySystem& sys, const CostSpec& cost,
                                   const TimeGrid& grid, double alpha, Form form) {
    check_grid(sys, grid);
    validate_cost(cost, sys.state_dim(), sys.input_dim());
    if (!(alpha >= 0.0)) throw ValidationError("riccati: alpha must be >= 0");

    // Discounted runs use the paper's terminal values: P(T) = 0 regardless of H.
    const Matrix H_eff = alpha > 0.0 ? Matrix::zero(sys.state_dim(), sys.state_dim()) : cost.H;

    RiccatiSolution sol;
    try {
        BackwardMarch march(sys, cost.Q, cost.R, H_eff, grid, alpha, form);
        for (long j = 0; j < grid.horizon_steps; ++j) march.step();
        march.move_into(sol);
    } catch (const SingularityError& e) {
        // The march reports time-to-go; convert to calendar time.
        throw SingularityError(std::string(e.what()), cost.T - e.t);
    }
    sol.grid = grid;
    sol.alpha = alpha;
    return sol;
}

}  // namespace

RiccatiSolution solve_dre(const StochasticDelaySystem& sys, const CostSpec& cost,
                          const TimeGrid& grid, double alpha) {
    return run_finite_horizon(sys, cost, grid, alpha, Form::Advanced);
}

RiccatiSolution solve_dre_hat_form(const StochasticDelaySystem& sys, const CostSpec& cost,
                                   const TimeGrid& grid, double alpha) {
    return run_finite_horizon(sys, cost, grid, alpha, Form::Hat);
}

SteadyGain solve_are(const StochasticDelaySystem& sys, double alpha, const AreOptions& opts) {
    if (!(alpha >= 0.0)) throw ValidationError("solve_are: alpha must be >= 0");
    const std::size_t n = sys.state_dim();
    const std::size_t m = sys.input_dim();
    const double hr = sys.max_delay();
    const double T_max = opts.T_max > 0.0 ? opts.T_max : 200.0 * std::max(1.0, hr);
    const double dt_hint = opts.dt_hint > 0.0 ? opts.dt_hint : default_dt_hint(sys);
    const TimeGrid grid = build_grid(sys, 0.0, dt_hint);

    BackwardMarch march(sys, Matrix::identity(n), Matrix::identity(m), Matrix::zero(n, n), grid,
                        alpha, Form::Advanced);

    // Stationarity is judged on a whole trailing window (the solution is a
    // function segment because of the advance term), of length max(h_r, 1).
    const long w_steps =
        std::max(grid.max_delay_steps(), static_cast<long>(std::llround(1.0 / grid.dt)));
    const long max_steps = static_cast<long>(std::ceil(T_max / grid.dt));

    long j = 0;
    bool stationary = false;
    while (j < max_steps) {
        march.step();
        ++j;
        const Matrix& P_now = march.P_at(j);
        if (P_now.max_abs() > kDivergenceCap || !P_now.all_finite()) {
            throw NonConvergenceError("solve_are: value iteration diverged at alpha = " +
                                      std::to_string(alpha));
        }
        if (j >= w_steps && (P_now - march.P_at(j - w_steps)).max_abs() <= opts.tol) {
            stationary = true;
            break;
        }
    }
    if (!stationary) {
        throw NonConvergenceError(
            "solve_are: no stationarity within T_max (not certified stabilizable at alpha = " +
            std::to_string(alpha) + ")");
    }

    SteadyGain g;
    g.Phat = march.Phat_at(j);
    g.P = march.P_at(j);
    g.Pi0 = march.Pi_at(j);
    g.Omega = march.Omega_at(j);
    g.K = march.K_at(j);
    g.alpha = alpha;
    g.iterations = j;
    g.residual = march.stationary_residual();

    if (min_eigenvalue(g.Phat) <= kPhatPdEig) {
        throw DegeneracyError("solve_are: stationary Phat is not strictly positive definite");
    }
    return g;
}

double certify_max_alpha(const StochasticDelaySystem& sys, double alpha_hi, double tol,
                         const AreOptions& opts) {
    if (!(alpha_hi > 0.0)) throw ValidationError("certify_max_alpha: alpha_hi must be > 0");
    if (!(tol > 0.0)) throw ValidationError("certify_max_alpha: tol must be > 0");

    auto certified = [&](double a) {
        try {
            solve_are(sys, a, opts);
            return true;
        } catch (const NonConvergenceError&) {
            return false;
        } catch (const DegeneracyError&) {
            return false;
        } catch (const SingularityError&) {
            return false;
        }
    };

    if (!certified(0.0)) {
        throw NotStabilizableError("certify_max_alpha: solve_are failed at alpha = 0");
    }
    if (certified(alpha_hi)) return alpha_hi;  // bracket saturation

    double lo = 0.0, hi = alpha_hi;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (certified(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Monotonicity of certifiability in alpha is assumed, not proved; spot
    // check the returned rate and its half before handing it out.
    if (lo > 0.0 && (!certified(lo) || !certified(lo / 2.0))) {
        throw NonConvergenceError("certify_max_alpha: verification at the returned rate failed");
    }
    return lo;
}

const Matrix& gain_at(const RiccatiSolution& sol, double t) {
    const double pos = t / sol.grid.dt;
    const long k = std::llround(pos);
    if (std::abs(pos - static_cast<double>(k)) > 1e-9 * std::max(1.0, std::abs(pos)) || k < 0 ||
        k >= static_cast<long>(sol.K.size())) {
        throw GridError("gain_at: t is not a grid node of the solution");
    }
    return sol.K[static_cast<std::size_t>(k)];
}

double predicted_cost(const RiccatiSolution& sol, const Matrix& x0, bool zero_prefill) {
    if (x0.cols() != 1 || x0.rows() != sol.P.front().rows()) {
        throw DimensionError("predicted_cost: x0 must be an n-vector");
    }
    const Matrix& M = zero_prefill ? sol.Phat.front() : sol.P.front();
    return quadratic_form(x0, M, x0);
}

}  // namespace delay_lqr
