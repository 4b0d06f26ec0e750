#include "delay_lqr/oracle.hpp"

#include <cmath>

namespace delay_lqr {

namespace {

constexpr long kSlotCap = 2000;

// S * A_z without forming the dense product: A_z is the Euler map on the
// x block plus a shift register, so columns of the product are short sums.
Matrix mult_S_Az(const Matrix& S, const DiscreteAugmented& aug) {
    const long Nz = aug.Nz;
    const std::size_t n = aug.n, m = aug.m;
    Matrix out(Nz, Nz);
    // x-block columns: S[:, x] * (I + A dt)
    for (long r = 0; r < Nz; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += S(r, p) * aug.A_z(p, c);
            out(r, c) = acc;
        }
    }
    // history slot j (0-based; holds u_{k-j-1}): receives B_i dt from channels
    // with lag j+1, plus the shift from slot j+1
    for (long j = 0; j < aug.d_r; ++j) {
        const long col0 = static_cast<long>(n) + j * static_cast<long>(m);
        for (long r = 0; r < Nz; ++r) {
            for (std::size_t c = 0; c < m; ++c) out(r, col0 + static_cast<long>(c)) = 0.0;
        }
        for (std::size_t i = 0; i < aug.lags.size(); ++i) {
            if (aug.lags[i] != j + 1) continue;
            const Matrix& Bi = aug.channel_B[i];
            for (long r = 0; r < Nz; ++r) {
                for (std::size_t c = 0; c < m; ++c) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < n; ++p) acc += S(r, p) * Bi(p, c) * aug.dt;
                    out(r, col0 + static_cast<long>(c)) += acc;
                }
            }
        }
        if (j + 1 < aug.d_r) {
            const long src = static_cast<long>(n) + (j + 1) * static_cast<long>(m);
            for (long r = 0; r < Nz; ++r) {
                for (std::size_t c = 0; c < m; ++c) {
                    out(r, col0 + static_cast<long>(c)) += S(r, src + static_cast<long>(c));
                }
            }
        }
    }
    return out;
}

// A_z' * M, exploiting the same structure on rows.
Matrix mult_Azt_M(const Matrix& M, const DiscreteAugmented& aug) {
    const long Nz = aug.Nz;
    const std::size_t n = aug.n, m = aug.m;
    Matrix out(Nz, Nz);
    for (std::size_t r = 0; r < n; ++r) {
        for (long c = 0; c < Nz; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += aug.A_z(p, r) * M(p, c);
            out(r, c) = acc;
        }
    }
    for (long j = 0; j < aug.d_r; ++j) {
        const long row0 = static_cast<long>(n) + j * static_cast<long>(m);
        for (std::size_t rr = 0; rr < m; ++rr) {
            for (long c = 0; c < Nz; ++c) out(row0 + static_cast<long>(rr), c) = 0.0;
        }
        for (std::size_t i = 0; i < aug.lags.size(); ++i) {
            if (aug.lags[i] != j + 1) continue;
            const Matrix& Bi = aug.channel_B[i];
            for (std::size_t rr = 0; rr < m; ++rr) {
                for (long c = 0; c < Nz; ++c) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < n; ++p) acc += Bi(p, rr) * aug.dt * M(p, c);
                    out(row0 + static_cast<long>(rr), c) += acc;
                }
            }
        }
        if (j + 1 < aug.d_r) {
            const long src = static_cast<long>(n) + (j + 1) * static_cast<long>(m);
            for (std::size_t rr = 0; rr < m; ++rr) {
                for (long c = 0; c < Nz; ++c) {
                    out(row0 + static_cast<long>(rr), c) += M(src + static_cast<long>(rr), c);
                }
            }
        }
    }
    return out;
}

}  // namespace

DiscreteAugmented build_augmented(const StochasticDelaySystem& sys, const CostSpec& cost,
                                  const TimeGrid& grid) {
    validate_cost(cost, sys.state_dim(), sys.input_dim());
    DiscreteAugmented aug;
    aug.n = sys.state_dim();
    aug.m = sys.input_dim();
    aug.d_r = grid.max_delay_steps();
    aug.dt = grid.dt;
    if (static_cast<long>(aug.m) * aug.d_r > kSlotCap) {
        throw SizeError("build_augmented: m * d_r exceeds the desk-scale cap");
    }
    aug.Nz = static_cast<long>(aug.n) + static_cast<long>(aug.m) * aug.d_r;
    aug.lags = grid.steps_per_delay;
    const std::size_t n = aug.n, m = aug.m;

    // dynamics
    aug.A_z = Matrix::zero(aug.Nz, aug.Nz);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            aug.A_z(r, c) = (r == c ? 1.0 : 0.0) + sys.A(r, c) * aug.dt;
        }
    }
    aug.B_z = Matrix::zero(aug.Nz, m);
    aug.Bbar_current = Matrix::zero(n, m);
    for (std::size_t i = 0; i < sys.channels.size(); ++i) {
        const long lag = aug.lags[i];
        aug.channel_B.push_back(sys.channels[i].B);
        aug.channel_Bbar.push_back(sys.channels[i].Bbar);
        if (lag == 0) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < m; ++c)
                    aug.B_z(r, c) += sys.channels[i].B(r, c) * aug.dt;
            aug.Bbar_current += sys.channels[i].Bbar;
        } else {
            const long col0 = static_cast<long>(n) + (lag - 1) * static_cast<long>(m);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < m; ++c)
                    aug.A_z(r, col0 + static_cast<long>(c)) += sys.channels[i].B(r, c) * aug.dt;
        }
    }
    if (aug.d_r >= 1) {
        for (std::size_t c = 0; c < m; ++c) aug.B_z(n + c, c) = 1.0;  // newest history slot
        for (long j = 1; j < aug.d_r; ++j) {
            const long row0 = static_cast<long>(n) + j * static_cast<long>(m);
            const long col0 = static_cast<long>(n) + (j - 1) * static_cast<long>(m);
            for (std::size_t c = 0; c < m; ++c) {
                aug.A_z(row0 + static_cast<long>(c), col0 + static_cast<long>(c)) = 1.0;
            }
        }
    }

    // cost embedding: conditional-mean map D and pending-noise second moment.
    // Euler kernels (I + A dt)^{-j} stand in for e^{-A j dt}.
    const Matrix Phi = [&] {
        Matrix p(n, n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) p(r, c) = (r == c ? 1.0 : 0.0) + sys.A(r, c) * aug.dt;
        return p;
    }();
    std::vector<Matrix> inv_pow;  // Phi^{-l}, l = 0..d_r
    inv_pow.push_back(Matrix::identity(n));
    if (aug.d_r >= 1) {
        const Matrix phi_inv = solve(Phi, Matrix::identity(n));
        for (long l = 1; l <= aug.d_r; ++l) inv_pow.push_back(inv_pow.back() * phi_inv);
    }

    Matrix D(n, aug.Nz);
    for (std::size_t r = 0; r < n; ++r) D(r, r) = 1.0;
    Matrix Theta = Matrix::zero(aug.Nz, aug.Nz);
    Matrix Theta_H = Matrix::zero(aug.Nz, aug.Nz);
    for (long j = 1; j <= aug.d_r; ++j) {
        const long col0 = static_cast<long>(n) + (j - 1) * static_cast<long>(m);
        Matrix Wj = Matrix::zero(n, m);
        Matrix Tj = Matrix::zero(m, m);
        Matrix Tj_H = Matrix::zero(m, m);
        for (std::size_t i = 0; i < sys.channels.size(); ++i) {
            const long di = aug.lags[i];
            if (di < j) continue;
            const Matrix& VB = inv_pow[di + 1 - j];
            Wj += (VB * sys.channels[i].B) * aug.dt;
            const Matrix VBb = VB * sys.channels[i].Bbar;
            Tj += aug.dt * (VBb.transpose() * cost.Q * VBb);
            Tj_H += aug.dt * (VBb.transpose() * cost.H * VBb);
        }
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) D(r, col0 + static_cast<long>(c)) = Wj(r, c);
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < m; ++c) {
                Theta(col0 + static_cast<long>(r), col0 + static_cast<long>(c)) = Tj(r, c);
                Theta_H(col0 + static_cast<long>(r), col0 + static_cast<long>(c)) = Tj_H(r, c);
            }
        }
    }
    aug.Q_z = aug.dt * (D.transpose() * cost.Q * D + Theta);
    aug.H_z = D.transpose() * cost.H * D + Theta_H;
    aug.R_z = aug.dt * cost.R;
    return aug;
}

DiscreteLqSolution solve_discrete_lq(const DiscreteAugmented& aug, long steps) {
    if (steps < 0) throw ValidationError("solve_discrete_lq: steps must be >= 0");
    const std::size_t n = aug.n, m = aug.m;
    DiscreteLqSolution out;
    out.steps = steps;
    out.gains.assign(steps, Matrix());

    Matrix S = aug.H_z;
    for (long k = steps - 1; k >= 0; --k) {
        // inner matrix: R_z + B_z' S B_z + dt Bbar0' S_xx Bbar0
        Matrix inner = aug.R_z + aug.B_z.transpose() * S * aug.B_z;
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < m; ++c) {
                double acc = 0.0;
                for (std::size_t p = 0; p < n; ++p)
                    for (std::size_t q = 0; q < n; ++q)
                        acc += aug.Bbar_current(p, r) * S(p, q) * aug.Bbar_current(q, c);
                inner(r, c) += aug.dt * acc;
            }
        }
        if (min_eigenvalue(inner) <= 1e-10) {
            throw SingularityError("solve_discrete_lq: inner matrix lost positive definiteness",
                                   static_cast<double>(k) * aug.dt);
        }
        const Matrix SA = mult_S_Az(S, aug);
        const Matrix M = aug.B_z.transpose() * SA;  // m x Nz
        Matrix L = -solve(inner, M);
        Matrix Snew = mult_Azt_M(SA, aug);
        Snew += aug.Q_z;
        add_product(Snew, M.transpose(), L);
        // delayed channels: noise rides the history slot, so it adds to the
        // state-quadratic through the x,x block of S
        for (std::size_t i = 0; i < aug.lags.size(); ++i) {
            const long lag = aug.lags[i];
            if (lag == 0) continue;
            const long slot0 = static_cast<long>(n) + (lag - 1) * static_cast<long>(m);
            const Matrix& Bb = aug.channel_Bbar[i];
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < m; ++c) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < n; ++p)
                        for (std::size_t q = 0; q < n; ++q) acc += Bb(p, r) * S(p, q) * Bb(q, c);
                    Snew(slot0 + static_cast<long>(r), slot0 + static_cast<long>(c)) +=
                        aug.dt * acc;
                }
            }
        }
        S = sym_part(Snew);
        out.gains[k] = std::move(L);
    }
    out.S0 = std::move(S);
    return out;
}

OracleComparison compare(const RiccatiSolution& sol, const DiscreteLqSolution& lq,
                         const DiscreteAugmented& aug, const Matrix& x0) {
    if (std::abs(sol.grid.dt - aug.dt) > 1e-12 * aug.dt ||
        sol.grid.horizon_steps != lq.steps) {
        throw ComparisonError("compare: continuous and discrete runs use different grids");
    }
    if (x0.rows() != aug.n || x0.cols() != 1) {
        throw ComparisonError("compare: x0 has the wrong shape");
    }
    OracleComparison cmp;
    cmp.continuous_cost = quadratic_form(x0, sol.Phat.front(), x0);
    Matrix z0 = Matrix::zero(aug.Nz, 1);
    for (std::size_t r = 0; r < aug.n; ++r) z0(r, 0) = x0(r, 0);
    cmp.discrete_cost = quadratic_form(z0, lq.S0, z0);
    cmp.rel_error = std::abs(cmp.continuous_cost - cmp.discrete_cost) /
                    std::max(1.0, std::abs(cmp.discrete_cost));

    if (!lq.gains.empty()) {
        const Matrix& K0 = sol.K.front();
        const Matrix& L0 = lq.gains.front();
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t r = 0; r < aug.m; ++r) {
            for (std::size_t c = 0; c < aug.n; ++c) {
                dot += K0(r, c) * L0(r, c);
                na += K0(r, c) * K0(r, c);
                nb += L0(r, c) * L0(r, c);
            }
        }
        cmp.gain_alignment = (na > 0.0 && nb > 0.0) ? dot / std::sqrt(na * nb) : 0.0;
    }
    return cmp;
}

}  // namespace delay_lqr
