#include "delay_lqr/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace delay_lqr {

namespace {

constexpr double kAlignTol = 1e-9;
constexpr long kMaxTotalSteps = 10'000'000;

bool is_multiple(double value, double dt) {
    if (value == 0.0) return true;
    const double q = value / dt;
    return std::abs(q - std::llround(q)) <= kAlignTol * std::max(1.0, std::abs(q));
}

// Euclidean reduction on reals with snapping, for the rational-refinement
// fallback when halving dt_hint never aligns with the delay set.
double real_gcd(double a, double b) {
    a = std::abs(a);
    b = std::abs(b);
    const double tol = 1e-9 * std::max(a, b);
    while (b > tol) {
        const double r = std::fmod(a, b);
        a = b;
        b = (r < tol || b - r < tol) ? 0.0 : r;
    }
    return a;
}

}  // namespace

StochasticDelaySystem validate_system(StochasticDelaySystem sys) {
    if (!sys.A.square()) throw ValidationError("system: A must be square and nonempty");
    if (!sys.A.all_finite()) throw ValidationError("system: A has non-finite entries");
    if (sys.channels.empty()) throw ValidationError("system: at least one channel required");

    const std::size_t n = sys.A.rows();
    const std::size_t m = sys.channels.front().B.cols();
    if (m == 0) throw ValidationError("system: input dimension must be positive");

    for (std::size_t i = 0; i < sys.channels.size(); ++i) {
        const Channel& c = sys.channels[i];
        const std::string tag = "channel " + std::to_string(i);
        if (c.B.rows() != n || c.B.cols() != m || c.Bbar.rows() != n || c.Bbar.cols() != m) {
            throw ValidationError(tag + ": dimension mismatch against (n, m)");
        }
        if (!c.B.all_finite() || !c.Bbar.all_finite()) {
            throw ValidationError(tag + ": non-finite entries");
        }
        if (!std::isfinite(c.h)) throw ValidationError(tag + ": non-finite delay");
        if (c.h < 0.0) throw ValidationError(tag + ": negative delay");
    }

    std::stable_sort(sys.channels.begin(), sys.channels.end(),
                     [](const Channel& a, const Channel& b) { return a.h < b.h; });

    if (sys.channels.front().h != 0.0) {
        throw ValidationError("system: missing h_0 = 0 channel (add one with B_0 = 0 if needed)");
    }
    for (std::size_t i = 1; i < sys.channels.size(); ++i) {
        if (sys.channels[i].h <= 0.0) {
            throw ValidationError("system: duplicate zero delay; only channel 0 may have h = 0");
        }
    }
    return sys;
}

void validate_cost(const CostSpec& cost, std::size_t n, std::size_t m) {
    auto check_sym = [](const Matrix& M, std::size_t dim, const char* name) {
        if (!M.square() || M.rows() != dim) {
            throw ValidationError(std::string(name) + ": dimension mismatch");
        }
        if ((M - M.transpose()).max_abs() > 1e-10 * std::max(1.0, M.max_abs())) {
            throw ValidationError(std::string(name) + ": not symmetric");
        }
    };
    check_sym(cost.Q, n, "Q");
    check_sym(cost.H, n, "H");
    check_sym(cost.R, m, "R");
    if (min_eigenvalue(cost.Q) < -1e-10) throw ValidationError("Q: not positive semidefinite");
    if (min_eigenvalue(cost.H) < -1e-10) throw ValidationError("H: not positive semidefinite");
    if (min_eigenvalue(cost.R) <= 1e-10) throw ValidationError("R: not positive definite");
    if (!(cost.T >= 0.0) || !std::isfinite(cost.T)) throw ValidationError("T: must be finite and >= 0");
}

DerivedMaps derive_maps(const StochasticDelaySystem& sys) {
    DerivedMaps maps;
    const std::size_t n = sys.state_dim();
    const std::size_t m = sys.input_dim();
    maps.B = Matrix::zero(n, m);
    for (const Channel& c : sys.channels) {
        const Matrix decay = mat_exp(sys.A, -c.h);
        maps.F.push_back(decay * c.B);
        maps.E.push_back(decay * c.Bbar);
        maps.B += maps.F.back();
    }
    return maps;
}

TimeGrid build_grid(const StochasticDelaySystem& sys, double T, double dt_hint) {
    if (!(T > 0.0) && T != 0.0) throw GridError("build_grid: horizon must be >= 0");
    if (!(dt_hint > 0.0)) throw GridError("build_grid: dt_hint must be positive");

    std::vector<double> targets;
    for (const Channel& c : sys.channels)
        if (c.h > 0.0) targets.push_back(c.h);
    if (T > 0.0) targets.push_back(T);

    auto fits = [&](double dt) {
        if (!(dt > 0.0)) return false;
        for (double v : targets) {
            if (!is_multiple(v, dt)) return false;
            if (v / dt > static_cast<double>(kMaxTotalSteps)) return false;
        }
        return true;
    };

    double dt = -1.0;
    for (int k = 0; k <= 20; ++k) {
        const double cand = std::ldexp(dt_hint, -k);
        if (fits(cand)) {
            dt = cand;
            break;
        }
    }
    if (dt < 0.0 && !targets.empty()) {
        double g = targets.front();
        for (double v : targets) g = real_gcd(g, v);
        if (g > 0.0) {
            const double q = std::ceil(g / dt_hint - kAlignTol);
            const double cand = g / std::max(1.0, q);
            if (cand <= dt_hint * (1.0 + kAlignTol) && fits(cand)) dt = cand;
        }
    }
    if (dt < 0.0) {
        throw GridError("build_grid: incommensurate delays (no dt <= hint aligns delay set and horizon)");
    }

    TimeGrid grid;
    grid.dt = dt;
    for (const Channel& c : sys.channels) {
        grid.steps_per_delay.push_back(std::llround(c.h / dt));
    }
    grid.horizon_steps = std::llround(T / dt);
    return grid;
}

double default_dt_hint(const StochasticDelaySystem& sys) {
    const double hr = sys.max_delay();
    return (hr > 0.0 ? hr : 1.0) / 64.0;
}

}  // namespace delay_lqr
