#include "delay_lqr/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <thread>

#include "delay_lqr/rng.hpp"

namespace delay_lqr {

namespace {

constexpr double kBlowUp = 1e100;
constexpr long kBlockSize = 64;

long thread_count(long requested, long blocks) {
    long t = requested;
    if (t <= 0) {
        if (const char* env = std::getenv("DELAY_LQR_THREADS")) t = std::atol(env);
    }
    if (t <= 0) t = static_cast<long>(std::thread::hardware_concurrency());
    if (t <= 0) t = 1;
    return std::max(1L, std::min(t, blocks));
}

struct Instance {
    const StochasticDelaySystem* sys;
    TimeGrid grid;
    PredictorKernels kernels;
    std::size_t n, m, nchan;
    long N, dr, Ntot;
    std::vector<long> d;
    // flat copies for the inner loop
    std::vector<double> A;               // n*n
    std::vector<std::vector<double>> B;  // per channel n*m
    std::vector<std::vector<double>> Bb;
};

Instance make_instance(const StochasticDelaySystem& sys, const SimConfig& cfg) {
    if (!(cfg.dt > 0.0)) throw GridError("sim: dt must be positive");
    Instance inst;
    inst.sys = &sys;
    inst.grid = build_grid(sys, cfg.T_sim, cfg.dt);
    if (std::abs(inst.grid.dt - cfg.dt) > 1e-12 * cfg.dt) {
        throw GridError("sim: dt is not commensurate with the delay set");
    }
    inst.kernels = PredictorKernels::build(sys, inst.grid);
    inst.n = sys.state_dim();
    inst.m = sys.input_dim();
    inst.nchan = sys.channels.size();
    inst.N = inst.grid.horizon_steps;
    inst.d = inst.grid.steps_per_delay;
    inst.dr = inst.grid.max_delay_steps();
    inst.Ntot = inst.N + inst.dr;
    inst.A.assign(sys.A.data(), sys.A.data() + inst.n * inst.n);
    for (const Channel& c : sys.channels) {
        inst.B.emplace_back(c.B.data(), c.B.data() + inst.n * inst.m);
        inst.Bb.emplace_back(c.Bbar.data(), c.Bbar.data() + inst.n * inst.m);
    }
    if (cfg.x0.rows() != inst.n || cfg.x0.cols() != 1) {
        throw DimensionError("sim: x0 must be an n-vector");
    }
    return inst;
}

std::vector<Matrix> prefill_samples(const Prefill& p, std::size_t m, long dr) {
    switch (p.kind) {
        case Prefill::Kind::Zero:
            return std::vector<Matrix>(dr, Matrix::zero(m, 1));
        case Prefill::Kind::Constant: {
            if (p.constant.rows() != m || p.constant.cols() != 1) {
                throw HistoryError("prefill: constant has wrong shape");
            }
            return std::vector<Matrix>(dr, p.constant);
        }
        case Prefill::Kind::Samples:
            return p.samples;
    }
    return {};
}

// y += M u, with M an n x m row-major block
inline void axpy_block(const double* M, const double* u, std::size_t n, std::size_t m,
                       double* y, double scale = 1.0) {
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m; ++c) acc += M[r * m + c] * u[c];
        y[r] += scale * acc;
    }
}

struct Welford {
    double sum = 0.0, sumsq = 0.0;
    long count = 0;
    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++count;
    }
    void merge(const Welford& o) {
        sum += o.sum;
        sumsq += o.sumsq;
        count += o.count;
    }
    double mean() const { return count > 0 ? sum / static_cast<double>(count) : 0.0; }
    double stderr_of_mean() const {
        if (count < 2) return 0.0;
        const double n = static_cast<double>(count);
        double var = (sumsq - sum * sum / n) / (n - 1.0);
        if (var < 0.0) var = 0.0;
        return std::sqrt(var / n);
    }
};

struct CheckpointPlan {
    std::vector<long> nodes;
    // Lyapunov weights w_l kernel_l' Pi0 kernel_l (n x n flat), l = 0..dr
    std::vector<std::vector<double>> lyap_weights;
    std::vector<double> P;  // steady P, flat
    double alpha = 0.0;
    bool want_lyap = false;
};

struct BlockStats {
    std::vector<Welford> sq_x, sq_u;                 // per node
    std::vector<std::vector<Welford>> martingale;    // per checkpoint, per component
    std::vector<Welford> lyap;                       // per checkpoint
    long divergent = 0;
    long first_divergence_node = -1;
};

struct Engine {
    const Instance& inst;
    const GainSchedule& gain;
    const SimConfig& cfg;
    const SimOptions& opt;
    CheckpointPlan plan;
    std::vector<Matrix> prefill;
    long gain_start_node = 0;

    // cost weights
    bool want_cost = false;
    std::vector<double> Q, R, Hterm;  // flat

    Engine(const Instance& i, const GainSchedule& g, const SimConfig& c, const SimOptions& o)
        : inst(i), gain(g), cfg(c), opt(o) {
        prefill = prefill_samples(cfg.prefill, inst.m, inst.dr);
        if (static_cast<long>(prefill.size()) != inst.dr) {
            throw HistoryError("prefill: sample count does not cover [-h_r, 0)");
        }
        gain_start_node = std::llround(cfg.gain_start_time / inst.grid.dt);
        if (opt.cost) {
            validate_cost(*opt.cost, inst.n, inst.m);
            want_cost = true;
            Q.assign(opt.cost->Q.data(), opt.cost->Q.data() + inst.n * inst.n);
            R.assign(opt.cost->R.data(), opt.cost->R.data() + inst.m * inst.m);
            Hterm.assign(opt.cost->H.data(), opt.cost->H.data() + inst.n * inst.n);
        }
        for (double t : opt.checkpoints) {
            const long k = std::llround(t / inst.grid.dt);
            if (k < 0 || k > inst.N) throw GridError("sim: checkpoint outside the horizon");
            plan.nodes.push_back(k);
        }
        if (opt.lyapunov) {
            plan.want_lyap = true;
            plan.alpha = opt.lyapunov->alpha;
            plan.P.assign(opt.lyapunov->P.data(),
                          opt.lyapunov->P.data() + inst.n * inst.n);
            const Matrix step = mat_exp(inst.sys->A, inst.grid.dt);
            Matrix kernel = Matrix::identity(inst.n);
            for (long l = 0; l <= inst.dr; ++l) {
                const double th = static_cast<double>(l) * inst.grid.dt;
                const double w = inst.grid.dt * ((l == 0 || l == inst.dr) ? 0.5 : 1.0);
                const Matrix kl = std::exp(plan.alpha * th / 2.0) * kernel;
                const Matrix wl = w * (kl.transpose() * opt.lyapunov->Pi0 * kl);
                plan.lyap_weights.emplace_back(wl.data(), wl.data() + inst.n * inst.n);
                kernel = kernel * step;
            }
        }
    }

    // all per-path state lives here so a worker can reuse its buffers
    struct Scratch {
        std::vector<double> dW;    // nchan x Ntot
        std::vector<double> urec;  // (Ntot + 1 + dr) x m, index shift dr
        std::vector<double> x, yhat, y, u, tmp;
        std::vector<double> qx, qu;  // per node quadratics
        std::vector<std::vector<double>> mart;  // per checkpoint, n components
        std::vector<double> lyap;               // per checkpoint
        double cost = 0.0;
        bool divergent = false;
        long divergence_node = -1;
    };

    void init_scratch(Scratch& s) const {
        s.dW.resize(inst.nchan * inst.Ntot);
        s.urec.assign((inst.Ntot + 1 + inst.dr) * inst.m, 0.0);
        s.x.resize(inst.n);
        s.yhat.resize(inst.n);
        s.y.resize(inst.n);
        s.u.resize(inst.m);
        s.tmp.resize(inst.n);
        s.qx.resize(inst.N + 1);
        s.qu.resize(inst.N + 1);
        s.mart.assign(plan.nodes.size(), std::vector<double>(inst.n));
        s.lyap.assign(plan.nodes.size(), 0.0);
    }

    const double* u_at(const Scratch& s, long k) const {
        return s.urec.data() + static_cast<std::size_t>(k + inst.dr) * inst.m;
    }

    // pending stochastic terms of the reduction at node k (the part of y(t)
    // the conditional expectation drops), into out[n]
    void pending_noise(const Scratch& s, long k, double* out) const {
        std::fill(out, out + inst.n, 0.0);
        for (std::size_t i = 0; i < inst.nchan; ++i) {
            const long di = inst.d[i];
            for (long j = 0; j < di; ++j) {
                const double dw = s.dW[i * inst.Ntot + (k + j)];
                axpy_block(inst.kernels.noise_kernel(i, j), u_at(s, k - di + j), inst.n, inst.m,
                           out, dw);
            }
        }
    }

    void run_path(long p, Scratch& s) const {
        s.cost = 0.0;
        s.divergent = false;
        s.divergence_node = -1;
        for (std::size_t i = 0; i < inst.nchan; ++i) {
            for (long k = 0; k < inst.Ntot; ++k) {
                s.dW[i * inst.Ntot + k] =
                    std::sqrt(inst.grid.dt) *
                    normal_draw(cfg.master_seed, static_cast<std::uint64_t>(p),
                                static_cast<std::uint64_t>(k) * inst.nchan + i);
            }
        }
        ControlHistory hist = init_history(prefill, inst.grid.dt, inst.m, inst.dr);
        for (long k = -inst.dr; k < 0; ++k) {
            std::memcpy(s.urec.data() + (k + inst.dr) * inst.m, prefill[k + inst.dr].data(),
                        inst.m * sizeof(double));
        }
        for (std::size_t r = 0; r < inst.n; ++r) s.x[r] = cfg.x0(r, 0);

        const double dt = inst.grid.dt;
        for (long k = 0; k <= inst.N; ++k) {
            predictor_state_into(s.x.data(), hist, inst.kernels, s.yhat.data());
            // control
            if (k < gain_start_node) {
                std::fill(s.u.begin(), s.u.end(), 0.0);
            } else {
                const Matrix& K = gain.at(k);
                for (std::size_t r = 0; r < inst.m; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < inst.n; ++c) acc += K(r, c) * s.yhat[c];
                    s.u[r] = acc;
                }
            }
            std::memcpy(s.urec.data() + (k + inst.dr) * inst.m, s.u.data(),
                        inst.m * sizeof(double));

            double qx = 0.0, qu = 0.0;
            for (std::size_t r = 0; r < inst.n; ++r) qx += s.x[r] * s.x[r];
            for (std::size_t r = 0; r < inst.m; ++r) qu += s.u[r] * s.u[r];
            s.qx[k] = qx;
            s.qu[k] = qu;
            if (!std::isfinite(qx) || !std::isfinite(qu) || qx > kBlowUp || qu > kBlowUp) {
                s.divergent = true;
                s.divergence_node = k;
                return;
            }

            const bool need_y = (want_cost && opt.cost_on_y) || !plan.nodes.empty();
            if (need_y) {
                pending_noise(s, k, s.tmp.data());
                for (std::size_t r = 0; r < inst.n; ++r) s.y[r] = s.yhat[r] + s.tmp[r];
            }
            if (want_cost) {
                const double* z = opt.cost_on_y ? s.y.data() : s.x.data();
                double zQz = 0.0;
                for (std::size_t r = 0; r < inst.n; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < inst.n; ++c) acc += Q[r * inst.n + c] * z[c];
                    zQz += z[r] * acc;
                }
                double uRu = 0.0;
                for (std::size_t r = 0; r < inst.m; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < inst.m; ++c) acc += R[r * inst.m + c] * s.u[c];
                    uRu += s.u[r] * acc;
                }
                const double w = (k == 0 || k == inst.N) ? 0.5 * dt : dt;
                const double disc = std::exp(-opt.cost_alpha * static_cast<double>(k) * dt);
                s.cost += w * disc * (zQz + uRu);
                if (k == inst.N) {
                    double zHz = 0.0;
                    for (std::size_t r = 0; r < inst.n; ++r) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < inst.n; ++c)
                            acc += Hterm[r * inst.n + c] * z[c];
                        zHz += z[r] * acc;
                    }
                    s.cost += disc * zHz;
                }
            }
            // checkpoint probes
            for (std::size_t ci = 0; ci < plan.nodes.size(); ++ci) {
                if (plan.nodes[ci] != k) continue;
                pending_noise(s, k, s.mart[ci].data());
                if (plan.want_lyap) s.lyap[ci] = lyapunov_value(s, k);
            }

            if (k == inst.N) break;
            // x_{k+1} = x + (A x + sum B_i u_{k-d_i}) dt + sum Bbar_i u_{k-d_i} dW_i
            std::fill(s.tmp.begin(), s.tmp.end(), 0.0);
            for (std::size_t r = 0; r < inst.n; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < inst.n; ++c) acc += inst.A[r * inst.n + c] * s.x[c];
                s.tmp[r] = acc * dt;
            }
            for (std::size_t i = 0; i < inst.nchan; ++i) {
                const double* ul = u_at(s, k - inst.d[i]);
                axpy_block(inst.B[i].data(), ul, inst.n, inst.m, s.tmp.data(), dt);
                axpy_block(inst.Bb[i].data(), ul, inst.n, inst.m, s.tmp.data(),
                           s.dW[i * inst.Ntot + k]);
            }
            for (std::size_t r = 0; r < inst.n; ++r) s.x[r] += s.tmp[r];
            hist.push_raw(s.u.data());
        }
    }

    // V(t) sample: y'P y - sum_l y' W_l yhat(t|t+theta_l), times e^{alpha t}
    double lyapunov_value(const Scratch& s, long k) const {
        std::vector<double> partial(inst.n, 0.0);  // running stochastic part of yhat(t|t+th)
        double acc = 0.0;
        // l = 0 term: yhat(t|t) itself
        acc += weighted_form(s.y.data(), plan.lyap_weights[0].data(), s.yhat.data());
        std::vector<double> target(inst.n);
        for (long l = 1; l <= inst.dr; ++l) {
            for (std::size_t i = 0; i < inst.nchan; ++i) {
                const long di = inst.d[i];
                if (di >= l) {
                    const double dw = s.dW[i * inst.Ntot + (k + l - 1)];
                    axpy_block(inst.kernels.noise_kernel(i, l - 1), u_at(s, k - di + l - 1),
                               inst.n, inst.m, partial.data(), dw);
                }
            }
            for (std::size_t r = 0; r < inst.n; ++r) target[r] = s.yhat[r] + partial[r];
            acc += weighted_form(s.y.data(), plan.lyap_weights[l].data(), target.data());
        }
        double ypy = weighted_form(s.y.data(), plan.P.data(), s.y.data());
        const double t = static_cast<double>(k) * inst.grid.dt;
        return std::exp(plan.alpha * t) * (ypy - acc);
    }

    double weighted_form(const double* a, const double* M, const double* b) const {
        double acc = 0.0;
        for (std::size_t r = 0; r < inst.n; ++r) {
            double row = 0.0;
            for (std::size_t c = 0; c < inst.n; ++c) row += M[r * inst.n + c] * b[c];
            acc += a[r] * row;
        }
        return acc;
    }
};

}  // namespace

GainSchedule GainSchedule::constant(Matrix K) {
    GainSchedule g;
    g.K_.push_back(std::move(K));
    return g;
}

GainSchedule GainSchedule::from_solution(const RiccatiSolution& sol) {
    GainSchedule g;
    g.K_ = sol.K;
    return g;
}

SimResult simulate_paths(const StochasticDelaySystem& sys, const GainSchedule& gain,
                         const SimConfig& cfg, const SimOptions& options) {
    if (cfg.paths < 1) throw ValidationError("sim: paths must be >= 1");
    const Instance inst = make_instance(sys, cfg);
    Engine engine(inst, gain, cfg, options);

    const long M = cfg.paths;
    const long blocks = (M + kBlockSize - 1) / kBlockSize;
    const long workers = thread_count(options.threads, blocks);

    std::vector<BlockStats> partials(blocks);
    std::vector<double> path_cost(M, 0.0);
    std::vector<char> path_divergent(M, 0);

    std::atomic<long> next_block{0};
    auto worker = [&]() {
        Engine::Scratch scratch;
        engine.init_scratch(scratch);
        while (true) {
            const long b = next_block.fetch_add(1);
            if (b >= blocks) break;
            BlockStats& st = partials[b];
            st.sq_x.assign(inst.N + 1, {});
            st.sq_u.assign(inst.N + 1, {});
            st.martingale.assign(engine.plan.nodes.size(), std::vector<Welford>(inst.n));
            st.lyap.assign(engine.plan.nodes.size(), {});
            const long lo = b * kBlockSize;
            const long hi = std::min(M, lo + kBlockSize);
            for (long p = lo; p < hi; ++p) {
                engine.run_path(p, scratch);
                if (scratch.divergent) {
                    path_divergent[p] = 1;
                    ++st.divergent;
                    if (st.first_divergence_node < 0 ||
                        scratch.divergence_node < st.first_divergence_node) {
                        st.first_divergence_node = scratch.divergence_node;
                    }
                    continue;
                }
                for (long k = 0; k <= inst.N; ++k) {
                    st.sq_x[k].add(scratch.qx[k]);
                    st.sq_u[k].add(scratch.qu[k]);
                }
                path_cost[p] = scratch.cost;
                for (std::size_t ci = 0; ci < engine.plan.nodes.size(); ++ci) {
                    for (std::size_t r = 0; r < inst.n; ++r) {
                        st.martingale[ci][r].add(scratch.mart[ci][r]);
                    }
                    if (engine.plan.want_lyap) st.lyap[ci].add(scratch.lyap[ci]);
                }
            }
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (long w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // deterministic combination in block order
    std::vector<Welford> sq_x(inst.N + 1), sq_u(inst.N + 1);
    std::vector<std::vector<Welford>> mart(engine.plan.nodes.size(),
                                           std::vector<Welford>(inst.n));
    std::vector<Welford> lyap(engine.plan.nodes.size());
    long divergent = 0;
    long first_div = -1;
    for (const BlockStats& st : partials) {
        for (long k = 0; k <= inst.N; ++k) {
            sq_x[k].merge(st.sq_x[k]);
            sq_u[k].merge(st.sq_u[k]);
        }
        for (std::size_t ci = 0; ci < mart.size(); ++ci) {
            for (std::size_t r = 0; r < inst.n; ++r) mart[ci][r].merge(st.martingale[ci][r]);
            lyap[ci].merge(st.lyap[ci]);
        }
        divergent += st.divergent;
        if (st.first_divergence_node >= 0 &&
            (first_div < 0 || st.first_divergence_node < first_div)) {
            first_div = st.first_divergence_node;
        }
    }

    SimResult res;
    res.times.resize(inst.N + 1);
    res.mean_sq_x.resize(inst.N + 1);
    res.stderr_sq_x.resize(inst.N + 1);
    res.mean_sq_u.resize(inst.N + 1);
    res.stderr_sq_u.resize(inst.N + 1);
    for (long k = 0; k <= inst.N; ++k) {
        res.times[k] = static_cast<double>(k) * inst.grid.dt;
        res.mean_sq_x[k] = sq_x[k].mean();
        res.stderr_sq_x[k] = sq_x[k].stderr_of_mean();
        res.mean_sq_u[k] = sq_u[k].mean();
        res.stderr_sq_u[k] = sq_u[k].stderr_of_mean();
    }
    res.divergence_ratio = static_cast<double>(divergent) / static_cast<double>(M);
    res.first_divergence_node = first_div;
    res.paths_used = M - divergent;

    if (engine.want_cost) {
        res.per_path_cost.reserve(res.paths_used);
        for (long p = 0; p < M; ++p) {
            if (!path_divergent[p]) res.per_path_cost.push_back(path_cost[p]);
        }
        const auto [mean, se] = estimate_cost(res.per_path_cost);
        res.cost_mean = mean;
        res.cost_stderr = se;
    }
    for (std::size_t ci = 0; ci < engine.plan.nodes.size(); ++ci) {
        MartingaleStats ms;
        ms.t = static_cast<double>(engine.plan.nodes[ci]) * inst.grid.dt;
        for (std::size_t r = 0; r < inst.n; ++r) {
            ms.mean.push_back(mart[ci][r].mean());
            ms.stderr_.push_back(mart[ci][r].stderr_of_mean());
        }
        res.martingale.push_back(std::move(ms));
        if (engine.plan.want_lyap) {
            res.lyapunov.push_back(
                {ms.t, lyap[ci].mean(), lyap[ci].stderr_of_mean()});
        }
    }

    // decay rate over the trailing half, when the data supports it
    bool positive = res.paths_used > 0;
    const std::size_t n0 = res.times.size() / 2;
    for (std::size_t k = n0; k < res.times.size() && positive; ++k) {
        positive = res.mean_sq_x[k] > 0.0;
    }
    if (positive && res.times.size() >= 4) {
        res.fitted_rate = fit_decay_rate(res.times, res.mean_sq_x, 0.5);
        res.rate_valid = true;
    }
    return res;
}

std::pair<double, double> estimate_cost(const std::vector<double>& per_path_cost) {
    Welford w;
    for (double c : per_path_cost) w.add(c);
    return {w.mean(), w.stderr_of_mean()};
}

double fit_decay_rate(const std::vector<double>& times, const std::vector<double>& mean_sq,
                      double window) {
    if (times.size() != mean_sq.size() || times.size() < 2) {
        throw ValidationError("fit_decay_rate: need matching series with >= 2 points");
    }
    if (!(window > 0.0) || window > 1.0) {
        throw ValidationError("fit_decay_rate: window must be in (0, 1]");
    }
    const std::size_t n0 =
        static_cast<std::size_t>(std::floor((1.0 - window) * static_cast<double>(times.size())));
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    long cnt = 0;
    for (std::size_t k = n0; k < times.size(); ++k) {
        if (!(mean_sq[k] > 0.0)) {
            throw RateUndefinedError("fit_decay_rate: nonpositive values in the fit window");
        }
        const double t = times[k];
        const double y = std::log(mean_sq[k]);
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
        ++cnt;
    }
    const double denom = static_cast<double>(cnt) * stt - st * st;
    if (denom <= 0.0) throw RateUndefinedError("fit_decay_rate: degenerate fit window");
    const double slope = (static_cast<double>(cnt) * sty - st * sy) / denom;
    return -slope;
}

ReductionReport simulate_reduction_check(const StochasticDelaySystem& sys,
                                         const GainSchedule& gain, const SimConfig& cfg) {
    const Instance inst = make_instance(sys, cfg);
    SimOptions opts;
    Engine engine(inst, gain, cfg, opts);
    const DerivedMaps maps = derive_maps(sys);

    Engine::Scratch s;
    engine.init_scratch(s);

    ReductionReport report;
    report.paths = cfg.paths;
    for (long p = 0; p < cfg.paths; ++p) {
        engine.run_path(p, s);
        if (s.divergent) continue;

        // reduced state by its own Euler-Maruyama recursion, channel i reading
        // the increment of w_i at t + h_i
        std::vector<double> y4(inst.n);
        // y(0) from the x-path quadrature
        ControlHistory hist = init_history(engine.prefill, inst.grid.dt, inst.m, inst.dr);
        std::vector<double> x0(inst.n);
        for (std::size_t r = 0; r < inst.n; ++r) x0[r] = cfg.x0(r, 0);
        predictor_state_into(x0.data(), hist, inst.kernels, y4.data());
        {
            std::vector<double> pend(inst.n);
            engine.pending_noise(s, 0, pend.data());
            for (std::size_t r = 0; r < inst.n; ++r) y4[r] += pend[r];
        }

        std::vector<double> step(inst.n), y3(inst.n), yhat(inst.n), alt(inst.n);
        // March x and y4 side by side, comparing at every node.
        std::vector<double> x(inst.n);
        for (std::size_t r = 0; r < inst.n; ++r) x[r] = cfg.x0(r, 0);
        ControlHistory replay = init_history(engine.prefill, inst.grid.dt, inst.m, inst.dr);
        for (long k = 0; k <= inst.N; ++k) {
            // y3: the predictor quadrature on the replayed history plus the
            // pending stochastic terms of the reduction
            predictor_state_into(x.data(), replay, inst.kernels, yhat.data());
            engine.pending_noise(s, k, step.data());
            for (std::size_t r = 0; r < inst.n; ++r) y3[r] = yhat[r] + step[r];

            // same quadrature, independently ordered, from the raw record
            std::fill(alt.begin(), alt.end(), 0.0);
            for (std::size_t i = 0; i < inst.nchan; ++i) {
                const long di = inst.d[i];
                if (di == 0) continue;
                for (long j = 0; j <= di; ++j) {
                    const long idx = (j == di) ? k - 1 : k - di + j;
                    axpy_block(inst.kernels.weight(i, j), engine.u_at(s, idx), inst.n, inst.m,
                               alt.data());
                }
            }
            for (std::size_t r = 0; r < inst.n; ++r) {
                report.max_conditional_mean_gap = std::max(
                    report.max_conditional_mean_gap, std::abs(alt[r] + x[r] - yhat[r]));
            }

            double gap = 0.0, scale = 0.0;
            for (std::size_t r = 0; r < inst.n; ++r) {
                gap = std::max(gap, std::abs(y4[r] - y3[r]));
                scale = std::max(scale, std::abs(y3[r]));
            }
            report.max_discrepancy = std::max(report.max_discrepancy, gap);
            report.state_scale = std::max(report.state_scale, scale);

            if (k == inst.N) break;
            // advance x with the recorded controls and draws
            std::fill(step.begin(), step.end(), 0.0);
            for (std::size_t r = 0; r < inst.n; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < inst.n; ++c) acc += inst.A[r * inst.n + c] * x[c];
                step[r] = acc * inst.grid.dt;
            }
            for (std::size_t i = 0; i < inst.nchan; ++i) {
                const double* ul = engine.u_at(s, k - inst.d[i]);
                axpy_block(inst.B[i].data(), ul, inst.n, inst.m, step.data(), inst.grid.dt);
                axpy_block(inst.Bb[i].data(), ul, inst.n, inst.m, step.data(),
                           s.dW[i * inst.Ntot + k]);
            }
            for (std::size_t r = 0; r < inst.n; ++r) x[r] += step[r];
            replay.push_raw(engine.u_at(s, k));

            // advance y4: dy = (A y + B u) dt + sum e^{-A h_i} Bbar_i u dW_i(t + h_i)
            std::fill(step.begin(), step.end(), 0.0);
            for (std::size_t r = 0; r < inst.n; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < inst.n; ++c) acc += inst.A[r * inst.n + c] * y4[c];
                step[r] = acc * inst.grid.dt;
            }
            const double* uk = engine.u_at(s, k);
            for (std::size_t r = 0; r < inst.n; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < inst.m; ++c) acc += maps.B(r, c) * uk[c];
                step[r] += acc * inst.grid.dt;
            }
            for (std::size_t i = 0; i < inst.nchan; ++i) {
                const double dw = s.dW[i * inst.Ntot + (k + inst.d[i])];
                for (std::size_t r = 0; r < inst.n; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < inst.m; ++c) acc += maps.E[i](r, c) * uk[c];
                    step[r] += acc * dw;
                }
            }
            for (std::size_t r = 0; r < inst.n; ++r) y4[r] += step[r];
        }
    }
    return report;
}

}  // namespace delay_lqr
