#include "delay_lqr/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace delay_lqr {

using nlohmann::json;

namespace {

const char* kGainConvention =
    "u(t) = K yhat(t|t) with K = -Omega^{-1} B' Phat (negative feedback); "
    "time in the system's units, delays and horizons on the same clock";

json matrix_to_json(const Matrix& M) {
    json rows = json::array();
    for (std::size_t r = 0; r < M.rows(); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty() || !j.front().is_array()) {
        throw ConfigError(field + ": expected a nested array (row-major matrix)");
    }
    const std::size_t rows = j.size();
    const std::size_t cols = j.front().size();
    Matrix M(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols) {
            throw ConfigError(field + ": ragged matrix rows");
        }
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[r][c].is_number()) throw ConfigError(field + ": non-numeric entry");
            M(r, c) = j[r][c].get<double>();
        }
    }
    return M;
}

Matrix vector_from_json(const json& j, const std::string& field) {
    if (!j.is_array() || j.empty()) throw ConfigError(field + ": expected an array");
    Matrix v(j.size(), 1);
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_number()) throw ConfigError(field + ": non-numeric entry");
        v(r, 0) = j[r].get<double>();
    }
    return v;
}

json vector_to_json(const Matrix& v) {
    json arr = json::array();
    for (std::size_t r = 0; r < v.rows(); ++r) arr.push_back(v(r, 0));
    return arr;
}

const json& need(const json& j, const char* key, const char* where) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(std::string(where) + ": missing field '" + key + "'");
    return *it;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << text;
}

}  // namespace

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ProblemConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    ProblemConfig cfg;
    const json& sys_j = need(j, "system", "config");
    cfg.system.A = matrix_from_json(need(sys_j, "A", "system"), "system.A");
    for (const json& cj : need(sys_j, "channels", "system")) {
        Channel c;
        c.B = matrix_from_json(need(cj, "B", "channel"), "channel.B");
        c.Bbar = matrix_from_json(need(cj, "Bbar", "channel"), "channel.Bbar");
        c.h = need(cj, "h", "channel").get<double>();
        cfg.system.channels.push_back(std::move(c));
    }
    try {
        cfg.system = validate_system(std::move(cfg.system));
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("system: ") + e.what());
    }
    const std::size_t n = cfg.system.state_dim();
    const std::size_t m = cfg.system.input_dim();

    const json& cost_j = need(j, "cost", "config");
    cfg.cost.Q = matrix_from_json(need(cost_j, "Q", "cost"), "cost.Q");
    cfg.cost.R = matrix_from_json(need(cost_j, "R", "cost"), "cost.R");
    cfg.cost.H = matrix_from_json(need(cost_j, "H", "cost"), "cost.H");
    cfg.cost.T = need(cost_j, "T", "cost").get<double>();
    try {
        validate_cost(cfg.cost, n, m);
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("cost: ") + e.what());
    }

    if (auto it = j.find("discount"); it != j.end()) {
        cfg.discount.alpha = need(*it, "alpha", "discount").get<double>();
        if (!(cfg.discount.alpha >= 0.0) || !std::isfinite(cfg.discount.alpha)) {
            throw ConfigError("discount.alpha: must be finite and >= 0");
        }
    }

    const json& sim_j = need(j, "sim", "config");
    cfg.sim.dt = need(sim_j, "dt", "sim").get<double>();
    cfg.sim.T_sim = need(sim_j, "T_sim", "sim").get<double>();
    cfg.sim.paths = need(sim_j, "paths", "sim").get<long>();
    cfg.sim.master_seed = need(sim_j, "seed", "sim").get<std::uint64_t>();
    cfg.sim.x0 = vector_from_json(need(sim_j, "x0", "sim"), "sim.x0");
    if (cfg.sim.x0.rows() != n) throw ConfigError("sim.x0: wrong dimension");
    if (cfg.sim.paths < 1) throw ConfigError("sim.paths: must be >= 1");

    const json& pre_j = need(sim_j, "prefill", "sim");
    const std::string kind = need(pre_j, "type", "prefill").get<std::string>();
    if (kind == "zero") {
        cfg.sim.prefill.kind = Prefill::Kind::Zero;
    } else if (kind == "constant") {
        cfg.sim.prefill.kind = Prefill::Kind::Constant;
        cfg.sim.prefill.constant = vector_from_json(need(pre_j, "value", "prefill"), "prefill.value");
        if (cfg.sim.prefill.constant.rows() != m) throw ConfigError("prefill.value: wrong dimension");
    } else if (kind == "samples") {
        cfg.sim.prefill.kind = Prefill::Kind::Samples;
        for (const json& sj : need(pre_j, "samples", "prefill")) {
            cfg.sim.prefill.samples.push_back(vector_from_json(sj, "prefill.samples[]"));
        }
    } else {
        throw ConfigError("prefill.type: expected zero | constant | samples");
    }

    if (auto it = j.find("gain"); it != j.end()) {
        GainBlock g;
        g.K = matrix_from_json(need(*it, "K", "gain"), "gain.K");
        if (g.K.rows() != m || g.K.cols() != n) throw ConfigError("gain.K: must be m x n");
        if (it->contains("alpha")) g.alpha = (*it)["alpha"].get<double>();
        cfg.gain = std::move(g);
    }

    if (auto it = j.find("output"); it != j.end()) {
        if (it->contains("dir")) cfg.output.dir = (*it)["dir"].get<std::string>();
        if (it->contains("formats")) {
            cfg.output.formats.clear();
            for (const json& f : (*it)["formats"]) cfg.output.formats.push_back(f.get<std::string>());
        }
    }

    // grid commensurability is part of config validity
    try {
        build_grid(cfg.system, cfg.cost.T, cfg.sim.dt);
        if (cfg.sim.T_sim > 0.0) build_grid(cfg.system, cfg.sim.T_sim, cfg.sim.dt);
    } catch (const GridError& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
    // prefill sample count must cover [-h_r, 0)
    if (cfg.sim.prefill.kind == Prefill::Kind::Samples) {
        const long dr = build_grid(cfg.system, cfg.cost.T, cfg.sim.dt).max_delay_steps();
        if (static_cast<long>(cfg.sim.prefill.samples.size()) != dr) {
            throw ConfigError("prefill.samples: need one sample per grid cell of [-h_r, 0)");
        }
        for (const Matrix& s : cfg.sim.prefill.samples) {
            if (s.rows() != m) throw ConfigError("prefill.samples: wrong dimension");
        }
    }
    return cfg;
}

ProblemConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string emit_config(const ProblemConfig& cfg) {
    json j;
    j["system"]["A"] = matrix_to_json(cfg.system.A);
    j["system"]["channels"] = json::array();
    for (const Channel& c : cfg.system.channels) {
        json cj;
        cj["B"] = matrix_to_json(c.B);
        cj["Bbar"] = matrix_to_json(c.Bbar);
        cj["h"] = c.h;
        j["system"]["channels"].push_back(std::move(cj));
    }
    j["cost"] = {{"Q", matrix_to_json(cfg.cost.Q)},
                 {"R", matrix_to_json(cfg.cost.R)},
                 {"H", matrix_to_json(cfg.cost.H)},
                 {"T", cfg.cost.T}};
    j["discount"] = {{"alpha", cfg.discount.alpha}};
    json pre;
    switch (cfg.sim.prefill.kind) {
        case Prefill::Kind::Zero:
            pre["type"] = "zero";
            break;
        case Prefill::Kind::Constant:
            pre["type"] = "constant";
            pre["value"] = vector_to_json(cfg.sim.prefill.constant);
            break;
        case Prefill::Kind::Samples: {
            pre["type"] = "samples";
            pre["samples"] = json::array();
            for (const Matrix& s : cfg.sim.prefill.samples) pre["samples"].push_back(vector_to_json(s));
            break;
        }
    }
    j["sim"] = {{"dt", cfg.sim.dt},     {"T_sim", cfg.sim.T_sim}, {"paths", cfg.sim.paths},
                {"seed", cfg.sim.master_seed}, {"x0", vector_to_json(cfg.sim.x0)},
                {"prefill", std::move(pre)}};
    if (cfg.gain) {
        j["gain"] = {{"K", matrix_to_json(cfg.gain->K)}, {"alpha", cfg.gain->alpha}};
    }
    j["output"] = {{"dir", cfg.output.dir}, {"formats", cfg.output.formats}};
    return j.dump(2) + "\n";
}

void write_riccati_csv(const std::string& path, const RiccatiSolution& sol) {
    const std::size_t n = sol.P.front().rows();
    const std::size_t m = sol.K.front().rows();
    std::ostringstream out;
    out << "t";
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) out << ",Phat_" << r << c;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) out << ",P_" << r << c;
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out << ",K_" << r << c;
    out << ",min_eig_Omega\n";
    for (std::size_t k = 0; k < sol.P.size(); ++k) {
        out << format_g17(sol.time_at(k));
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) out << "," << format_g17(sol.Phat[k](r, c));
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) out << "," << format_g17(sol.P[k](r, c));
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) out << "," << format_g17(sol.K[k](r, c));
        out << "," << format_g17(min_eigenvalue(sol.Omega[k])) << "\n";
    }
    write_file(path, out.str());
}

void write_summary_json(const std::string& path, const ProblemConfig& cfg,
                        const RiccatiSolution& sol) {
    json j;
    j["conventions"] = kGainConvention;
    j["alpha"] = sol.alpha;
    j["grid"] = {{"dt", sol.grid.dt}, {"horizon_steps", sol.grid.horizon_steps}};
    j["predicted_cost"] = {
        {"zero_prefill", predicted_cost(sol, cfg.sim.x0, true)},
        {"zero_through_hr", predicted_cost(sol, cfg.sim.x0, false)},
    };
    j["initial"] = {{"min_eig_Phat", min_eigenvalue(sol.Phat.front())},
                    {"min_eig_P_minus_Phat", min_eigenvalue(sol.P.front() - sol.Phat.front())},
                    {"K", matrix_to_json(sol.K.front())}};
    j["terminal"] = {{"min_eig_Omega", min_eigenvalue(sol.Omega.back())},
                     {"K", matrix_to_json(sol.K.back())}};
    write_file(path, j.dump(2) + "\n");
}

void write_certificate_json(const std::string& path, const SteadyGain& gain, double alpha_max) {
    json j;
    j["conventions"] = kGainConvention;
    j["alpha_max"] = alpha_max;
    j["alpha"] = gain.alpha;
    j["Phat"] = matrix_to_json(gain.Phat);
    j["P"] = matrix_to_json(gain.P);
    j["K"] = matrix_to_json(gain.K);
    j["Omega"] = matrix_to_json(gain.Omega);
    j["residual"] = gain.residual;
    j["iterations"] = gain.iterations;
    j["min_eig_Phat"] = min_eigenvalue(gain.Phat);
    write_file(path, j.dump(2) + "\n");
}

Certificate load_certificate(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open certificate: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("certificate is not valid JSON: ") + e.what());
    }
    Certificate c;
    c.alpha_max = need(j, "alpha_max", "certificate").get<double>();
    c.K = matrix_from_json(need(j, "K", "certificate"), "certificate.K");
    c.Phat = matrix_from_json(need(j, "Phat", "certificate"), "certificate.Phat");
    c.P = matrix_from_json(need(j, "P", "certificate"), "certificate.P");
    c.residual = need(j, "residual", "certificate").get<double>();
    c.iterations = need(j, "iterations", "certificate").get<long>();
    return c;
}

void write_trajectories_csv(const std::string& path, const SimResult& res) {
    std::ostringstream out;
    out << "t,mean_sq_x,stderr_x,mean_sq_u,stderr_u\n";
    for (std::size_t k = 0; k < res.times.size(); ++k) {
        out << format_g17(res.times[k]) << "," << format_g17(res.mean_sq_x[k]) << ","
            << format_g17(res.stderr_sq_x[k]) << "," << format_g17(res.mean_sq_u[k]) << ","
            << format_g17(res.stderr_sq_u[k]) << "\n";
    }
    write_file(path, out.str());
}

void write_sim_summary_json(const std::string& path, const ProblemConfig& cfg,
                            const SimResult& res) {
    json j;
    j["conventions"] = kGainConvention;
    j["cost_coordinates"] = "y (reduced state), discounted by exp(-alpha t)";
    j["cost_mean"] = res.cost_mean;
    j["cost_stderr"] = res.cost_stderr;
    if (res.rate_valid) {
        j["fitted_rate"] = res.fitted_rate;
    } else {
        j["fitted_rate"] = nullptr;
    }
    j["divergence_ratio"] = res.divergence_ratio;
    j["paths"] = cfg.sim.paths;
    j["paths_used"] = res.paths_used;
    j["seed"] = cfg.sim.master_seed;
    j["dt"] = cfg.sim.dt;
    j["T_sim"] = cfg.sim.T_sim;
    write_file(path, j.dump(2) + "\n");
}

void write_oracle_csv(const std::string& path, const std::vector<OracleComparison>& rows,
                      const std::vector<double>& dts) {
    std::ostringstream out;
    out << "dt,continuous_cost,discrete_cost,rel_error\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out << format_g17(dts[i]) << "," << format_g17(rows[i].continuous_cost) << ","
            << format_g17(rows[i].discrete_cost) << "," << format_g17(rows[i].rel_error) << "\n";
    }
    write_file(path, out.str());
}

}  // namespace delay_lqr
