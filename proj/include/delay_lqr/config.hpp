#pragma once

#include <optional>
#include <string>
#include <vector>

#include "delay_lqr/model.hpp"
#include "delay_lqr/oracle.hpp"
#include "delay_lqr/riccati.hpp"
#include "delay_lqr/sim.hpp"

namespace delay_lqr {

/// Optional explicit feedback gain carried by a config (used by `simulate`
/// when no certificate is available).
struct GainBlock {
    Matrix K;
    double alpha = 0.0;
};

struct OutputBlock {
    std::string dir = ".";
    std::vector<std::string> formats = {"csv", "json"};
};

/// One JSON document holding the whole problem: system, cost, discount, sim
/// and output blocks; matrices are row-major nested arrays.
struct ProblemConfig {
    StochasticDelaySystem system;
    CostSpec cost;
    DiscountSpec discount;
    SimConfig sim;
    std::optional<GainBlock> gain;
    OutputBlock output;
};

/// Parses and validates a config: the system passes validate_system, the
/// cost weights are checked, and dt must be commensurate with the delays and
/// horizon. Throws ConfigError with the offending field in the message.
ProblemConfig load_config(const std::string& path);
ProblemConfig parse_config(const std::string& json_text);

/// Serializes back to JSON (round-trips through parse_config bit-exactly).
std::string emit_config(const ProblemConfig& cfg);

// ---- artifact writers (CSV numbers at 17 significant digits) ----

void write_riccati_csv(const std::string& path, const RiccatiSolution& sol);
void write_summary_json(const std::string& path, const ProblemConfig& cfg,
                        const RiccatiSolution& sol);
void write_certificate_json(const std::string& path, const SteadyGain& gain, double alpha_max);
void write_trajectories_csv(const std::string& path, const SimResult& res);
void write_sim_summary_json(const std::string& path, const ProblemConfig& cfg,
                            const SimResult& res);
void write_oracle_csv(const std::string& path, const std::vector<OracleComparison>& rows,
                      const std::vector<double>& dts);

/// Reads a certificate back (for `simulate` after `certify`).
struct Certificate {
    double alpha_max = 0.0;
    Matrix K;
    Matrix Phat;
    Matrix P;
    double residual = 0.0;
    long iterations = 0;
};
Certificate load_certificate(const std::string& path);

/// Formats one double exactly as the CSV writers do.
std::string format_g17(double v);

}  // namespace delay_lqr
