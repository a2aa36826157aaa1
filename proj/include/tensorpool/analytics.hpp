#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "tensorpool/config.hpp"

namespace tensorpool {

/// How compute throughput is counted. Macs: pi in MACs/cycle. Flops: the
/// L2 equation is evaluated with a 2-FLOP MAC denominator (8192 at defaults).
enum class Convention { Macs, Flops };

std::string to_string(Convention c);
Convention parse_convention(const std::string& s);

struct BalanceReport {
    std::string name;
    Convention convention = Convention::Macs;
    double wk = 0;          ///< MACs
    double q_m = 0;         ///< bytes in flight
    double pi = 0;          ///< per cycle, in the chosen convention
    double beta = 0;        ///< bytes/cycle
    double t_compute = 0;   ///< cycles
    double t_transfer = 0;  ///< cycles
    double operational_intensity = 0;  ///< wk / q_m
    double threshold = 0;              ///< pi / beta
    bool holds = false;

    nlohmann::json to_json() const;
};

/// Square n x n x n GEMM streamed from L2 into the whole pool.
BalanceReport l2_balance(std::uint64_t n, const ClusterConfig& cfg, Convention conv = Convention::Macs);

/// Smallest n in [1, limit] for which l2_balance holds, if any.
std::optional<std::uint64_t> l2_balance_crossover(const ClusterConfig& cfg, Convention conv = Convention::Macs,
                                                  std::uint64_t limit = 512);

/// One TE inner loop over a dot product of length n, fed through its local
/// wide port. `drop_constant` removes the output-tile term from q_m.
BalanceReport l1_tile_balance(std::uint64_t n, const ClusterConfig& cfg, bool drop_constant = false);

/// wk/q_m of l1_tile_balance as n grows without bound.
double l1_tile_asymptotic_intensity(const ClusterConfig& cfg);

struct RemoteBandwidthModel {
    double p_loc = 0;
    double p_rem = 0;
    double p_star = 0;      ///< probability two wide requests target the same remote port
    double beta_loc = 0;    ///< bytes/cycle
    double beta_port = 0;   ///< bytes/cycle
    double beta_star = 0;   ///< bytes/cycle, remote port shared with probability p_star
    double beta = 0;        ///< bytes/cycle, expected
    double pi_te = 0;       ///< MACs/cycle
    double required_intensity = 0;  ///< pi_te / beta
    double available_intensity = 0; ///< asymptotic TE intensity
    bool memory_bound = false;

    nlohmann::json to_json() const;
};

RemoteBandwidthModel remote_balance(const ClusterConfig& cfg);

struct BisectionWires {
    std::uint64_t n = 0;
    std::uint32_t request_bits = 0;   ///< per port and direction
    std::uint32_t response_bits = 0;
    std::uint64_t group_pairs = 0;
    std::uint64_t ports_per_pair = 0;
    std::string formula;

    nlohmann::json to_json() const;
};

/// Wires between Groups implied by the request width (J) and response
/// grouping (K): every Group pair has one request and one response channel
/// per tile and direction.
BisectionWires compute_bisection_wires(const ClusterConfig& cfg);

struct ChannelInputs {
    double n_wires = 0;
    double p_2d_nm = 80.0;
    double n_metal = 3.0;
    double p_3d_um = 4.5;
    double group_side_mm = 0.0;
    /// Omit the n_metal divisor in the 2D width, as in the printed area formula.
    bool printed_form = false;
};

struct ChannelAreaModel {
    ChannelInputs in;
    double w_2d_mm = 0;
    double w_3d_mm = 0;
    double a_2d_mm2 = 0;
    double a_3d_mm2 = 0;
    double reduction = 0;  ///< 1 - a_3d / a_2d

    nlohmann::json to_json() const;
};

ChannelAreaModel channel_area(const ChannelInputs& in);

/// Group side L that makes the 2D channel area equal `a_2d_mm2`.
double fit_group_side(double a_2d_mm2, double n_wires, double p_2d_nm, double n_metal);

/// Place-and-route channel areas used to fit L and to cross-check the model.
struct MeasuredChannel {
    double a_2d_mm2 = 5.59;
    double a_3d_per_die_mm2 = 0.91;
    double reduction() const { return 1.0 - 2.0 * a_3d_per_die_mm2 / a_2d_mm2; }
};

/// Channel model at the config's bisection width with L fitted to `measured`.
ChannelAreaModel default_channel_area(const ClusterConfig& cfg, const MeasuredChannel& measured = {},
                                      bool printed_form = false);

/// Everything the `analyze` subcommand prints, as one document.
nlohmann::json analysis_report(const ClusterConfig& cfg, Convention conv, bool channel);

}  // namespace tensorpool
