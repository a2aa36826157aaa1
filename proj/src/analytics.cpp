#include "tensorpool/analytics.hpp"

#include <cmath>

namespace tensorpool {

using nlohmann::json;

std::string to_string(Convention c) { return c == Convention::Flops ? "flops" : "macs"; }

Convention parse_convention(const std::string& s) {
    if (s == "macs") return Convention::Macs;
    if (s == "flops") return Convention::Flops;
    throw ConfigError("unknown convention: " + s + " (expected macs or flops)");
}

json BalanceReport::to_json() const {
    return json{{"name", name},
                {"convention", to_string(convention)},
                {"wk", wk},
                {"q_m", q_m},
                {"pi", pi},
                {"beta", beta},
                {"t_compute", t_compute},
                {"t_transfer", t_transfer},
                {"operational_intensity", operational_intensity},
                {"threshold", threshold},
                {"holds", holds}};
}

namespace {

void finish(BalanceReport& r) {
    r.t_compute = r.wk / r.pi;
    r.t_transfer = r.q_m / r.beta;
    r.operational_intensity = r.wk / r.q_m;
    r.threshold = r.pi / r.beta;
    r.holds = r.t_compute >= r.t_transfer;
}

double pool_macs_per_cycle(const ClusterConfig& cfg) {
    return static_cast<double>(cfg.num_tes()) * cfg.te_macs_per_cycle();
}

}  // namespace

BalanceReport l2_balance(std::uint64_t n, const ClusterConfig& cfg, Convention conv) {
    if (n == 0) throw ConfigError("l2_balance needs n > 0");
    BalanceReport r;
    r.name = "l2_balance";
    r.convention = conv;
    const double nd = static_cast<double>(n);
    r.wk = nd * nd * nd;
    // X, W, Y in and Z out, n^2 elements each.
    r.q_m = 4.0 * cfg.element_bytes * nd * nd;
    r.pi = pool_macs_per_cycle(cfg) * (conv == Convention::Flops ? 2.0 : 1.0);
    r.beta = static_cast<double>(cfg.l2_bw_bytes_per_cycle_per_subgroup) * cfg.num_subgroups();
    finish(r);
    return r;
}

std::optional<std::uint64_t> l2_balance_crossover(const ClusterConfig& cfg, Convention conv, std::uint64_t limit) {
    for (std::uint64_t n = 1; n <= limit; ++n) {
        if (l2_balance(n, cfg, conv).holds) return n;
    }
    return std::nullopt;
}

BalanceReport l1_tile_balance(std::uint64_t n, const ClusterConfig& cfg, bool drop_constant) {
    if (n == 0) throw ConfigError("l1_tile_balance needs n > 0");
    BalanceReport r;
    r.name = "l1_tile_balance";
    const double nd = static_cast<double>(n);
    const double rows = cfg.te_rows;
    const double cols = cfg.te_tile_cols();
    r.wk = rows * nd * cols;
    r.q_m = cfg.element_bytes * (rows * nd + nd * cols + (drop_constant ? 0.0 : rows * cols));
    r.pi = cfg.te_macs_per_cycle();
    r.beta = cfg.wide_bytes();
    finish(r);
    return r;
}

double l1_tile_asymptotic_intensity(const ClusterConfig& cfg) {
    const double rows = cfg.te_rows;
    const double cols = cfg.te_tile_cols();
    return rows * cols / (cfg.element_bytes * (rows + cols));
}

json RemoteBandwidthModel::to_json() const {
    return json{{"p_loc", p_loc},
                {"p_rem", p_rem},
                {"p_star", p_star},
                {"beta_loc", beta_loc},
                {"beta_port", beta_port},
                {"beta_star", beta_star},
                {"beta", beta},
                {"pi_te", pi_te},
                {"required_intensity", required_intensity},
                {"available_intensity", available_intensity},
                {"memory_bound", memory_bound}};
}

RemoteBandwidthModel remote_balance(const ClusterConfig& cfg) {
    cfg.validate();
    RemoteBandwidthModel m;
    const double nb = cfg.num_banks();
    const double nb_tile = cfg.banks_per_tile;
    const double nb_group = cfg.banks_per_group();
    const double ng = cfg.groups;
    const double nsg = cfg.subgroups_per_group;
    m.p_loc = nb_tile / nb;
    m.p_rem = 1.0 - m.p_loc;
    // Two requests collide on a remote port if both go to the same remote
    // Group, or both go to the same SubGroup of their own Group.
    m.p_star = ((ng - 1.0) * nb_group / nb) * std::pow(1.0 / ng, 3) + (nb_group / nb) * std::pow(1.0 / (ng * nsg), 3);
    m.beta_loc = cfg.wide_bytes();
    m.beta_port = 4.0 * cfg.response_group_K;
    m.beta_star = m.p_star * m.beta_port + (1.0 - m.p_star) * 2.0 * m.beta_port;
    m.beta = m.p_loc * m.beta_loc + m.p_rem * m.beta_star;
    m.pi_te = cfg.te_macs_per_cycle();
    m.required_intensity = m.pi_te / m.beta;
    m.available_intensity = l1_tile_asymptotic_intensity(cfg);
    m.memory_bound = m.required_intensity > m.available_intensity;
    return m;
}

json BisectionWires::to_json() const {
    return json{{"n", n},
                {"request_bits", request_bits},
                {"response_bits", response_bits},
                {"group_pairs", group_pairs},
                {"ports_per_pair", ports_per_pair},
                {"formula", formula}};
}

BisectionWires compute_bisection_wires(const ClusterConfig& cfg) {
    cfg.validate();
    BisectionWires w;
    // Request: 32-bit address, J words of 32 data + 4 strobe bits, 3 control.
    w.request_bits = 32 + 36 * cfg.request_widen_J + 3;
    // Response: K grouped 32-bit words, valid and last.
    w.response_bits = 32 * cfg.response_group_K + 2;
    w.group_pairs = std::uint64_t{cfg.groups} * (cfg.groups - 1) / 2;
    w.ports_per_pair = 2ull * cfg.tiles_per_group();
    w.n = w.group_pairs * w.ports_per_pair * (w.request_bits + w.response_bits);
    w.formula = "N = G(G-1)/2 * 2*tiles_per_group * ((32 + 36J + 3) + (32K + 2))";
    return w;
}

json ChannelAreaModel::to_json() const {
    return json{{"n_wires", in.n_wires},
                {"p_2d_nm", in.p_2d_nm},
                {"n_metal", in.n_metal},
                {"p_3d_um", in.p_3d_um},
                {"group_side_mm", in.group_side_mm},
                {"printed_form", in.printed_form},
                {"w_2d_mm", w_2d_mm},
                {"w_3d_mm", w_3d_mm},
                {"a_2d_mm2", a_2d_mm2},
                {"a_3d_mm2", a_3d_mm2},
                {"reduction", reduction}};
}

ChannelAreaModel channel_area(const ChannelInputs& in) {
    if (in.n_wires <= 0) throw ConfigError("channel_area needs N > 0");
    if (in.p_2d_nm <= 0 || in.p_3d_um <= 0 || in.n_metal <= 0) throw ConfigError("channel_area needs positive pitches");
    if (in.group_side_mm < 0) throw ConfigError("channel_area needs L >= 0");
    ChannelAreaModel m;
    m.in = in;
    const double p2d_mm = in.p_2d_nm * 1e-6;
    const double p3d_mm = in.p_3d_um * 1e-3;
    m.w_2d_mm = in.n_wires * p2d_mm / (in.printed_form ? 1.0 : in.n_metal);
    m.a_2d_mm2 = 4.0 * in.group_side_mm * m.w_2d_mm + m.w_2d_mm * m.w_2d_mm;
    m.a_3d_mm2 = 2.0 * in.n_wires * p3d_mm * p3d_mm;
    m.w_3d_mm = in.group_side_mm > 0 ? m.a_3d_mm2 / in.group_side_mm : 0.0;
    m.reduction = 1.0 - m.a_3d_mm2 / m.a_2d_mm2;
    return m;
}

double fit_group_side(double a_2d_mm2, double n_wires, double p_2d_nm, double n_metal) {
    const double w = n_wires * p_2d_nm * 1e-6 / n_metal;
    const double l = (a_2d_mm2 - w * w) / (4.0 * w);
    if (!(l > 0)) throw ConfigError("no positive group side reproduces the requested 2D area");
    return l;
}

ChannelAreaModel default_channel_area(const ClusterConfig& cfg, const MeasuredChannel& measured, bool printed_form) {
    ChannelInputs in;
    in.n_wires = static_cast<double>(compute_bisection_wires(cfg).n);
    in.group_side_mm = fit_group_side(measured.a_2d_mm2, in.n_wires, in.p_2d_nm, in.n_metal);
    in.printed_form = printed_form;
    return channel_area(in);
}

json analysis_report(const ClusterConfig& cfg, Convention conv, bool channel) {
    json doc;
    doc["convention"] = to_string(conv);
    doc["l2_balance"] = l2_balance(512, cfg, conv).to_json();
    const auto cross = l2_balance_crossover(cfg, conv);
    doc["l2_balance_crossover_n"] = cross ? json(*cross) : json(nullptr);
    doc["l1_tile_balance"] = l1_tile_balance(16, cfg).to_json();
    doc["l1_tile_asymptotic_intensity"] = l1_tile_asymptotic_intensity(cfg);
    doc["remote_balance"] = remote_balance(cfg).to_json();
    const BisectionWires w = compute_bisection_wires(cfg);
    doc["bisection_wires"] = w.to_json();
    if (channel && w.n > 0) {
        const MeasuredChannel measured;
        doc["channel_area"] = default_channel_area(cfg, measured).to_json();
        doc["channel_area_printed_form"] = default_channel_area(cfg, measured, true).to_json();
        doc["measured_channel"] = {{"a_2d_mm2", measured.a_2d_mm2},
                                   {"a_3d_per_die_mm2", measured.a_3d_per_die_mm2},
                                   {"reduction", measured.reduction()}};
    }
    return doc;
}

}  // namespace tensorpool
