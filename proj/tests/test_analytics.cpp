#include <catch_amalgamated.hpp>

#include <cmath>

#include "tensorpool/analytics.hpp"

using namespace tensorpool;
using Catch::Approx;

TEST_CASE("L2 balance at n = 512") {
    const ClusterConfig cfg;
    const BalanceReport m = l2_balance(512, cfg);
    CHECK(m.wk == 134217728.0);
    CHECK(m.q_m == 2097152.0);
    CHECK(m.pi == 4096.0);
    CHECK(m.beta == 1024.0);
    CHECK(m.t_compute == 32768.0);
    CHECK(m.t_transfer == 2048.0);
    CHECK(m.operational_intensity == 64.0);
    CHECK(m.threshold == 4.0);
    CHECK(m.holds);

    const BalanceReport f = l2_balance(512, cfg, Convention::Flops);
    CHECK(f.pi == 8192.0);
    CHECK(f.t_compute == 16384.0);
    CHECK(f.threshold == 8.0);
    CHECK(parse_convention(to_string(Convention::Flops)) == Convention::Flops);
    CHECK_THROWS_AS(parse_convention("ops"), ConfigError);
}

TEST_CASE("L2 balance crossover") {
    const ClusterConfig cfg;
    CHECK(l2_balance_crossover(cfg, Convention::Macs) == 32u);
    CHECK(l2_balance_crossover(cfg, Convention::Flops) == 64u);
    CHECK_FALSE(l2_balance(31, cfg).holds);
    CHECK(l2_balance(32, cfg).holds);
    CHECK_FALSE(l2_balance_crossover(cfg, Convention::Flops, 32).has_value());
    double prev = 0;
    for (std::uint64_t n = 1; n <= 1024; n *= 2) {
        const double i = l2_balance(n, cfg).operational_intensity;
        CHECK(i > prev);
        prev = i;
    }
}

TEST_CASE("L1 tile balance at n = 16 sits exactly on the threshold") {
    const ClusterConfig cfg;
    const BalanceReport b = l1_tile_balance(16, cfg);
    CHECK(b.wk == 32.0 * 16 * 32);
    CHECK(b.q_m == 2.0 * (32 * 16 + 16 * 32 + 32 * 32));
    CHECK(b.pi == 256.0);
    CHECK(b.beta == 64.0);
    CHECK(b.operational_intensity == 4.0);
    CHECK(b.threshold == 4.0);
    CHECK(b.holds);
    CHECK_FALSE(l1_tile_balance(8, cfg).holds);
    CHECK(l1_tile_balance(16, cfg, true).q_m == 2.0 * (32 * 16 + 16 * 32));
    CHECK(l1_tile_asymptotic_intensity(cfg) == Approx(8.0));
    CHECK(l1_tile_balance(1 << 20, cfg).operational_intensity == Approx(8.0).epsilon(1e-4));
}

TEST_CASE("remote bandwidth model") {
    const ClusterConfig cfg;
    const RemoteBandwidthModel m = remote_balance(cfg);
    const double p = 0.75 / 64.0 + 0.25 / 4096.0;
    CHECK(m.p_star == Approx(p).epsilon(1e-12));
    CHECK(m.p_star == Approx(0.01177978515625));
    CHECK(m.p_loc == 1.0 / 64);
    CHECK(m.beta_port == 16.0);
    const double beta_star = p * 16 + (1 - p) * 32;
    CHECK(m.beta_star == Approx(beta_star));
    CHECK(m.beta == Approx(1.0 + 63.0 / 64 * beta_star));
    CHECK(m.required_intensity == Approx(256.0 / (1.0 + 63.0 / 64 * beta_star)));
    CHECK(m.required_intensity < 8.0);
    CHECK_FALSE(m.memory_bound);

    ClusterConfig k1;
    k1.response_group_K = 1;
    const RemoteBandwidthModel b = remote_balance(k1);
    CHECK(b.memory_bound);
    CHECK(b.beta < m.beta);
}

TEST_CASE("bisection wire count") {
    const ClusterConfig cfg;
    const BisectionWires w = compute_bisection_wires(cfg);
    CHECK(w.request_bits == 107);
    CHECK(w.response_bits == 130);
    CHECK(w.group_pairs == 6);
    CHECK(w.ports_per_pair == 32);
    CHECK(w.n == 45504);

    ClusterConfig k1j1;
    k1j1.response_group_K = 1;
    k1j1.request_widen_J = 1;
    const BisectionWires b = compute_bisection_wires(k1j1);
    CHECK(b.n == 6u * 32 * (71 + 34));
    CHECK(static_cast<double>(w.n) / b.n == Approx(237.0 / 105.0));
}

TEST_CASE("channel area model") {
    ChannelInputs in;
    in.n_wires = 45504;
    in.group_side_mm = 1.0;
    const ChannelAreaModel a = channel_area(in);
    const double w = 45504 * 80e-6 / 3;
    CHECK(a.w_2d_mm == Approx(w));
    CHECK(a.a_2d_mm2 == Approx(4 * w + w * w));
    CHECK(a.a_3d_mm2 == Approx(2 * 45504 * 4.5e-3 * 4.5e-3));
    CHECK(a.w_3d_mm == Approx(a.a_3d_mm2 / 1.0));
    CHECK(a.reduction == Approx(1 - a.a_3d_mm2 / a.a_2d_mm2));

    ChannelInputs wide = in;
    wide.p_3d_um = 9.0;
    CHECK(channel_area(wide).a_3d_mm2 == Approx(4 * a.a_3d_mm2));

    ChannelInputs printed = in;
    printed.printed_form = true;
    CHECK(channel_area(printed).w_2d_mm == Approx(3 * w));

    ChannelInputs bad = in;
    bad.n_metal = 0;
    CHECK_THROWS_AS(channel_area(bad), ConfigError);
    bad = in;
    bad.n_wires = -1;
    CHECK_THROWS_AS(channel_area(bad), ConfigError);
}

TEST_CASE("fitted group side reproduces the measured 2D area") {
    const ClusterConfig cfg;
    const double l = fit_group_side(5.59, 45504, 80, 3);
    const double w = 45504 * 80e-6 / 3;
    CHECK(4 * l * w + w * w == Approx(5.59));
    const ChannelAreaModel a = default_channel_area(cfg);
    CHECK(a.in.group_side_mm == Approx(l));
    CHECK(a.a_2d_mm2 == Approx(5.59));
    CHECK(a.reduction == Approx(1 - 2 * 45504 * 4.5e-3 * 4.5e-3 / 5.59));
    CHECK(std::abs(a.reduction - MeasuredChannel{}.reduction()) < 0.01);
}

TEST_CASE("analysis report carries every section") {
    const nlohmann::json doc = analysis_report(ClusterConfig{}, Convention::Macs, true);
    for (const char* k : {"l2_balance", "l2_balance_crossover_n", "l1_tile_balance", "l1_tile_asymptotic_intensity",
                          "remote_balance", "bisection_wires", "channel_area", "channel_area_printed_form",
                          "measured_channel"}) {
        CHECK(doc.contains(k));
    }
    CHECK_FALSE(analysis_report(ClusterConfig{}, Convention::Macs, false).contains("channel_area"));
}
