// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tensorpool/analytics.hpp"
#include "tensorpool/workloads.hpp"

using namespace tensorpool;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

RunOptions checked() {
    RunOptions o;
    o.cluster.check_bank_exclusivity = true;
    return o;
}

ClusterConfig large_l1(std::uint32_t k = 4, std::uint32_t j = 2) {
    ClusterConfig c;
    c.bank_bytes = 8192;
    c.response_group_K = k;
    c.request_widen_J = j;
    return c;
}

MetricsReport gemm(std::uint32_t n, ParallelMode mode, const ClusterConfig& cfg, bool interleave = true,
                   bool speedup = false) {
    GemmSpec s;
    s.m = s.n = s.k = n;
    s.mode = mode;
    s.interleave_w = interleave;
    s.compute_speedup = speedup;
    return run_gemm(s, cfg, checked());
}

void c1(Outcome& o) {
    const RemoteBandwidthModel m = remote_balance(ClusterConfig{});
    o.detail << "p_star=" << m.p_star << " pi/beta=" << m.required_intensity << " memory_bound=" << m.memory_bound;
    o.expect(std::abs(m.p_star - 0.01178) <= 0.0005, "p_star");
    o.expect(!m.memory_bound, "memory_bound");
}

void c2(Outcome& o) {
    const ClusterConfig cfg;
    const double asym = l1_tile_asymptotic_intensity(cfg);
    const BalanceReport t = l1_tile_balance(16, cfg);
    const BalanceReport mac = l2_balance(512, cfg, Convention::Macs);
    const BalanceReport flop = l2_balance(512, cfg, Convention::Flops);
    o.detail << "asymptotic=" << asym << " pi/beta_loc=" << t.threshold << " t_transfer=" << mac.t_transfer
             << " holds(macs,flops)=" << mac.holds << "," << flop.holds;
    o.expect(asym == 8.0, "asymptotic intensity");
    o.expect(t.threshold == 4.0, "pi/beta_loc");
    o.expect(mac.t_transfer == 2048.0 && flop.t_transfer == 2048.0, "t_transfer");
    o.expect(mac.holds && flop.holds, "l2 holds");
}

void c3(Outcome& o) {
    const std::vector<std::uint32_t> sizes{64, 128, 256, 512, 1024};
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<double>> util;
    for (std::uint32_t k : {1u, 2u, 4u}) {
        for (std::uint32_t j : {1u, 2u}) {
            auto& u = util[{k, j}];
            for (std::uint32_t n : sizes) {
                const MetricsReport r = gemm(n, ParallelMode::SingleTe, large_l1(k, j));
                o.expect(r.valid(), "verification");
                u.push_back(r.te_utilization);
            }
            for (std::size_t i = 1; i < u.size(); ++i) {
                o.expect(u[i] >= u[i - 1], "monotone K=" + std::to_string(k) + " J=" + std::to_string(j));
            }
        }
    }
    const double top = util[{4, 2}].back();
    o.detail << "util@1024 K4J2=" << top;
    o.detail << " K1/K2/K4@1024 (J=2)=" << util[{1, 2}].back() << "/" << util[{2, 2}].back() << "/" << top;
    o.expect(top >= 0.93, "utilization >= 0.93");
    for (std::uint32_t j : {1u, 2u}) {
        o.expect(util[{1, j}].back() < util[{2, j}].back() && util[{2, j}].back() < util[{4, j}].back(),
                 "K strictly increasing at J=" + std::to_string(j));
    }
}

void c4(Outcome& o) {
    const ClusterConfig cfg = large_l1();
    const MetricsReport on = gemm(1024, ParallelMode::RowPartitioned, cfg, true, true);
    const MetricsReport off = gemm(1024, ParallelMode::RowPartitioned, cfg, false);
    o.expect(on.valid() && off.valid(), "verification");
    const double speedup = on.scalars.at("speedup");
    const double gain = on.te_utilization / off.te_utilization - 1.0;
    o.detail << "speedup=" << speedup << " util on/off=" << on.te_utilization << "/" << off.te_utilization
             << " gain@1024=" << 100 * gain << "%";
    o.expect(speedup >= 13.0, "speedup >= 13");
    o.expect(on.te_utilization >= 0.84, "utilization >= 0.84");
    o.expect(on.te_utilization >= off.te_utilization, "on >= off at 1024");
    for (std::uint32_t n : {64u, 128u, 256u, 512u}) {
        const MetricsReport a = gemm(n, ParallelMode::RowPartitioned, cfg, true);
        const MetricsReport b = gemm(n, ParallelMode::RowPartitioned, cfg, false);
        o.expect(a.valid() && b.valid(), "verification");
        o.expect(a.te_utilization >= b.te_utilization, "on >= off at " + std::to_string(n));
    }
    o.expect(gain >= 0.20, "interleave gain >= 20%");
}

void c5(Outcome& o) {
    const KernelLibrary lib = KernelLibrary::defaults();
    std::map<FusedBlock, double> red, util;
    for (FusedBlock b : {FusedBlock::FcSoftmax, FusedBlock::DwsepConv, FusedBlock::Mha}) {
        FusedBlockSpec s;
        s.block = b;
        s.compare_modes = true;
        const MetricsReport r = run_fused_block(s, ClusterConfig{}, lib, checked());
        o.expect(r.valid(), to_string(b) + " verification");
        o.expect(r.scalars.at("outputs_identical") == 1.0, to_string(b) + " outputs identical");
        o.expect(r.scalars.at("concurrent_cycles") <= r.scalars.at("sequential_cycles"), to_string(b) + " concurrent <= sequential");
        red[b] = r.scalars.at("runtime_reduction");
        util[b] = r.scalars.at("concurrent_te_utilization");
        o.detail << to_string(b) << ": reduction=" << 100 * red[b] << "% util=" << util[b] << "  ";
    }
    const double fc = red[FusedBlock::FcSoftmax], conv = red[FusedBlock::DwsepConv], mha = red[FusedBlock::Mha];
    o.expect(fc >= 0.08 && fc <= 0.25, "fc reduction in [8%, 25%]");
    o.expect(conv >= 0.15 && conv <= 0.35, "conv reduction in [15%, 35%]");
    o.expect(mha >= 0.0, "mha reduction >= 0");
    o.expect(util[FusedBlock::DwsepConv] < util[FusedBlock::Mha] && util[FusedBlock::Mha] <= util[FusedBlock::FcSoftmax],
             "utilization ordering conv < mha <= fc");
}

void c6(Outcome& o) {
    const ClusterConfig cfg;
    const MeasuredChannel meas;
    const ChannelAreaModel a = default_channel_area(cfg, meas);
    o.detail << "N=" << a.in.n_wires << " L=" << a.in.group_side_mm << "mm reduction=" << 100 * a.reduction
             << "% measured=" << 100 * meas.reduction() << "%";
    o.expect(a.in.n_wires == static_cast<double>(compute_bisection_wires(cfg).n), "N from bisection wires");
    o.expect(std::abs(a.reduction - 0.663) <= 0.03, "reduction 66.3% +- 3pp");
    o.expect(std::abs(a.reduction - meas.reduction()) <= 0.05, "measured cross-check +- 5pp");
}

void c7(Outcome& o) {
    const ClusterConfig cfg;
    // Burst conservation over random wide reads.
    {
        BankArray banks(cfg);
        Interconnect net(cfg, banks);
        net.record_responses(true);
        std::mt19937_64 rng(99);
        bool ok = true;
        for (std::uint32_t i = 0; i < 1000; ++i) {
            const Addr a = rng() % (cfg.l1_bytes() / 64) * 64;
            MemoryTransaction w;
            w.kind = TxnKind::WideWrite;
            w.base_addr = a;
            w.beats = 16;
            for (auto& d : w.data) d = static_cast<std::uint32_t>(rng());
            const TxnTiming wt = net.issue(w, static_cast<std::uint32_t>(rng() % 64), i);
            MemoryTransaction r;
            r.kind = TxnKind::WideRead;
            r.base_addr = a;
            r.beats = 16;
            r.tag = i;
            const std::size_t before = net.responses().size();
            net.issue(r, static_cast<std::uint32_t>(rng() % 64), wt.complete);
            std::uint32_t mask = 0, beats = 0;
            for (std::size_t k = before; k < net.responses().size(); ++k) {
                const GroupedResponse& g = net.responses()[k];
                for (std::uint32_t b = g.first_beat; b < g.first_beat + g.beat_count; ++b) mask |= 1u << b;
                beats += g.beat_count;
            }
            ok = ok && r.data == w.data && mask == 0xffffu && beats == 16;
        }
        o.expect(ok, "burst conservation");
    }
    // Every simulation in this binary runs with the bank exclusivity check on;
    // a violation throws and fails the criterion that hit it.
    std::uint64_t checks = 0;
    RunOptions opt = checked();
    opt.inspect = [&](Cluster& c) { checks = c.l1().exclusivity_checks(); };
    GemmSpec g;
    g.m = g.n = g.k = 256;
    g.mode = ParallelMode::RowPartitioned;
    o.expect(run_gemm(g, cfg, opt).valid() && checks > 0, "bank exclusivity");
    // Adversarial per-beat delays.
    std::uint64_t ooo = 0;
    opt.inspect = [&](Cluster& c) { ooo = c.te(0).metrics().out_of_order_arrivals; };
    GemmSpec j;
    j.m = j.n = j.k = 128;
    j.beat_jitter = 16;
    o.expect(run_gemm(j, cfg, opt).valid() && ooo > 0, "ROB under jitter");
    // Repeatability.
    const KernelLibrary lib = KernelLibrary::defaults();
    const json docs[] = {
        {{"type", "gemm"}, {"size", 256}, {"parallel_mode", "row_partitioned_16te"}, {"seed", 5}},
        {{"type", "fused"}, {"block", "fc_softmax"}, {"fc", {{"rows", 128}, {"in", 128}, {"out", 128}}}},
        {{"type", "pe_kernel"}, {"kernel", "cfft"}, {"elements", 4096}, {"seed", 2}},
    };
    for (const json& d : docs) {
        o.expect(run_workload(d, cfg, lib, checked()).to_json().dump()
                     == run_workload(d, cfg, lib, checked()).to_json().dump(),
                 "repeatable " + d["type"].get<std::string>());
    }
    o.detail << "1000 bursts, exclusivity checks=" << checks << ", jitter out-of-order=" << ooo;
}

void c8(Outcome& o) {
    const KernelLibrary lib = KernelLibrary::defaults();
    const std::pair<const char*, std::uint64_t> kernels[] = {{"che", 524288}, {"mmse", 8192}, {"cfft", 65536}};
    for (const auto& [name, elems] : kernels) {
        PeKernelSpec s;
        s.kernel = name;
        s.elements = elems;
        const MetricsReport r = run_pe_kernel(s, ClusterConfig{}, lib, checked());
        const double ipc = r.scalars.at("ipc");
        const double cycles = r.scalars.at("runtime_cycles");
        o.detail << name << ": ipc=" << ipc << " cycles=" << cycles << "  ";
        o.expect(r.valid(), std::string(name) + " verification");
        o.expect(cycles < 150000, std::string(name) + " cycles");
        o.expect(ipc >= 0.45 && ipc <= 0.9, std::string(name) + " ipc");
    }
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
        {"1 remote balance", c1},     {"2 tile and L2 balance", c2}, {"3 single-TE GEMM sweep", c3},
        {"4 16-TE parallel GEMM", c4}, {"5 fused blocks", c5},        {"6 channel area", c6},
        {"7 property suites", c7},    {"8 PE calibration", c8},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fn(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s criterion %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str(), s);
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
