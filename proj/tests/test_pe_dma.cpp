#include <catch_amalgamated.hpp>

#include <numeric>

#include "tensorpool/workloads.hpp"

using namespace tensorpool;

TEST_CASE("barrier wake-up is a log tree over the remote latency") {
    const ClusterConfig cfg;
    CHECK(barrier_cost(1, cfg) == 0);
    CHECK(barrier_cost(2, cfg) == 9);
    CHECK(barrier_cost(16, cfg) == 4 * 9);
    CHECK(barrier_cost(256, cfg) == 8 * 9);
    CHECK(barrier_cost(257, cfg) == 9 * 9);
}

TEST_CASE("relu on the PEs is functionally correct and sensibly timed") {
    const ClusterConfig cfg;
    PeKernelSpec s;
    s.kernel = "relu";
    s.elements = 8192;
    const MetricsReport r = run_pe_kernel(s, cfg, KernelLibrary::defaults());
    CHECK(r.valid());
    CHECK(r.verification.checked > 0);
    const double ipc = r.scalars.at("ipc");
    CHECK(ipc > 0.0);
    CHECK(ipc <= 1.0);
    CHECK(r.scalars.at("pes") == 256);
}

TEST_CASE("fewer PEs take longer") {
    const ClusterConfig cfg;
    const KernelLibrary lib = KernelLibrary::defaults();
    PeKernelSpec s;
    s.kernel = "relu";
    s.elements = 8192;
    s.pes = 64;
    const double few = run_pe_kernel(s, cfg, lib).scalars.at("runtime_cycles");
    s.pes = 256;
    const double all = run_pe_kernel(s, cfg, lib).scalars.at("runtime_cycles");
    CHECK(few > all);
}

TEST_CASE("kernel library overrides and rejects unknown names") {
    const KernelLibrary d = KernelLibrary::defaults();
    for (const char* k : {"relu", "che", "mmse", "cfft"}) CHECK_NOTHROW(d.get(k));
    CHECK_THROWS(d.get("no_such_kernel"));
    nlohmann::json doc;
    doc["kernels"]["relu"] = d.get("relu").to_json();
    doc["kernels"]["relu"]["setup_ops"] = 123;
    const KernelLibrary o = KernelLibrary::from_json(doc);
    CHECK(o.get("relu").setup_ops == 123);
    const KernelRecipe back = KernelRecipe::from_json("relu", d.get("relu").to_json());
    CHECK(back.to_json() == d.get("relu").to_json());
}

TEST_CASE("pattern names round trip") {
    for (AccessPattern p : {AccessPattern::Local, AccessPattern::Sequential, AccessPattern::Strided,
                            AccessPattern::Indexed}) {
        CHECK(parse_pattern(to_string(p)) == p);
    }
    CHECK_THROWS_AS(parse_pattern("diagonal"), ConfigError);
}

TEST_CASE("DMA copies both ways and respects the channel width") {
    const ClusterConfig cfg;
    BankArray l1(cfg);
    L2Memory l2;
    DmaEngine dma(cfg, l1, l2);
    std::vector<std::uint8_t> src(20000);
    std::iota(src.begin(), src.end(), 0);
    l2.write_bytes(1 << 20, src);

    DmaJob in;
    in.direction = DmaDirection::L2ToL1;
    in.l2_addr = 1 << 20;
    in.l1_addr = 4096 + 32;
    in.length = src.size();
    Cycle now = 0;
    const DmaHandle h = dma.program(in, now);
    while (dma.status(h) == DmaStatus::Running) dma.step(now++);
    REQUIRE(dma.status(h) == DmaStatus::Done);
    std::vector<std::uint8_t> got(src.size());
    l1.read_bytes(in.l1_addr, got);
    CHECK(got == src);
    CHECK(dma.completion_cycle(h) >= in.length / (64 * cfg.num_subgroups()));

    DmaJob out;
    out.direction = DmaDirection::L1ToL2;
    out.l1_addr = in.l1_addr;
    out.l2_addr = 0;
    out.length = src.size();
    const DmaHandle h2 = dma.program(out, now);
    while (dma.status(h2) == DmaStatus::Running) dma.step(now++);
    REQUIRE(dma.status(h2) == DmaStatus::Done);
    std::vector<std::uint8_t> back(src.size());
    l2.read_bytes(0, back);
    CHECK(back == src);
    CHECK(dma.interrupt_pending(h2, now));

    CHECK(dma.bytes_moved() == 2 * src.size());
    CHECK(dma.peak_channel_bytes(DmaDirection::L2ToL1) <= cfg.l2_bw_bytes_per_cycle_per_subgroup);
    CHECK(dma.peak_channel_bytes(DmaDirection::L1ToL2) <= cfg.l2_bw_bytes_per_cycle_per_subgroup);
}

TEST_CASE("DMA faults on bad transfers") {
    const ClusterConfig cfg;
    BankArray l1(cfg);
    L2Memory l2;
    DmaEngine dma(cfg, l1, l2);
    DmaJob j;
    j.length = 0;
    CHECK(dma.status(dma.program(j, 0)) == DmaStatus::Fault);
    j.length = 64;
    j.l1_addr = cfg.l1_bytes() - 32;
    CHECK(dma.status(dma.program(j, 0)) == DmaStatus::Fault);
    j.l1_addr = 2;
    CHECK(dma.status(dma.program(j, 0)) == DmaStatus::Fault);
    CHECK(dma.idle());
}
