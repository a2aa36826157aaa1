#include <catch_amalgamated.hpp>

#include <map>
#include <random>

#include "tensorpool/workloads.hpp"

using namespace tensorpool;

TEST_CASE("random wide traffic returns every beat exactly once with the written data") {
    const ClusterConfig cfg;
    BankArray banks(cfg);
    Interconnect net(cfg, banks);
    net.record_responses(true);
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<Addr> word(0, cfg.l1_bytes() / 64 - 1);
    std::uniform_int_distribution<std::uint32_t> tile(0, cfg.num_tiles() - 1);
    Cycle now = 0;
    for (std::uint32_t i = 0; i < 1000; ++i) {
        const Addr a = word(rng) * 64;
        MemoryTransaction w;
        w.kind = TxnKind::WideWrite;
        w.base_addr = a;
        w.beats = 16;
        for (auto& d : w.data) d = static_cast<std::uint32_t>(rng());
        const TxnTiming wt = net.issue(w, tile(rng), now);

        MemoryTransaction r;
        r.kind = TxnKind::WideRead;
        r.base_addr = a;
        r.beats = 16;
        r.tag = i;
        const std::size_t before = net.responses().size();
        const std::uint32_t src = tile(rng);
        const TxnTiming rt = net.issue(r, src, wt.complete);
        // The local wide port returns a whole word at once.
        const std::uint32_t max_group = src == tile_of(a, cfg) ? 16 : cfg.response_group_K;
        REQUIRE(r.data == w.data);
        REQUIRE(rt.complete >= rt.bank_last);

        std::uint32_t seen = 0, beats = 0;
        for (std::size_t k = before; k < net.responses().size(); ++k) {
            const GroupedResponse& g = net.responses()[k];
            REQUIRE(g.tag == i);
            REQUIRE(g.beat_count <= max_group);
            for (std::uint32_t b = g.first_beat; b < g.first_beat + g.beat_count; ++b) {
                REQUIRE((seen & (1u << b)) == 0);
                seen |= 1u << b;
            }
            beats += g.beat_count;
        }
        REQUIRE(beats == 16);
        REQUIRE(seen == 0xffffu);
        now += rng() % 4;
    }
    CHECK(net.counters().bursts == 1000);
}

TEST_CASE("random narrow traffic matches a shadow memory") {
    const ClusterConfig cfg;
    BankArray banks(cfg);
    Interconnect net(cfg, banks);
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<Addr> word(0, 4095);
    std::map<Addr, std::uint32_t> shadow;
    for (int i = 0; i < 5000; ++i) {
        const Addr a = word(rng) * 4 * 37 % cfg.l1_bytes();
        MemoryTransaction t;
        t.base_addr = a;
        if (rng() % 2) {
            t.kind = TxnKind::NarrowWrite;
            t.data[0] = static_cast<std::uint32_t>(rng());
            shadow[a] = t.data[0];
        } else {
            t.kind = TxnKind::NarrowRead;
        }
        net.issue(t, static_cast<std::uint32_t>(rng() % 64), static_cast<Cycle>(i));
        if (t.kind == TxnKind::NarrowRead) REQUIRE(t.data[0] == (shadow.count(a) ? shadow[a] : 0u));
    }
}

TEST_CASE("uncontended latency never shrinks with hierarchy distance") {
    const ClusterConfig cfg;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto src = static_cast<std::uint32_t>(rng() % 64);
        const auto a = static_cast<std::uint32_t>(rng() % 64);
        const auto b = static_cast<std::uint32_t>(rng() % 64);
        auto rt = [&](std::uint32_t dst) {
            BankArray banks(cfg);
            Interconnect net(cfg, banks);
            MemoryTransaction t;
            t.kind = TxnKind::WideRead;
            t.base_addr = Addr{dst} * 128;
            t.beats = 16;
            return net.issue(t, src, 0).complete;
        };
        if (access_latency(src, a, cfg) < access_latency(src, b, cfg)) REQUIRE(rt(a) < rt(b));
        if (access_latency(src, a, cfg) == access_latency(src, b, cfg)) REQUIRE(rt(a) == rt(b));
    }
}

TEST_CASE("no bank serves two accesses in one cycle") {
    const ClusterConfig cfg;
    RunOptions opt;
    opt.cluster.check_bank_exclusivity = true;
    std::uint64_t checks = 0;
    opt.inspect = [&](Cluster& c) { checks = c.l1().exclusivity_checks(); };

    GemmSpec g;
    g.m = g.n = g.k = 128;
    g.mode = ParallelMode::RowPartitioned;
    CHECK(run_gemm(g, cfg, opt).valid());
    CHECK(checks > 0);

    checks = 0;
    FusedBlockSpec f;
    f.fc_rows = f.fc_in = f.fc_out = 128;
    f.iterations = 2;
    CHECK(run_fused_block(f, cfg, KernelLibrary::defaults(), opt).valid());
    CHECK(checks > 0);
}

TEST_CASE("reordered beats still give the oracle result") {
    const ClusterConfig cfg;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        GemmSpec g;
        g.m = g.n = g.k = 64;
        g.beat_jitter = 12;
        g.seed = seed;
        std::uint64_t ooo = 0;
        RunOptions opt;
        opt.inspect = [&](Cluster& c) { ooo = c.te(0).metrics().out_of_order_arrivals; };
        CHECK(run_gemm(g, cfg, opt).valid());
        CHECK(ooo > 0);
    }
}

TEST_CASE("identical inputs give byte-identical reports") {
    const ClusterConfig cfg;
    const KernelLibrary lib = KernelLibrary::defaults();
    const nlohmann::json docs[] = {
        {{"type", "gemm"}, {"size", 128}, {"parallel_mode", "row_partitioned_16te"}, {"seed", 9}},
        {{"type", "pe_kernel"}, {"kernel", "mmse"}, {"elements", 1024}, {"seed", 4}},
        {{"type", "fused"}, {"block", "mha"}, {"mha", {{"seq", 64}, {"dim", 128}}}, {"iterations", 2}},
    };
    for (const auto& d : docs) {
        INFO(d.dump());
        CHECK(run_workload(d, cfg, lib).to_json().dump() == run_workload(d, cfg, lib).to_json().dump());
    }
}
