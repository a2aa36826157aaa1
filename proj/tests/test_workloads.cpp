#include <catch_amalgamated.hpp>

#include <set>

#include "tensorpool/workloads.hpp"

using namespace tensorpool;

TEST_CASE("partition plan splits rows first, then columns") {
    const ClusterConfig cfg;
    const PartitionPlan big = plan_partition(1024, 1024, 16, cfg);
    CHECK(big.row_parts == 16);
    CHECK(big.col_parts == 1);
    CHECK(big.row_bounds.front() == 0);
    CHECK(big.row_bounds.back() == 1024);
    CHECK(big.rows_per_group == 256);

    const PartitionPlan small = plan_partition(64, 512, 16, cfg);
    CHECK(small.row_parts == 2);
    CHECK(small.col_parts == 8);
    CHECK(small.col_bounds.back() == 512);

    CHECK_THROWS_AS(plan_partition(48, 64, 16, cfg), ConfigError);
    CHECK_THROWS_AS(plan_partition(64, 48, 16, cfg), ConfigError);
}

TEST_CASE("partitioned jobs cover the output exactly once") {
    const ClusterConfig cfg;
    for (std::uint32_t m : {32u, 64u, 128u, 512u}) {
        GemmOperands op;
        op.m = m;
        op.n = 256;
        op.k = 64;
        op.x = 0;
        op.w = 1 << 18;
        op.y = 1 << 19;
        op.z = 1 << 20;
        const PartitionPlan plan = plan_partition(op.m, op.n, 16, cfg);
        const auto jobs = partition_gemm(op, plan, true, cfg);
        std::vector<int> hits(std::size_t{op.m} * op.n, 0);
        std::set<std::uint32_t> tes;
        for (const TeJob& j : jobs) {
            CHECK(tes.insert(j.te).second);
            CHECK(j.regs.m == j.row_hi - j.row_lo);
            CHECK(j.regs.n == j.col_hi - j.col_lo);
            CHECK(j.regs.w_col_start < j.regs.n);
            CHECK(j.regs.w_col_start % cfg.te_tile_cols() == 0);
            for (std::uint32_t r = j.row_lo; r < j.row_hi; ++r) {
                for (std::uint32_t c = j.col_lo; c < j.col_hi; ++c) ++hits[std::size_t{r} * op.n + c];
            }
        }
        for (const int h : hits) REQUIRE(h == 1);
    }
}

TEST_CASE("interleaving staggers W start columns across engines sharing a range") {
    const ClusterConfig cfg;
    GemmOperands op;
    op.m = op.n = op.k = 1024;
    op.w = 1 << 21;
    op.y = 1 << 22;
    op.z = op.y;
    const PartitionPlan plan = plan_partition(op.m, op.n, 16, cfg);
    std::set<std::uint32_t> starts;
    for (const TeJob& j : partition_gemm(op, plan, true, cfg)) starts.insert(j.regs.w_col_start);
    CHECK(starts.size() == 16);
    CHECK(*starts.rbegin() == 15 * 64);
    for (const TeJob& j : partition_gemm(op, plan, false, cfg)) CHECK(j.regs.w_col_start == 0);
}

TEST_CASE("group-local layout keeps each group's rows in its own tiles") {
    const ClusterConfig cfg;
    const std::uint32_t row_bytes = 512;
    REQUIRE(group_local_feasible(row_bytes, cfg));
    CHECK_FALSE(group_local_feasible(4096, cfg));
    const RowLayout l = group_local_layout(64, row_bytes, cfg);
    for (std::uint32_t r = 0; r < 256; ++r) {
        const std::uint32_t g = r / 64;
        for (Addr off = 0; off < row_bytes; off += 4) {
            REQUIRE(group_of_tile(tile_of(l.row_addr(0, r) + off, cfg), cfg) == g);
        }
    }
    CHECK(layout_bytes(l, 256, row_bytes) >= 256u * row_bytes);
}

TEST_CASE("GEMM modes verify against the oracle") {
    const ClusterConfig cfg;
    for (ParallelMode mode : {ParallelMode::SingleTe, ParallelMode::IndependentPerTe, ParallelMode::RowPartitioned}) {
        GemmSpec s;
        s.m = s.n = s.k = 64;
        s.mode = mode;
        const MetricsReport r = run_gemm(s, cfg);
        CHECK(r.valid());
        CHECK(r.verification.checked > 0);
        const std::uint64_t copies = mode == ParallelMode::IndependentPerTe ? 16 : 1;
        CHECK(r.macs == copies * 64ull * 64 * 64);
    }
    CHECK(parse_parallel_mode("row_partitioned_16te") == ParallelMode::RowPartitioned);
    CHECK_THROWS_AS(parse_parallel_mode("spread"), ConfigError);
}

TEST_CASE("GEMM that does not fit L1 is a config error") {
    const ClusterConfig cfg;
    GemmSpec s;
    s.m = s.n = s.k = 2048;
    CHECK_THROWS_AS(run_gemm(s, cfg), ConfigError);
}

TEST_CASE("concurrent writers without an edge are a dependency error") {
    const ClusterConfig cfg;
    auto dma_task = [](const char* name) {
        Task t;
        t.name = name;
        t.kind = EngineKind::Dma;
        DmaJob j;
        j.l2_addr = 0;
        j.l1_addr = 0;
        j.length = 4096;
        t.dma_jobs.push_back(j);
        t.writes.push_back({0, 4096});
        return t;
    };
    TaskGraph g;
    g.add(dma_task("a"));
    g.add(dma_task("b"));
    {
        Cluster c(cfg);
        CHECK_THROWS_AS(g.run(c, ScheduleMode::Concurrent, KernelLibrary::defaults()), DependencyError);
    }
    {
        Cluster c(cfg);
        const auto t = g.run(c, ScheduleMode::Sequential, KernelLibrary::defaults());
        REQUIRE(t.size() == 2);
        CHECK(t[1].start > t[0].end);
    }
    Task bad = dma_task("c");
    bad.deps = {7};
    CHECK_THROWS(g.add(bad));
}

TEST_CASE("small fused blocks give identical outputs in both schedules") {
    const ClusterConfig cfg;
    const KernelLibrary lib = KernelLibrary::defaults();
    for (FusedBlock b : {FusedBlock::FcSoftmax, FusedBlock::DwsepConv, FusedBlock::Mha}) {
        FusedBlockSpec s;
        s.block = b;
        s.iterations = 2;
        s.fc_rows = 128;
        s.fc_in = 128;
        s.fc_out = 128;
        s.conv_height = 8;
        s.conv_width = 16;
        s.conv_channels = 128;
        s.mha_seq = 64;
        s.mha_dim = 128;
        s.compare_modes = true;
        INFO(to_string(b));
        const MetricsReport r = run_fused_block(s, cfg, lib);
        CHECK(r.valid());
        CHECK(r.scalars.at("outputs_identical") == 1.0);
        CHECK(r.scalars.at("concurrent_cycles") <= r.scalars.at("sequential_cycles"));
        CHECK(parse_fused_block(to_string(b)) == b);
    }
}

TEST_CASE("workload dispatch") {
    const ClusterConfig cfg;
    const KernelLibrary lib = KernelLibrary::defaults();
    CHECK_THROWS_AS(run_workload(nlohmann::json{{"size", 64}}, cfg, lib), ConfigError);
    CHECK_THROWS_AS(run_workload(nlohmann::json{{"type", "bogus"}}, cfg, lib), ConfigError);
    const MetricsReport r =
        run_workload(nlohmann::json{{"type", "gemm"}, {"size", 64}, {"parallel_mode", "single_te"}}, cfg, lib);
    CHECK(r.valid());
    CHECK(r.workload == "gemm");
}
