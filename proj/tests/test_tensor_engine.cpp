#include <catch_amalgamated.hpp>

#include "tensorpool/analytics.hpp"
#include "tensorpool/workloads.hpp"

using namespace tensorpool;

namespace {

struct Bench {
    ClusterConfig cfg;
    BankArray banks{cfg};
    Interconnect net{cfg, banks};
    TensorEngine te{cfg, 0, net};

    Cycle run(Cycle now = 0) {
        while (te.running()) {
            te.step(now);
            ++now;
            REQUIRE(now < 10'000'000);
        }
        return now;
    }
};

TeConfigRegs dense(std::uint32_t m, std::uint32_t n, std::uint32_t k) {
    TeConfigRegs r;
    r.m = m;
    r.n = n;
    r.k = k;
    r.x_base = 0;
    r.w_base = r.x_base + Addr{m} * k * 2;
    r.y_base = r.w_base + Addr{k} * n * 2;
    r.z_base = r.y_base + Addr{m} * n * 2;
    return r;
}

}  // namespace

TEST_CASE("tensor engine matches the GEMM oracle") {
    Bench b;
    const TeConfigRegs r = dense(64, 64, 96);
    const Matrix x = write_matrix(b.banks, r.x_base, RowLayout{2ull * r.k}, random_matrix(r.m, r.k, 1, -1, 1));
    const Matrix w = write_matrix(b.banks, r.w_base, RowLayout{2ull * r.n}, random_matrix(r.k, r.n, 2, -1, 1));
    const Matrix y = write_matrix(b.banks, r.y_base, RowLayout{2ull * r.n}, random_matrix(r.m, r.n, 3, -1, 1));
    REQUIRE(b.te.program(r, 0) == TeProgramResult::Accepted);
    b.run();
    CHECK(b.te.interrupt_pending());
    const Matrix z = read_matrix(b.banks, r.z_base, RowLayout{2ull * r.n}, r.m, r.n);
    const Comparison c = compare(oracle_gemm(x, w, y), z);
    CHECK(c.checked == 64u * 64);
    CHECK(c.pass());
    CHECK(b.te.metrics().macs == 64ull * 64 * 96);
    CHECK(b.te.metrics().utilization() > 0.0);
    CHECK(b.te.metrics().utilization() <= 1.0);
}

TEST_CASE("tensor engine is busy until its interrupt is acknowledged") {
    Bench b;
    const TeConfigRegs r = dense(32, 32, 32);
    REQUIRE(b.te.program(r, 0) == TeProgramResult::Accepted);
    CHECK(b.te.program(r, 0) == TeProgramResult::Busy);
    const Cycle end = b.run();
    CHECK(b.te.program(r, end) == TeProgramResult::Busy);
    b.te.acknowledge_interrupt();
    CHECK(b.te.program(r, end) == TeProgramResult::Accepted);
}

TEST_CASE("tensor engine rejects bad programs") {
    Bench b;
    TeConfigRegs r = dense(32, 32, 32);
    r.m = 48;
    CHECK_THROWS_AS(b.te.program(r, 0), ProgramError);
    r = dense(32, 32, 32);
    r.k = 0;
    CHECK_THROWS_AS(b.te.program(r, 0), ProgramError);
    r = dense(32, 32, 32);
    r.w_base = r.x_base + 64;
    CHECK_THROWS_AS(b.te.program(r, 0), ProgramError);
    r = dense(32, 32, 32);
    r.z_base = b.cfg.l1_bytes();
    CHECK_THROWS_AS(b.te.program(r, 0), AddressFault);
    r = dense(32, 32, 32);
    r.x_base += 2;
    CHECK_THROWS_AS(b.te.program(r, 0), ProgramError);
    CHECK_FALSE(b.te.running());
}

TEST_CASE("single output tile reads what the tile balance counts") {
    Bench b;
    const TeConfigRegs r = dense(32, 32, 64);
    REQUIRE(b.te.program(r, 0) == TeProgramResult::Accepted);
    b.run();
    const BalanceReport bal = l1_tile_balance(64, b.cfg);
    const double got = static_cast<double>(b.te.metrics().read_bytes);
    CHECK(got == Catch::Approx(bal.q_m).margin(64));
    CHECK(b.te.metrics().write_bytes == 32u * 32 * 2);
}

TEST_CASE("larger response groups never slow a single engine down") {
    Cycle prev = ~Cycle{0};
    for (std::uint32_t k : {1u, 2u, 4u}) {
        ClusterConfig cfg;
        cfg.response_group_K = k;
        GemmSpec s;
        s.m = s.n = s.k = 128;
        const MetricsReport r = run_gemm(s, cfg);
        REQUIRE(r.valid());
        CHECK(r.total_cycles <= prev);
        prev = r.total_cycles;
    }
}

TEST_CASE("loopback traversal covers every column tile") {
    Bench b;
    TeConfigRegs r = dense(32, 128, 32);
    r.w_col_start = 64;
    const Matrix x = write_matrix(b.banks, r.x_base, RowLayout{2ull * r.k}, random_matrix(r.m, r.k, 4, -1, 1));
    const Matrix w = write_matrix(b.banks, r.w_base, RowLayout{2ull * r.n}, random_matrix(r.k, r.n, 5, -1, 1));
    const Matrix y = write_matrix(b.banks, r.y_base, RowLayout{2ull * r.n}, random_matrix(r.m, r.n, 6, -1, 1));
    REQUIRE(b.te.program(r, 0) == TeProgramResult::Accepted);
    b.run();
    CHECK(b.te.metrics().tiles == 4);
    const Matrix z = read_matrix(b.banks, r.z_base, RowLayout{2ull * r.n}, r.m, r.n);
    CHECK(compare(oracle_gemm(x, w, y), z).pass());
}
