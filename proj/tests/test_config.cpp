#include <catch_amalgamated.hpp>

#include <random>

#include "tensorpool/config.hpp"

using namespace tensorpool;

TEST_CASE("default topology counts") {
    const ClusterConfig cfg;
    CHECK(cfg.num_tiles() == 64);
    CHECK(cfg.num_banks() == 2048);
    CHECK(cfg.num_pes() == 256);
    CHECK(cfg.num_tes() == 16);
    CHECK(cfg.l1_bytes() == 4u * 1024 * 1024);
    CHECK(cfg.wide_bytes() == 64);
    CHECK(cfg.wide_beats() == 16);
    CHECK(cfg.te_macs_per_cycle() == 256);
    CHECK(cfg.te_tile_cols() == 32);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("tensor engines sit on the first tile of each subgroup") {
    const ClusterConfig cfg;
    for (std::uint32_t te = 0; te < cfg.num_tes(); ++te) CHECK(te_tile(te, cfg) == te * 4);
}

TEST_CASE("address map examples") {
    const ClusterConfig cfg;
    const BankCoordinate a0 = address_to_bank(0, cfg);
    CHECK(a0 == BankCoordinate{0, 0, 0, 0, 0});
    CHECK(address_to_bank(4, cfg) == BankCoordinate{0, 0, 0, 1, 0});
    CHECK(address_to_bank(128, cfg) == BankCoordinate{0, 0, 1, 0, 0});
    // 512 B moves one subgroup, 2048 B one group, 8192 B wraps to the next word row.
    CHECK(address_to_bank(512, cfg) == BankCoordinate{0, 1, 0, 0, 0});
    CHECK(address_to_bank(2048, cfg) == BankCoordinate{1, 0, 0, 0, 0});
    CHECK(address_to_bank(8192, cfg) == BankCoordinate{0, 0, 0, 0, 1});
    CHECK_THROWS_AS(address_to_bank(cfg.l1_bytes(), cfg), AddressFault);
    CHECK_THROWS_AS(address_to_bank(2, cfg), AlignmentFault);
}

TEST_CASE("address map is a bijection on word addresses") {
    const ClusterConfig cfg;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<Addr> d(0, cfg.l1_bytes() / 4 - 1);
    for (int i = 0; i < 20000; ++i) {
        const Addr a = d(rng) * 4;
        const BankCoordinate c = address_to_bank(a, cfg);
        REQUIRE(bank_to_address(c, cfg) == a);
        REQUIRE(c.bank == global_bank_of(a, cfg) % cfg.banks_per_tile);
        REQUIRE(c.word_offset < cfg.bank_bytes / 4);
    }
}

TEST_CASE("a wide word lands on 16 distinct banks of one tile") {
    const ClusterConfig cfg;
    for (Addr base = 0; base < 64 * 1024; base += 64) {
        const std::uint32_t t = tile_of(base, cfg);
        std::uint32_t mask = 0;
        for (std::uint32_t b = 0; b < 16; ++b) {
            REQUIRE(tile_of(base + 4 * b, cfg) == t);
            mask |= 1u << (global_bank_of(base + 4 * b, cfg) % 32);
        }
        REQUIRE(__builtin_popcount(mask) == 16);
    }
}

TEST_CASE("access latency by hierarchy level") {
    const ClusterConfig cfg;
    CHECK(access_latency(0, 0, cfg) == 1);
    CHECK(access_latency(0, 3, cfg) == 3);
    CHECK(access_latency(0, 4, cfg) == 5);
    CHECK(access_latency(0, 15, cfg) == 5);
    CHECK(access_latency(0, 16, cfg) == 9);
    CHECK(access_latency(63, 0, cfg) == 9);
}

TEST_CASE("config JSON round trip and rejection") {
    ClusterConfig cfg;
    cfg.bank_bytes = 8192;
    cfg.response_group_K = 2;
    const ClusterConfig back = ClusterConfig::from_json(cfg.to_json());
    CHECK(back.bank_bytes == 8192);
    CHECK(back.response_group_K == 2);
    CHECK(back.to_json() == cfg.to_json());

    CHECK_THROWS_AS(ClusterConfig::from_json(nlohmann::json{{"no_such_key", 1}}), ConfigError);
    CHECK_THROWS_AS(ClusterConfig::from_json(nlohmann::json{{"groups", -1}}), ConfigError);
    CHECK_THROWS_AS(ClusterConfig::from_json(nlohmann::json{{"groups", 0}}), ConfigError);
    CHECK_THROWS_AS(ClusterConfig::from_json(nlohmann::json::array()), ConfigError);
    CHECK_THROWS_AS(ClusterConfig::from_json(nlohmann::json{{"latency_local", 4}}), ConfigError);
    CHECK_NOTHROW(ClusterConfig::from_json(nlohmann::json{{"kernels", nlohmann::json::object()}}));
    CHECK_THROWS_AS(ClusterConfig::load("/nonexistent/config.json"), ConfigError);
}
