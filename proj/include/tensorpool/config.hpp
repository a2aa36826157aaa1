#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace tensorpool {

using Cycle = std::uint64_t;
using Addr = std::uint64_t;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AddressFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AlignmentFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rejected engine programming (bad register values, engine busy).
class ProgramError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parametric description of the cluster. Every timing and analytic module
/// reads its topology from here. Defaults describe the 64-tile, 16-TE pool.
struct ClusterConfig {
    // hierarchy
    std::uint32_t tiles_per_subgroup = 4;
    std::uint32_t subgroups_per_group = 4;
    std::uint32_t groups = 4;
    std::uint32_t pes_per_tile = 4;
    std::uint32_t banks_per_tile = 32;
    std::uint32_t bank_bytes = 2048;

    // tensor engine geometry
    std::uint32_t te_tiles_per_subgroup = 1;
    std::uint32_t te_rows = 32;
    std::uint32_t te_cols = 8;
    std::uint32_t te_pipeline = 3;
    std::uint32_t wide_port_bits = 512;
    std::uint32_t response_group_K = 4;
    std::uint32_t request_widen_J = 2;
    std::uint32_t rob_depth = 16;
    std::uint32_t z_fifo_depth = 32;

    // interconnect latencies (cycles)
    std::uint32_t latency_local = 1;
    std::uint32_t latency_subgroup = 3;
    std::uint32_t latency_group = 5;
    std::uint32_t latency_remote_group = 9;
    std::uint32_t arbiter_subgroup_ports = 4;
    std::uint32_t arbiter_group_ports = 3;

    // L2 / DMA
    std::uint32_t l2_bw_bytes_per_cycle_per_subgroup = 64;
    std::uint32_t l2_latency = 20;

    std::uint32_t element_bytes = 2;

    // derived quantities
    std::uint32_t tiles_per_group() const { return tiles_per_subgroup * subgroups_per_group; }
    std::uint32_t num_subgroups() const { return subgroups_per_group * groups; }
    std::uint32_t num_tiles() const { return tiles_per_group() * groups; }
    std::uint32_t num_banks() const { return num_tiles() * banks_per_tile; }
    std::uint32_t banks_per_group() const { return tiles_per_group() * banks_per_tile; }
    std::uint32_t num_pes() const { return num_tiles() * pes_per_tile; }
    std::uint32_t num_tes() const { return num_subgroups() * te_tiles_per_subgroup; }
    std::uint64_t l1_bytes() const { return std::uint64_t{num_banks()} * bank_bytes; }
    std::uint32_t wide_bytes() const { return wide_port_bits / 8; }
    /// 32-bit beats in one wide transaction.
    std::uint32_t wide_beats() const { return wide_port_bits / 32; }
    /// Bytes of contiguous address space owned by one tile before the map moves on.
    std::uint32_t tile_interleave_bytes() const { return banks_per_tile * 4; }
    std::uint32_t te_macs_per_cycle() const { return te_rows * te_cols; }
    /// Output-tile width of the TE inner loop, C*(P+1).
    std::uint32_t te_tile_cols() const { return te_cols * (te_pipeline + 1); }

    /// Throws ConfigError if any invariant is broken.
    void validate() const;

    nlohmann::json to_json() const;
    /// Absent keys keep their defaults; unknown keys are rejected. A top-level
    /// "kernels" object is tolerated and left to the kernel recipe loader.
    static ClusterConfig from_json(const nlohmann::json& doc);
    static ClusterConfig load(const std::string& path);
};

struct BankCoordinate {
    std::uint32_t group = 0;
    std::uint32_t subgroup = 0;  ///< within the group
    std::uint32_t tile = 0;      ///< within the subgroup
    std::uint32_t bank = 0;      ///< within the tile
    std::uint32_t word_offset = 0;

    bool operator==(const BankCoordinate&) const = default;
};

/// Word-interleaved across the banks of a tile, tile-interleaved at
/// `tile_interleave_bytes()` granularity across all tiles.
BankCoordinate address_to_bank(Addr addr, const ClusterConfig& cfg);
Addr bank_to_address(const BankCoordinate& c, const ClusterConfig& cfg);

/// Global tile id (0..num_tiles) that owns `addr`. No alignment requirement.
inline std::uint32_t tile_of(Addr addr, const ClusterConfig& cfg) {
    return static_cast<std::uint32_t>((addr / cfg.tile_interleave_bytes()) % cfg.num_tiles());
}

/// Global bank index and word row for a byte address (no range checks).
inline std::uint32_t global_bank_of(Addr addr, const ClusterConfig& cfg) {
    return tile_of(addr, cfg) * cfg.banks_per_tile
        + static_cast<std::uint32_t>((addr / 4) % cfg.banks_per_tile);
}

inline std::uint32_t global_tile(const BankCoordinate& c, const ClusterConfig& cfg) {
    return (c.group * cfg.subgroups_per_group + c.subgroup) * cfg.tiles_per_subgroup + c.tile;
}

inline std::uint32_t group_of_tile(std::uint32_t tile, const ClusterConfig& cfg) {
    return tile / cfg.tiles_per_group();
}

/// Global subgroup id of a tile.
inline std::uint32_t subgroup_of_tile(std::uint32_t tile, const ClusterConfig& cfg) {
    return tile / cfg.tiles_per_subgroup;
}

/// One-way pipeline latency between two tiles. Same tile returns
/// latency_local, which already includes the bank cycle.
std::uint32_t access_latency(std::uint32_t src_tile, std::uint32_t dst_tile, const ClusterConfig& cfg);

/// Tile that hosts tensor engine `te`; the first tile of each subgroup by default.
inline std::uint32_t te_tile(std::uint32_t te, const ClusterConfig& cfg) {
    const std::uint32_t sg = te / cfg.te_tiles_per_subgroup;
    return sg * cfg.tiles_per_subgroup + te % cfg.te_tiles_per_subgroup;
}

}  // namespace tensorpool
