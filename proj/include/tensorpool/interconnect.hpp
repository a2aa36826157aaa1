#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string_view>
#include <vector>

#include "tensorpool/config.hpp"
#include "tensorpool/memory.hpp"
#include "tensorpool/slot_calendar.hpp"

namespace tensorpool {

enum class TxnKind : std::uint8_t { NarrowRead, NarrowWrite, WideRead, WideWrite, BurstReadHeader };

std::string_view to_string(TxnKind k);

inline bool is_read(TxnKind k) {
    return k == TxnKind::NarrowRead || k == TxnKind::WideRead || k == TxnKind::BurstReadHeader;
}

struct MemoryTransaction {
    TxnKind kind = TxnKind::NarrowRead;
    Addr base_addr = 0;
    std::uint32_t beats = 1;
    std::array<std::uint32_t, 16> data{};
    std::uint32_t initiator = 0;
    std::uint32_t tag = 0;
    Cycle issue_cycle = 0;
    /// Occupies the path and banks without moving data (timed-recipe agents).
    bool timing_only = false;
};

/// One 32-bit bank request produced by the burst distributor.
struct NarrowRequest {
    Addr addr = 0;
    std::uint32_t global_bank = 0;
    std::uint32_t beat = 0;
};

/// Several beats of one tag returned under a single valid/ready handshake.
struct GroupedResponse {
    std::uint32_t tag = 0;
    std::uint32_t first_beat = 0;
    std::uint32_t beat_count = 0;
    Cycle cycle = 0;
};

/// Compresses a wide read into a single-header burst. Narrow transactions
/// pass through unchanged. Throws AlignmentFault for unaligned wide reads.
MemoryTransaction burst_group(const MemoryTransaction& txn, const ClusterConfig& cfg);

/// Expands a burst header into one narrow read per beat, all inside the
/// destination tile.
std::vector<NarrowRequest> burst_distribute(const MemoryTransaction& header, const ClusterConfig& cfg);

/// Request-path slots a transaction occupies on each arbiter port it crosses:
/// a wide write moves J beats per slot; everything else takes one slot.
std::uint32_t request_slots(TxnKind kind, const ClusterConfig& cfg);

/// Response handshakes needed to return `beats` beats with K-grouping.
inline std::uint32_t response_handshakes(std::uint32_t beats, const ClusterConfig& cfg) {
    return (beats + cfg.response_group_K - 1) / cfg.response_group_K;
}

enum class PortClass : std::uint8_t { Local, Subgroup, Group };

struct PortRoute {
    PortClass cls = PortClass::Local;
    std::uint32_t out_port = 0;  ///< arbiter port index at the source tile
    std::uint32_t in_port = 0;   ///< arbiter port index at the destination tile
    std::uint32_t latency = 0;   ///< one-way pipeline cycles
};

/// Subgroup ports are indexed by the peer subgroup inside the group; group
/// ports follow, indexed by the peer group's distance modulo the group count.
PortRoute route_ports(std::uint32_t src_tile, std::uint32_t dst_tile, const ClusterConfig& cfg);

/// Timing of one transaction as computed when it was issued.
struct TxnTiming {
    std::uint64_t id = 0;
    Cycle issue = 0;
    Cycle grant = 0;        ///< first arbiter slot at the source tile
    Cycle accepted = 0;     ///< first cycle the initiator may present another request
    Cycle bank_first = 0;
    Cycle bank_last = 0;
    Cycle complete = 0;     ///< last beat delivered (reads) or committed (writes)
    std::array<Cycle, 16> beat_arrival{};
};

enum class TraceEvent : std::uint8_t { Issue, ArbGrant, BankAccess, RespCommit };

struct TraceRecord {
    Cycle cycle = 0;
    std::uint64_t txn = 0;
    TxnKind kind = TxnKind::NarrowRead;
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    TraceEvent event = TraceEvent::Issue;
};

struct InterconnectCounters {
    std::uint64_t local_grants = 0;
    std::uint64_t subgroup_grants = 0;
    std::uint64_t group_grants = 0;
    std::uint64_t bursts = 0;
    std::uint64_t narrow_reads = 0;
    std::uint64_t narrow_writes = 0;
    std::uint64_t wide_writes = 0;
    std::uint64_t write_request_slots = 0;
    std::uint64_t response_handshakes = 0;
};

/// Hierarchical crossbar between initiators and banks. Every contention
/// point (source arbiter port, destination arbiter port, bank, response
/// handshake on either side) serves one item per cycle; a transaction takes
/// the first free cycle at each point along its path and keeps a port
/// occupied while the next stage cannot accept it. Queues drain in arrival
/// order and their depth is bounded by the initiators' outstanding limits.
class Interconnect {
public:
    Interconnect(const ClusterConfig& cfg, BankArray& banks);

    /// Issues `txn` from `src_tile` at cycle `now`. Read data is written into
    /// txn.data; write data is taken from it. Wide reads are burst-grouped.
    TxnTiming issue(MemoryTransaction& txn, std::uint32_t src_tile, Cycle now);

    void enable_trace(bool on) { trace_on_ = on; }
    const std::vector<TraceRecord>& trace() const { return trace_; }
    /// CSV with header `cycle,txn_tag,kind,src,dst,event`, sorted by cycle.
    void write_trace_csv(std::ostream& os) const;

    /// Adds a uniformly random extra delay in [0, max_extra] to every
    /// returned beat. Used to stress reorder logic.
    void set_beat_jitter(std::uint32_t max_extra, std::uint64_t seed);

    /// Keeps the grouped responses of every read for inspection in tests.
    void record_responses(bool on) { record_responses_ = on; }
    const std::vector<GroupedResponse>& responses() const { return responses_; }

    const InterconnectCounters& counters() const { return counters_; }
    /// Grants issued by one source-tile arbiter port in one cycle (for the
    /// per-tile retirement cap check). Only tracked while tracing.
    std::uint32_t max_grants_per_tile_cycle() const;

private:
    struct TilePorts {
        std::vector<SlotCalendar> out_req;
        std::vector<SlotCalendar> out_resp;
        std::vector<SlotCalendar> in_req;
        std::vector<SlotCalendar> in_resp;
        SlotCalendar local_resp;
    };

    void log(Cycle c, std::uint64_t id, TxnKind k, std::uint32_t src, std::uint32_t dst, TraceEvent e);

    ClusterConfig cfg_;
    BankArray& banks_;
    std::vector<TilePorts> tiles_;
    InterconnectCounters counters_;
    std::uint64_t next_id_ = 1;

    bool trace_on_ = false;
    std::vector<TraceRecord> trace_;
    bool record_responses_ = false;
    std::vector<GroupedResponse> responses_;

    std::uint32_t jitter_max_ = 0;
    std::mt19937_64 jitter_rng_;
};

}  // namespace tensorpool
