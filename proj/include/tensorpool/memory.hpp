#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "tensorpool/config.hpp"
#include "tensorpool/slot_calendar.hpp"

namespace tensorpool {

/// Functional storage and per-cycle timing of the L1 scratchpad banks.
class BankArray {
public:
    explicit BankArray(const ClusterConfig& cfg);

    const ClusterConfig& config() const { return cfg_; }

    /// Serves one word access at the first cycle >= `arrival` in which the
    /// bank is free. Returns that cycle; data is read or written immediately
    /// unless `functional` is false.
    Cycle access(Addr addr, bool write, std::uint32_t& data, Cycle arrival, Cycle now, bool functional = true);

    /// Cycle at which `access` would serve a request arriving at `arrival`.
    Cycle probe(Addr addr, Cycle arrival, Cycle now) const {
        return calendars_[global_bank_of(addr, cfg_)].first_free(arrival, now);
    }

    /// Untimed accessors for loaders, oracles and dumps.
    std::uint32_t peek_word(Addr addr) const;
    void poke_word(Addr addr, std::uint32_t value);
    std::uint16_t peek_half(Addr addr) const;
    void poke_half(Addr addr, std::uint16_t value);
    void read_bytes(Addr addr, std::span<std::uint8_t> out) const;
    void write_bytes(Addr addr, std::span<const std::uint8_t> in);

    /// Flat little-endian image of the whole address space.
    void dump(std::ostream& os) const;
    void load(std::istream& is);

    std::uint64_t accesses() const { return accesses_; }
    std::uint64_t conflicts() const { return conflicts_; }
    std::uint64_t bank_accesses(std::uint32_t global_bank) const { return calendars_[global_bank].reserved(); }

    /// Optional independent check that no bank is used twice in one cycle.
    void enable_exclusivity_check(bool on) { check_exclusivity_ = on; }
    std::uint64_t exclusivity_checks() const { return exclusivity_checks_; }
    /// Forgets checked accesses before `now`; nothing can be scheduled there.
    void prune_exclusivity(Cycle now);

private:
    std::size_t word_index(Addr addr) const;

    ClusterConfig cfg_;
    std::vector<std::uint32_t> words_;
    std::vector<SlotCalendar> calendars_;
    std::uint64_t accesses_ = 0;
    std::uint64_t conflicts_ = 0;
    bool check_exclusivity_ = false;
    std::uint64_t exclusivity_checks_ = 0;
    std::unordered_map<std::uint64_t, std::uint8_t> seen_;
};

/// Flat, unbounded backing store. Pages are materialised on first touch.
class L2Memory {
public:
    static constexpr Addr kPageBytes = 4096;

    std::uint8_t read_byte(Addr addr) const;
    void write_byte(Addr addr, std::uint8_t v);
    void read_bytes(Addr addr, std::span<std::uint8_t> out) const;
    void write_bytes(Addr addr, std::span<const std::uint8_t> in);
    std::uint16_t peek_half(Addr addr) const;
    void poke_half(Addr addr, std::uint16_t v);

    /// Dumps [addr, addr + len) as raw little-endian bytes.
    void dump(std::ostream& os, Addr addr, std::uint64_t len) const;

private:
    std::unordered_map<Addr, std::vector<std::uint8_t>> pages_;
};

enum class DmaDirection { L2ToL1, L1ToL2 };
enum class DmaStatus { Idle, Running, Done, Fault };

struct DmaJob {
    DmaDirection direction = DmaDirection::L2ToL1;
    Addr l2_addr = 0;
    Addr l1_addr = 0;
    std::uint64_t length = 0;
    bool interrupt_on_done = true;
};

using DmaHandle = std::uint32_t;

/// Register-programmed central DMA. Transfers are cut into 64B chunks; each
/// chunk travels on the channel of the subgroup that owns its L1 address,
/// and each channel moves at most l2_bw_bytes_per_cycle_per_subgroup per
/// cycle in each direction. Jobs start in programming order.
class DmaEngine {
public:
    DmaEngine(const ClusterConfig& cfg, BankArray& l1, L2Memory& l2);

    /// Queues a job; faults immediately on out-of-range or empty transfers.
    DmaHandle program(const DmaJob& job, Cycle now);
    void step(Cycle now);

    DmaStatus status(DmaHandle h) const { return jobs_.at(h).status; }
    /// Cycle in which the last byte of the job landed (valid once Done).
    Cycle completion_cycle(DmaHandle h) const { return jobs_.at(h).done_cycle; }
    bool interrupt_pending(DmaHandle h, Cycle now) const;
    bool idle() const { return active_.empty(); }

    std::uint64_t bytes_moved() const { return bytes_moved_; }
    std::uint64_t busy_cycles() const { return busy_cycles_; }
    /// Highest bytes moved by one subgroup channel in one cycle, per direction.
    std::uint32_t peak_channel_bytes(DmaDirection d) const {
        return d == DmaDirection::L2ToL1 ? peak_in_ : peak_out_;
    }

private:
    struct JobState {
        DmaJob job;
        DmaStatus status = DmaStatus::Idle;
        Cycle start_cycle = 0;
        Cycle done_cycle = 0;
        std::uint64_t chunks_total = 0;
        std::uint64_t chunks_issued = 0;
        std::vector<std::deque<std::uint64_t>> per_subgroup;  // chunk indices
    };

    void issue_chunk(JobState& js, std::uint64_t chunk, Cycle now);

    ClusterConfig cfg_;
    BankArray& l1_;
    L2Memory& l2_;
    std::vector<JobState> jobs_;
    std::deque<DmaHandle> active_;
    std::uint64_t bytes_moved_ = 0;
    std::uint64_t busy_cycles_ = 0;
    std::uint32_t peak_in_ = 0;
    std::uint32_t peak_out_ = 0;
};

}  // namespace tensorpool
