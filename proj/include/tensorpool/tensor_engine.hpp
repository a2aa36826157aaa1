#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tensorpool/config.hpp"
#include "tensorpool/interconnect.hpp"

namespace tensorpool {

/// Row addressing of a matrix operand: row r starts at
/// base + (r / rows_per_block) * block_stride + (r % rows_per_block) * row_stride.
/// rows_per_block == 0 means a plain row-major layout with `row_stride`.
struct RowLayout {
    std::uint64_t row_stride = 0;
    std::uint32_t rows_per_block = 0;
    std::uint64_t block_stride = 0;

    Addr row_addr(Addr base, std::uint64_t r) const {
        if (rows_per_block == 0) return base + r * row_stride;
        return base + (r / rows_per_block) * block_stride + (r % rows_per_block) * row_stride;
    }
};

/// Z (m x n) = Y (m x n) + X (m x k) * W (k x n), all FP16 row-major.
struct TeConfigRegs {
    Addr x_base = 0;
    Addr w_base = 0;
    Addr y_base = 0;
    Addr z_base = 0;
    std::uint32_t m = 0;
    std::uint32_t n = 0;
    std::uint32_t k = 0;
    /// Column of W at which the column-tile traversal starts; rounded down
    /// to a whole output tile.
    std::uint32_t w_col_start = 0;
    bool loopback = true;
    /// Zero strides default to dense row-major.
    RowLayout x_layout;
    RowLayout w_layout;
    RowLayout y_layout;
    RowLayout z_layout;

    /// Number of 32-bit registers a PE writes to program these values.
    static constexpr std::uint32_t kRegisterCount = 8;
};

enum class TeProgramResult { Accepted, Busy };

enum class TeStream : std::uint8_t { X = 0, W = 1, Y = 2 };

struct TeMetrics {
    Cycle start_cycle = 0;
    Cycle end_cycle = 0;
    std::uint64_t active_cycles = 0;   ///< cycles with the full FMA array issuing
    std::uint64_t macs = 0;
    std::uint64_t operand_stall_cycles = 0;
    std::uint64_t fifo_stall_cycles = 0;
    std::uint64_t drain_cycles = 0;
    std::array<std::uint64_t, 3> reads_issued{};
    std::uint64_t writes_issued = 0;
    std::array<std::uint64_t, 3> rob_full_cycles{};
    std::uint32_t max_rob_occupancy = 0;
    std::uint64_t out_of_order_arrivals = 0;
    std::uint64_t read_bytes = 0;
    std::uint64_t write_bytes = 0;
    std::uint64_t tiles = 0;

    Cycle busy_cycles() const { return end_cycle - start_cycle; }
    /// Active-FMA-cycles over array capacity during the busy window.
    double utilization() const {
        return busy_cycles() == 0 ? 0.0 : static_cast<double>(active_cycles) / static_cast<double>(busy_cycles());
    }
};

/// Sums over every job an engine completed.
struct TeTotals {
    std::uint64_t jobs = 0;
    std::uint64_t active_cycles = 0;
    std::uint64_t busy_cycles = 0;
    std::uint64_t macs = 0;
};

/// Cycle-level model of one tensor engine: an R x C FMA array with a
/// P-stage pipeline consuming one W row slice (C*(P+1) elements) every P+1
/// cycles, fed by a streamer with per-stream reorder buffers.
class TensorEngine {
public:
    TensorEngine(const ClusterConfig& cfg, std::uint32_t index, Interconnect& net);

    std::uint32_t index() const { return index_; }
    std::uint32_t tile() const { return tile_; }

    /// Validates and latches a job. Busy while a job is running.
    TeProgramResult program(const TeConfigRegs& regs, Cycle now);
    void step(Cycle now);

    bool running() const { return state_ == State::Running; }
    bool interrupt_pending() const { return irq_; }
    void acknowledge_interrupt() { irq_ = false; }

    /// Metrics of the current or most recent job.
    const TeMetrics& metrics() const { return metrics_; }
    const TeTotals& totals() const { return totals_; }
    /// Cycle in which the engine last made forward progress.
    Cycle last_progress() const { return last_progress_; }

private:
    enum class State { Idle, Running };
    enum class Phase { WaitY, Compute, Drain, WaitFifo, Finish };

    struct RobEntry {
        std::uint64_t seq = 0;
        Cycle ready = 0;
        std::array<std::uint32_t, 16> data{};
    };

    struct Rob {
        std::vector<RobEntry> slots;
        std::uint64_t head = 0;  // oldest in-flight sequence number
        std::uint64_t tail = 0;  // next sequence number to allocate
        std::uint32_t size() const { return static_cast<std::uint32_t>(tail - head); }
    };

    struct Tile {
        std::uint32_t row_block = 0;
        std::uint32_t col_tile = 0;
    };

    Addr x_read_addr(std::uint64_t seq) const;
    Addr w_read_addr(std::uint64_t seq) const;
    Addr y_read_addr(std::uint64_t seq) const;
    bool try_issue_read(TeStream s, Cycle now);
    bool try_issue_write(Cycle now);
    void commit_ready(Cycle now);
    void commit_entry(TeStream s, const RobEntry& e);
    bool step_operands_ready() const;
    void execute_step();
    void finish_tile(Cycle now);

    ClusterConfig cfg_;
    std::uint32_t index_;
    std::uint32_t tile_;
    Interconnect& net_;

    State state_ = State::Idle;
    Phase phase_ = Phase::WaitY;
    bool irq_ = false;
    TeConfigRegs regs_;
    std::vector<Tile> tiles_;

    std::uint32_t rows_ = 32;      // R
    std::uint32_t tcols_ = 32;     // C*(P+1)
    std::uint32_t welems_ = 32;    // elements per wide word
    std::uint32_t chunks_per_tile_ = 0;
    std::uint32_t w_buffer_rows_ = 16;
    std::uint32_t x_buffer_chunks_ = 2;

    std::array<Rob, 3> robs_;
    std::array<std::uint64_t, 3> committed_{};
    std::uint64_t w_consumed_ = 0;
    std::uint64_t x_chunks_consumed_ = 0;
    std::uint64_t y_tiles_allowed_ = 1;

    // Functional buffers in float.
    std::vector<float> w_buf_;   // w_buffer_rows_ x tcols_
    std::vector<float> x_buf_;   // x_buffer_chunks_ x rows_ x welems_
    std::vector<float> y_buf_;   // rows_ x tcols_
    std::vector<float> acc_;     // rows_ x tcols_

    std::uint64_t cur_tile_ = 0;
    std::uint32_t cur_k_ = 0;
    std::uint32_t step_left_ = 0;
    std::uint32_t drain_left_ = 0;

    struct ZEntry {
        Addr addr = 0;
        std::array<std::uint32_t, 16> data{};
    };
    std::vector<ZEntry> z_fifo_;
    std::size_t z_head_ = 0;
    Cycle last_write_done_ = 0;
    std::array<Cycle, 4> port_ready_{};  // W, X, Y, Z: next cycle a request may be presented

    TeMetrics metrics_;
    TeTotals totals_;
    Cycle last_progress_ = 0;
};

}  // namespace tensorpool
