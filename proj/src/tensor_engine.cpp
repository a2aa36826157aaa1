#include "tensorpool/tensor_engine.hpp"

#include <algorithm>

#include "tensorpool/fp16.hpp"

namespace tensorpool {

namespace {

struct Range {
    Addr lo = 0;
    Addr hi = 0;  // exclusive
    bool overlaps(const Range& o) const { return lo < o.hi && o.lo < hi; }
};

Range operand_range(Addr base, const RowLayout& l, std::uint32_t rows, std::uint32_t cols) {
    Range r{base, base};
    for (std::uint32_t i : {0u, rows - 1}) {
        const Addr a = l.row_addr(base, i);
        r.lo = std::min(r.lo, a);
        r.hi = std::max(r.hi, a + Addr{cols} * 2);
    }
    if (l.rows_per_block != 0 && rows > l.rows_per_block) {
        const Addr a = l.row_addr(base, l.rows_per_block - 1);
        r.hi = std::max(r.hi, a + Addr{cols} * 2);
    }
    return r;
}

void unpack(const std::array<std::uint32_t, 16>& words, std::uint32_t nwords, float* out) {
    for (std::uint32_t i = 0; i < nwords; ++i) {
        out[2 * i] = half_to_float(static_cast<std::uint16_t>(words[i] & 0xffffu));
        out[2 * i + 1] = half_to_float(static_cast<std::uint16_t>(words[i] >> 16));
    }
}

}  // namespace

TensorEngine::TensorEngine(const ClusterConfig& cfg, std::uint32_t index, Interconnect& net)
    : cfg_(cfg), index_(index), tile_(te_tile(index, cfg)), net_(net) {
    rows_ = cfg.te_rows;
    tcols_ = cfg.te_tile_cols();
    welems_ = cfg.wide_bytes() / cfg.element_bytes;
    w_buffer_rows_ = cfg.rob_depth;
    for (auto& rob : robs_) rob.slots.resize(cfg.rob_depth);
    w_buf_.assign(std::size_t{w_buffer_rows_} * tcols_, 0.0f);
    x_buf_.assign(std::size_t{x_buffer_chunks_} * rows_ * welems_, 0.0f);
    y_buf_.assign(std::size_t{rows_} * tcols_, 0.0f);
    acc_.assign(std::size_t{rows_} * tcols_, 0.0f);
}

TeProgramResult TensorEngine::program(const TeConfigRegs& in, Cycle now) {
    if (state_ == State::Running || irq_) return TeProgramResult::Busy;
    TeConfigRegs regs = in;
    if (regs.m == 0 || regs.n == 0 || regs.k == 0) throw ProgramError("GEMM dimensions must be positive");
    if (regs.m % rows_ != 0) throw ProgramError("m must be a multiple of the TE row count");
    if (regs.n % tcols_ != 0) throw ProgramError("n must be a multiple of the TE output tile width");
    if (regs.k % welems_ != 0) throw ProgramError("k must be a multiple of the wide-word element count");
    if (regs.w_col_start >= regs.n) throw ProgramError("w_col_start must be smaller than n");
    const std::uint32_t wb = cfg_.wide_bytes();
    for (Addr base : {regs.x_base, regs.w_base, regs.y_base, regs.z_base}) {
        if (base % wb != 0) throw ProgramError("operand bases must be aligned to the wide port");
    }
    auto fill = [](RowLayout& l, std::uint32_t cols) {
        if (l.row_stride == 0) l.row_stride = Addr{cols} * 2;
    };
    fill(regs.x_layout, regs.k);
    fill(regs.w_layout, regs.n);
    fill(regs.y_layout, regs.n);
    fill(regs.z_layout, regs.n);
    for (const RowLayout* l : {&regs.x_layout, &regs.w_layout, &regs.y_layout, &regs.z_layout}) {
        if (l->row_stride % wb != 0 || l->block_stride % wb != 0) throw ProgramError("strides must be wide-port aligned");
    }
    const Range x = operand_range(regs.x_base, regs.x_layout, regs.m, regs.k);
    const Range w = operand_range(regs.w_base, regs.w_layout, regs.k, regs.n);
    const Range y = operand_range(regs.y_base, regs.y_layout, regs.m, regs.n);
    const Range z = operand_range(regs.z_base, regs.z_layout, regs.m, regs.n);
    for (const Range& r : {x, w, y, z}) {
        if (r.hi > cfg_.l1_bytes()) throw AddressFault("TE operand outside L1");
    }
    const bool yz_alias = regs.y_base == regs.z_base;
    if (x.overlaps(w) || x.overlaps(z) || w.overlaps(z) || x.overlaps(y) || w.overlaps(y)
        || (!yz_alias && y.overlaps(z))) {
        throw ProgramError("TE operands overlap");
    }

    regs_ = regs;
    tiles_.clear();
    const std::uint32_t col_tiles = regs.n / tcols_;
    const std::uint32_t start = regs.w_col_start / tcols_;
    const std::uint32_t count = regs.loopback ? col_tiles : col_tiles - start;
    for (std::uint32_t rb = 0; rb < regs.m / rows_; ++rb) {
        for (std::uint32_t j = 0; j < count; ++j) tiles_.push_back({rb, (start + j) % col_tiles});
    }
    chunks_per_tile_ = regs.k / welems_;

    for (auto& rob : robs_) rob.head = rob.tail = 0;
    committed_.fill(0);
    w_consumed_ = 0;
    x_chunks_consumed_ = 0;
    y_tiles_allowed_ = 1;
    cur_tile_ = 0;
    cur_k_ = 0;
    step_left_ = 0;
    drain_left_ = 0;
    z_fifo_.clear();
    z_head_ = 0;
    last_write_done_ = now;
    port_ready_.fill(now);
    metrics_ = TeMetrics{};
    metrics_.start_cycle = now;
    last_progress_ = now;
    phase_ = Phase::WaitY;
    state_ = State::Running;
    return TeProgramResult::Accepted;
}

Addr TensorEngine::w_read_addr(std::uint64_t seq) const {
    const Tile& t = tiles_[seq / regs_.k];
    const std::uint64_t kk = seq % regs_.k;
    return regs_.w_layout.row_addr(regs_.w_base, kk) + Addr{t.col_tile} * tcols_ * 2;
}

Addr TensorEngine::x_read_addr(std::uint64_t seq) const {
    const std::uint64_t per_tile = std::uint64_t{chunks_per_tile_} * rows_;
    const Tile& t = tiles_[seq / per_tile];
    const std::uint64_t within = seq % per_tile;
    const std::uint64_t chunk = within / rows_;
    const std::uint64_t r = within % rows_;
    return regs_.x_layout.row_addr(regs_.x_base, std::uint64_t{t.row_block} * rows_ + r) + chunk * welems_ * 2;
}

Addr TensorEngine::y_read_addr(std::uint64_t seq) const {
    const Tile& t = tiles_[seq / rows_];
    const std::uint64_t r = seq % rows_;
    return regs_.y_layout.row_addr(regs_.y_base, std::uint64_t{t.row_block} * rows_ + r) + Addr{t.col_tile} * tcols_ * 2;
}

bool TensorEngine::try_issue_read(TeStream s, Cycle now) {
    Rob& rob = robs_[static_cast<int>(s)];
    const std::uint64_t seq = rob.tail;
    std::uint64_t total = 0;
    bool space = false;
    Addr addr = 0;
    switch (s) {
        case TeStream::W:
            total = std::uint64_t{regs_.k} * tiles_.size();
            space = seq < w_consumed_ + w_buffer_rows_;
            break;
        case TeStream::X:
            total = std::uint64_t{chunks_per_tile_} * rows_ * tiles_.size();
            space = seq / rows_ < x_chunks_consumed_ + x_buffer_chunks_;
            break;
        case TeStream::Y:
            total = std::uint64_t{rows_} * tiles_.size();
            space = seq / rows_ < y_tiles_allowed_;
            break;
    }
    if (seq >= total || !space || now < port_ready_[static_cast<int>(s)]) return false;
    if (rob.size() >= cfg_.rob_depth) {
        ++metrics_.rob_full_cycles[static_cast<int>(s)];
        return false;
    }
    switch (s) {
        case TeStream::W: addr = w_read_addr(seq); break;
        case TeStream::X: addr = x_read_addr(seq); break;
        case TeStream::Y: addr = y_read_addr(seq); break;
    }
    MemoryTransaction txn;
    txn.kind = TxnKind::WideRead;
    txn.base_addr = addr;
    txn.beats = cfg_.wide_beats();
    txn.initiator = index_;
    txn.tag = static_cast<std::uint32_t>(seq % cfg_.rob_depth);
    const TxnTiming timing = net_.issue(txn, tile_, now);
    port_ready_[static_cast<int>(s)] = timing.accepted;
    RobEntry& e = rob.slots[seq % cfg_.rob_depth];
    e.seq = seq;
    e.ready = timing.complete;
    e.data = txn.data;
    if (rob.size() > 0) {
        const RobEntry& prev = rob.slots[(seq - 1) % cfg_.rob_depth];
        if (e.ready < prev.ready) ++metrics_.out_of_order_arrivals;
    }
    ++rob.tail;
    metrics_.max_rob_occupancy = std::max(metrics_.max_rob_occupancy, rob.size());
    ++metrics_.reads_issued[static_cast<int>(s)];
    metrics_.read_bytes += cfg_.wide_bytes();
    return true;
}

bool TensorEngine::try_issue_write(Cycle now) {
    if (z_head_ >= z_fifo_.size() || now < port_ready_[3]) return false;
    ZEntry& z = z_fifo_[z_head_++];
    MemoryTransaction txn;
    txn.kind = TxnKind::WideWrite;
    txn.base_addr = z.addr;
    txn.beats = cfg_.wide_beats();
    txn.data = z.data;
    txn.initiator = index_;
    const TxnTiming timing = net_.issue(txn, tile_, now);
    port_ready_[3] = timing.accepted;
    last_write_done_ = std::max(last_write_done_, timing.complete);
    ++metrics_.writes_issued;
    metrics_.write_bytes += cfg_.wide_bytes();
    if (z_head_ == z_fifo_.size()) {
        z_fifo_.clear();
        z_head_ = 0;
    }
    return true;
}

void TensorEngine::commit_entry(TeStream s, const RobEntry& e) {
    const std::uint32_t nwords = cfg_.wide_beats();
    switch (s) {
        case TeStream::W:
            unpack(e.data, nwords, &w_buf_[(e.seq % w_buffer_rows_) * tcols_]);
            break;
        case TeStream::X: {
            const std::uint64_t chunk = e.seq / rows_;
            const std::uint64_t r = e.seq % rows_;
            unpack(e.data, nwords, &x_buf_[((chunk % x_buffer_chunks_) * rows_ + r) * welems_]);
            break;
        }
        case TeStream::Y:
            unpack(e.data, nwords, &y_buf_[(e.seq % rows_) * tcols_]);
            break;
    }
}

void TensorEngine::commit_ready(Cycle now) {
    for (int s = 0; s < 3; ++s) {
        Rob& rob = robs_[s];
        while (rob.size() > 0) {
            const RobEntry& e = rob.slots[rob.head % cfg_.rob_depth];
            if (e.ready > now) break;
            if (e.seq != committed_[s]) throw std::logic_error("ROB committed out of order");
            commit_entry(static_cast<TeStream>(s), e);
            ++committed_[s];
            ++rob.head;
            last_progress_ = now;
        }
    }
}

bool TensorEngine::step_operands_ready() const {
    const std::uint64_t w_seq = cur_tile_ * regs_.k + cur_k_;
    const std::uint64_t x_chunk = cur_tile_ * chunks_per_tile_ + cur_k_ / welems_;
    return committed_[static_cast<int>(TeStream::W)] > w_seq
        && committed_[static_cast<int>(TeStream::X)] >= (x_chunk + 1) * rows_;
}

void TensorEngine::execute_step() {
    const std::uint64_t w_seq = cur_tile_ * regs_.k + cur_k_;
    const std::uint64_t x_chunk = cur_tile_ * chunks_per_tile_ + cur_k_ / welems_;
    const float* w = &w_buf_[(w_seq % w_buffer_rows_) * tcols_];
    const float* xs = &x_buf_[(x_chunk % x_buffer_chunks_) * rows_ * welems_];
    const std::uint32_t kk = cur_k_ % welems_;
    for (std::uint32_t r = 0; r < rows_; ++r) {
        const float xv = xs[r * welems_ + kk];
        float* acc = &acc_[r * tcols_];
        for (std::uint32_t j = 0; j < tcols_; ++j) acc[j] += xv * w[j];
    }
    metrics_.macs += std::uint64_t{rows_} * tcols_;
    ++w_consumed_;
    if (kk == welems_ - 1) ++x_chunks_consumed_;
}

void TensorEngine::finish_tile(Cycle now) {
    const Tile& t = tiles_[cur_tile_];
    const std::uint32_t nwords = cfg_.wide_beats();
    for (std::uint32_t r = 0; r < rows_; ++r) {
        ZEntry z;
        z.addr = regs_.z_layout.row_addr(regs_.z_base, std::uint64_t{t.row_block} * rows_ + r) + Addr{t.col_tile} * tcols_ * 2;
        for (std::uint32_t i = 0; i < nwords; ++i) {
            const std::uint32_t lo = float_to_half(acc_[r * tcols_ + 2 * i]);
            const std::uint32_t hi = float_to_half(acc_[r * tcols_ + 2 * i + 1]);
            z.data[i] = lo | (hi << 16);
        }
        z_fifo_.push_back(z);
    }
    ++metrics_.tiles;
    ++cur_tile_;
    y_tiles_allowed_ = cur_tile_ + 1;
    last_progress_ = now;
}

void TensorEngine::step(Cycle now) {
    if (state_ != State::Running) return;
    commit_ready(now);

    bool advancing = true;
    while (advancing) {
        advancing = false;
        switch (phase_) {
            case Phase::WaitY:
                if (committed_[static_cast<int>(TeStream::Y)] >= (cur_tile_ + 1) * rows_) {
                    acc_ = y_buf_;
                    cur_k_ = 0;
                    phase_ = Phase::Compute;
                    advancing = true;
                } else {
                    ++metrics_.operand_stall_cycles;
                }
                break;
            case Phase::Compute:
                if (step_left_ == 0) {
                    if (step_operands_ready()) {
                        step_left_ = cfg_.te_pipeline + 1;
                    } else {
                        ++metrics_.operand_stall_cycles;
                        break;
                    }
                }
                ++metrics_.active_cycles;
                if (--step_left_ == 0) {
                    execute_step();
                    last_progress_ = now;
                    if (++cur_k_ == regs_.k) {
                        phase_ = Phase::Drain;
                        drain_left_ = cfg_.te_pipeline;
                    }
                }
                break;
            case Phase::Drain:
                ++metrics_.drain_cycles;
                if (drain_left_ == 0 || --drain_left_ == 0) phase_ = Phase::WaitFifo;
                break;
            case Phase::WaitFifo:
                if (cfg_.z_fifo_depth - (z_fifo_.size() - z_head_) >= rows_) {
                    finish_tile(now);
                    phase_ = cur_tile_ == tiles_.size() ? Phase::Finish : Phase::WaitY;
                    advancing = phase_ == Phase::WaitY;
                } else {
                    ++metrics_.fifo_stall_cycles;
                }
                break;
            case Phase::Finish:
                break;
        }
    }

    // Each stream issues at most one request per cycle; W reserves shared
    // ports and banks first, then X, then Y, then the Z store queue.
    bool issued = try_issue_read(TeStream::W, now);
    issued |= try_issue_read(TeStream::X, now);
    issued |= try_issue_read(TeStream::Y, now);
    issued |= try_issue_write(now);
    if (issued) last_progress_ = now;

    if (phase_ == Phase::Finish && z_head_ == z_fifo_.size() && now + 1 >= last_write_done_) {
        metrics_.end_cycle = std::max(now + 1, last_write_done_);
        totals_.jobs += 1;
        totals_.active_cycles += metrics_.active_cycles;
        totals_.busy_cycles += metrics_.busy_cycles();
        totals_.macs += metrics_.macs;
        state_ = State::Idle;
        irq_ = true;
        last_progress_ = now;
    }
}

}  // namespace tensorpool
