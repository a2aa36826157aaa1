#include "tensorpool/memory.hpp"

#include <algorithm>
#include <cstring>
#include <istream>
#include <ostream>

namespace tensorpool {

BankArray::BankArray(const ClusterConfig& cfg)
    : cfg_(cfg), words_(cfg.l1_bytes() / 4, 0), calendars_(cfg.num_banks()) {}

std::size_t BankArray::word_index(Addr addr) const {
    if (addr + 4 > cfg_.l1_bytes()) throw AddressFault("L1 access outside the scratchpad");
    const std::uint32_t bank = global_bank_of(addr, cfg_);
    const std::uint64_t row = addr / (Addr{cfg_.tile_interleave_bytes()} * cfg_.num_tiles());
    return std::size_t{bank} * (cfg_.bank_bytes / 4) + row;
}

Cycle BankArray::access(Addr addr, bool write, std::uint32_t& data, Cycle arrival, Cycle now, bool functional) {
    if (addr % 4 != 0) throw AlignmentFault("bank access must be word aligned");
    const std::size_t idx = word_index(addr);
    const std::uint32_t bank = global_bank_of(addr, cfg_);
    const Cycle slot = calendars_[bank].reserve(arrival, now);
    if (slot != arrival) ++conflicts_;
    if (check_exclusivity_) {
        if (bank >= (1u << 12)) throw std::logic_error("exclusivity check supports at most 4096 banks");
        const std::uint64_t key = (slot << 12) ^ bank;
        if (!seen_.emplace(key, 1).second) throw std::logic_error("bank exclusivity violated");
        ++exclusivity_checks_;
    }
    ++accesses_;
    if (!functional) return slot;
    if (write) {
        words_[idx] = data;
    } else {
        data = words_[idx];
    }
    return slot;
}

void BankArray::prune_exclusivity(Cycle now) {
    std::erase_if(seen_, [now](const auto& kv) { return (kv.first >> 12) < now; });
}

std::uint32_t BankArray::peek_word(Addr addr) const { return words_[word_index(addr & ~Addr{3})]; }

void BankArray::poke_word(Addr addr, std::uint32_t value) { words_[word_index(addr & ~Addr{3})] = value; }

std::uint16_t BankArray::peek_half(Addr addr) const {
    if (addr % 2 != 0) throw AlignmentFault("FP16 access must be 2-byte aligned");
    const std::uint32_t w = peek_word(addr);
    return static_cast<std::uint16_t>((addr & 2) ? (w >> 16) : (w & 0xffffu));
}

void BankArray::poke_half(Addr addr, std::uint16_t value) {
    if (addr % 2 != 0) throw AlignmentFault("FP16 access must be 2-byte aligned");
    std::uint32_t& w = words_[word_index(addr & ~Addr{3})];
    if (addr & 2) {
        w = (w & 0x0000ffffu) | (std::uint32_t{value} << 16);
    } else {
        w = (w & 0xffff0000u) | value;
    }
}

void BankArray::read_bytes(Addr addr, std::span<std::uint8_t> out) const {
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Addr a = addr + i;
        out[i] = static_cast<std::uint8_t>(peek_word(a) >> (8 * (a & 3)));
    }
}

void BankArray::write_bytes(Addr addr, std::span<const std::uint8_t> in) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        const Addr a = addr + i;
        std::uint32_t& w = words_[word_index(a & ~Addr{3})];
        const unsigned shift = 8 * (a & 3);
        w = (w & ~(0xffu << shift)) | (std::uint32_t{in[i]} << shift);
    }
}

void BankArray::dump(std::ostream& os) const {
    std::vector<std::uint8_t> buf(cfg_.l1_bytes());
    read_bytes(0, buf);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void BankArray::load(std::istream& is) {
    std::vector<std::uint8_t> buf(cfg_.l1_bytes());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::uint64_t>(is.gcount()) != buf.size()) {
        throw AddressFault("L1 image shorter than the configured scratchpad");
    }
    write_bytes(0, buf);
}

std::uint8_t L2Memory::read_byte(Addr addr) const {
    auto it = pages_.find(addr / kPageBytes);
    return it == pages_.end() ? 0 : it->second[addr % kPageBytes];
}

void L2Memory::write_byte(Addr addr, std::uint8_t v) {
    auto& page = pages_[addr / kPageBytes];
    if (page.empty()) page.assign(kPageBytes, 0);
    page[addr % kPageBytes] = v;
}

void L2Memory::read_bytes(Addr addr, std::span<std::uint8_t> out) const {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_byte(addr + i);
}

void L2Memory::write_bytes(Addr addr, std::span<const std::uint8_t> in) {
    for (std::size_t i = 0; i < in.size(); ++i) write_byte(addr + i, in[i]);
}

std::uint16_t L2Memory::peek_half(Addr addr) const {
    return static_cast<std::uint16_t>(read_byte(addr) | (read_byte(addr + 1) << 8));
}

void L2Memory::poke_half(Addr addr, std::uint16_t v) {
    write_byte(addr, static_cast<std::uint8_t>(v & 0xff));
    write_byte(addr + 1, static_cast<std::uint8_t>(v >> 8));
}

void L2Memory::dump(std::ostream& os, Addr addr, std::uint64_t len) const {
    std::vector<std::uint8_t> buf(len);
    read_bytes(addr, buf);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

DmaEngine::DmaEngine(const ClusterConfig& cfg, BankArray& l1, L2Memory& l2) : cfg_(cfg), l1_(l1), l2_(l2) {}

DmaHandle DmaEngine::program(const DmaJob& job, Cycle now) {
    const std::uint64_t kChunkBytes = cfg_.l2_bw_bytes_per_cycle_per_subgroup;
    JobState js;
    js.job = job;
    const DmaHandle h = static_cast<DmaHandle>(jobs_.size());
    const bool bad_range = job.length == 0 || job.l1_addr % 4 != 0 || job.length % 4 != 0
        || job.l1_addr + job.length > cfg_.l1_bytes();
    if (bad_range) {
        js.status = DmaStatus::Fault;
        jobs_.push_back(std::move(js));
        return h;
    }
    // Chunks are cut at 64B boundaries of the L1 address.
    const Addr first = job.l1_addr / kChunkBytes;
    const Addr last = (job.l1_addr + job.length - 1) / kChunkBytes;
    js.chunks_total = last - first + 1;
    js.per_subgroup.resize(cfg_.num_subgroups());
    for (std::uint64_t c = 0; c < js.chunks_total; ++c) {
        const Addr a = std::max<Addr>((first + c) * kChunkBytes, job.l1_addr);
        js.per_subgroup[subgroup_of_tile(tile_of(a, cfg_), cfg_)].push_back(c);
    }
    js.status = DmaStatus::Running;
    js.start_cycle = now;
    jobs_.push_back(std::move(js));
    active_.push_back(h);
    return h;
}

void DmaEngine::issue_chunk(JobState& js, std::uint64_t chunk, Cycle now) {
    const DmaJob& job = js.job;
    const std::uint64_t kChunkBytes = cfg_.l2_bw_bytes_per_cycle_per_subgroup;
    const Addr chunk_base = (job.l1_addr / kChunkBytes + chunk) * kChunkBytes;
    const Addr lo = std::max<Addr>(chunk_base, job.l1_addr);
    const Addr hi = std::min<Addr>(chunk_base + kChunkBytes, job.l1_addr + job.length);
    const Addr l2_lo = job.l2_addr + (lo - job.l1_addr);
    Cycle landed = 0;
    if (job.direction == DmaDirection::L2ToL1) {
        const Cycle arrival = now + cfg_.l2_latency;
        for (Addr a = lo; a < hi; a += 4) {
            std::uint32_t w = 0;
            for (unsigned b = 0; b < 4; ++b) w |= std::uint32_t{l2_.read_byte(l2_lo + (a - lo) + b)} << (8 * b);
            landed = std::max(landed, l1_.access(a, true, w, arrival, now) + 1);
        }
    } else {
        Cycle read_done = 0;
        for (Addr a = lo; a < hi; a += 4) {
            std::uint32_t w = 0;
            read_done = std::max(read_done, l1_.access(a, false, w, now, now) + 1);
            for (unsigned b = 0; b < 4; ++b) {
                l2_.write_byte(l2_lo + (a - lo) + b, static_cast<std::uint8_t>(w >> (8 * b)));
            }
        }
        landed = read_done + cfg_.l2_latency;
    }
    js.done_cycle = std::max(js.done_cycle, landed);
    bytes_moved_ += hi - lo;
    ++js.chunks_issued;
}

void DmaEngine::step(Cycle now) {
    if (active_.empty()) return;
    ++busy_cycles_;
    // Each subgroup has one read and one write channel. A channel serves the
    // oldest job that still has a chunk on it, so a job may start while an
    // older one drains on other channels.
    auto serve = [&](DmaDirection dir, std::size_t ch) {
        for (const DmaHandle h : active_) {
            JobState& js = jobs_[h];
            if (js.job.direction != dir || js.per_subgroup[ch].empty()) continue;
            const std::uint64_t chunk = js.per_subgroup[ch].front();
            js.per_subgroup[ch].pop_front();
            const std::uint64_t before = bytes_moved_;
            issue_chunk(js, chunk, now);
            const auto moved = static_cast<std::uint32_t>(bytes_moved_ - before);
            auto& peak = dir == DmaDirection::L2ToL1 ? peak_in_ : peak_out_;
            peak = std::max(peak, moved);
            if (moved > cfg_.l2_bw_bytes_per_cycle_per_subgroup) {
                throw std::logic_error("DMA subgroup channel exceeded its bandwidth");
            }
            return;
        }
    };
    for (std::size_t ch = 0; ch < cfg_.num_subgroups(); ++ch) {
        serve(DmaDirection::L2ToL1, ch);
        serve(DmaDirection::L1ToL2, ch);
    }
    while (!active_.empty()) {
        JobState& head = jobs_[active_.front()];
        if (head.chunks_issued < head.chunks_total || now < head.done_cycle) break;
        head.status = DmaStatus::Done;
        active_.pop_front();
    }
}

bool DmaEngine::interrupt_pending(DmaHandle h, Cycle now) const {
    const auto& js = jobs_.at(h);
    return js.status == DmaStatus::Done && js.job.interrupt_on_done && now >= js.done_cycle;
}

}  // namespace tensorpool
