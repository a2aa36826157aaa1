#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tensorpool/config.hpp"

namespace tensorpool {

class CalendarOverflow : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-cycle occupancy of a resource that serves one request per cycle
/// (a bank, an arbiter port, a response handshake). Reservations may land
/// anywhere in [now, now + horizon); older words are recycled lazily.
class SlotCalendar {
public:
    static constexpr std::uint64_t kWords = 128;
    static constexpr Cycle kHorizon = kWords * 64;

    SlotCalendar() : bits_(kWords, 0), tags_(kWords, ~std::uint64_t{0}) {}

    bool busy(Cycle c) const {
        const std::uint64_t aw = c >> 6;
        const std::uint64_t slot = aw % kWords;
        return tags_[slot] == aw && ((bits_[slot] >> (c & 63)) & 1u);
    }

    /// Claims the first free cycle >= `earliest` and returns it.
    Cycle reserve(Cycle earliest, Cycle now) {
        Cycle c = earliest;
        for (;;) {
            if (c >= now + kHorizon - 64) {
                throw CalendarOverflow("resource reservation beyond calendar horizon");
            }
            const std::uint64_t aw = c >> 6;
            const std::uint64_t slot = aw % kWords;
            if (tags_[slot] != aw) {
                tags_[slot] = aw;
                bits_[slot] = 0;
            }
            const std::uint64_t free = ~bits_[slot] & (~std::uint64_t{0} << (c & 63));
            if (free != 0) {
                const int bit = __builtin_ctzll(free);
                bits_[slot] |= std::uint64_t{1} << bit;
                ++reserved_;
                return (aw << 6) + static_cast<Cycle>(bit);
            }
            c = (aw + 1) << 6;
        }
    }

    /// First free cycle >= `earliest`, without claiming it.
    Cycle first_free(Cycle earliest, Cycle now) const {
        Cycle c = earliest;
        while (busy(c)) {
            if (c >= now + kHorizon - 64) throw CalendarOverflow("resource reservation beyond calendar horizon");
            ++c;
        }
        return c;
    }

    /// True if every cycle of [first, last] is free.
    bool range_free(Cycle first, Cycle last) const {
        for (Cycle c = first; c <= last; ++c) {
            if (busy(c)) return false;
        }
        return true;
    }

    /// Claims every cycle of [first, last] (a multi-cycle hold).
    void claim(Cycle first, Cycle last, Cycle now) {
        if (last >= now + kHorizon - 64) throw CalendarOverflow("resource reservation beyond calendar horizon");
        for (Cycle c = first; c <= last; ++c) {
            const std::uint64_t aw = c >> 6;
            const std::uint64_t slot = aw % kWords;
            if (tags_[slot] != aw) {
                tags_[slot] = aw;
                bits_[slot] = 0;
            }
            bits_[slot] |= std::uint64_t{1} << (c & 63);
        }
        ++reserved_;
    }

    std::uint64_t reserved() const { return reserved_; }

private:
    std::vector<std::uint64_t> bits_;
    std::vector<std::uint64_t> tags_;
    std::uint64_t reserved_ = 0;
};

}  // namespace tensorpool
