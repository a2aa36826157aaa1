#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tensorpool/config.hpp"
#include "tensorpool/interconnect.hpp"
#include "tensorpool/memory.hpp"
#include "tensorpool/processing_element.hpp"
#include "tensorpool/tensor_engine.hpp"

namespace tensorpool {

/// No engine made progress for a whole watchdog window while work was pending.
class DeadlockError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ClusterOptions {
    Cycle watchdog_window = 10000;
    bool check_bank_exclusivity = false;
};

/// The whole pool on one clock: L1 banks and interconnect, L2 and DMA,
/// tensor engines and PEs.
class Cluster {
public:
    explicit Cluster(const ClusterConfig& cfg, ClusterOptions opt = {});

    Cluster(const Cluster&) = delete;
    Cluster& operator=(const Cluster&) = delete;

    const ClusterConfig& config() const { return cfg_; }
    BankArray& l1() { return *l1_; }
    L2Memory& l2() { return *l2_; }
    Interconnect& net() { return *net_; }
    DmaEngine& dma() { return *dma_; }
    PeArray& pes() { return *pes_; }
    TensorEngine& te(std::uint32_t i) { return *tes_.at(i); }
    std::uint32_t num_tes() const { return static_cast<std::uint32_t>(tes_.size()); }

    Cycle now() const { return now_; }

    /// PE `pe` writes the TE's configuration registers starting now; the TE
    /// latches them once the last register is written. Busy while the TE is
    /// running, holds an unacknowledged interrupt or is being programmed.
    TeProgramResult program_te(std::uint32_t te, const TeConfigRegs& regs, std::uint32_t pe);
    bool te_busy(std::uint32_t te) const;

    /// Advances one cycle.
    void step();
    /// Steps until `done()` holds. Idle stretches in which only PEs are
    /// waiting are skipped. Throws DeadlockError from the watchdog.
    void run_until(const std::function<bool()>& done);

    /// True while any engine has outstanding work.
    bool busy() const;

private:
    void check_watchdog();

    ClusterConfig cfg_;
    ClusterOptions opt_;
    std::unique_ptr<BankArray> l1_;
    std::unique_ptr<L2Memory> l2_;
    std::unique_ptr<Interconnect> net_;
    std::unique_ptr<DmaEngine> dma_;
    std::unique_ptr<PeArray> pes_;
    std::vector<std::unique_ptr<TensorEngine>> tes_;

    struct PendingProgram {
        Cycle start = 0;
        TeConfigRegs regs;
    };
    std::vector<std::optional<PendingProgram>> pending_;

    Cycle now_ = 0;
    Cycle last_progress_ = 0;
    std::uint64_t dma_bytes_seen_ = 0;
};

}  // namespace tensorpool
