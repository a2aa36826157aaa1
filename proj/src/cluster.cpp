#include "tensorpool/cluster.hpp"

#include <algorithm>
#include <string>

namespace tensorpool {

Cluster::Cluster(const ClusterConfig& cfg, ClusterOptions opt) : cfg_(cfg), opt_(opt) {
    cfg_.validate();
    l1_ = std::make_unique<BankArray>(cfg_);
    l1_->enable_exclusivity_check(opt_.check_bank_exclusivity);
    l2_ = std::make_unique<L2Memory>();
    net_ = std::make_unique<Interconnect>(cfg_, *l1_);
    dma_ = std::make_unique<DmaEngine>(cfg_, *l1_, *l2_);
    pes_ = std::make_unique<PeArray>(cfg_, *net_);
    for (std::uint32_t i = 0; i < cfg_.num_tes(); ++i) tes_.push_back(std::make_unique<TensorEngine>(cfg_, i, *net_));
    pending_.resize(tes_.size());
}

bool Cluster::te_busy(std::uint32_t te) const {
    const TensorEngine& t = *tes_.at(te);
    return t.running() || t.interrupt_pending() || pending_[te].has_value();
}

TeProgramResult Cluster::program_te(std::uint32_t te, const TeConfigRegs& regs, std::uint32_t pe) {
    if (te_busy(te)) return TeProgramResult::Busy;
    const std::uint32_t cost = TeConfigRegs::kRegisterCount * kTeProgramCyclesPerRegister;
    pes_->add_control_instructions(pe, cost);
    pending_[te] = PendingProgram{now_ + cost, regs};
    return TeProgramResult::Accepted;
}

bool Cluster::busy() const {
    if (pes_->busy() || !dma_->idle()) return true;
    for (std::size_t i = 0; i < tes_.size(); ++i) {
        if (tes_[i]->running() || pending_[i]) return true;
    }
    return false;
}

void Cluster::step() {
    for (std::size_t i = 0; i < tes_.size(); ++i) {
        if (pending_[i] && pending_[i]->start <= now_) {
            if (tes_[i]->program(pending_[i]->regs, now_) != TeProgramResult::Accepted) {
                throw std::logic_error("TE rejected a pending program");
            }
            pending_[i].reset();
            last_progress_ = now_;
        }
    }
    // The engine stepped first rotates each cycle so that no TE keeps
    // winning contended resources.
    const std::size_t n = tes_.size();
    for (std::size_t j = 0; j < n; ++j) {
        TensorEngine& t = *tes_[(now_ + j) % n];
        if (!t.running()) continue;
        t.step(now_);
        last_progress_ = std::max(last_progress_, t.last_progress());
    }
    pes_->step(now_);
    last_progress_ = std::max(last_progress_, pes_->last_progress());
    dma_->step(now_);
    if (dma_->bytes_moved() != dma_bytes_seen_) {
        dma_bytes_seen_ = dma_->bytes_moved();
        last_progress_ = now_;
    }
    if (opt_.check_bank_exclusivity && now_ % 4096 == 0) l1_->prune_exclusivity(now_);
    ++now_;
    check_watchdog();
}

void Cluster::check_watchdog() {
    if (!busy()) {
        last_progress_ = now_;
        return;
    }
    if (now_ > last_progress_ + opt_.watchdog_window) {
        throw DeadlockError("no progress for " + std::to_string(opt_.watchdog_window) + " cycles at cycle "
                            + std::to_string(now_));
    }
}

void Cluster::run_until(const std::function<bool()>& done) {
    while (!done()) {
        bool others = !dma_->idle();
        for (std::size_t i = 0; i < tes_.size() && !others; ++i) others = tes_[i]->running() || pending_[i].has_value();
        const Cycle wake = pes_->next_wake();
        if (!others && pes_->busy() && wake != ~Cycle{0} && wake > now_) {
            now_ = wake;
            last_progress_ = now_;
        }
        step();
    }
}

}  // namespace tensorpool
