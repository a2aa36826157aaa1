#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tensorpool/config.hpp"
#include "tensorpool/interconnect.hpp"

namespace tensorpool {

enum class AccessPattern : std::uint8_t {
    Local,       ///< words of the operand held in the PE's own tile
    Sequential,  ///< contiguous chunk of the operand owned by the PE
    Strided,     ///< chunk base plus a fixed byte stride per access
    Indexed,     ///< pseudo-random words anywhere in the operand
};

AccessPattern parse_pattern(const std::string& s);
std::string to_string(AccessPattern p);

struct AccessSpec {
    std::uint32_t count = 1;
    AccessPattern pattern = AccessPattern::Local;
    std::uint32_t operand = 0;
    std::uint32_t stride_bytes = 4;
};

/// Work done for one item of one pass: blocking loads first, then compute
/// instructions, then dependency stall cycles, then posted stores.
struct PassRecipe {
    std::vector<AccessSpec> loads;
    std::uint32_t compute_ops = 0;
    std::uint32_t raw_stalls = 0;
    std::vector<AccessSpec> stores;
    /// Items in this pass per kernel item (e.g. 0.5 for a pass over half the data).
    double item_scale = 1.0;
    bool barrier_after = false;
};

/// Timed recipe for a PE kernel. The kernel covers `elements` elements,
/// `elements_per_item` at a time (2 for the FP16 SIMD path), split evenly
/// across the PEs it runs on.
struct KernelRecipe {
    std::string name;
    std::uint32_t elements_per_item = 1;
    std::uint32_t setup_ops = 0;
    std::vector<PassRecipe> passes;

    nlohmann::json to_json() const;
    static KernelRecipe from_json(const std::string& name, const nlohmann::json& j);
};

/// Named recipes. Built-in defaults can be overridden by a `kernels` object
/// in the config document.
class KernelLibrary {
public:
    static KernelLibrary defaults();
    /// Defaults overlaid with `doc["kernels"]` when present.
    static KernelLibrary from_json(const nlohmann::json& doc);

    const KernelRecipe& get(const std::string& name) const;
    void set(KernelRecipe r) { recipes_[r.name] = std::move(r); }
    const std::map<std::string, KernelRecipe>& all() const { return recipes_; }

private:
    std::map<std::string, KernelRecipe> recipes_;
};

struct OperandRegion {
    Addr base = 0;
    std::uint64_t bytes = 0;
};

struct KernelLaunch {
    const KernelRecipe* recipe = nullptr;
    std::vector<std::uint32_t> pes;
    std::uint64_t elements = 0;
    std::vector<OperandRegion> operands;
    /// Functional effect, applied on the L1 image when the last PE finishes.
    std::function<void()> apply;
    std::uint64_t seed = 1;
};

struct PeCounters {
    std::uint64_t instructions = 0;
    std::uint64_t load_stalls = 0;
    std::uint64_t raw_stalls = 0;
    std::uint64_t barrier_stalls = 0;
    std::uint64_t loads = 0;
    std::uint64_t stores = 0;
    Cycle start = 0;
    Cycle end = 0;

    std::uint64_t stalls() const { return load_stalls + raw_stalls + barrier_stalls; }
    Cycle elapsed() const { return end - start; }
};

struct KernelMetrics {
    std::string name;
    Cycle start = 0;
    Cycle end = 0;
    std::uint64_t instructions = 0;
    std::uint64_t stalls = 0;
    std::uint64_t load_stalls = 0;
    std::uint64_t raw_stalls = 0;
    std::uint64_t barrier_stalls = 0;
    std::uint32_t pes = 0;

    Cycle runtime() const { return end - start; }
    double ipc() const {
        const double busy = static_cast<double>(instructions + stalls);
        return busy == 0 ? 0.0 : static_cast<double>(instructions) / busy;
    }
};

/// Cycles for a log-tree wake-up after the last PE reaches a barrier.
std::uint32_t barrier_cost(std::uint32_t pes, const ClusterConfig& cfg);

/// Cycles a PE spends writing TE configuration registers.
inline constexpr std::uint32_t kTeProgramCyclesPerRegister = 1;

using KernelHandle = std::uint32_t;

/// The PEs of the cluster as timed agents. Each PE is single-issue and in
/// order: one instruction per cycle, a load blocks until its data returns,
/// stores are posted. A PE is only evaluated in cycles in which it can act.
class PeArray {
public:
    PeArray(const ClusterConfig& cfg, Interconnect& net);

    /// Starts `launch` on its PE set at `now`. Throws ProgramError if a PE
    /// is already running a kernel and AddressFault for bad operands.
    KernelHandle launch(KernelLaunch launch, Cycle now);
    void step(Cycle now);

    bool done(KernelHandle h) const { return kernels_.at(h).finished; }
    const KernelMetrics& metrics(KernelHandle h) const { return kernels_.at(h).metrics; }
    /// Counters accumulated over every kernel a PE ran.
    const PeCounters& counters(std::uint32_t pe) const { return totals_.at(pe); }
    bool pe_busy(std::uint32_t pe) const { return agents_.at(pe).kernel >= 0; }
    bool busy() const { return running_ > 0; }
    /// Earliest cycle in which some PE acts; ~0 when none is scheduled.
    Cycle next_wake() const { return wake_.empty() ? ~Cycle{0} : wake_.begin()->first; }
    Cycle last_progress() const { return last_progress_; }

    /// Charges register-write cycles to `pe` (TE programming).
    void add_control_instructions(std::uint32_t pe, std::uint64_t n) { control_[pe] += n; }
    std::uint64_t control_instructions(std::uint32_t pe) const { return control_.at(pe); }

private:
    enum class OpKind : std::uint8_t { Load, Store, Compute, Raw };
    struct Op {
        OpKind kind = OpKind::Compute;
        std::uint32_t spec = 0;  // index into the pass's loads or stores
        std::uint32_t count = 0;
    };
    struct Kernel {
        KernelLaunch launch;
        std::vector<std::vector<Op>> ops;  // per pass
        std::vector<std::uint64_t> pass_items;
        std::uint32_t remaining = 0;
        std::uint32_t arrived = 0;
        Cycle max_arrival = 0;
        std::vector<std::uint32_t> waiting;
        bool finished = false;
        KernelMetrics metrics;
    };
    struct Agent {
        int kernel = -1;
        std::uint32_t rank = 0;
        std::uint32_t pass = 0;
        std::uint64_t item = 0;
        std::uint64_t item_end = 0;
        std::uint32_t op = 0;
        std::uint32_t sub = 0;
        bool setup_done = false;
        Cycle barrier_arrival = 0;
        PeCounters cur;
        std::uint64_t rng = 0;
    };

    void execute(std::uint32_t pe, Cycle now);
    void begin_pass(std::uint32_t pe, Kernel& k);
    void end_pass(std::uint32_t pe, Kernel& k, Cycle now);
    void finish_pe(std::uint32_t pe, Kernel& k, Cycle now);
    Addr access_addr(std::uint32_t pe, const Kernel& k, const AccessSpec& s, std::uint64_t a);
    void schedule(std::uint32_t pe, Cycle when);

    ClusterConfig cfg_;
    Interconnect& net_;
    std::vector<Agent> agents_;
    std::vector<PeCounters> totals_;
    std::vector<std::uint64_t> control_;
    std::vector<Kernel> kernels_;
    std::multimap<Cycle, std::uint32_t> wake_;
    std::uint32_t running_ = 0;
    Cycle last_progress_ = 0;
};

}  // namespace tensorpool
